// visent-demo: writes a self-contained demo world into a directory so the
// main CLI has something to chew on out of the box.
//
// The scripted backend models the failure mode the decoder targets: at
// divergent steps a high-visual-entropy object ("cat") narrowly outranks a
// grounded one ("dog"), so the entropy penalty flips the choice; at trap
// steps an even lower-entropy hallucination ("unicorn") sits just below a
// grounded token, so intervening outside divergent steps backfires.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "visent/corpus.hpp"
#include "visent/error.hpp"
#include "visent/scripted_backend.hpp"
#include "visent/tiny_transformer.hpp"

using namespace visent;

namespace {

// Vocabulary: 0 <think>, 1 </think>, 2 <answer>, 3 <eos>, 4 dog, 5 cat,
// 6 the, 7 sits, 8 car, 9 unicorn.
VisualActivationMatrix demo_matrix() {
    // row balance across the two visual positions sets each token's entropy;
    // balances sum to |V|/2 so both columns are stochastic
    const std::vector<double> balances{0.5, 0.485, 0.02, 0.98, 0.9,
                                       0.5, 0.5,   0.02, 0.1,  0.995};
    const double mass = 2.0 / static_cast<double>(balances.size());
    Matrix values(balances.size(), 2);
    for (std::size_t i = 0; i < balances.size(); ++i) {
        values.at(i, 0) = mass * balances[i];
        values.at(i, 1) = mass * (1.0 - balances[i]);
    }
    return VisualActivationMatrix(std::move(values));
}

VocabDistribution one_hot(int token) {
    VocabDistribution d;
    d.values.assign(10, 0.0);
    d.values[static_cast<std::size_t>(token)] = 1.0;
    return d;
}

struct DemoWorld {
    ScriptedBackend backend;
    std::vector<AnnotatedSample> corpus;
};

DemoWorld build_world() {
    VocabDistribution divergent_step;
    divergent_step.values = {0, 0, 0, 0, 0.40, 0.55, 0, 0.05, 0, 0};
    VocabDistribution trap_step;
    trap_step.values = {0, 0, 0, 0, 0.52, 0, 0, 0.05, 0, 0.43};

    const std::map<int, std::string> display{
        {0, "<think>"}, {1, "</think>"}, {2, "<answer>"}, {3, "<eos>"}, {4, "dog"},
        {5, "cat"},     {6, "the"},      {7, "sits"},     {8, "car"},  {9, "unicorn"}};

    std::vector<ScriptedBackend::Program> programs;
    std::vector<AnnotatedSample> corpus;
    for (int i = 0; i < 6; ++i) {
        const bool with_trap = i >= 3;
        std::vector<int> prompt{6, 6};
        for (int b = 0; b < 3; ++b) prompt.push_back(((i >> b) & 1) ? 7 : 6);
        prompt.push_back(0);

        ScriptedBackend::Program program;
        program.prompt = prompt;
        program.steps.push_back(with_trap ? trap_step : one_hot(4));
        program.steps.push_back(divergent_step);
        program.steps.push_back(one_hot(2));
        program.steps.push_back(one_hot(with_trap ? 8 : 4));
        program.steps.push_back(one_hot(3));
        for (std::size_t k = 0; k < program.steps.size(); ++k) {
            program.attention.push_back(AttentionSummary{0.03, 0.9, 0.07});
        }
        programs.push_back(std::move(program));

        AnnotatedSample sample;
        sample.id = (with_trap ? "trap-" : "plain-") + std::to_string(i);
        const int prompt_len = static_cast<int>(prompt.size());
        sample.tokens = prompt;
        sample.tokens.insert(sample.tokens.end(), {4, 5, 2, with_trap ? 8 : 4, 3});
        sample.prompt_len = prompt_len;
        sample.segments = {{prompt_len, prompt_len + 1, false},
                           {prompt_len + 1, prompt_len + 2, true}};
        sample.display = display;
        sample.truth_objects = {"dog", "car"};
        sample.synonyms = {{"cat", "cat"}, {"unicorn", "unicorn"}};
        corpus.push_back(std::move(sample));
    }
    return DemoWorld{ScriptedBackend(demo_matrix(), std::move(programs), 3),
                     std::move(corpus)};
}

std::vector<AnnotatedSample> tiny_corpus() {
    std::vector<AnnotatedSample> corpus;
    for (int i = 0; i < 4; ++i) {
        AnnotatedSample s;
        s.id = "img-" + std::to_string(i);
        // query, a short think region, then <answer>: generation lands in the
        // answer segment, so attention ratios over image/think are reportable
        s.tokens = {10 + i, 11, 0, 30 + i, 31, 2};
        s.prompt_len = 6;
        s.display = {{0, "<think>"}, {1, "</think>"}, {2, "<answer>"},
                     {20, "dog"},    {21, "cat"},     {22, "car"}};
        s.truth_objects = {"dog"};
        s.synonyms = {{"cat", "cat"}, {"car", "car"}};
        corpus.push_back(std::move(s));
    }
    return corpus;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"write demo inputs for the visent CLI"};
    std::string out;
    app.add_option("--out", out, "Output directory")->required();
    CLI11_PARSE(app, argc, argv);

    try {
        std::filesystem::create_directories(out);
        DemoWorld world = build_world();
        world.backend.save(out + "/backend.json");
        save_corpus(out + "/corpus.jsonl", world.corpus);

        TinyConfig cfg;
        cfg.seed = 7;
        const TinyTransformer tiny(cfg);
        tiny.save(out + "/tiny.bin");
        save_corpus(out + "/tiny_corpus.jsonl", tiny_corpus());

        std::printf("wrote %s/{backend.json, corpus.jsonl, tiny.bin, tiny_corpus.jsonl}\n",
                    out.c_str());
        std::printf("try:\n");
        std::printf("  visent generate --backend scripted:%s/backend.json --corpus "
                    "%s/corpus.jsonl --out %s/run\n",
                    out.c_str(), out.c_str(), out.c_str());
        std::printf("  visent eval --corpus %s/corpus.jsonl --generations "
                    "%s/run/generations.jsonl --traces %s/run/traces.jsonl --out %s/run\n",
                    out.c_str(), out.c_str(), out.c_str(), out.c_str());
        std::printf("  visent analyze --corpus %s/corpus.jsonl --traces "
                    "%s/run/traces.jsonl --out %s/run\n",
                    out.c_str(), out.c_str(), out.c_str());
        std::printf("  visent sweep --backend scripted:%s/backend.json --corpus "
                    "%s/corpus.jsonl --gamma-grid 0.3,0.5,0.7 --alpha-grid 0.25,0.75 "
                    "--scopes divergent-only,all-thinking,normal-only,none --out %s/sweep\n",
                    out.c_str(), out.c_str(), out.c_str());
        return 0;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
}
