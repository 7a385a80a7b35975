// visent: visual-entropy guided decoding, evaluation and analysis CLI.
//
// Subcommands:
//   generate  decode a corpus through a backend, writing generations + traces
//   eval      score generations against corpus annotations (CHAIR/POPE/...)
//   sweep     grid over gamma/alpha/scope, emitting plot-ready CSV
//   analyze   correlation, mode rates, attention ratios, logistic fit
//
// Exit codes: 0 success, 2 configuration/input error, 3 backend/runtime error.

#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "visent/error.hpp"
#include "visent/runner.hpp"

namespace {

using nlohmann::json;

struct CommonOptions {
    std::string backend;
    std::string corpus;
    std::string out;
    double gamma = 0.5;
    double alpha = 0.75;
    std::string scope = "divergent-only";
    std::string strategy = "greedy";
    double top_p = 0.9;
    int beam_width = 4;
    std::uint64_t seed = 0;
    int max_tokens = 64;
    std::string entropy_mode = "normalized";
    int jobs = 1;
    int think_open = 0;
    int think_close = 1;
    int answer_open = 2;
};

void add_decoder_flags(CLI::App* cmd, CommonOptions& opt) {
    cmd->add_option("--backend", opt.backend, "Backend spec: scripted:<path> or tiny:<path>");
    cmd->add_option("--corpus", opt.corpus, "Corpus JSONL path");
    cmd->add_option("--out", opt.out, "Output directory");
    cmd->add_option("--gamma", opt.gamma, "Divergence threshold in [0, 1]");
    cmd->add_option("--alpha", opt.alpha, "Intervention degree in [0, 1]");
    cmd->add_option("--scope", opt.scope,
                    "Intervention scope: divergent-only|all-thinking|normal-only|none");
    cmd->add_option("--strategy", opt.strategy, "Decoding strategy: greedy|nucleus|beam");
    cmd->add_option("--top-p", opt.top_p, "Nucleus mass in (0, 1]");
    cmd->add_option("--beam-width", opt.beam_width, "Beam width (>= 1)");
    cmd->add_option("--seed", opt.seed, "Base seed; per-sample seeds mix in the sample id");
    cmd->add_option("--max-tokens", opt.max_tokens, "Generation cap per sample");
    cmd->add_option("--entropy-mode", opt.entropy_mode, "normalized|verbatim");
    cmd->add_option("--jobs", opt.jobs, "Worker threads (outputs do not depend on this)");
    cmd->add_option("--think-open", opt.think_open, "Token id of the think-open marker");
    cmd->add_option("--think-close", opt.think_close, "Token id of the think-close marker");
    cmd->add_option("--answer-open", opt.answer_open, "Token id of the answer-open marker");
}

visent::DecoderConfig decoder_from(const CommonOptions& opt) {
    visent::DecoderConfig cfg;
    cfg.gamma = opt.gamma;
    cfg.alpha = opt.alpha;
    cfg.scope = visent::scope_from_string(opt.scope);
    cfg.strategy = visent::strategy_from_string(opt.strategy);
    cfg.top_p = opt.top_p;
    cfg.beam_width = opt.beam_width;
    cfg.seed = opt.seed;
    cfg.max_tokens = opt.max_tokens;
    cfg.think_open = opt.think_open;
    cfg.think_close = opt.think_close;
    cfg.answer_open = opt.answer_open;
    if (opt.entropy_mode == "normalized") {
        cfg.entropy_mode = visent::EntropyMode::normalized;
    } else if (opt.entropy_mode == "verbatim") {
        cfg.entropy_mode = visent::EntropyMode::verbatim;
    } else {
        throw visent::ConfigError("--entropy-mode must be normalized or verbatim, got '" +
                                  opt.entropy_mode + "'");
    }
    return cfg;
}

void require(const std::string& value, const char* flag) {
    if (value.empty()) {
        throw visent::ConfigError(std::string("missing required option ") + flag);
    }
}

// Optional JSON config file; explicit command-line flags override its values.
json load_config_file(int argc, char** argv) {
    std::string path;
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        if (arg == "--config" && i + 1 < argc) {
            path = argv[i + 1];
        } else if (arg.rfind("--config=", 0) == 0) {
            path = arg.substr(9);
        }
    }
    if (path.empty()) return json::object();
    std::ifstream in(path);
    if (!in) throw visent::ConfigError("cannot open config file: " + path);
    try {
        json j;
        in >> j;
        return j;
    } catch (const json::exception& e) {
        throw visent::ConfigError("config file " + path + ": " + e.what());
    }
}

template <typename T>
void config_default(const json& cfg, const CLI::App* cmd, const std::string& flag, T& slot) {
    if (!cfg.contains(flag)) return;
    const CLI::Option* opt = cmd->get_option_no_throw("--" + flag);
    if (opt != nullptr && opt->count() > 0) return;  // explicit flag wins
    try {
        slot = cfg.at(flag).get<T>();
    } catch (const json::exception& e) {
        throw visent::ConfigError("config field '" + flag + "': " + e.what());
    }
}

void apply_config_common(const json& cfg, const CLI::App* cmd, CommonOptions& opt) {
    config_default(cfg, cmd, "backend", opt.backend);
    config_default(cfg, cmd, "corpus", opt.corpus);
    config_default(cfg, cmd, "out", opt.out);
    config_default(cfg, cmd, "gamma", opt.gamma);
    config_default(cfg, cmd, "alpha", opt.alpha);
    config_default(cfg, cmd, "scope", opt.scope);
    config_default(cfg, cmd, "strategy", opt.strategy);
    config_default(cfg, cmd, "top-p", opt.top_p);
    config_default(cfg, cmd, "beam-width", opt.beam_width);
    config_default(cfg, cmd, "seed", opt.seed);
    config_default(cfg, cmd, "max-tokens", opt.max_tokens);
    config_default(cfg, cmd, "entropy-mode", opt.entropy_mode);
    config_default(cfg, cmd, "jobs", opt.jobs);
    config_default(cfg, cmd, "think-open", opt.think_open);
    config_default(cfg, cmd, "think-close", opt.think_close);
    config_default(cfg, cmd, "answer-open", opt.answer_open);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"visual-entropy guided decoding toolkit"};
    app.require_subcommand(1);
    std::string config_path;
    const auto add_config_flag = [&config_path](CLI::App* cmd) {
        cmd->add_option("--config", config_path,
                        "JSON config file; flags override its values");
    };

    CommonOptions gen_opt;
    CLI::App* gen = app.add_subcommand("generate", "Decode a corpus, write generations + traces");
    add_decoder_flags(gen, gen_opt);
    add_config_flag(gen);

    CommonOptions sweep_opt;
    std::vector<double> gamma_grid{0.5};
    std::vector<double> alpha_grid{0.75};
    std::vector<std::string> sweep_scopes;
    CLI::App* sweep = app.add_subcommand("sweep", "Grid over gamma/alpha/scope, emit CSV");
    add_decoder_flags(sweep, sweep_opt);
    sweep->add_option("--gamma-grid", gamma_grid, "Ascending gamma values in [0, 1]")
        ->delimiter(',');
    sweep->add_option("--alpha-grid", alpha_grid, "Ascending alpha values in [0, 1]")
        ->delimiter(',');
    sweep->add_option("--scopes", sweep_scopes, "Scopes to ablate (default: --scope only)")
        ->delimiter(',');
    add_config_flag(sweep);

    std::string eval_corpus, eval_generations, eval_out, eval_traces;
    CommonOptions eval_markers;
    CLI::App* eval = app.add_subcommand("eval", "Score generations against the corpus");
    eval->add_option("--corpus", eval_corpus, "Corpus JSONL path");
    eval->add_option("--generations", eval_generations, "Generations JSONL path");
    eval->add_option("--traces", eval_traces, "Optional traces JSONL (adds logistic section)");
    eval->add_option("--out", eval_out, "Output directory");
    eval->add_option("--think-open", eval_markers.think_open, "Token id of think-open");
    eval->add_option("--think-close", eval_markers.think_close, "Token id of think-close");
    eval->add_option("--answer-open", eval_markers.answer_open, "Token id of answer-open");
    add_config_flag(eval);

    std::string an_corpus, an_traces, an_out;
    CommonOptions an_markers;
    CLI::App* analyze = app.add_subcommand("analyze", "Correlation, mode rates, attention, fit");
    analyze->add_option("--corpus", an_corpus, "Corpus JSONL path");
    analyze->add_option("--traces", an_traces, "Traces JSONL path");
    analyze->add_option("--out", an_out, "Output directory");
    analyze->add_option("--think-open", an_markers.think_open, "Token id of think-open");
    analyze->add_option("--think-close", an_markers.think_close, "Token id of think-close");
    analyze->add_option("--answer-open", an_markers.answer_open, "Token id of answer-open");
    add_config_flag(analyze);

    try {
        const json cfg = load_config_file(argc, argv);

        try {
            app.parse(argc, argv);
        } catch (const CLI::ParseError& e) {
            const int code = app.exit(e);
            return code == 0 ? 0 : 2;
        }

        if (gen->parsed()) {
            apply_config_common(cfg, gen, gen_opt);
            require(gen_opt.backend, "--backend");
            require(gen_opt.corpus, "--corpus");
            require(gen_opt.out, "--out");
            visent::ExperimentConfig config;
            config.backend = visent::parse_backend_spec(gen_opt.backend);
            config.corpus_path = gen_opt.corpus;
            config.out_dir = gen_opt.out;
            config.decoder = decoder_from(gen_opt);
            config.jobs = gen_opt.jobs;
            const visent::GenerateSummary summary = visent::run_generate(config);
            std::fprintf(stderr, "generated %d samples, %d tokens in %.3fs (%.0f tok/s)\n",
                         summary.samples, summary.generated_tokens, summary.seconds,
                         summary.generated_tokens / std::max(summary.seconds, 1e-9));
            std::printf("%s\n%s\n", summary.generations_path.c_str(),
                        summary.traces_path.c_str());
        } else if (sweep->parsed()) {
            apply_config_common(cfg, sweep, sweep_opt);
            config_default(cfg, sweep, "gamma-grid", gamma_grid);
            config_default(cfg, sweep, "alpha-grid", alpha_grid);
            config_default(cfg, sweep, "scopes", sweep_scopes);
            require(sweep_opt.backend, "--backend");
            require(sweep_opt.corpus, "--corpus");
            require(sweep_opt.out, "--out");
            visent::ExperimentConfig config;
            config.backend = visent::parse_backend_spec(sweep_opt.backend);
            config.corpus_path = sweep_opt.corpus;
            config.out_dir = sweep_opt.out;
            config.decoder = decoder_from(sweep_opt);
            config.jobs = sweep_opt.jobs;
            config.gamma_grid = gamma_grid;
            config.alpha_grid = alpha_grid;
            config.sweep_scopes.clear();
            if (sweep_scopes.empty()) {
                config.sweep_scopes.push_back(config.decoder.scope);
            } else {
                for (const std::string& s : sweep_scopes) {
                    config.sweep_scopes.push_back(visent::scope_from_string(s));
                }
            }
            const auto cells = visent::run_sweep(config);
            std::fprintf(stderr, "swept %zu cells\n", cells.size());
            std::printf("%s/sweep.csv\n", config.out_dir.c_str());
        } else if (eval->parsed()) {
            config_default(cfg, eval, "corpus", eval_corpus);
            config_default(cfg, eval, "generations", eval_generations);
            config_default(cfg, eval, "traces", eval_traces);
            config_default(cfg, eval, "out", eval_out);
            config_default(cfg, eval, "think-open", eval_markers.think_open);
            config_default(cfg, eval, "think-close", eval_markers.think_close);
            config_default(cfg, eval, "answer-open", eval_markers.answer_open);
            require(eval_corpus, "--corpus");
            require(eval_generations, "--generations");
            require(eval_out, "--out");
            const visent::MarkerConfig markers{eval_markers.think_open,
                                               eval_markers.think_close,
                                               eval_markers.answer_open};
            std::optional<std::string> traces;
            if (!eval_traces.empty()) traces = eval_traces;
            visent::run_eval(eval_corpus, eval_generations, traces, markers, eval_out);
            std::printf("%s/report.json\n", eval_out.c_str());
        } else if (analyze->parsed()) {
            config_default(cfg, analyze, "corpus", an_corpus);
            config_default(cfg, analyze, "traces", an_traces);
            config_default(cfg, analyze, "out", an_out);
            config_default(cfg, analyze, "think-open", an_markers.think_open);
            config_default(cfg, analyze, "think-close", an_markers.think_close);
            config_default(cfg, analyze, "answer-open", an_markers.answer_open);
            require(an_corpus, "--corpus");
            require(an_traces, "--traces");
            require(an_out, "--out");
            const visent::MarkerConfig markers{an_markers.think_open, an_markers.think_close,
                                               an_markers.answer_open};
            visent::run_analyze(an_corpus, an_traces, markers, an_out);
            std::printf("%s/analysis.json\n", an_out.c_str());
        }
        return 0;
    } catch (const visent::ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const visent::DataError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
}
