#pragma once

// Shared fixture builders and independent oracles for the test suites. The
// oracles are deliberately separate implementations (plain long-double
// loops, no sorting tricks) so they can stand as references for the library.

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <unistd.h>
#include <vector>

#include "visent/corpus.hpp"
#include "visent/distribution.hpp"
#include "visent/entropy.hpp"
#include "visent/rng.hpp"
#include "visent/scripted_backend.hpp"

namespace fx {

// ---------------------------------------------------------------------------
// oracles

// Scalar brute-force entropy of one activation row, normalized mode.
inline long double oracle_entropy_normalized(const std::vector<double>& row) {
    long double sum = 0.0L;
    for (const double p : row) sum += p;
    if (sum == 0.0L) return 0.0L;
    long double acc = 0.0L;
    for (const double p : row) {
        if (p <= 0.0) continue;
        const long double q = static_cast<long double>(p) / sum;
        acc -= q * std::log(q);
    }
    return acc / std::log(static_cast<long double>(row.size()));
}

inline long double oracle_entropy_verbatim(const std::vector<double>& row) {
    long double acc = 0.0L;
    for (const double p : row) {
        if (p <= 0.0) continue;
        acc -= static_cast<long double>(p) * std::log(static_cast<long double>(p));
    }
    return acc / std::log(static_cast<long double>(row.size()));
}

// Direct two-pass Pearson rho and least-squares R^2 in long double.
struct OracleCorrelation {
    long double rho;
    long double r2;
};

inline OracleCorrelation oracle_pearson(const std::vector<std::pair<double, double>>& pairs) {
    const long double n = static_cast<long double>(pairs.size());
    long double mx = 0.0L, my = 0.0L;
    for (const auto& [x, y] : pairs) {
        mx += x;
        my += y;
    }
    mx /= n;
    my /= n;
    long double sxx = 0.0L, syy = 0.0L, sxy = 0.0L;
    for (const auto& [x, y] : pairs) {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    const long double rho = sxy / std::sqrt(sxx * syy);
    const long double slope = sxy / sxx;
    const long double intercept = my - slope * mx;
    long double ss_res = 0.0L;
    for (const auto& [x, y] : pairs) {
        const long double r = y - (intercept + slope * x);
        ss_res += r * r;
    }
    return {rho, 1.0L - ss_res / syy};
}

// ---------------------------------------------------------------------------
// activation-matrix builders

// |V| x 2 column-stochastic matrix where row i splits its mass by balance
// w_i across the two columns. Equal row masses; requires sum(w) = |V|/2 so
// both columns sum to 1.
inline visent::VisualActivationMatrix two_col_matrix(const std::vector<double>& balances) {
    const std::size_t vocab = balances.size();
    double total = 0.0;
    for (const double w : balances) total += w;
    if (std::abs(total - static_cast<double>(vocab) / 2.0) > 1e-9) {
        throw std::logic_error("two_col_matrix: balances must sum to |V|/2");
    }
    const double mass = 2.0 / static_cast<double>(vocab);
    visent::Matrix values(vocab, 2);
    for (std::size_t i = 0; i < vocab; ++i) {
        values.at(i, 0) = mass * balances[i];
        values.at(i, 1) = mass * (1.0 - balances[i]);
    }
    return visent::VisualActivationMatrix(std::move(values));
}

// Random column-stochastic matrix via per-column softmax of gaussians.
inline visent::VisualActivationMatrix random_matrix(visent::Rng& rng, std::size_t vocab,
                                                    std::size_t m) {
    visent::Matrix values(vocab, m);
    for (std::size_t j = 0; j < m; ++j) {
        double max_logit = -1e300;
        std::vector<double> logits(vocab);
        for (std::size_t i = 0; i < vocab; ++i) {
            logits[i] = rng.next_gaussian();
            max_logit = std::max(max_logit, logits[i]);
        }
        double sum = 0.0;
        for (std::size_t i = 0; i < vocab; ++i) {
            logits[i] = std::exp(logits[i] - max_logit);
            sum += logits[i];
        }
        for (std::size_t i = 0; i < vocab; ++i) {
            values.at(i, j) = logits[i] / sum;
        }
    }
    return visent::VisualActivationMatrix(std::move(values));
}

inline visent::VocabDistribution dist(std::vector<double> values) {
    visent::VocabDistribution d;
    d.values = std::move(values);
    d.validate();
    return d;
}

inline visent::VocabDistribution one_hot(std::size_t vocab, std::size_t token) {
    std::vector<double> values(vocab, 0.0);
    values[token] = 1.0;
    return dist(std::move(values));
}

inline visent::VocabDistribution random_dist(visent::Rng& rng, std::size_t vocab) {
    std::vector<double> values(vocab);
    double max_logit = -1e300;
    for (double& v : values) {
        v = rng.next_gaussian();
        max_logit = std::max(max_logit, v);
    }
    double sum = 0.0;
    for (double& v : values) {
        v = std::exp(v - max_logit);
        sum += v;
    }
    for (double& v : values) v /= sum;
    return dist(std::move(values));
}

// ---------------------------------------------------------------------------
// the argmax-flip decode fixture
//
// Vocabulary: 0 <think>, 1 </think>, 2 <answer>, 3 <eos>, 4 A, 5 B.
// Balances put A's entropy high (binary entropy of 0.75) and B's low, so an
// intervention at a divergent step flips the argmax from A to B.
struct FlipFixture {
    visent::ScriptedBackend backend;
    std::vector<int> prompt;
    double entropy_a = 0.0;  // high
    double entropy_b = 0.0;  // low
};

inline FlipFixture make_flip_fixture() {
    // sum = 3.0 = |V|/2
    const std::vector<double> balances{0.02, 0.24, 0.98, 0.02, 0.75, 0.99};
    visent::VisualActivationMatrix matrix = two_col_matrix(balances);

    std::vector<visent::VocabDistribution> steps;
    steps.push_back(one_hot(6, 4));                                    // step 0: A
    steps.push_back(dist({0.0, 0.0, 0.0, 0.0, 0.52, 0.48}));           // step 1: flip point
    steps.push_back(one_hot(6, 2));                                    // step 2: <answer>
    steps.push_back(dist({0.0, 0.0, 0.0, 0.0, 0.52, 0.48}));           // step 3: answer segment
    steps.push_back(one_hot(6, 3));                                    // step 4: <eos>

    const auto ent = visual_entropy_vector(matrix, visent::EntropyMode::normalized);
    FlipFixture fixture{
        visent::ScriptedBackend(std::move(matrix), std::move(steps), 1, 3), {0}, 0.0, 0.0};
    fixture.entropy_a = ent.values[4];
    fixture.entropy_b = ent.values[5];
    return fixture;
}

// ---------------------------------------------------------------------------
// the intervention-location fixture (scope-ordering corpus)
//
// Vocabulary: 0 <think>, 1 </think>, 2 <answer>, 3 <eos>, 4 dog, 5 cat,
// 6 the, 7 sits, 8 car, 9 unicorn. Truth objects are dog and car; cat and
// unicorn are hallucinations. Divergent steps put a high-entropy cat on top
// with dog close behind; trap steps put a normal-entropy dog on top with a
// very low-entropy unicorn close behind, so intervening at normal steps
// introduces a hallucination.
struct ScopeFixture {
    visent::ScriptedBackend backend;
    std::vector<visent::AnnotatedSample> corpus;
};

inline ScopeFixture make_scope_fixture(int type_a = 3, int type_b = 3) {
    const std::vector<double> balances{0.5, 0.485, 0.02, 0.98, 0.9,
                                       0.5, 0.5,   0.02, 0.1,  0.995};
    visent::VisualActivationMatrix matrix = two_col_matrix(balances);

    const visent::VocabDistribution divergent_step =
        dist({0, 0, 0, 0, 0.40, 0.55, 0, 0.05, 0, 0});
    const visent::VocabDistribution trap_step =
        dist({0, 0, 0, 0, 0.52, 0, 0, 0.05, 0, 0.43});

    std::vector<visent::ScriptedBackend::Program> programs;
    std::vector<visent::AnnotatedSample> corpus;
    const std::map<int, std::string> display{
        {0, "<think>"}, {1, "</think>"}, {2, "<answer>"}, {3, "<eos>"}, {4, "dog"},
        {5, "cat"},     {6, "the"},      {7, "sits"},     {8, "car"},  {9, "unicorn"}};
    const std::map<std::string, std::string> synonyms{
        {"cat", "cat"}, {"unicorn", "unicorn"}};

    int serial = 0;
    auto add_sample = [&](bool with_trap) {
        // distinct prompts make per-sample programs matchable by prefix
        std::vector<int> prompt{6, 6};
        int bits = serial;
        for (int b = 0; b < 3; ++b) {
            prompt.push_back((bits & 1) ? 7 : 6);
            bits >>= 1;
        }
        prompt.push_back(0);  // <think>
        ++serial;

        visent::ScriptedBackend::Program program;
        program.prompt = prompt;
        if (with_trap) program.steps.push_back(trap_step);
        else program.steps.push_back(one_hot(10, 4));   // benign dog
        program.steps.push_back(divergent_step);
        program.steps.push_back(one_hot(10, 2));        // <answer>
        program.steps.push_back(one_hot(10, with_trap ? 8 : 4));
        program.steps.push_back(one_hot(10, 3));        // <eos>
        // think-heavy attention as in the answer-stage bias analysis
        for (std::size_t k = 0; k < program.steps.size(); ++k) {
            program.attention.push_back(visent::AttentionSummary{0.03, 0.9, 0.07});
        }
        programs.push_back(std::move(program));

        visent::AnnotatedSample sample;
        sample.id = (with_trap ? "trap-" : "plain-") + std::to_string(serial);
        const int prompt_len = static_cast<int>(prompt.size());
        // tokens carry the baseline (no-intervention) chain so segment
        // annotations line up with traces during analysis
        sample.tokens = prompt;
        sample.tokens.insert(sample.tokens.end(), {4, 5, 2, with_trap ? 8 : 4, 3});
        sample.prompt_len = prompt_len;
        sample.segments = {{prompt_len, prompt_len + 1, false},
                           {prompt_len + 1, prompt_len + 2, true}};
        sample.display = display;
        sample.truth_objects = {"dog", "car"};
        sample.synonyms = synonyms;
        corpus.push_back(std::move(sample));
    };
    for (int i = 0; i < type_a; ++i) add_sample(false);
    for (int i = 0; i < type_b; ++i) add_sample(true);

    return ScopeFixture{visent::ScriptedBackend(std::move(matrix), std::move(programs), 3),
                        std::move(corpus)};
}

// ---------------------------------------------------------------------------
// mode-rate corpus: hallucinated mentions injected with probability p_div
// into divergent segments and p_norm into normal ones
inline std::vector<visent::AnnotatedSample> make_mode_rate_corpus(
    std::uint64_t seed, int segments_per_mode, int mentions_per_segment, double p_norm,
    double p_div) {
    visent::Rng rng(seed);
    std::vector<visent::AnnotatedSample> corpus;
    const std::map<int, std::string> display{
        {0, "<think>"}, {1, "</think>"}, {2, "<answer>"}, {4, "dog"}, {5, "cat"}};
    const int per_sample = 4;  // segments per sample, alternating modes
    int made_norm = 0, made_div = 0, serial = 0;
    while (made_norm < segments_per_mode || made_div < segments_per_mode) {
        visent::AnnotatedSample sample;
        sample.id = "mr-" + std::to_string(serial++);
        sample.display = display;
        sample.truth_objects = {"dog"};
        sample.synonyms = {{"cat", "cat"}};
        sample.tokens.push_back(0);  // <think>
        for (int s = 0; s < per_sample; ++s) {
            const bool divergent = (s % 2) == 1;
            if (divergent && made_div >= segments_per_mode) continue;
            if (!divergent && made_norm >= segments_per_mode) continue;
            const int begin = static_cast<int>(sample.tokens.size());
            const double p = divergent ? p_div : p_norm;
            for (int k = 0; k < mentions_per_segment; ++k) {
                sample.tokens.push_back(rng.next_double() < p ? 5 : 4);
            }
            sample.segments.push_back(
                {begin, static_cast<int>(sample.tokens.size()), divergent});
            (divergent ? made_div : made_norm) += 1;
        }
        sample.tokens.push_back(2);  // <answer>
        sample.tokens.push_back(4);
        corpus.push_back(std::move(sample));
    }
    return corpus;
}

// ---------------------------------------------------------------------------
// synthetic logistic points: divergent ~ N(mu_div, sd), normal ~ N(mu_norm, sd)
inline std::vector<std::pair<double, bool>> make_logistic_points(std::uint64_t seed, int per_class,
                                                                 double mu_norm, double mu_div,
                                                                 double sd) {
    visent::Rng rng(seed);
    std::vector<std::pair<double, bool>> points;
    points.reserve(static_cast<std::size_t>(2 * per_class));
    for (int i = 0; i < per_class; ++i) {
        points.emplace_back(mu_norm + sd * rng.next_gaussian(), false);
        points.emplace_back(mu_div + sd * rng.next_gaussian(), true);
    }
    return points;
}

// ---------------------------------------------------------------------------
// process helpers

struct TempDir {
    std::filesystem::path path;

    TempDir() {
        std::string tmpl = (std::filesystem::temp_directory_path() / "visent-XXXXXX").string();
        char* made = mkdtemp(tmpl.data());
        if (made == nullptr) throw std::runtime_error("mkdtemp failed");
        path = made;
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    std::string operator/(const std::string& name) const { return (path / name).string(); }
};

struct CliResult {
    int exit_code;
    std::string output;  // stdout + stderr
};

inline CliResult run_cli(const std::string& args, const TempDir& dir) {
    const std::string log = dir / ("cli-log-" + std::to_string(::getpid()) + ".txt");
    const std::string cmd = std::string(VISENT_CLI_PATH) + " " + args + " > " + log + " 2>&1";
    const int status = std::system(cmd.c_str());
    CliResult result{-1, ""};
    if (WIFEXITED(status)) result.exit_code = WEXITSTATUS(status);
    std::ifstream in(log);
    std::stringstream buf;
    buf << in.rdbuf();
    result.output = buf.str();
    return result;
}

inline std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

}  // namespace fx
