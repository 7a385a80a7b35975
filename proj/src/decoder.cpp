#include "visent/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "visent/error.hpp"

namespace visent {

const char* to_string(Strategy s) {
    switch (s) {
        case Strategy::greedy: return "greedy";
        case Strategy::nucleus: return "nucleus";
        case Strategy::beam: return "beam";
    }
    return "?";
}

const char* to_string(InterventionScope s) {
    switch (s) {
        case InterventionScope::divergent_only: return "divergent-only";
        case InterventionScope::all_thinking: return "all-thinking";
        case InterventionScope::normal_only: return "normal-only";
        case InterventionScope::none: return "none";
    }
    return "?";
}

const char* to_string(Segment s) {
    switch (s) {
        case Segment::other: return "other";
        case Segment::think: return "think";
        case Segment::answer: return "answer";
    }
    return "?";
}

Strategy strategy_from_string(const std::string& s) {
    if (s == "greedy") return Strategy::greedy;
    if (s == "nucleus") return Strategy::nucleus;
    if (s == "beam") return Strategy::beam;
    throw ConfigError("unknown strategy '" + s + "' (greedy|nucleus|beam)");
}

InterventionScope scope_from_string(const std::string& s) {
    if (s == "divergent-only" || s == "divergent_only") return InterventionScope::divergent_only;
    if (s == "all-thinking" || s == "all_thinking") return InterventionScope::all_thinking;
    if (s == "normal-only" || s == "normal_only") return InterventionScope::normal_only;
    if (s == "none") return InterventionScope::none;
    throw ConfigError("unknown scope '" + s +
                      "' (divergent-only|all-thinking|normal-only|none)");
}

Segment segment_from_string(const std::string& s) {
    if (s == "other") return Segment::other;
    if (s == "think") return Segment::think;
    if (s == "answer") return Segment::answer;
    throw ConfigError("unknown segment '" + s + "'");
}

void DecoderConfig::validate() const {
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("gamma must be in [0, 1]");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must be in [0, 1]");
    if (!(top_p > 0.0 && top_p <= 1.0)) throw ConfigError("top_p must be in (0, 1]");
    if (beam_width < 1) throw ConfigError("beam width must be >= 1");
    if (max_tokens < 1) throw ConfigError("max_tokens must be >= 1");
}

void AttentionSummary::validate() const {
    if (image < 0.0 || think < 0.0 || other < 0.0) {
        throw NumericError("attention summary: negative mass");
    }
    const double total = image + think + other;
    if (total > 1.0 + 1e-6) {
        throw NumericError("attention summary: declared masses exceed 1");
    }
}

SegmentTracker::SegmentTracker(const DecoderConfig& config)
    : think_open_(config.think_open),
      think_close_(config.think_close),
      answer_open_(config.answer_open) {}

AttentionSpans SegmentTracker::spans() const { return {think_begin_, think_end_}; }

bool SegmentTracker::advance(int token, int position) {
    if (token == think_open_) {
        const bool violation = segment_ != Segment::other;
        segment_ = Segment::think;
        think_begin_ = position + 1;
        think_end_ = position + 1;
        return violation;
    }
    if (token == think_close_) {
        const bool violation = segment_ != Segment::think;
        if (segment_ == Segment::think) {
            think_end_ = position;
            segment_ = Segment::other;
        }
        return violation;
    }
    if (token == answer_open_) {
        const bool violation = segment_ == Segment::answer;
        if (segment_ == Segment::think) think_end_ = position;
        segment_ = Segment::answer;
        return violation;
    }
    if (segment_ == Segment::think) think_end_ = position + 1;
    return false;
}

void SegmentTracker::scan(std::span<const int> tokens) {
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        advance(tokens[i], static_cast<int>(i));
    }
}

VocabDistribution intervene(const VocabDistribution& dist,
                            const VisualEntropyVector& entropy, double alpha) {
    if (dist.size() != entropy.size()) {
        throw ConfigError("intervene: distribution length " + std::to_string(dist.size()) +
                          " does not match entropy length " + std::to_string(entropy.size()));
    }
    if (!(alpha >= 0.0 && alpha <= 1.0)) {
        throw ConfigError("intervene: alpha must be in [0, 1]");
    }
    if (alpha == 0.0) {
        return dist;  // exp(0) = 1; keep the input bit-identical
    }
    VocabDistribution out;
    out.values.resize(dist.size());
    double total = 0.0;
    for (std::size_t i = 0; i < dist.size(); ++i) {
        out.values[i] = dist.values[i] * std::exp(-alpha * entropy.values[i]);
        total += out.values[i];
    }
    if (!(total > 0.0) || !std::isfinite(total)) {
        throw NumericError("intervention mass underflowed to zero");
    }
    for (double& v : out.values) v /= total;
    return out;
}

GateResult gate_step(const VocabDistribution& dist, const VisualEntropyVector& entropy,
                     const DecoderConfig& config, Segment segment) {
    if (dist.size() != entropy.size()) {
        throw ConfigError("gate_step: distribution/entropy length mismatch");
    }
    GateResult g;
    g.candidate = static_cast<int>(dist.argmax());
    g.candidate_entropy = entropy.values[static_cast<std::size_t>(g.candidate)];
    g.degenerate_row = entropy.degenerate[static_cast<std::size_t>(g.candidate)] != 0;
    g.divergent = g.candidate_entropy > config.gamma;  // strict

    bool fire = false;
    switch (config.scope) {
        case InterventionScope::divergent_only:
            fire = g.divergent && segment == Segment::think;
            break;
        case InterventionScope::all_thinking:
            fire = segment == Segment::think;
            break;
        case InterventionScope::normal_only:
            fire = !g.divergent && segment == Segment::think;
            break;
        case InterventionScope::none:
            fire = false;
            break;
    }
    g.intervened = fire;
    g.dist = fire ? intervene(dist, entropy, config.alpha) : dist;
    return g;
}

int select_greedy(const VocabDistribution& dist) {
    return static_cast<int>(dist.argmax());
}

int select_nucleus(const VocabDistribution& dist, double top_p, Rng& rng) {
    if (!(top_p > 0.0 && top_p <= 1.0)) {
        throw ConfigError("select_nucleus: top_p must be in (0, 1]");
    }
    std::vector<std::size_t> order(dist.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return dist.values[a] > dist.values[b];
    });

    // Smallest prefix whose mass reaches top_p; the top token always makes it.
    std::size_t cut = order.size();
    double mass = 0.0;
    for (std::size_t k = 0; k < order.size(); ++k) {
        mass += dist.values[order[k]];
        if (mass >= top_p) {
            cut = k + 1;
            break;
        }
    }
    if (cut == 0) cut = 1;

    double nucleus_mass = 0.0;
    for (std::size_t k = 0; k < cut; ++k) nucleus_mass += dist.values[order[k]];
    const double u = rng.next_double() * nucleus_mass;
    double cdf = 0.0;
    for (std::size_t k = 0; k < cut; ++k) {
        cdf += dist.values[order[k]];
        if (u < cdf) return static_cast<int>(order[k]);
    }
    return static_cast<int>(order[cut - 1]);  // rounding fallback
}

namespace {

struct LoopContext {
    const ModelBackend& backend;
    const DecoderConfig& config;
    const VisualEntropyVector& entropy;
};

VocabDistribution fetch_distribution(const LoopContext& ctx, std::span<const int> seq,
                                     int step, bool& exhausted) {
    exhausted = false;
    try {
        VocabDistribution p = ctx.backend.next_distribution(seq);
        p.validate();
        if (ctx.config.pre_intervention_hook) {
            p = ctx.config.pre_intervention_hook(p, step);
            p.validate();
        }
        return p;
    } catch (const ScriptExhausted&) {
        exhausted = true;
        return {};
    } catch (const NumericError& e) {
        throw NumericError("decode step " + std::to_string(step) + ": " + e.what());
    } catch (const std::exception& e) {
        throw BackendError("decode step " + std::to_string(step) + ": " + e.what());
    }
}

GateResult run_gate(const LoopContext& ctx, const VocabDistribution& p, Segment segment,
                    int step) {
    try {
        return gate_step(p, ctx.entropy, ctx.config, segment);
    } catch (const NumericError& e) {
        throw NumericError("decode step " + std::to_string(step) + ": " + e.what());
    }
}

VisualEntropyVector prefill_entropy(const ModelBackend& backend, const DecoderConfig& config) {
    VisualEntropyVector entropy =
        visual_entropy_vector(backend.activation_matrix(), config.entropy_mode);
    if (entropy.size() != backend.vocab_size()) {
        throw ConfigError("backend activation matrix vocabulary disagrees with vocab_size()");
    }
    return entropy;
}

void check_markers(const ModelBackend& backend, const DecoderConfig& config) {
    const int vocab = static_cast<int>(backend.vocab_size());
    for (const int marker : {config.think_open, config.think_close, config.answer_open}) {
        if (marker < 0 || marker >= vocab) {
            throw ConfigError("marker token id " + std::to_string(marker) +
                              " outside backend vocabulary of " + std::to_string(vocab));
        }
    }
}

}  // namespace

DecodeResult decode(const ModelBackend& backend, std::span<const int> prompt,
                    const DecoderConfig& config) {
    config.validate();
    if (prompt.empty()) throw ConfigError("decode: prompt must be non-empty");
    check_markers(backend, config);
    if (config.strategy == Strategy::beam) {
        return beam_search(backend, prompt, config);
    }

    DecodeResult result;
    result.entropy = prefill_entropy(backend, config);
    const LoopContext ctx{backend, config, result.entropy};

    std::vector<int> seq(prompt.begin(), prompt.end());
    SegmentTracker tracker(config);
    tracker.scan(prompt);
    Rng rng(config.seed);

    for (int t = 0; t < config.max_tokens; ++t) {
        bool exhausted = false;
        const VocabDistribution p = fetch_distribution(ctx, seq, t, exhausted);
        if (exhausted) break;

        const Segment segment = tracker.segment();
        const GateResult g = run_gate(ctx, p, segment, t);

        int selected = 0;
        if (config.strategy == Strategy::nucleus) {
            selected = select_nucleus(g.dist, config.top_p, rng);
        } else {
            selected = select_greedy(g.dist);
        }

        StepTrace trace;
        trace.step_index = t;
        trace.candidate_token = g.candidate;
        trace.candidate_entropy = g.candidate_entropy;
        trace.divergent = g.divergent;
        trace.intervened = g.intervened;
        trace.selected_token = selected;
        trace.segment = segment;
        trace.degenerate_row = g.degenerate_row;
        trace.attention = backend.attention_summary(seq, tracker.spans());
        trace.marker_violation = tracker.advance(selected, static_cast<int>(seq.size()));
        result.traces.push_back(std::move(trace));

        seq.push_back(selected);
        result.tokens.push_back(selected);
        if (selected == backend.eos_token()) break;
    }
    return result;
}

namespace {

struct Hypothesis {
    std::vector<int> tokens;
    double score = 0.0;
    SegmentTracker tracker;
    std::vector<StepTrace> traces;
    bool done = false;
};

struct PoolEntry {
    double score;
    std::size_t parent;
    int token;  // -1 for a finished hypothesis carried over
    Hypothesis hyp;
};

}  // namespace

DecodeResult beam_search(const ModelBackend& backend, std::span<const int> prompt,
                         const DecoderConfig& config) {
    config.validate();
    if (prompt.empty()) throw ConfigError("beam_search: prompt must be non-empty");
    check_markers(backend, config);

    DecodeResult result;
    result.entropy = prefill_entropy(backend, config);
    const LoopContext ctx{backend, config, result.entropy};
    const std::size_t width = static_cast<std::size_t>(config.beam_width);

    SegmentTracker initial(config);
    initial.scan(prompt);
    std::vector<Hypothesis> beams;
    beams.push_back(Hypothesis{{}, 0.0, initial, {}, false});

    std::vector<int> seq;
    for (int t = 0; t < config.max_tokens; ++t) {
        bool all_done = true;
        for (const Hypothesis& h : beams) {
            if (!h.done) all_done = false;
        }
        if (all_done) break;

        std::vector<PoolEntry> pool;
        for (std::size_t hi = 0; hi < beams.size(); ++hi) {
            Hypothesis& h = beams[hi];
            if (h.done) {
                pool.push_back(PoolEntry{h.score, hi, -1, h});
                continue;
            }
            seq.assign(prompt.begin(), prompt.end());
            seq.insert(seq.end(), h.tokens.begin(), h.tokens.end());

            bool exhausted = false;
            const VocabDistribution p = fetch_distribution(ctx, seq, t, exhausted);
            if (exhausted) {
                Hypothesis frozen = h;
                frozen.done = true;
                pool.push_back(PoolEntry{frozen.score, hi, -1, std::move(frozen)});
                continue;
            }
            const Segment segment = h.tracker.segment();
            const GateResult g = run_gate(ctx, p, segment, t);
            const auto attention = backend.attention_summary(seq, h.tracker.spans());

            // top `width` tokens of the effective distribution, ties to the
            // lower index, zero-probability tokens never expanded
            std::vector<std::size_t> order(g.dist.size());
            std::iota(order.begin(), order.end(), std::size_t{0});
            std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
                return g.dist.values[a] > g.dist.values[b];
            });
            std::size_t expanded = 0;
            for (const std::size_t token : order) {
                if (expanded == width) break;
                const double prob = g.dist.values[token];
                if (prob <= 0.0) break;
                Hypothesis child = h;
                child.score += std::log(prob);

                StepTrace trace;
                trace.step_index = t;
                trace.candidate_token = g.candidate;
                trace.candidate_entropy = g.candidate_entropy;
                trace.divergent = g.divergent;
                trace.intervened = g.intervened;
                trace.selected_token = static_cast<int>(token);
                trace.segment = segment;
                trace.degenerate_row = g.degenerate_row;
                trace.attention = attention;
                trace.marker_violation =
                    child.tracker.advance(static_cast<int>(token),
                                          static_cast<int>(seq.size()));
                child.traces.push_back(std::move(trace));
                child.tokens.push_back(static_cast<int>(token));
                child.done = static_cast<int>(token) == backend.eos_token();

                pool.push_back(PoolEntry{child.score, hi, static_cast<int>(token),
                                         std::move(child)});
                ++expanded;
            }
        }

        std::stable_sort(pool.begin(), pool.end(), [](const PoolEntry& a, const PoolEntry& b) {
            if (a.score != b.score) return a.score > b.score;
            if (a.parent != b.parent) return a.parent < b.parent;
            return a.token < b.token;
        });
        const std::size_t keep = std::min(width, pool.size());
        beams.clear();
        for (std::size_t i = 0; i < keep; ++i) {
            beams.push_back(std::move(pool[i].hyp));
        }
        if (beams.empty()) break;
    }

    // beams are sorted best-first by the last pruning pass
    Hypothesis& best = beams.front();
    result.tokens = std::move(best.tokens);
    result.traces = std::move(best.traces);
    return result;
}

}  // namespace visent
