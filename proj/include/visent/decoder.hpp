#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "visent/backend.hpp"
#include "visent/distribution.hpp"
#include "visent/entropy.hpp"
#include "visent/rng.hpp"

namespace visent {

enum class Strategy { greedy, nucleus, beam };

// Which steps receive the entropy penalty. Only thinking steps are ever
// eligible; the gate outcome selects within them.
enum class InterventionScope { divergent_only, all_thinking, normal_only, none };

enum class Segment { other, think, answer };

const char* to_string(Strategy s);
const char* to_string(InterventionScope s);
const char* to_string(Segment s);
Strategy strategy_from_string(const std::string& s);
InterventionScope scope_from_string(const std::string& s);
Segment segment_from_string(const std::string& s);

struct DecoderConfig {
    double gamma = 0.5;   // divergence threshold on the candidate's entropy
    double alpha = 0.75;  // intervention degree in [0, 1]
    EntropyMode entropy_mode = EntropyMode::normalized;
    Strategy strategy = Strategy::greedy;
    double top_p = 0.9;      // nucleus only
    int beam_width = 4;      // beam only
    InterventionScope scope = InterventionScope::divergent_only;
    std::uint64_t seed = 0;
    int max_tokens = 64;
    int think_open = 0;
    int think_close = 1;
    int answer_open = 2;

    // Optional adjustment of p_t before the gate; the seam where external
    // decoding tweaks compose. Must return a valid distribution. Not part of
    // file-based configuration.
    std::function<VocabDistribution(const VocabDistribution&, int)> pre_intervention_hook;

    void validate() const;  // throws ConfigError
};

// Per-step record of the gate decision and token choice.
struct StepTrace {
    int step_index = 0;
    int candidate_token = 0;        // top-1 of the unmodified distribution
    double candidate_entropy = 0.0;
    bool divergent = false;         // candidate_entropy > gamma
    bool intervened = false;        // the scope rule fired at this step
    int selected_token = 0;
    Segment segment = Segment::other;  // segment the step was generated in
    bool degenerate_row = false;    // candidate's activation row was all zero
    bool marker_violation = false;  // selected marker broke think/answer nesting
    std::optional<AttentionSummary> attention;
};

struct DecodeResult {
    std::vector<int> tokens;  // generated tokens, prompt excluded
    std::vector<StepTrace> traces;
    VisualEntropyVector entropy;  // computed once at prefill, reused every step
};

// Tracks think/answer segment state across a token stream. The prompt is
// scanned first so generation starts in the segment the prompt left open.
class SegmentTracker {
public:
    explicit SegmentTracker(const DecoderConfig& config);

    Segment segment() const { return segment_; }
    AttentionSpans spans() const;

    // Feed one token; returns true when the marker broke nesting
    // (reopened think, closed an unopened think, duplicate answer marker).
    bool advance(int token, int position);

    void scan(std::span<const int> tokens);

private:
    int think_open_, think_close_, answer_open_;
    Segment segment_ = Segment::other;
    int think_begin_ = 0;
    int think_end_ = 0;
};

// Multiplicative entropy penalty: result is proportional to
// dist * exp(-alpha * entropy), renormalized. alpha = 0 returns the input
// bit-identically.
VocabDistribution intervene(const VocabDistribution& dist,
                            const VisualEntropyVector& entropy, double alpha);

struct GateResult {
    bool divergent = false;
    bool intervened = false;
    int candidate = 0;
    double candidate_entropy = 0.0;
    bool degenerate_row = false;
    VocabDistribution dist;  // effective distribution after the scope rule
};

// Gate evaluated on the top-1 candidate of the unmodified distribution;
// the inequality is strict (entropy equal to gamma is not divergent).
GateResult gate_step(const VocabDistribution& dist, const VisualEntropyVector& entropy,
                     const DecoderConfig& config, Segment segment);

// Argmax with lowest-index tie-break.
int select_greedy(const VocabDistribution& dist);

// Samples from the renormalized smallest probability-sorted prefix whose
// mass reaches top_p; the top token is always included.
int select_nucleus(const VocabDistribution& dist, double top_p, Rng& rng);

// Deterministic beam search; hypotheses scored by summed log probabilities
// of the effective (post-gate) distributions, gate applied per hypothesis.
DecodeResult beam_search(const ModelBackend& backend, std::span<const int> prompt,
                         const DecoderConfig& config);

// The full gated decode loop. Dispatches to beam_search for the beam
// strategy; greedy and nucleus run the single-hypothesis loop.
DecodeResult decode(const ModelBackend& backend, std::span<const int> prompt,
                    const DecoderConfig& config);

}  // namespace visent
