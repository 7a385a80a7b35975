#pragma once

#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "visent/corpus.hpp"
#include "visent/decoder.hpp"

namespace visent {

struct MarkerConfig {
    int think_open = 0;
    int think_close = 1;
    int answer_open = 2;
};

enum class SpanKind { full, think_only, answer_only };

// Think/answer spans over a token sequence, [begin, end) each.
struct SegmentSplit {
    int think_begin = 0, think_end = 0;
    int answer_begin = 0, answer_end = 0;
    bool warning = false;  // a marker was missing
};

// Throws DataError when a marker is duplicated. With no markers at all the
// whole sequence counts as answer and the warning flag is set.
SegmentSplit split_segments(std::span<const int> tokens, const MarkerConfig& markers);

struct MentionCount {
    int hallucinated = 0;
    int total = 0;
};

// Object mentions inside [begin, end): display string, then synonym
// resolution, then lexicon membership. A mention is hallucinated when its
// canonical form is absent from the sample's truth set.
MentionCount count_mentions(const AnnotatedSample& sample, int begin, int end,
                            const std::set<std::string>& lexicon);

struct SampleRates {
    std::string id;
    std::optional<double> thinking;   // absent when the span has no mentions
    std::optional<double> answering;
};

struct ModeRates {
    std::optional<double> normal;     // absent when no segment of the mode scored
    std::optional<double> divergent;
    int normal_segments = 0;
    int divergent_segments = 0;
};

struct HallucinationReport {
    double chair_s = 0.0;  // samples with >= 1 hallucinated mention / samples
    double chair_i = 0.0;  // hallucinated mentions / all mentions
    int samples = 0;
    int flagged_samples = 0;
    int mentions = 0;
    int hallucinated_mentions = 0;
    std::vector<SampleRates> per_sample;
    ModeRates mode_rates;  // populated when segment annotations exist
};

HallucinationReport chair_metrics(const std::vector<AnnotatedSample>& corpus,
                                  const std::set<std::string>& lexicon, SpanKind span,
                                  const MarkerConfig& markers);

struct PopePair {
    bool expected_yes = false;
    bool predicted_yes = false;
};

struct PopeReport {
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    int total = 0;
    bool degenerate = false;  // no positive labels and no positive predictions
};

// "yes" is the positive class.
PopeReport pope_metrics(std::span<const PopePair> items);

// First yes/no display string in the answer span, case-insensitive.
std::optional<bool> derive_pope_prediction(const AnnotatedSample& sample,
                                           const MarkerConfig& markers);

struct CorrelationReport {
    double pearson_rho = 0.0;
    double r_squared = 0.0;  // of the least-squares line
    int n_pairs = 0;
};

// Throws DataError on fewer than two pairs or zero variance in a coordinate.
CorrelationReport pearson_r2(std::span<const std::pair<double, double>> pairs);

// Per-sample (thinking rate, answering rate) pairs; mention-free spans are
// excluded from pairing.
CorrelationReport hallucination_correlation(const std::vector<AnnotatedSample>& corpus,
                                            const std::set<std::string>& lexicon,
                                            const MarkerConfig& markers);

// Mean per-segment hallucinated-mention rate, averaged by mode. Segments
// without mentions are skipped.
ModeRates mode_hallucination_rates(const std::vector<AnnotatedSample>& corpus,
                                   const std::set<std::string>& lexicon);

struct AttentionRatioReport {
    double image_mass = 0.0;
    double think_mass = 0.0;
    int answer_tokens = 0;
};

// Mean attention mass over answer-segment steps. Throws DataError when no
// answer step carries a summary.
AttentionRatioReport attention_ratio(std::span<const StepTrace> traces);

struct LogisticPoint {
    double x = 0.0;
    bool positive = false;
};

struct LogisticReport {
    double intercept = 0.0;
    double slope = 0.0;
    double mcfadden_r2 = 0.0;
    double threshold = 0.5;
    double accuracy = 0.0;  // at the threshold on the predicted probability
    bool separated = false; // perfect separation; slope capped at +/-50
    int n = 0;
};

// Two-parameter maximum-likelihood logistic fit by damped Newton iteration;
// converges when the log-likelihood moves less than 1e-10 (500 iterations
// cap). Requires both classes present.
LogisticReport logistic_fit(std::span<const LogisticPoint> points, double threshold = 0.5);

}  // namespace visent
