#include "visent/eval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "visent/error.hpp"

namespace visent {

SegmentSplit split_segments(std::span<const int> tokens, const MarkerConfig& markers) {
    const int n = static_cast<int>(tokens.size());
    std::vector<int> think_opens, answer_opens;
    for (int i = 0; i < n; ++i) {
        if (tokens[i] == markers.think_open) think_opens.push_back(i);
        if (tokens[i] == markers.answer_open) answer_opens.push_back(i);
    }
    auto positions = [](const std::vector<int>& v) {
        std::string s;
        for (const int p : v) {
            if (!s.empty()) s += ", ";
            s += std::to_string(p);
        }
        return s;
    };
    if (think_opens.size() > 1) {
        throw DataError("duplicated think-open markers at positions " + positions(think_opens));
    }
    if (answer_opens.size() > 1) {
        throw DataError("duplicated answer-open markers at positions " + positions(answer_opens));
    }

    SegmentSplit split;
    if (think_opens.empty() && answer_opens.empty()) {
        split.answer_begin = 0;
        split.answer_end = n;
        split.warning = true;
        return split;
    }
    if (!think_opens.empty()) {
        const int open = think_opens.front();
        int end = n;
        for (int i = open + 1; i < n; ++i) {
            if (tokens[i] == markers.think_close || tokens[i] == markers.answer_open) {
                end = i;
                break;
            }
        }
        split.think_begin = open + 1;
        split.think_end = end;
    } else {
        split.warning = true;
    }
    if (!answer_opens.empty()) {
        split.answer_begin = answer_opens.front() + 1;
        split.answer_end = n;
    } else {
        split.warning = true;
    }
    return split;
}

MentionCount count_mentions(const AnnotatedSample& sample, int begin, int end,
                            const std::set<std::string>& lexicon) {
    MentionCount count;
    begin = std::max(begin, 0);
    end = std::min(end, static_cast<int>(sample.tokens.size()));
    for (int i = begin; i < end; ++i) {
        const auto display = sample.display.find(sample.tokens[i]);
        if (display == sample.display.end()) continue;
        std::string canonical = display->second;
        const auto synonym = sample.synonyms.find(canonical);
        if (synonym != sample.synonyms.end()) canonical = synonym->second;
        if (!lexicon.count(canonical)) continue;
        ++count.total;
        if (!sample.truth_objects.count(canonical)) ++count.hallucinated;
    }
    return count;
}

namespace {

std::pair<int, int> span_for(const SegmentSplit& split, SpanKind span, int n) {
    switch (span) {
        case SpanKind::full: return {0, n};
        case SpanKind::think_only: return {split.think_begin, split.think_end};
        case SpanKind::answer_only: return {split.answer_begin, split.answer_end};
    }
    return {0, n};
}

}  // namespace

HallucinationReport chair_metrics(const std::vector<AnnotatedSample>& corpus,
                                  const std::set<std::string>& lexicon, SpanKind span,
                                  const MarkerConfig& markers) {
    if (corpus.empty()) throw DataError("chair: empty corpus");
    if (lexicon.empty()) throw DataError("chair: empty object lexicon");

    HallucinationReport report;
    report.samples = static_cast<int>(corpus.size());
    for (const AnnotatedSample& sample : corpus) {
        const SegmentSplit split = split_segments(sample.tokens, markers);
        const int n = static_cast<int>(sample.tokens.size());
        const auto [begin, end] = span_for(split, span, n);
        const MentionCount in_span = count_mentions(sample, begin, end, lexicon);
        report.mentions += in_span.total;
        report.hallucinated_mentions += in_span.hallucinated;
        if (in_span.hallucinated > 0) ++report.flagged_samples;

        SampleRates rates;
        rates.id = sample.id;
        const MentionCount think =
            count_mentions(sample, split.think_begin, split.think_end, lexicon);
        const MentionCount answer =
            count_mentions(sample, split.answer_begin, split.answer_end, lexicon);
        if (think.total > 0) {
            rates.thinking = static_cast<double>(think.hallucinated) / think.total;
        }
        if (answer.total > 0) {
            rates.answering = static_cast<double>(answer.hallucinated) / answer.total;
        }
        report.per_sample.push_back(std::move(rates));
    }
    report.chair_i = report.mentions > 0
                         ? static_cast<double>(report.hallucinated_mentions) / report.mentions
                         : 0.0;
    report.chair_s = static_cast<double>(report.flagged_samples) / report.samples;
    report.mode_rates = mode_hallucination_rates(corpus, lexicon);
    return report;
}

PopeReport pope_metrics(std::span<const PopePair> items) {
    if (items.empty()) throw DataError("pope: no items");
    int tp = 0, fp = 0, tn = 0, fn = 0;
    for (const PopePair& item : items) {
        if (item.expected_yes && item.predicted_yes) ++tp;
        else if (!item.expected_yes && item.predicted_yes) ++fp;
        else if (!item.expected_yes && !item.predicted_yes) ++tn;
        else ++fn;
    }
    PopeReport report;
    report.total = static_cast<int>(items.size());
    report.accuracy = static_cast<double>(tp + tn) / report.total;
    if (tp + fp == 0 && tp + fn == 0) {
        // no positive predictions and no positive labels: trivially perfect
        report.precision = 1.0;
        report.recall = 1.0;
        report.f1 = 1.0;
        report.degenerate = true;
        return report;
    }
    report.precision = tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
    report.recall = tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
    report.f1 = report.precision + report.recall > 0.0
                    ? 2.0 * report.precision * report.recall /
                          (report.precision + report.recall)
                    : 0.0;
    return report;
}

std::optional<bool> derive_pope_prediction(const AnnotatedSample& sample,
                                           const MarkerConfig& markers) {
    const SegmentSplit split = split_segments(sample.tokens, markers);
    auto lower = [](std::string s) {
        std::transform(s.begin(), s.end(), s.begin(),
                       [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        return s;
    };
    for (int i = split.answer_begin; i < split.answer_end; ++i) {
        const auto display = sample.display.find(sample.tokens[i]);
        if (display == sample.display.end()) continue;
        const std::string word = lower(display->second);
        if (word == "yes") return true;
        if (word == "no") return false;
    }
    return std::nullopt;
}

CorrelationReport pearson_r2(std::span<const std::pair<double, double>> pairs) {
    const int n = static_cast<int>(pairs.size());
    if (n < 2) throw DataError("correlation: need at least 2 pairs, got " + std::to_string(n));
    double mx = 0.0, my = 0.0;
    for (const auto& [x, y] : pairs) {
        mx += x;
        my += y;
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (const auto& [x, y] : pairs) {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    if (sxx == 0.0 || syy == 0.0) {
        throw DataError("degenerate correlation: zero variance in a coordinate");
    }
    CorrelationReport report;
    report.n_pairs = n;
    report.pearson_rho = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);

    // R^2 of the least-squares line y = a + b*x
    const double slope = sxy / sxx;
    const double intercept = my - slope * mx;
    double ss_res = 0.0;
    for (const auto& [x, y] : pairs) {
        const double r = y - (intercept + slope * x);
        ss_res += r * r;
    }
    report.r_squared = std::clamp(1.0 - ss_res / syy, 0.0, 1.0);
    return report;
}

CorrelationReport hallucination_correlation(const std::vector<AnnotatedSample>& corpus,
                                            const std::set<std::string>& lexicon,
                                            const MarkerConfig& markers) {
    std::vector<std::pair<double, double>> pairs;
    for (const AnnotatedSample& sample : corpus) {
        const SegmentSplit split = split_segments(sample.tokens, markers);
        const MentionCount think =
            count_mentions(sample, split.think_begin, split.think_end, lexicon);
        const MentionCount answer =
            count_mentions(sample, split.answer_begin, split.answer_end, lexicon);
        if (think.total == 0 || answer.total == 0) continue;
        pairs.emplace_back(static_cast<double>(think.hallucinated) / think.total,
                           static_cast<double>(answer.hallucinated) / answer.total);
    }
    return pearson_r2(pairs);
}

ModeRates mode_hallucination_rates(const std::vector<AnnotatedSample>& corpus,
                                   const std::set<std::string>& lexicon) {
    ModeRates rates;
    double normal_sum = 0.0, divergent_sum = 0.0;
    for (const AnnotatedSample& sample : corpus) {
        for (const SegmentAnnotation& seg : sample.segments) {
            const MentionCount count = count_mentions(sample, seg.begin, seg.end, lexicon);
            if (count.total == 0) continue;
            const double rate = static_cast<double>(count.hallucinated) / count.total;
            if (seg.divergent) {
                divergent_sum += rate;
                ++rates.divergent_segments;
            } else {
                normal_sum += rate;
                ++rates.normal_segments;
            }
        }
    }
    if (rates.normal_segments > 0) rates.normal = normal_sum / rates.normal_segments;
    if (rates.divergent_segments > 0) rates.divergent = divergent_sum / rates.divergent_segments;
    return rates;
}

AttentionRatioReport attention_ratio(std::span<const StepTrace> traces) {
    AttentionRatioReport report;
    for (const StepTrace& trace : traces) {
        if (trace.segment != Segment::answer || !trace.attention) continue;
        report.image_mass += trace.attention->image;
        report.think_mass += trace.attention->think;
        ++report.answer_tokens;
    }
    if (report.answer_tokens == 0) {
        throw DataError("attention ratio: no answer-span steps carry attention summaries");
    }
    report.image_mass /= report.answer_tokens;
    report.think_mass /= report.answer_tokens;
    return report;
}

namespace {

double log_sigmoid(double z) {
    // log(1/(1+e^-z)) without overflow on either tail
    return z >= 0.0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z));
}

double log_likelihood(std::span<const LogisticPoint> points, double b0, double b1) {
    double ll = 0.0;
    for (const LogisticPoint& p : points) {
        const double z = b0 + b1 * p.x;
        ll += p.positive ? log_sigmoid(z) : log_sigmoid(-z);
    }
    return ll;
}

constexpr double kSlopeCap = 50.0;

// One-dimensional Newton refit of the intercept with the slope held fixed.
double refit_intercept(std::span<const LogisticPoint> points, double b0, double b1) {
    for (int iter = 0; iter < 100; ++iter) {
        double g = 0.0, h = 0.0;
        for (const LogisticPoint& p : points) {
            const double prob = 1.0 / (1.0 + std::exp(-(b0 + b1 * p.x)));
            g += (p.positive ? 1.0 : 0.0) - prob;
            h += prob * (1.0 - prob);
        }
        if (h < 1e-12 || std::abs(g) < 1e-12) break;
        b0 += g / h;
    }
    return b0;
}

}  // namespace

LogisticReport logistic_fit(std::span<const LogisticPoint> points, double threshold) {
    const int n = static_cast<int>(points.size());
    if (n < 2) throw DataError("logistic fit: need at least 2 points");
    int positives = 0;
    for (const LogisticPoint& p : points) positives += p.positive ? 1 : 0;
    if (positives == 0 || positives == n) {
        throw DataError("logistic fit: both classes must be present");
    }

    const double pbar = static_cast<double>(positives) / n;
    const double ll_null = positives * std::log(pbar) + (n - positives) * std::log(1.0 - pbar);

    double b0 = std::log(pbar / (1.0 - pbar));
    double b1 = 0.0;
    double ll = log_likelihood(points, b0, b1);
    bool separated = false;

    for (int iter = 0; iter < 500; ++iter) {
        double g0 = 0.0, g1 = 0.0, h00 = 0.0, h01 = 0.0, h11 = 0.0;
        for (const LogisticPoint& p : points) {
            const double prob = 1.0 / (1.0 + std::exp(-(b0 + b1 * p.x)));
            const double resid = (p.positive ? 1.0 : 0.0) - prob;
            const double w = prob * (1.0 - prob);
            g0 += resid;
            g1 += p.x * resid;
            h00 += w;
            h01 += p.x * w;
            h11 += p.x * p.x * w;
        }
        const double det = h00 * h11 - h01 * h01;
        if (!(det > 1e-300)) {
            separated = true;  // Hessian collapsed: probabilities saturated
            break;
        }
        double step0 = (h11 * g0 - h01 * g1) / det;
        double step1 = (h00 * g1 - h01 * g0) / det;

        double lambda = 1.0;
        double next_ll = log_likelihood(points, b0 + step0, b1 + step1);
        int halvings = 0;
        while (next_ll < ll && halvings < 40) {
            lambda *= 0.5;
            next_ll = log_likelihood(points, b0 + lambda * step0, b1 + lambda * step1);
            ++halvings;
        }
        b0 += lambda * step0;
        b1 += lambda * step1;

        if (std::abs(b1) > kSlopeCap) {
            separated = true;
            b1 = b1 > 0.0 ? kSlopeCap : -kSlopeCap;
            b0 = refit_intercept(points, b0, b1);
            break;
        }
        const double delta = next_ll - ll;
        ll = next_ll;
        if (std::abs(delta) < 1e-10) break;
    }

    LogisticReport report;
    report.intercept = b0;
    report.slope = b1;
    report.separated = separated;
    report.threshold = threshold;
    report.n = n;
    const double ll_model = log_likelihood(points, b0, b1);
    report.mcfadden_r2 = std::clamp(1.0 - ll_model / ll_null, 0.0, 1.0 - 1e-15);

    int correct = 0;
    for (const LogisticPoint& p : points) {
        const double prob = 1.0 / (1.0 + std::exp(-(b0 + b1 * p.x)));
        const bool predicted = prob >= threshold;
        if (predicted == p.positive) ++correct;
    }
    report.accuracy = static_cast<double>(correct) / n;
    return report;
}

}  // namespace visent
