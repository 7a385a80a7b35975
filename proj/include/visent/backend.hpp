#pragma once

#include <cstddef>
#include <optional>
#include <span>

#include "visent/distribution.hpp"
#include "visent/entropy.hpp"

namespace visent {

// Attention mass of one target token over named source spans. Residual is
// whatever the declared spans do not cover; declared masses plus residual
// sum to 1 within 1e-6.
struct AttentionSummary {
    double image = 0.0;
    double think = 0.0;
    double other = 0.0;

    double residual() const { return 1.0 - image - think - other; }
    void validate() const;  // throws NumericError
};

// Where the thinking region sits inside the token prefix, [begin, end).
// The image span is implicit: backends know their own visual positions.
struct AttentionSpans {
    int think_begin = 0;
    int think_end = 0;
};

// One sequence's view of a model. The visual input is fixed for the lifetime
// of the object, so the activation matrix can be computed once at prefill.
// Implementations must be deterministic for a fixed prefix and safely
// shareable read-only across concurrent decode calls.
class ModelBackend {
public:
    virtual ~ModelBackend() = default;

    virtual std::size_t vocab_size() const = 0;

    // End-of-sequence token id, or -1 when the backend has none.
    virtual int eos_token() const { return -1; }

    // p_v for this sequence. Fixed after construction.
    virtual const VisualActivationMatrix& activation_matrix() const = 0;

    // Distribution over the next token given the full prefix (prompt plus
    // generated tokens). Scripted backends throw ScriptExhausted when the
    // script runs out; the decode loop treats that as end-of-sequence.
    virtual VocabDistribution next_distribution(std::span<const int> prefix) const = 0;

    // Attention of the next-token position over image/think/other source
    // spans. Backends without attention introspection return nullopt.
    virtual std::optional<AttentionSummary> attention_summary(
        std::span<const int> prefix, const AttentionSpans& spans) const {
        (void)prefix;
        (void)spans;
        return std::nullopt;
    }
};

}  // namespace visent
