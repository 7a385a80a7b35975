#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "visent/kernels.hpp"

namespace visent {

// How the per-token activation row is treated before the entropy formula.
// `normalized` rescales the row to sum to 1 first, which makes the [0, 1]
// bound hold for every token; `verbatim` applies the formula to the raw row
// (entries of column softmaxes), whose entropy is only guaranteed nonnegative.
enum class EntropyMode { normalized, verbatim };

// Final-layer activations at the m visual positions: d rows x m columns.
struct VisualHiddenStates {
    Matrix values;  // d x m
    int layer_index = -1;

    void validate() const;  // d >= 1, m >= 2, finite entries
};

// Per-position vocabulary distributions: |V| rows x m columns, each column a
// softmax over the vocabulary. Row y is how strongly token y is activated by
// each visual position.
class VisualActivationMatrix {
public:
    explicit VisualActivationMatrix(Matrix values);  // validates invariants

    std::size_t vocab_size() const { return values_.rows; }
    std::size_t num_visual_tokens() const { return values_.cols; }
    const Matrix& values() const { return values_; }

    // Activation row for one token. Throws IndexError when out of range.
    std::vector<double> token_row(std::size_t token_id) const;

    // Debug dump format: {"vocab_size", "num_visual_tokens", "columns": [[...], ...]}
    std::string to_json() const;
    static VisualActivationMatrix from_json(const std::string& text);

private:
    Matrix values_;
};

// Activation row extracted for one token.
struct TokenActivationVector {
    std::vector<double> values;  // length m
    std::size_t token_id = 0;
};

struct TokenEntropy {
    double value = 0.0;
    bool degenerate = false;  // the raw activation row was all zero
};

// Entropy score for every vocabulary token, plus per-token degenerate flags.
struct VisualEntropyVector {
    std::vector<double> values;
    std::vector<unsigned char> degenerate;

    std::size_t size() const { return values.size(); }
};

// Column j of the result is softmax(head * states[:, j]). head is |V| x d.
VisualActivationMatrix project_visual_states(const VisualHiddenStates& states,
                                             const Matrix& head);

// The activation row p_v(y) bundled with its token id.
TokenActivationVector token_activation(const VisualActivationMatrix& matrix,
                                       std::size_t token_id);

TokenEntropy token_visual_entropy(const VisualActivationMatrix& matrix,
                                  std::size_t token_id, EntropyMode mode);

VisualEntropyVector visual_entropy_vector(const VisualActivationMatrix& matrix,
                                          EntropyMode mode);

}  // namespace visent
