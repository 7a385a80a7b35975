#include "visent/entropy.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>

#include "visent/error.hpp"

namespace visent {

namespace {

constexpr double kColumnSumTolerance = 1e-6;

}  // namespace

void VisualHiddenStates::validate() const {
    if (values.rows < 1) {
        throw ConfigError("visual hidden states: dimension d must be >= 1");
    }
    if (values.cols < 2) {
        throw ConfigError("visual hidden states: need m >= 2 visual positions");
    }
    for (const double v : values.data) {
        if (!std::isfinite(v)) {
            throw NumericError("visual hidden states: non-finite entry");
        }
    }
}

VisualActivationMatrix::VisualActivationMatrix(Matrix values) : values_(std::move(values)) {
    if (values_.cols < 2) {
        throw ConfigError("activation matrix: need m >= 2 visual positions "
                          "(entropy normalization divides by log m)");
    }
    if (values_.rows < 1) {
        throw ConfigError("activation matrix: empty vocabulary");
    }
    for (std::size_t j = 0; j < values_.cols; ++j) {
        double sum = 0.0;
        for (std::size_t i = 0; i < values_.rows; ++i) {
            const double p = values_.at(i, j);
            if (!(p >= 0.0 && p <= 1.0)) {
                throw NumericError("activation matrix: entry outside [0, 1] at column " +
                                   std::to_string(j));
            }
            sum += p;
        }
        if (std::abs(sum - 1.0) > kColumnSumTolerance) {
            throw NumericError("activation matrix: column " + std::to_string(j) +
                               " sums to " + std::to_string(sum) + ", expected 1");
        }
    }
}

std::vector<double> VisualActivationMatrix::token_row(std::size_t token_id) const {
    if (token_id >= values_.rows) {
        throw IndexError("token id " + std::to_string(token_id) + " outside vocabulary of " +
                         std::to_string(values_.rows));
    }
    const auto row = values_.row(token_id);
    return {row.begin(), row.end()};
}

std::string VisualActivationMatrix::to_json() const {
    nlohmann::json j;
    j["vocab_size"] = values_.rows;
    j["num_visual_tokens"] = values_.cols;
    nlohmann::json columns = nlohmann::json::array();
    for (std::size_t c = 0; c < values_.cols; ++c) {
        nlohmann::json col = nlohmann::json::array();
        for (std::size_t r = 0; r < values_.rows; ++r) {
            col.push_back(values_.at(r, c));
        }
        columns.push_back(std::move(col));
    }
    j["columns"] = std::move(columns);
    return j.dump();
}

VisualActivationMatrix VisualActivationMatrix::from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("activation matrix json: ") + e.what());
    }
    const std::size_t vocab = j.at("vocab_size").get<std::size_t>();
    const std::size_t m = j.at("num_visual_tokens").get<std::size_t>();
    const auto& columns = j.at("columns");
    if (columns.size() != m) {
        throw ConfigError("activation matrix json: num_visual_tokens disagrees with columns");
    }
    Matrix values(vocab, m);
    for (std::size_t c = 0; c < m; ++c) {
        const auto& col = columns.at(c);
        if (col.size() != vocab) {
            throw ConfigError("activation matrix json: column " + std::to_string(c) +
                              " has wrong length");
        }
        for (std::size_t r = 0; r < vocab; ++r) {
            values.at(r, c) = col.at(r).get<double>();
        }
    }
    return VisualActivationMatrix(std::move(values));
}

VisualActivationMatrix project_visual_states(const VisualHiddenStates& states,
                                             const Matrix& head) {
    states.validate();
    if (head.cols != states.values.rows) {
        throw ConfigError("project_visual_states: head expects dimension " +
                          std::to_string(head.cols) + ", states have " +
                          std::to_string(states.values.rows));
    }
    for (const double w : head.data) {
        if (!std::isfinite(w)) {
            throw NumericError("project_visual_states: non-finite head weight");
        }
    }
    const std::size_t vocab = head.rows;
    const std::size_t m = states.values.cols;
    Matrix out(vocab, m);
    std::vector<double> column(states.values.rows);
    std::vector<double> logits(vocab);
    for (std::size_t j = 0; j < m; ++j) {
        for (std::size_t r = 0; r < states.values.rows; ++r) {
            column[r] = states.values.at(r, j);
        }
        logits = kernels::matvec(head, column);
        kernels::softmax_inplace(logits);
        for (std::size_t r = 0; r < vocab; ++r) {
            out.at(r, j) = logits[r];
        }
    }
    return VisualActivationMatrix(std::move(out));
}

namespace {

// Entropy of one activation row. The row is copied and sorted ascending
// before summation so that permuting visual positions cannot perturb
// rounding; permutation invariance then holds exactly.
TokenEntropy row_entropy(std::vector<double> row, EntropyMode mode) {
    std::sort(row.begin(), row.end());
    const double log_m = std::log(static_cast<double>(row.size()));

    double sum = 0.0;
    double plogp = 0.0;  // sum of p*log(p), with 0*log(0) = 0
    std::size_t nonzero = 0;
    for (const double p : row) {
        sum += p;
        if (p > 0.0) {
            ++nonzero;
            plogp += p * std::log(p);
        }
    }

    if (mode == EntropyMode::verbatim) {
        TokenEntropy e;
        e.degenerate = (nonzero == 0);
        e.value = e.degenerate ? 0.0 : -plogp / log_m;
        if (e.value < 0.0 && e.value > -1e-15) e.value = 0.0;  // -0 from exact one-hot
        return e;
    }

    // normalized mode: rescale the row to sum to 1 first
    if (nonzero == 0) {
        return {0.0, true};  // all-zero row carries no signal
    }
    if (nonzero == 1) {
        return {0.0, false};  // one-hot after rescaling
    }
    const double first = row[row.size() - nonzero];
    bool uniform = true;
    for (std::size_t i = row.size() - nonzero; i < row.size(); ++i) {
        if (row[i] != first) {
            uniform = false;
            break;
        }
    }
    if (uniform && nonzero == row.size()) {
        return {1.0, false};  // rescaled row is exactly uniform
    }
    // -sum_i (p/S) log(p/S) = log S - (sum_i p log p) / S
    double value = (std::log(sum) - plogp / sum) / log_m;
    value = std::clamp(value, 0.0, 1.0);
    return {value, false};
}

}  // namespace

TokenActivationVector token_activation(const VisualActivationMatrix& matrix,
                                       std::size_t token_id) {
    return {matrix.token_row(token_id), token_id};
}

TokenEntropy token_visual_entropy(const VisualActivationMatrix& matrix,
                                  std::size_t token_id, EntropyMode mode) {
    return row_entropy(matrix.token_row(token_id), mode);
}

VisualEntropyVector visual_entropy_vector(const VisualActivationMatrix& matrix,
                                          EntropyMode mode) {
    VisualEntropyVector out;
    out.values.resize(matrix.vocab_size());
    out.degenerate.resize(matrix.vocab_size());
    for (std::size_t y = 0; y < matrix.vocab_size(); ++y) {
        const TokenEntropy e = token_visual_entropy(matrix, y, mode);
        if (std::isnan(e.value)) {
            throw NumericError("visual entropy: NaN at token " + std::to_string(y));
        }
        out.values[y] = e.value;
        out.degenerate[y] = e.degenerate ? 1 : 0;
    }
    return out;
}

}  // namespace visent
