#pragma once

#include <optional>
#include <string>
#include <vector>

#include "visent/backend.hpp"

namespace visent {

// Test-oracle backend: the activation matrix and every step distribution are
// given directly, so decode over it is exactly predictable by hand.
//
// Distributions are organized as programs. A program matches when its prompt
// is a prefix of the query; the step index is the number of tokens past that
// prompt. A program with an empty prompt matches everything and can carry an
// explicit offset for the prompt length it expects. The longest matching
// prompt wins.
class ScriptedBackend : public ModelBackend {
public:
    struct Program {
        std::vector<int> prompt;
        std::size_t offset = 0;  // tokens to skip before step 0; prompt.size() if a prompt is set
        std::vector<VocabDistribution> steps;
        std::vector<AttentionSummary> attention;  // optional, indexed like steps
    };

    ScriptedBackend(VisualActivationMatrix matrix, std::vector<Program> programs,
                    int eos = -1);

    // Convenience: one anonymous program whose step 0 starts after
    // `prompt_length` tokens.
    ScriptedBackend(VisualActivationMatrix matrix, std::vector<VocabDistribution> steps,
                    std::size_t prompt_length, int eos = -1);

    static ScriptedBackend from_json(const std::string& text);
    static ScriptedBackend load(const std::string& path);
    std::string to_json() const;
    void save(const std::string& path) const;

    std::size_t vocab_size() const override { return matrix_.vocab_size(); }
    int eos_token() const override { return eos_; }
    const VisualActivationMatrix& activation_matrix() const override { return matrix_; }
    VocabDistribution next_distribution(std::span<const int> prefix) const override;
    std::optional<AttentionSummary> attention_summary(
        std::span<const int> prefix, const AttentionSpans& spans) const override;

private:
    struct Located {
        const Program* program;
        std::size_t step;
    };
    Located locate(std::span<const int> prefix) const;  // throws ScriptExhausted

    VisualActivationMatrix matrix_;
    std::vector<Program> programs_;
    int eos_;
};

}  // namespace visent
