#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "visent/backend.hpp"
#include "visent/kernels.hpp"

namespace visent {

struct TinyConfig {
    int vocab_size = 64;
    int dim = 32;
    int layers = 2;
    int heads = 2;
    int context = 256;
    int num_visual_tokens = 8;
    std::uint64_t seed = 0;

    void validate() const;
};

// Seeded toy autoregressive transformer: pre-LN blocks, causal attention,
// GELU feed-forward, output head tied to the token embedding. Visual inputs
// enter as raw embedding rows occupying the first m positions. All weights
// are quantized through 32-bit floats at construction so that an in-memory
// model and a save/load round trip are bit-identical.
class TinyTransformer {
public:
    explicit TinyTransformer(const TinyConfig& config);

    const TinyConfig& config() const { return cfg_; }

    struct Forward {
        VocabDistribution dist;           // next-token distribution at the last position
        VisualHiddenStates visual_states; // d x m, final layer
        std::vector<double> attention_last;  // final-layer attention of the last position,
                                             // averaged over heads, length m + prefix size
    };

    // visual: m x dim embedding rows. prefix: text token ids (may be empty).
    Forward forward(const Matrix& visual, std::span<const int> prefix) const;

    // Language head, |V| x d, tied to the token embedding.
    const Matrix& head() const { return tok_embed_; }

    void save(const std::string& path) const;
    static TinyTransformer load(const std::string& path);

private:
    struct Layer {
        std::vector<double> ln1_gain, ln1_bias, ln2_gain, ln2_bias;
        Matrix wq, wk, wv, wo;  // d x d
        Matrix w1;              // 4d x d
        Matrix w2;              // d x 4d
    };

    TinyTransformer(const TinyConfig& config, bool initialize);

    // Weight blocks in flat serialization order.
    std::vector<std::pair<double*, std::size_t>> weight_blocks();

    TinyConfig cfg_;
    Matrix tok_embed_;  // V x d
    Matrix pos_embed_;  // context x d
    std::vector<Layer> layers_;
    std::vector<double> lnf_gain_, lnf_bias_;
};

// Aggregate a raw attention row (visual positions first) over the declared
// spans; think span coordinates are relative to the text prefix.
AttentionSummary summarize_attention(std::span<const double> attention_row,
                                     int num_visual_tokens, const AttentionSpans& spans);

// One sequence bound to shared TinyTransformer weights: holds the visual
// embeddings and the activation matrix computed once at prefill.
class TinySession : public ModelBackend {
public:
    TinySession(const TinyTransformer& model, Matrix visual_embeddings);

    std::size_t vocab_size() const override;
    const VisualActivationMatrix& activation_matrix() const override { return matrix_; }
    VocabDistribution next_distribution(std::span<const int> prefix) const override;
    std::optional<AttentionSummary> attention_summary(
        std::span<const int> prefix, const AttentionSpans& spans) const override;

private:
    const TinyTransformer& model_;
    Matrix visual_;
    VisualActivationMatrix matrix_;
};

// Deterministic per-sample visual embeddings for corpora that do not carry
// their own: Gaussian rows seeded from the model seed and the sample id.
Matrix derive_visual_embeddings(const TinyConfig& config, std::uint64_t sample_salt);

}  // namespace visent
