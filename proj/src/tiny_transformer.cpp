#include "visent/tiny_transformer.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <json.hpp>

#include "visent/entropy.hpp"
#include "visent/error.hpp"
#include "visent/rng.hpp"

namespace visent {

namespace {

// Quantize through f32 so memory and file agree bit for bit.
double q32(double v) { return static_cast<double>(static_cast<float>(v)); }

void fill_gaussian(std::vector<double>& dst, Rng& rng, double scale) {
    for (double& v : dst) v = q32(rng.next_gaussian() * scale);
}

constexpr char kMagic[4] = {'V', 'T', 'T', 'W'};

}  // namespace

void TinyConfig::validate() const {
    if (vocab_size < 2) throw ConfigError("tiny transformer: vocab_size must be >= 2");
    if (dim < 1) throw ConfigError("tiny transformer: dim must be >= 1");
    if (layers < 1) throw ConfigError("tiny transformer: layers must be >= 1");
    if (heads < 1 || dim % heads != 0) {
        throw ConfigError("tiny transformer: heads must divide dim");
    }
    if (num_visual_tokens < 2) {
        throw ConfigError("tiny transformer: need m >= 2 visual tokens");
    }
    if (context < num_visual_tokens + 1) {
        throw ConfigError("tiny transformer: context too small for the visual tokens");
    }
}

TinyTransformer::TinyTransformer(const TinyConfig& config) : TinyTransformer(config, true) {}

TinyTransformer::TinyTransformer(const TinyConfig& config, bool initialize) : cfg_(config) {
    cfg_.validate();
    const std::size_t d = static_cast<std::size_t>(cfg_.dim);
    tok_embed_ = Matrix(static_cast<std::size_t>(cfg_.vocab_size), d);
    pos_embed_ = Matrix(static_cast<std::size_t>(cfg_.context), d);
    layers_.resize(static_cast<std::size_t>(cfg_.layers));
    for (Layer& layer : layers_) {
        layer.ln1_gain.assign(d, 1.0);
        layer.ln1_bias.assign(d, 0.0);
        layer.ln2_gain.assign(d, 1.0);
        layer.ln2_bias.assign(d, 0.0);
        layer.wq = Matrix(d, d);
        layer.wk = Matrix(d, d);
        layer.wv = Matrix(d, d);
        layer.wo = Matrix(d, d);
        layer.w1 = Matrix(4 * d, d);
        layer.w2 = Matrix(d, 4 * d);
    }
    lnf_gain_.assign(d, 1.0);
    lnf_bias_.assign(d, 0.0);

    if (!initialize) return;
    Rng rng(cfg_.seed);
    const double scale = 1.0 / std::sqrt(static_cast<double>(cfg_.dim));
    fill_gaussian(tok_embed_.data, rng, scale);
    fill_gaussian(pos_embed_.data, rng, scale);
    for (Layer& layer : layers_) {
        fill_gaussian(layer.wq.data, rng, scale);
        fill_gaussian(layer.wk.data, rng, scale);
        fill_gaussian(layer.wv.data, rng, scale);
        fill_gaussian(layer.wo.data, rng, scale);
        fill_gaussian(layer.w1.data, rng, scale);
        fill_gaussian(layer.w2.data, rng, scale);
    }
}

std::vector<std::pair<double*, std::size_t>> TinyTransformer::weight_blocks() {
    std::vector<std::pair<double*, std::size_t>> blocks;
    auto add = [&blocks](std::vector<double>& v) { blocks.emplace_back(v.data(), v.size()); };
    add(tok_embed_.data);
    add(pos_embed_.data);
    for (Layer& layer : layers_) {
        add(layer.ln1_gain);
        add(layer.ln1_bias);
        add(layer.wq.data);
        add(layer.wk.data);
        add(layer.wv.data);
        add(layer.wo.data);
        add(layer.ln2_gain);
        add(layer.ln2_bias);
        add(layer.w1.data);
        add(layer.w2.data);
    }
    add(lnf_gain_);
    add(lnf_bias_);
    return blocks;
}

TinyTransformer::Forward TinyTransformer::forward(const Matrix& visual,
                                                  std::span<const int> prefix) const {
    const std::size_t m = static_cast<std::size_t>(cfg_.num_visual_tokens);
    const std::size_t d = static_cast<std::size_t>(cfg_.dim);
    if (visual.rows != m || visual.cols != d) {
        throw ConfigError("tiny transformer: visual embeddings must be m x dim");
    }
    const std::size_t n = m + prefix.size();
    if (n > static_cast<std::size_t>(cfg_.context)) {
        throw ConfigError("tiny transformer: context overflow (" + std::to_string(n) + " > " +
                          std::to_string(cfg_.context) + ")");
    }
    for (const int tok : prefix) {
        if (tok < 0 || tok >= cfg_.vocab_size) {
            throw IndexError("tiny transformer: token " + std::to_string(tok) +
                             " outside vocabulary");
        }
    }

    Matrix x(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        const std::span<const double> base =
            i < m ? visual.row(i) : tok_embed_.row(static_cast<std::size_t>(prefix[i - m]));
        const std::span<const double> pos = pos_embed_.row(i);
        for (std::size_t c = 0; c < d; ++c) {
            x.at(i, c) = base[c] + pos[c];
        }
    }

    const std::size_t heads = static_cast<std::size_t>(cfg_.heads);
    const std::size_t dh = d / heads;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<double> attention_last(n, 0.0);

    Matrix normed(n, d), qm(n, d), km(n, d), vm(n, d), ctx(n, d);
    std::vector<double> scores(n), hrow(d);
    for (std::size_t li = 0; li < layers_.size(); ++li) {
        const Layer& layer = layers_[li];
        // attention sublayer
        for (std::size_t i = 0; i < n; ++i) {
            hrow.assign(x.row(i).begin(), x.row(i).end());
            kernels::layer_norm(hrow, layer.ln1_gain, layer.ln1_bias);
            std::copy(hrow.begin(), hrow.end(), normed.row(i).begin());
        }
        for (std::size_t i = 0; i < n; ++i) {
            const auto q = kernels::matvec(layer.wq, normed.row(i));
            const auto k = kernels::matvec(layer.wk, normed.row(i));
            const auto v = kernels::matvec(layer.wv, normed.row(i));
            std::copy(q.begin(), q.end(), qm.row(i).begin());
            std::copy(k.begin(), k.end(), km.row(i).begin());
            std::copy(v.begin(), v.end(), vm.row(i).begin());
        }
        const bool last_layer = li + 1 == layers_.size();
        for (std::size_t i = 0; i < n; ++i) {
            auto out = ctx.row(i);
            std::fill(out.begin(), out.end(), 0.0);
            for (std::size_t h = 0; h < heads; ++h) {
                const std::size_t off = h * dh;
                for (std::size_t j = 0; j <= i; ++j) {
                    double dot = 0.0;
                    for (std::size_t c = 0; c < dh; ++c) {
                        dot += qm.at(i, off + c) * km.at(j, off + c);
                    }
                    scores[j] = dot * inv_sqrt_dh;
                }
                kernels::softmax_inplace(std::span<double>(scores.data(), i + 1));
                for (std::size_t j = 0; j <= i; ++j) {
                    const double a = scores[j];
                    for (std::size_t c = 0; c < dh; ++c) {
                        out[off + c] += a * vm.at(j, off + c);
                    }
                }
                if (last_layer && i == n - 1) {
                    for (std::size_t j = 0; j <= i; ++j) {
                        attention_last[j] += scores[j] / static_cast<double>(heads);
                    }
                }
            }
        }
        for (std::size_t i = 0; i < n; ++i) {
            const auto proj = kernels::matvec(layer.wo, ctx.row(i));
            for (std::size_t c = 0; c < d; ++c) {
                x.at(i, c) += proj[c];
            }
        }
        // feed-forward sublayer
        for (std::size_t i = 0; i < n; ++i) {
            hrow.assign(x.row(i).begin(), x.row(i).end());
            kernels::layer_norm(hrow, layer.ln2_gain, layer.ln2_bias);
            auto up = kernels::matvec(layer.w1, hrow);
            for (double& u : up) u = kernels::gelu(u);
            const auto down = kernels::matvec(layer.w2, up);
            for (std::size_t c = 0; c < d; ++c) {
                x.at(i, c) += down[c];
            }
        }
    }

    for (std::size_t i = 0; i < n; ++i) {
        kernels::layer_norm(x.row(i), lnf_gain_, lnf_bias_);
    }

    Forward result;
    result.visual_states.layer_index = cfg_.layers;
    result.visual_states.values = Matrix(d, m);
    for (std::size_t j = 0; j < m; ++j) {
        for (std::size_t c = 0; c < d; ++c) {
            result.visual_states.values.at(c, j) = x.at(j, c);
        }
    }
    auto logits = kernels::matvec(tok_embed_, x.row(n - 1));
    kernels::softmax_inplace(logits);
    result.dist.values = std::move(logits);
    result.attention_last = std::move(attention_last);
    return result;
}

void TinyTransformer::save(const std::string& path) const {
    nlohmann::json header;
    header["vocab_size"] = cfg_.vocab_size;
    header["dim"] = cfg_.dim;
    header["layers"] = cfg_.layers;
    header["heads"] = cfg_.heads;
    header["context"] = cfg_.context;
    header["m"] = cfg_.num_visual_tokens;
    header["seed"] = cfg_.seed;
    const std::string head_text = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write weights file: " + path);
    out.write(kMagic, 4);
    const std::uint32_t head_len = static_cast<std::uint32_t>(head_text.size());
    out.write(reinterpret_cast<const char*>(&head_len), 4);
    out.write(head_text.data(), head_text.size());

    auto blocks = const_cast<TinyTransformer*>(this)->weight_blocks();
    std::uint64_t count = 0;
    for (const auto& [ptr, len] : blocks) count += len;
    out.write(reinterpret_cast<const char*>(&count), 8);
    for (const auto& [ptr, len] : blocks) {
        for (std::size_t i = 0; i < len; ++i) {
            const float f = static_cast<float>(ptr[i]);
            out.write(reinterpret_cast<const char*>(&f), 4);
        }
    }
    if (!out) throw ConfigError("short write to weights file: " + path);
}

TinyTransformer TinyTransformer::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open weights file: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) {
        throw ConfigError("not a tiny transformer weights file: " + path);
    }
    std::uint32_t head_len = 0;
    in.read(reinterpret_cast<char*>(&head_len), 4);
    std::string head_text(head_len, '\0');
    in.read(head_text.data(), head_len);
    if (!in) throw ConfigError("truncated weights header: " + path);

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(head_text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("weights header json: ") + e.what());
    }
    TinyConfig cfg;
    cfg.vocab_size = header.at("vocab_size").get<int>();
    cfg.dim = header.at("dim").get<int>();
    cfg.layers = header.at("layers").get<int>();
    cfg.heads = header.at("heads").get<int>();
    cfg.context = header.at("context").get<int>();
    cfg.num_visual_tokens = header.at("m").get<int>();
    cfg.seed = header.at("seed").get<std::uint64_t>();

    TinyTransformer model(cfg, false);
    std::uint64_t count = 0;
    in.read(reinterpret_cast<char*>(&count), 8);
    auto blocks = model.weight_blocks();
    std::uint64_t expected = 0;
    for (const auto& [ptr, len] : blocks) expected += len;
    if (count != expected) {
        throw ConfigError("weights file holds " + std::to_string(count) + " floats, expected " +
                          std::to_string(expected));
    }
    for (const auto& [ptr, len] : blocks) {
        for (std::size_t i = 0; i < len; ++i) {
            float f = 0.0f;
            in.read(reinterpret_cast<char*>(&f), 4);
            ptr[i] = static_cast<double>(f);
        }
    }
    if (!in) throw ConfigError("truncated weights data: " + path);
    return model;
}

AttentionSummary summarize_attention(std::span<const double> attention_row,
                                     int num_visual_tokens, const AttentionSpans& spans) {
    const int n = static_cast<int>(attention_row.size());
    const int m = num_visual_tokens;
    AttentionSummary summary;
    const int tb = m + std::max(spans.think_begin, 0);
    const int te = std::min(m + spans.think_end, n);
    for (int i = 0; i < n; ++i) {
        const double a = attention_row[static_cast<std::size_t>(i)];
        if (i < m) {
            summary.image += a;
        } else if (i >= tb && i < te) {
            summary.think += a;
        } else {
            summary.other += a;
        }
    }
    summary.validate();
    return summary;
}

TinySession::TinySession(const TinyTransformer& model, Matrix visual_embeddings)
    : model_(model),
      visual_(std::move(visual_embeddings)),
      matrix_(project_visual_states(model.forward(visual_, {}).visual_states, model.head())) {}

std::size_t TinySession::vocab_size() const {
    return static_cast<std::size_t>(model_.config().vocab_size);
}

VocabDistribution TinySession::next_distribution(std::span<const int> prefix) const {
    return model_.forward(visual_, prefix).dist;
}

std::optional<AttentionSummary> TinySession::attention_summary(
    std::span<const int> prefix, const AttentionSpans& spans) const {
    const auto fwd = model_.forward(visual_, prefix);
    return summarize_attention(fwd.attention_last, model_.config().num_visual_tokens, spans);
}

Matrix derive_visual_embeddings(const TinyConfig& config, std::uint64_t sample_salt) {
    Rng rng(mix_seed(config.seed, sample_salt));
    Matrix visual(static_cast<std::size_t>(config.num_visual_tokens),
                  static_cast<std::size_t>(config.dim));
    const double scale = 1.0 / std::sqrt(static_cast<double>(config.dim));
    for (double& v : visual.data) v = q32(rng.next_gaussian() * scale);
    return visual;
}

}  // namespace visent
