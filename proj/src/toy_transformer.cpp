#include "specforge/toy_transformer.hpp"

#include <cmath>

#include <fmt/format.h>

#include "specforge/rng.hpp"

namespace specforge {

void ModelConfig::validate() const {
    if (vocab_size < 1 || d_model < 1 || n_layers < 1 || n_heads < 1 || d_ff < 1 || max_seq_len < 1) {
        throw ConfigError("model dimensions must all be >= 1");
    }
    if (d_model % n_heads != 0) {
        throw ConfigError(fmt::format("d_model ({}) must be divisible by n_heads ({})", d_model, n_heads));
    }
}

namespace {

const std::vector<std::pair<const char*, std::int64_t ModelConfig::*>> kIntFields = {
    {"vocab_size", &ModelConfig::vocab_size}, {"d_model", &ModelConfig::d_model},
    {"n_layers", &ModelConfig::n_layers},     {"n_heads", &ModelConfig::n_heads},
    {"d_ff", &ModelConfig::d_ff},             {"max_seq_len", &ModelConfig::max_seq_len},
};

} // namespace

void write_config_metadata(const ModelConfig& cfg, std::map<std::string, std::string>& metadata) {
    for (const auto& [key, field] : kIntFields) {
        metadata[std::string("config.") + key] = std::to_string(cfg.*field);
    }
    metadata["config.seed"] = std::to_string(cfg.seed);
}

ModelConfig read_config_metadata(const std::map<std::string, std::string>& metadata) {
    ModelConfig cfg;
    try {
        for (const auto& [key, field] : kIntFields) {
            auto it = metadata.find(std::string("config.") + key);
            if (it == metadata.end()) {
                throw FormatError(fmt::format("checkpoint metadata lacks config.{}", key));
            }
            cfg.*field = std::stoll(it->second);
        }
        auto it = metadata.find("config.seed");
        cfg.seed = it == metadata.end() ? 0 : std::stoull(it->second);
    } catch (const std::logic_error&) {
        throw FormatError("checkpoint config metadata is not numeric");
    }
    cfg.validate();
    return cfg;
}

std::string names::layer_prefix(std::int64_t layer) { return fmt::format("model.layers.{}.", layer); }

std::map<std::string, Shape> parameter_shapes(const ModelConfig& cfg) {
    std::map<std::string, Shape> shapes;
    const auto d = cfg.d_model;
    shapes[names::kEmbed] = {cfg.vocab_size, d};
    shapes[names::kFinalNorm] = {d};
    shapes[names::kLmHead] = {cfg.vocab_size, d};
    for (std::int64_t i = 0; i < cfg.n_layers; ++i) {
        const auto p = names::layer_prefix(i);
        for (const char* proj : {"q_proj", "k_proj", "v_proj", "o_proj"}) {
            shapes[p + "self_attn." + proj + ".weight"] = {d, d};
        }
        shapes[p + "mlp.gate_proj.weight"] = {cfg.d_ff, d};
        shapes[p + "mlp.up_proj.weight"] = {cfg.d_ff, d};
        shapes[p + "mlp.down_proj.weight"] = {d, cfg.d_ff};
        shapes[p + "input_layernorm.weight"] = {d};
        shapes[p + "post_attention_layernorm.weight"] = {d};
    }
    return shapes;
}

Checkpoint init_model(const ModelConfig& cfg) {
    cfg.validate();
    Checkpoint ckpt;
    write_config_metadata(cfg, ckpt.metadata);
    ckpt.metadata["stage"] = "init";
    ckpt.metadata["seed"] = std::to_string(cfg.seed);
    for (const auto& [name, shape] : parameter_shapes(cfg)) {
        std::vector<float> values(static_cast<std::size_t>(element_count(shape)));
        if (shape.size() == 1) {
            std::fill(values.begin(), values.end(), 1.0f);
        } else {
            Rng rng(derive_seed(cfg.seed, name));
            for (auto& v : values) {
                v = static_cast<float>(rng.normal(0.0, kInitStd));
            }
        }
        ckpt.tensors.emplace(name, Tensor::from_f32(shape, values));
    }
    return ckpt;
}

DenseModel DenseModel::from_checkpoint(const Checkpoint& ckpt) {
    DenseModel m;
    m.config_ = read_config_metadata(ckpt.metadata);
    for (const auto& [name, shape] : parameter_shapes(m.config_)) {
        const Tensor& t = ckpt.at(name);
        if (t.shape() != shape) {
            throw FormatError(fmt::format("tensor \"{}\" has shape {}, expected {}", name, shape_string(t.shape()),
                                          shape_string(shape)));
        }
        const auto rows = shape.size() == 1 ? 1 : shape[0];
        const auto cols = shape.size() == 1 ? shape[0] : shape[1];
        Matrix w(rows, cols);
        for (Eigen::Index i = 0; i < w.size(); ++i) {
            w.data()[i] = t.at(static_cast<std::size_t>(i));
        }
        m.weights_.emplace(name, std::move(w));
    }
    return m;
}

DenseModel DenseModel::with_adapters(const LoraAdapterSet& adapters) const {
    DenseModel m = *this;
    const double s = adapters.scale();
    for (const auto& [name, p] : adapters.entries) {
        Matrix& w = m.weight(name);
        if (p.b.rows() != w.rows() || p.a.cols() != w.cols() || p.a.rows() != p.b.cols()) {
            throw FormatError(fmt::format("adapter for \"{}\" does not match weight {}x{}", name, w.rows(), w.cols()));
        }
        w.noalias() += s * (p.b * p.a);
    }
    return m;
}

const Matrix& DenseModel::weight(const std::string& name) const {
    auto it = weights_.find(name);
    if (it == weights_.end()) {
        throw FormatError(fmt::format("missing tensor \"{}\"", name));
    }
    return it->second;
}

Matrix& DenseModel::weight(const std::string& name) {
    auto it = weights_.find(name);
    if (it == weights_.end()) {
        throw FormatError(fmt::format("missing tensor \"{}\"", name));
    }
    return it->second;
}

WeightGrads DenseModel::zero_grads() const {
    WeightGrads g;
    for (const auto& [name, w] : weights_) {
        g.emplace(name, Matrix::Zero(w.rows(), w.cols()));
    }
    return g;
}

// ---------------------------------------------------------------------------
// Forward / backward

namespace {

struct NormOut {
    Matrix y;
    Eigen::VectorXd inv_rms;
};

NormOut rms_norm(const Matrix& x, const Matrix& gain) {
    NormOut out{Matrix(x.rows(), x.cols()), Eigen::VectorXd(x.rows())};
    const double d = static_cast<double>(x.cols());
    for (Eigen::Index t = 0; t < x.rows(); ++t) {
        const double r = 1.0 / std::sqrt(x.row(t).squaredNorm() / d + kRmsNormEps);
        out.inv_rms(t) = r;
        out.y.row(t) = (x.row(t) * r).cwiseProduct(gain.row(0));
    }
    return out;
}

// Returns dx; accumulates dgain.
Matrix rms_norm_backward(const Matrix& x, const Eigen::VectorXd& inv_rms, const Matrix& gain, const Matrix& dy,
                         Matrix& dgain) {
    Matrix dx(x.rows(), x.cols());
    const double d = static_cast<double>(x.cols());
    for (Eigen::Index t = 0; t < x.rows(); ++t) {
        const double r = inv_rms(t);
        const Eigen::RowVectorXd gdy = dy.row(t).cwiseProduct(gain.row(0));
        const double dot = gdy.dot(x.row(t));
        dx.row(t) = r * gdy - (r * r * r / d) * dot * x.row(t);
        dgain.row(0) += dy.row(t).cwiseProduct(x.row(t)) * r;
    }
    return dx;
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

struct Rope {
    Matrix cos; // [len, head_dim / 2]
    Matrix sin;
};

Rope make_rope(Eigen::Index len, std::int64_t head_dim) {
    const auto pairs = head_dim / 2;
    Rope r{Matrix(len, pairs), Matrix(len, pairs)};
    for (Eigen::Index t = 0; t < len; ++t) {
        for (Eigen::Index j = 0; j < pairs; ++j) {
            const double freq = std::pow(kRopeBase, -2.0 * static_cast<double>(j) / static_cast<double>(head_dim));
            const double angle = static_cast<double>(t) * freq;
            r.cos(t, j) = std::cos(angle);
            r.sin(t, j) = std::sin(angle);
        }
    }
    return r;
}

// Rotates interleaved pairs (2j, 2j+1) of every head; `sign` = -1 applies the
// inverse rotation. An odd trailing dimension is left unrotated.
void apply_rope(Matrix& x, const Rope& rope, std::int64_t n_heads, std::int64_t head_dim, double sign) {
    const auto pairs = head_dim / 2;
    for (Eigen::Index t = 0; t < x.rows(); ++t) {
        for (std::int64_t h = 0; h < n_heads; ++h) {
            for (Eigen::Index j = 0; j < pairs; ++j) {
                const auto c0 = h * head_dim + 2 * j;
                const double a = x(t, c0);
                const double b = x(t, c0 + 1);
                const double cs = rope.cos(t, j);
                const double sn = sign * rope.sin(t, j);
                x(t, c0) = a * cs - b * sn;
                x(t, c0 + 1) = a * sn + b * cs;
            }
        }
    }
}

struct LayerCache {
    Matrix x_in;
    NormOut norm1;
    Matrix q, k, v; // q, k after rotation
    std::vector<Matrix> probs;
    Matrix attn; // concatenated head outputs
    Matrix x_mid;
    NormOut norm2;
    Matrix gate, up, act;
};

} // namespace

struct ForwardCache {
    TokenSequence tokens;
    Rope rope;
    std::vector<LayerCache> layers;
    Matrix x_final;
    NormOut norm_f;
    Matrix logits;
};

ForwardPass::ForwardPass(const DenseModel& model, const TokenSequence& tokens)
    : model_(&model), cache_(std::make_unique<ForwardCache>()) {
    const auto& cfg = model.config();
    if (tokens.empty()) {
        throw Error("token sequence is empty");
    }
    if (static_cast<std::int64_t>(tokens.size()) > cfg.max_seq_len) {
        throw Error(fmt::format("sequence too long: {} tokens exceeds max_seq_len {}", tokens.size(), cfg.max_seq_len));
    }
    for (auto tok : tokens) {
        if (tok < 0 || tok >= cfg.vocab_size) {
            throw Error(fmt::format("token {} out of range [0, {})", tok, cfg.vocab_size));
        }
    }
    auto& c = *cache_;
    c.tokens = tokens;
    const auto len = static_cast<Eigen::Index>(tokens.size());
    const auto dh = cfg.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    c.rope = make_rope(len, dh);

    const Matrix& embed = model.weight(names::kEmbed);
    Matrix x(len, cfg.d_model);
    for (Eigen::Index t = 0; t < len; ++t) {
        x.row(t) = embed.row(tokens[static_cast<std::size_t>(t)]);
    }

    c.layers.resize(static_cast<std::size_t>(cfg.n_layers));
    for (std::int64_t l = 0; l < cfg.n_layers; ++l) {
        const auto p = names::layer_prefix(l);
        LayerCache& lc = c.layers[static_cast<std::size_t>(l)];
        lc.x_in = x;
        lc.norm1 = rms_norm(x, model.weight(p + "input_layernorm.weight"));
        const Matrix& h = lc.norm1.y;
        lc.q = h * model.weight(p + "self_attn.q_proj.weight").transpose();
        lc.k = h * model.weight(p + "self_attn.k_proj.weight").transpose();
        lc.v = h * model.weight(p + "self_attn.v_proj.weight").transpose();
        apply_rope(lc.q, c.rope, cfg.n_heads, dh, 1.0);
        apply_rope(lc.k, c.rope, cfg.n_heads, dh, 1.0);

        lc.attn = Matrix::Zero(len, cfg.d_model);
        lc.probs.resize(static_cast<std::size_t>(cfg.n_heads));
        for (std::int64_t hd = 0; hd < cfg.n_heads; ++hd) {
            const auto off = hd * dh;
            Matrix s = lc.q.middleCols(off, dh) * lc.k.middleCols(off, dh).transpose() * scale;
            Matrix pr = Matrix::Zero(len, len);
            for (Eigen::Index t = 0; t < len; ++t) {
                const double mx = s.row(t).head(t + 1).maxCoeff();
                double z = 0.0;
                for (Eigen::Index j = 0; j <= t; ++j) {
                    pr(t, j) = std::exp(s(t, j) - mx);
                    z += pr(t, j);
                }
                pr.row(t).head(t + 1) /= z;
            }
            lc.attn.middleCols(off, dh) = pr * lc.v.middleCols(off, dh);
            lc.probs[static_cast<std::size_t>(hd)] = std::move(pr);
        }
        lc.x_mid = x + lc.attn * model.weight(p + "self_attn.o_proj.weight").transpose();

        lc.norm2 = rms_norm(lc.x_mid, model.weight(p + "post_attention_layernorm.weight"));
        lc.gate = lc.norm2.y * model.weight(p + "mlp.gate_proj.weight").transpose();
        lc.up = lc.norm2.y * model.weight(p + "mlp.up_proj.weight").transpose();
        lc.act = lc.gate.unaryExpr([](double z) { return z * sigmoid(z); }).cwiseProduct(lc.up);
        x = lc.x_mid + lc.act * model.weight(p + "mlp.down_proj.weight").transpose();
    }
    c.x_final = x;
    c.norm_f = rms_norm(x, model.weight(names::kFinalNorm));
    c.logits = c.norm_f.y * model.weight(names::kLmHead).transpose();
}

ForwardPass::~ForwardPass() = default;
ForwardPass::ForwardPass(ForwardPass&&) noexcept = default;
ForwardPass& ForwardPass::operator=(ForwardPass&&) noexcept = default;

const Matrix& ForwardPass::logits() const { return cache_->logits; }

void ForwardPass::backward(const Matrix& dlogits, WeightGrads& grads) const {
    const DenseModel& model = *model_;
    const auto& cfg = model.config();
    const auto& c = *cache_;
    const auto len = c.logits.rows();
    const auto dh = cfg.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    grads.at(names::kLmHead).noalias() += dlogits.transpose() * c.norm_f.y;
    Matrix dhf = dlogits * model.weight(names::kLmHead);
    Matrix dx = rms_norm_backward(c.x_final, c.norm_f.inv_rms, model.weight(names::kFinalNorm), dhf,
                                  grads.at(names::kFinalNorm));

    for (std::int64_t l = cfg.n_layers - 1; l >= 0; --l) {
        const auto p = names::layer_prefix(l);
        const LayerCache& lc = c.layers[static_cast<std::size_t>(l)];

        // MLP block: x_out = x_mid + act * Wdown^T
        const Matrix& w_down = model.weight(p + "mlp.down_proj.weight");
        grads.at(p + "mlp.down_proj.weight").noalias() += dx.transpose() * lc.act;
        const Matrix dact = dx * w_down;
        Matrix dgate(len, cfg.d_ff);
        Matrix dup(len, cfg.d_ff);
        for (Eigen::Index t = 0; t < len; ++t) {
            for (Eigen::Index j = 0; j < cfg.d_ff; ++j) {
                const double z = lc.gate(t, j);
                const double sg = sigmoid(z);
                dup(t, j) = dact(t, j) * z * sg;
                dgate(t, j) = dact(t, j) * lc.up(t, j) * sg * (1.0 + z * (1.0 - sg));
            }
        }
        grads.at(p + "mlp.gate_proj.weight").noalias() += dgate.transpose() * lc.norm2.y;
        grads.at(p + "mlp.up_proj.weight").noalias() += dup.transpose() * lc.norm2.y;
        const Matrix dh2 = dgate * model.weight(p + "mlp.gate_proj.weight") + dup * model.weight(p + "mlp.up_proj.weight");
        Matrix dx_mid = dx + rms_norm_backward(lc.x_mid, lc.norm2.inv_rms, model.weight(p + "post_attention_layernorm.weight"),
                                               dh2, grads.at(p + "post_attention_layernorm.weight"));

        // Attention block: x_mid = x_in + attn * Wo^T
        grads.at(p + "self_attn.o_proj.weight").noalias() += dx_mid.transpose() * lc.attn;
        const Matrix dattn = dx_mid * model.weight(p + "self_attn.o_proj.weight");
        Matrix dq = Matrix::Zero(len, cfg.d_model);
        Matrix dk = Matrix::Zero(len, cfg.d_model);
        Matrix dv = Matrix::Zero(len, cfg.d_model);
        for (std::int64_t hd = 0; hd < cfg.n_heads; ++hd) {
            const auto off = hd * dh;
            const Matrix& pr = lc.probs[static_cast<std::size_t>(hd)];
            const Matrix d_o = dattn.middleCols(off, dh);
            const Matrix dp = d_o * lc.v.middleCols(off, dh).transpose();
            dv.middleCols(off, dh) = pr.transpose() * d_o;
            Matrix ds(len, len);
            for (Eigen::Index t = 0; t < len; ++t) {
                const double row = pr.row(t).dot(dp.row(t));
                ds.row(t) = pr.row(t).array() * (dp.row(t).array() - row);
            }
            dq.middleCols(off, dh) = ds * lc.k.middleCols(off, dh) * scale;
            dk.middleCols(off, dh) = ds.transpose() * lc.q.middleCols(off, dh) * scale;
        }
        apply_rope(dq, c.rope, cfg.n_heads, dh, -1.0);
        apply_rope(dk, c.rope, cfg.n_heads, dh, -1.0);
        const Matrix& h = lc.norm1.y;
        grads.at(p + "self_attn.q_proj.weight").noalias() += dq.transpose() * h;
        grads.at(p + "self_attn.k_proj.weight").noalias() += dk.transpose() * h;
        grads.at(p + "self_attn.v_proj.weight").noalias() += dv.transpose() * h;
        const Matrix dh1 = dq * model.weight(p + "self_attn.q_proj.weight") +
                           dk * model.weight(p + "self_attn.k_proj.weight") +
                           dv * model.weight(p + "self_attn.v_proj.weight");
        dx = dx_mid + rms_norm_backward(lc.x_in, lc.norm1.inv_rms, model.weight(p + "input_layernorm.weight"), dh1,
                                        grads.at(p + "input_layernorm.weight"));
    }

    Matrix& dembed = grads.at(names::kEmbed);
    for (Eigen::Index t = 0; t < len; ++t) {
        dembed.row(c.tokens[static_cast<std::size_t>(t)]) += dx.row(t);
    }
}

Matrix forward(const DenseModel& model, const TokenSequence& tokens) { return ForwardPass(model, tokens).logits(); }

Matrix forward(const Checkpoint& model, const TokenSequence& tokens) {
    return forward(DenseModel::from_checkpoint(model), tokens);
}

Matrix log_softmax(const Matrix& logits) {
    Matrix out(logits.rows(), logits.cols());
    for (Eigen::Index t = 0; t < logits.rows(); ++t) {
        const double mx = logits.row(t).maxCoeff();
        const double lse = mx + std::log((logits.row(t).array() - mx).exp().sum());
        out.row(t) = logits.row(t).array() - lse;
    }
    return out;
}

double scored_logprob(const DenseModel& model, const TokenSequence& tokens, std::size_t first_target,
                      WeightGrads* grads, double weight) {
    if (first_target < 1 || first_target >= tokens.size()) {
        throw Error("no tokens to score: a prediction needs at least one context token");
    }
    ForwardPass pass(model, tokens);
    const Matrix logp = log_softmax(pass.logits());
    double total = 0.0;
    for (std::size_t t = first_target; t < tokens.size(); ++t) {
        total += logp(static_cast<Eigen::Index>(t - 1), tokens[t]);
    }
    if (grads != nullptr) {
        // d logp(y | row) / d logits = onehot(y) - softmax(row)
        Matrix dlogits = Matrix::Zero(logp.rows(), logp.cols());
        for (std::size_t t = first_target; t < tokens.size(); ++t) {
            const auto row = static_cast<Eigen::Index>(t - 1);
            dlogits.row(row) = -weight * logp.row(row).array().exp();
            dlogits(row, tokens[t]) += weight;
        }
        pass.backward(dlogits, *grads);
    }
    return total;
}

double lm_loss(const DenseModel& model, const TokenSequence& tokens, WeightGrads* grads) {
    if (tokens.size() < 2) {
        throw Error("lm_loss needs at least 2 tokens");
    }
    const double n = static_cast<double>(tokens.size() - 1);
    return -scored_logprob(model, tokens, 1, grads, -1.0 / n) / n;
}

double lm_loss(const Checkpoint& model, const TokenSequence& tokens) {
    return lm_loss(DenseModel::from_checkpoint(model), tokens);
}

TokenSequence concat(const TokenSequence& a, const TokenSequence& b) {
    TokenSequence out(a);
    out.insert(out.end(), b.begin(), b.end());
    return out;
}

double sequence_logprob(const DenseModel& model, const TokenSequence& prompt, const TokenSequence& completion,
                        WeightGrads* grads, double weight) {
    if (completion.empty()) {
        throw Error("completion is empty");
    }
    return scored_logprob(model, concat(prompt, completion), std::max<std::size_t>(prompt.size(), 1), grads, weight);
}

double sequence_logprob(const Checkpoint& model, const TokenSequence& prompt, const TokenSequence& completion) {
    return sequence_logprob(DenseModel::from_checkpoint(model), prompt, completion);
}

} // namespace specforge
