#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lmforge/errors.hpp"
#include "lmforge/matrix.hpp"
#include "lmforge/rng.hpp"

namespace lmforge::tinylm {

// Decoder-only transformer with RMS pre-normalization, rotary position
// embeddings on Q/K, SwiGLU MLP and untied LM head. Weights use the
// right-multiplication frame (y = x * W, W: d_in x d_out); embeddings and the
// LM head are V x H with one row per token.
struct ModelConfig {
    int vocab = 0;
    int hidden = 0;
    int layers = 0;
    int heads = 0;
    int max_seq = 0;
    double rms_eps = 1e-5;
    double rope_base = 10000.0;
    int mlp_hidden = 0;      // 0 -> swiglu_hidden(hidden)
    double init_std = 0.02;

    void validate() const {
        if (vocab < 2) throw ConfigError("model: vocab must be >= 2");
        if (max_seq < 2) throw ConfigError("model: max_seq must be >= 2");
        if (hidden < 1 || layers < 1 || heads < 1) throw ConfigError("model: bad dimensions");
        if (hidden % heads != 0) throw ConfigError("model: hidden must be divisible by heads");
        if ((hidden / heads) % 2 != 0) throw ConfigError("model: head dim must be even for rotary");
    }
    int head_dim() const { return hidden / heads; }
    int mlp_dim() const;
};

// Nearest multiple of 8 to (8/3) * hidden.
int swiglu_hidden(int hidden);

inline int ModelConfig::mlp_dim() const { return mlp_hidden > 0 ? mlp_hidden : swiglu_hidden(hidden); }

enum class LoraTarget { q, k, v, o, mlp_gate, mlp_up, mlp_down };

std::string_view to_string(LoraTarget target);
LoraTarget lora_target_from_string(std::string_view name);
const std::vector<LoraTarget>& all_lora_targets();

template <class S>
struct LoraPair {
    Mat<S> a;  // rank x d_in
    Mat<S> b;  // d_out x rank
    int rank = 0;
    double alpha = 0.0;
    std::uint64_t seed = 0;

    S scale() const { return static_cast<S>(alpha / rank); }
};

template <class S>
struct LayerWeights {
    Vec<S> attn_norm, mlp_norm;         // H
    Mat<S> wq, wk, wv, wo;              // H x H
    Mat<S> w_gate, w_up;                // H x F
    Mat<S> w_down;                      // F x H
    std::map<LoraTarget, LoraPair<S>> lora;
};

template <class S>
struct Weights {
    ModelConfig config;
    Mat<S> tok_embed;  // V x H
    Mat<S> lm_head;    // V x H
    std::vector<LayerWeights<S>> layers;
    Vec<S> out_norm;   // H
    bool lora_attached = false;
};

template <class S>
Weights<S> init_weights(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Weights<S> w;
    w.config = config;
    Rng rng(seed);
    const auto fill = [&](Mat<S>& m, int rows, int cols) {
        m.resize(rows, cols);
        for (int r = 0; r < rows; ++r) {
            for (int c = 0; c < cols; ++c) {
                m(r, c) = static_cast<S>(config.init_std * rng.gaussian());
            }
        }
    };
    const int h = config.hidden;
    const int f = config.mlp_dim();
    fill(w.tok_embed, config.vocab, h);
    fill(w.lm_head, config.vocab, h);
    w.layers.resize(config.layers);
    for (auto& layer : w.layers) {
        layer.attn_norm = Vec<S>::Ones(h);
        layer.mlp_norm = Vec<S>::Ones(h);
        fill(layer.wq, h, h);
        fill(layer.wk, h, h);
        fill(layer.wv, h, h);
        fill(layer.wo, h, h);
        fill(layer.w_gate, h, f);
        fill(layer.w_up, h, f);
        fill(layer.w_down, f, h);
    }
    w.out_norm = Vec<S>::Ones(h);
    return w;
}

template <class To, class From>
Weights<To> cast_weights(const Weights<From>& w) {
    Weights<To> out;
    out.config = w.config;
    out.tok_embed = w.tok_embed.template cast<To>();
    out.lm_head = w.lm_head.template cast<To>();
    out.out_norm = w.out_norm.template cast<To>();
    out.lora_attached = w.lora_attached;
    out.layers.resize(w.layers.size());
    for (std::size_t i = 0; i < w.layers.size(); ++i) {
        const auto& src = w.layers[i];
        auto& dst = out.layers[i];
        dst.attn_norm = src.attn_norm.template cast<To>();
        dst.mlp_norm = src.mlp_norm.template cast<To>();
        dst.wq = src.wq.template cast<To>();
        dst.wk = src.wk.template cast<To>();
        dst.wv = src.wv.template cast<To>();
        dst.wo = src.wo.template cast<To>();
        dst.w_gate = src.w_gate.template cast<To>();
        dst.w_up = src.w_up.template cast<To>();
        dst.w_down = src.w_down.template cast<To>();
        for (const auto& [target, pair] : src.lora) {
            LoraPair<To> cast_pair;
            cast_pair.a = pair.a.template cast<To>();
            cast_pair.b = pair.b.template cast<To>();
            cast_pair.rank = pair.rank;
            cast_pair.alpha = pair.alpha;
            cast_pair.seed = pair.seed;
            dst.lora.emplace(target, std::move(cast_pair));
        }
    }
    return out;
}

// Attaches zero-initialized adapters (B = 0, A ~ N(0, (1/r)^2)) to every
// requested target in every layer. Forward output is unchanged until B
// departs from zero. Per-adapter seeds derive from `seed` in (layer, target)
// order.
template <class S>
void attach_lora(Weights<S>& w, const std::set<LoraTarget>& targets, int rank, double alpha,
                 std::uint64_t seed) {
    if (w.lora_attached) throw ConfigError("adapter already attached");
    if (targets.empty()) throw ConfigError("attach_lora: no targets given");
    const int h = w.config.hidden;
    const int f = w.config.mlp_dim();
    Rng master(seed);
    for (std::size_t layer = 0; layer < w.layers.size(); ++layer) {
        for (const LoraTarget target : all_lora_targets()) {
            if (!targets.count(target)) continue;
            int d_in = h;
            int d_out = h;
            if (target == LoraTarget::mlp_gate || target == LoraTarget::mlp_up) d_out = f;
            if (target == LoraTarget::mlp_down) d_in = f;
            if (rank < 1 || rank > std::min(d_in, d_out)) {
                throw ConfigError("attach_lora: rank out of range for target " +
                                  std::string(to_string(target)));
            }
            LoraPair<S> pair;
            pair.rank = rank;
            pair.alpha = alpha;
            pair.seed = master.next();
            pair.a.resize(rank, d_in);
            pair.b = Mat<S>::Zero(d_out, rank);
            Rng rng(pair.seed);
            const double sigma = 1.0 / rank;
            for (int r = 0; r < rank; ++r) {
                for (int c = 0; c < d_in; ++c) {
                    pair.a(r, c) = static_cast<S>(sigma * rng.gaussian());
                }
            }
            w.layers[layer].lora.emplace(target, std::move(pair));
        }
    }
    w.lora_attached = true;
}

struct DropoutConfig {
    double rate = 0.0;
    Rng* rng = nullptr;
};

template <class S>
struct LayerCache {
    Mat<S> x_in;       // residual stream entering the layer
    Mat<S> xn1;        // attn pre-norm output
    Vec<S> inv1;       // per-row 1/rms
    Mat<S> q, k, v;    // q,k after rotary
    std::vector<Mat<S>> probs;  // per head, T x T lower-triangular
    Mat<S> attn_concat;
    Mat<S> attn_drop;  // inverted dropout mask, empty when unused
    Mat<S> x_mid;
    Mat<S> xn2;
    Vec<S> inv2;
    Mat<S> gate, up;   // pre-activation
    Mat<S> hidden;     // silu(gate) .* up
    Mat<S> mlp_drop;
};

template <class S>
struct ForwardCache {
    std::vector<int> ids;
    std::vector<LayerCache<S>> layers;
    Mat<S> x_final;
    Mat<S> xf;
    Vec<S> invf;
};

namespace detail {

template <class S>
void rms_norm(const Mat<S>& x, const Vec<S>& gain, double eps, Mat<S>& out, Vec<S>& inv) {
    const int rows = static_cast<int>(x.rows());
    const int cols = static_cast<int>(x.cols());
    out.resize(rows, cols);
    inv.resize(rows);
    for (int r = 0; r < rows; ++r) {
        const S ms = x.row(r).squaredNorm() / static_cast<S>(cols);
        const S scale = S(1) / std::sqrt(ms + static_cast<S>(eps));
        inv(r) = scale;
        out.row(r) = (x.row(r) * scale).cwiseProduct(gain.transpose());
    }
}

// dx and dgain from dy for y = (x * inv) .* gain.
template <class S>
void rms_norm_backward(const Mat<S>& dy, const Mat<S>& x, const Vec<S>& gain, const Vec<S>& inv,
                       Mat<S>& dx, Vec<S>* dgain) {
    const int rows = static_cast<int>(x.rows());
    const int cols = static_cast<int>(x.cols());
    dx.resize(rows, cols);
    for (int r = 0; r < rows; ++r) {
        const auto u = dy.row(r).cwiseProduct(gain.transpose());
        const S dot = u.cwiseProduct(x.row(r)).sum();
        const S s = inv(r);
        dx.row(r) = u * s - x.row(r) * (s * s * s * dot / static_cast<S>(cols));
        if (dgain) *dgain += dy.row(r).cwiseProduct(x.row(r) * s).transpose();
    }
}

template <class S>
void rope_rows(Mat<S>& x, int heads, double base, bool inverse) {
    const int head_dim = static_cast<int>(x.cols()) / heads;
    const int half = head_dim / 2;
    for (int t = 0; t < x.rows(); ++t) {
        for (int h = 0; h < heads; ++h) {
            S* row = x.row(t).data() + h * head_dim;
            for (int i = 0; i < half; ++i) {
                const double theta =
                    static_cast<double>(t) * std::pow(base, -2.0 * i / head_dim);
                const S c = static_cast<S>(std::cos(theta));
                const S s = static_cast<S>(inverse ? -std::sin(theta) : std::sin(theta));
                const S a = row[2 * i];
                const S b = row[2 * i + 1];
                row[2 * i] = a * c - b * s;
                row[2 * i + 1] = a * s + b * c;
            }
        }
    }
}

template <class S>
Mat<S> linear(const Mat<S>& x, const Mat<S>& w, const LoraPair<S>* lora) {
    Mat<S> y = x * w;
    if (lora) y += lora->scale() * ((x * lora->a.transpose()) * lora->b.transpose());
    return y;
}

template <class S>
const LoraPair<S>* find_lora(const LayerWeights<S>& layer, LoraTarget target) {
    const auto it = layer.lora.find(target);
    return it == layer.lora.end() ? nullptr : &it->second;
}

template <class S>
S silu(S x) {
    return x / (S(1) + std::exp(-x));
}

template <class S>
S silu_grad(S x) {
    const S sig = S(1) / (S(1) + std::exp(-x));
    return sig * (S(1) + x * (S(1) - sig));
}

template <class S>
Mat<S> dropout_mask(int rows, int cols, const DropoutConfig& dropout) {
    Mat<S> mask(rows, cols);
    const S keep_scale = static_cast<S>(1.0 / (1.0 - dropout.rate));
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            mask(r, c) = dropout.rng->uniform() < dropout.rate ? S(0) : keep_scale;
        }
    }
    return mask;
}

}  // namespace detail

template <class S>
void validate_sequence(const ModelConfig& config, std::span<const int> ids) {
    if (ids.empty()) throw DataError("empty token sequence");
    if (static_cast<int>(ids.size()) > config.max_seq) {
        throw DataError("sequence length " + std::to_string(ids.size()) + " exceeds max_seq " +
                        std::to_string(config.max_seq));
    }
    for (const int id : ids) {
        if (id < 0 || id >= config.vocab) {
            throw DataError("token id " + std::to_string(id) + " out of range [0, " +
                            std::to_string(config.vocab) + ")");
        }
    }
}

// Hidden states after the final norm (T x H). Attention context for position
// t reads strictly from positions <= t, so logits for a prefix never depend
// on later ids.
template <class S>
Mat<S> forward_hidden(const Weights<S>& w, std::span<const int> ids, ForwardCache<S>* cache,
                      const DropoutConfig* dropout = nullptr) {
    validate_sequence<S>(w.config, ids);
    const int t_len = static_cast<int>(ids.size());
    const int h = w.config.hidden;
    const int heads = w.config.heads;
    const int head_dim = w.config.head_dim();
    const bool use_dropout = dropout && dropout->rate > 0.0 && dropout->rng;

    if (cache) {
        cache->ids.assign(ids.begin(), ids.end());
        cache->layers.assign(w.layers.size(), {});
    }

    Mat<S> x(t_len, h);
    for (int t = 0; t < t_len; ++t) x.row(t) = w.tok_embed.row(ids[t]);

    const S inv_sqrt_dim = S(1) / std::sqrt(static_cast<S>(head_dim));
    for (std::size_t li = 0; li < w.layers.size(); ++li) {
        const auto& layer = w.layers[li];
        LayerCache<S>* lc = cache ? &cache->layers[li] : nullptr;
        if (lc) lc->x_in = x;

        Mat<S> xn1;
        Vec<S> inv1;
        detail::rms_norm(x, layer.attn_norm, w.config.rms_eps, xn1, inv1);
        Mat<S> q = detail::linear(xn1, layer.wq, detail::find_lora(layer, LoraTarget::q));
        Mat<S> k = detail::linear(xn1, layer.wk, detail::find_lora(layer, LoraTarget::k));
        Mat<S> v = detail::linear(xn1, layer.wv, detail::find_lora(layer, LoraTarget::v));
        detail::rope_rows(q, heads, w.config.rope_base, false);
        detail::rope_rows(k, heads, w.config.rope_base, false);

        Mat<S> concat(t_len, h);
        std::vector<Mat<S>> probs;
        if (lc) probs.reserve(heads);
        for (int head = 0; head < heads; ++head) {
            const auto qh = q.middleCols(head * head_dim, head_dim);
            const auto kh = k.middleCols(head * head_dim, head_dim);
            const auto vh = v.middleCols(head * head_dim, head_dim);
            Mat<S> p = Mat<S>::Zero(t_len, t_len);
            for (int t = 0; t < t_len; ++t) {
                Vec<S> scores(t + 1);
                for (int j = 0; j <= t; ++j) {
                    scores(j) = qh.row(t).dot(kh.row(j)) * inv_sqrt_dim;
                }
                const S max_score = scores.maxCoeff();
                Vec<S> exps = (scores.array() - max_score).exp().matrix();
                exps /= exps.sum();
                p.row(t).head(t + 1) = exps.transpose();
                concat.block(t, head * head_dim, 1, head_dim) =
                    exps.transpose() * vh.topRows(t + 1);
            }
            if (lc) probs.push_back(std::move(p));
        }

        Mat<S> attn_out = detail::linear(concat, layer.wo, detail::find_lora(layer, LoraTarget::o));
        Mat<S> attn_drop;
        if (use_dropout) {
            attn_drop = detail::dropout_mask<S>(t_len, h, *dropout);
            attn_out = attn_out.cwiseProduct(attn_drop);
        }
        Mat<S> x_mid = x + attn_out;

        Mat<S> xn2;
        Vec<S> inv2;
        detail::rms_norm(x_mid, layer.mlp_norm, w.config.rms_eps, xn2, inv2);
        Mat<S> gate = detail::linear(xn2, layer.w_gate, detail::find_lora(layer, LoraTarget::mlp_gate));
        Mat<S> up = detail::linear(xn2, layer.w_up, detail::find_lora(layer, LoraTarget::mlp_up));
        Mat<S> hidden = gate.unaryExpr([](S g) { return detail::silu(g); }).cwiseProduct(up);
        Mat<S> mlp_out =
            detail::linear(hidden, layer.w_down, detail::find_lora(layer, LoraTarget::mlp_down));
        Mat<S> mlp_drop;
        if (use_dropout) {
            mlp_drop = detail::dropout_mask<S>(t_len, h, *dropout);
            mlp_out = mlp_out.cwiseProduct(mlp_drop);
        }

        if (lc) {
            lc->xn1 = std::move(xn1);
            lc->inv1 = std::move(inv1);
            lc->q = std::move(q);
            lc->k = std::move(k);
            lc->v = std::move(v);
            lc->probs = std::move(probs);
            lc->attn_concat = std::move(concat);
            lc->attn_drop = std::move(attn_drop);
            lc->x_mid = x_mid;
            lc->xn2 = std::move(xn2);
            lc->inv2 = std::move(inv2);
            lc->gate = std::move(gate);
            lc->up = std::move(up);
            lc->hidden = std::move(hidden);
            lc->mlp_drop = std::move(mlp_drop);
        }
        x = x_mid + mlp_out;
    }

    if (cache) cache->x_final = x;
    Mat<S> xf;
    Vec<S> invf;
    detail::rms_norm(x, w.out_norm, w.config.rms_eps, xf, invf);
    if (cache) {
        cache->xf = xf;
        cache->invf = std::move(invf);
    }
    return xf;
}

// Per-position logits (T x V). The head projection runs one dot product per
// (position, token) pair so resizing the vocabulary leaves the first-V logits
// bit-identical.
template <class S>
Mat<S> forward(const Weights<S>& w, std::span<const int> ids, ForwardCache<S>* cache = nullptr,
               const DropoutConfig* dropout = nullptr) {
    const Mat<S> xf = forward_hidden(w, ids, cache, dropout);
    const int t_len = static_cast<int>(xf.rows());
    Mat<S> logits(t_len, w.config.vocab);
    for (int t = 0; t < t_len; ++t) {
        for (int j = 0; j < w.config.vocab; ++j) {
            logits(t, j) = xf.row(t).dot(w.lm_head.row(j));
        }
    }
    return logits;
}

// Logits for the last position only.
template <class S>
Vec<S> forward_last(const Weights<S>& w, std::span<const int> ids) {
    const Mat<S> xf = forward_hidden<S>(w, ids, nullptr, nullptr);
    Vec<S> logits(w.config.vocab);
    const int t = static_cast<int>(xf.rows()) - 1;
    for (int j = 0; j < w.config.vocab; ++j) logits(j) = xf.row(t).dot(w.lm_head.row(j));
    return logits;
}

// Mean negative log-likelihood of `targets` (inputs shifted left by one):
// -(1/(T-1)) * sum_t log softmax(logits_t)[targets_t]. Accumulates in fp64.
template <class S>
std::vector<double> clm_loss_per_step(const Mat<S>& logits, std::span<const int> targets) {
    if (static_cast<int>(targets.size()) + 1 != logits.rows()) {
        throw DataError("clm_loss: " + std::to_string(logits.rows()) + " logit rows need " +
                        std::to_string(logits.rows() - 1) + " shifted targets, got " +
                        std::to_string(targets.size()));
    }
    if (targets.empty()) throw DataError("clm_loss: need at least one target");
    std::vector<double> losses;
    losses.reserve(targets.size());
    for (std::size_t t = 0; t < targets.size(); ++t) {
        const int target = targets[t];
        if (target < 0 || target >= logits.cols()) throw DataError("clm_loss: target out of range");
        const VecD row = logits.row(t).transpose().template cast<double>();
        const double max_logit = row.maxCoeff();
        const double log_sum = std::log((row.array() - max_logit).exp().sum()) + max_logit;
        losses.push_back(log_sum - row(target));
    }
    return losses;
}

template <class S>
double clm_loss(const Mat<S>& logits, std::span<const int> targets) {
    const std::vector<double> losses = clm_loss_per_step(logits, targets);
    double total = 0.0;
    for (const double loss : losses) total += loss;
    return total / static_cast<double>(losses.size());
}

// d loss / d logits for the mean CLM loss; row T-1 has no target and gets a
// zero gradient.
template <class S>
Mat<S> clm_loss_grad(const Mat<S>& logits, std::span<const int> targets) {
    if (static_cast<int>(targets.size()) + 1 != logits.rows()) {
        throw DataError("clm_loss_grad: target length mismatch");
    }
    Mat<S> grad = Mat<S>::Zero(logits.rows(), logits.cols());
    const double inv_n = 1.0 / static_cast<double>(targets.size());
    for (std::size_t t = 0; t < targets.size(); ++t) {
        const VecD row = logits.row(t).transpose().template cast<double>();
        const double max_logit = row.maxCoeff();
        VecD p = (row.array() - max_logit).exp();
        p /= p.sum();
        p(targets[t]) -= 1.0;
        grad.row(t) = (p * inv_n).template cast<S>().transpose();
    }
    return grad;
}

enum class TrainableSet { all, lora_plus_embeddings };

template <class S>
struct LayerGrads {
    Vec<S> attn_norm, mlp_norm;
    Mat<S> wq, wk, wv, wo, w_gate, w_up, w_down;
    std::map<LoraTarget, std::pair<Mat<S>, Mat<S>>> lora;  // (da, db)
};

template <class S>
struct Gradients {
    Mat<S> tok_embed;
    Mat<S> lm_head;
    std::vector<LayerGrads<S>> layers;
    Vec<S> out_norm;
};

namespace detail {

// Backward through y = x * w (+ lora). Accumulates parameter gradients when
// the pointers are non-null and returns dx.
template <class S>
Mat<S> linear_backward(const Mat<S>& dy, const Mat<S>& x, const Mat<S>& w,
                       const LoraPair<S>* lora, Mat<S>* dw,
                       std::pair<Mat<S>, Mat<S>>* dlora) {
    Mat<S> dx = dy * w.transpose();
    if (dw) {
        if (dw->size() == 0) *dw = Mat<S>::Zero(w.rows(), w.cols());
        *dw += x.transpose() * dy;
    }
    if (lora) {
        const S s = lora->scale();
        dx += s * ((dy * lora->b) * lora->a);
        if (dlora) {
            if (dlora->first.size() == 0) {
                dlora->first = Mat<S>::Zero(lora->a.rows(), lora->a.cols());
                dlora->second = Mat<S>::Zero(lora->b.rows(), lora->b.cols());
            }
            dlora->first += s * (dy * lora->b).transpose() * x;   // da
            dlora->second += s * dy.transpose() * (x * lora->a.transpose());  // db
        }
    }
    return dx;
}

}  // namespace detail

// Analytic gradients for the cached forward pass. With
// TrainableSet::lora_plus_embeddings only adapters, token embeddings and the
// LM head receive gradients; frozen tensors stay empty.
template <class S>
Gradients<S> backward(const Weights<S>& w, const ForwardCache<S>& cache, const Mat<S>& dlogits,
                      TrainableSet trainable = TrainableSet::all) {
    const int t_len = static_cast<int>(cache.ids.size());
    const int h = w.config.hidden;
    const int heads = w.config.heads;
    const int head_dim = w.config.head_dim();
    const bool full = trainable == TrainableSet::all;

    Gradients<S> g;
    g.layers.resize(w.layers.size());
    g.lm_head = Mat<S>::Zero(w.config.vocab, h);
    g.tok_embed = Mat<S>::Zero(w.config.vocab, h);
    if (full) g.out_norm = Vec<S>::Zero(h);

    // LM head: logits = xf * lm_head^T.
    Mat<S> dxf = dlogits * w.lm_head;
    g.lm_head += dlogits.transpose() * cache.xf;

    Mat<S> dx;
    detail::rms_norm_backward(dxf, cache.x_final, w.out_norm, cache.invf, dx,
                              full ? &g.out_norm : nullptr);

    const S inv_sqrt_dim = S(1) / std::sqrt(static_cast<S>(head_dim));
    for (int li = static_cast<int>(w.layers.size()) - 1; li >= 0; --li) {
        const auto& layer = w.layers[li];
        const auto& lc = cache.layers[li];
        auto& lg = g.layers[li];
        if (full) {
            lg.attn_norm = Vec<S>::Zero(h);
            lg.mlp_norm = Vec<S>::Zero(h);
        }
        const auto dlora_for = [&](LoraTarget target) -> std::pair<Mat<S>, Mat<S>>* {
            if (!w.lora_attached || !detail::find_lora(layer, target)) return nullptr;
            return &lg.lora[target];
        };

        // MLP block.
        Mat<S> d_mlp_out = dx;
        if (lc.mlp_drop.size() > 0) d_mlp_out = d_mlp_out.cwiseProduct(lc.mlp_drop);
        Mat<S> d_hidden = detail::linear_backward(
            d_mlp_out, lc.hidden, layer.w_down, detail::find_lora(layer, LoraTarget::mlp_down),
            full ? &lg.w_down : nullptr, dlora_for(LoraTarget::mlp_down));
        Mat<S> silu_gate = lc.gate.unaryExpr([](S x) { return detail::silu(x); });
        Mat<S> d_up = d_hidden.cwiseProduct(silu_gate);
        Mat<S> d_gate = d_hidden.cwiseProduct(lc.up).cwiseProduct(
            lc.gate.unaryExpr([](S x) { return detail::silu_grad(x); }));
        Mat<S> dxn2 = detail::linear_backward(
            d_up, lc.xn2, layer.w_up, detail::find_lora(layer, LoraTarget::mlp_up),
            full ? &lg.w_up : nullptr, dlora_for(LoraTarget::mlp_up));
        dxn2 += detail::linear_backward(
            d_gate, lc.xn2, layer.w_gate, detail::find_lora(layer, LoraTarget::mlp_gate),
            full ? &lg.w_gate : nullptr, dlora_for(LoraTarget::mlp_gate));
        Mat<S> dx_mid;
        detail::rms_norm_backward(dxn2, lc.x_mid, layer.mlp_norm, lc.inv2, dx_mid,
                                  full ? &lg.mlp_norm : nullptr);
        dx_mid += dx;  // residual

        // Attention block.
        Mat<S> d_attn_out = dx_mid;
        if (lc.attn_drop.size() > 0) d_attn_out = d_attn_out.cwiseProduct(lc.attn_drop);
        Mat<S> d_concat = detail::linear_backward(
            d_attn_out, lc.attn_concat, layer.wo, detail::find_lora(layer, LoraTarget::o),
            full ? &lg.wo : nullptr, dlora_for(LoraTarget::o));

        Mat<S> dq = Mat<S>::Zero(t_len, h);
        Mat<S> dk = Mat<S>::Zero(t_len, h);
        Mat<S> dv = Mat<S>::Zero(t_len, h);
        for (int head = 0; head < heads; ++head) {
            const auto qh = lc.q.middleCols(head * head_dim, head_dim);
            const auto kh = lc.k.middleCols(head * head_dim, head_dim);
            const auto vh = lc.v.middleCols(head * head_dim, head_dim);
            auto dqh = dq.middleCols(head * head_dim, head_dim);
            auto dkh = dk.middleCols(head * head_dim, head_dim);
            auto dvh = dv.middleCols(head * head_dim, head_dim);
            const Mat<S>& p = lc.probs[head];
            const auto dch = d_concat.middleCols(head * head_dim, head_dim);
            for (int t = 0; t < t_len; ++t) {
                const auto p_row = p.row(t).head(t + 1);
                // dP = dC * V^T over the causal prefix.
                const Vec<S> dp = vh.topRows(t + 1) * dch.row(t).transpose();
                dvh.topRows(t + 1) += p_row.transpose() * dch.row(t);
                // Softmax backward: dS = P .* (dP - <P, dP>).
                const S dot = p_row.transpose().cwiseProduct(dp).sum();
                const Vec<S> ds =
                    p_row.transpose().cwiseProduct((dp.array() - dot).matrix());
                dqh.row(t) += (ds.transpose() * kh.topRows(t + 1)) * inv_sqrt_dim;
                dkh.topRows(t + 1) += (ds * qh.row(t)) * inv_sqrt_dim;
            }
        }
        detail::rope_rows(dq, heads, w.config.rope_base, true);
        detail::rope_rows(dk, heads, w.config.rope_base, true);

        Mat<S> dxn1 = detail::linear_backward(
            dq, lc.xn1, layer.wq, detail::find_lora(layer, LoraTarget::q),
            full ? &lg.wq : nullptr, dlora_for(LoraTarget::q));
        dxn1 += detail::linear_backward(
            dk, lc.xn1, layer.wk, detail::find_lora(layer, LoraTarget::k),
            full ? &lg.wk : nullptr, dlora_for(LoraTarget::k));
        dxn1 += detail::linear_backward(
            dv, lc.xn1, layer.wv, detail::find_lora(layer, LoraTarget::v),
            full ? &lg.wv : nullptr, dlora_for(LoraTarget::v));

        Mat<S> dx_in;
        detail::rms_norm_backward(dxn1, lc.x_in, layer.attn_norm, lc.inv1, dx_in,
                                  full ? &lg.attn_norm : nullptr);
        dx = dx_in + dx_mid;  // residual into the previous layer
    }

    for (int t = 0; t < t_len; ++t) g.tok_embed.row(cache.ids[t]) += dx.row(t);
    return g;
}

}  // namespace lmforge::tinylm
