#include "lmforge/train.hpp"

#include <cinttypes>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

namespace lmforge::tinylm {

int swiglu_hidden(int hidden) {
    const double raw = (8.0 / 3.0) * hidden;
    int dim = static_cast<int>(std::lround(raw / 8.0)) * 8;
    return std::max(dim, 8);
}

std::string_view to_string(LoraTarget target) {
    switch (target) {
        case LoraTarget::q: return "q";
        case LoraTarget::k: return "k";
        case LoraTarget::v: return "v";
        case LoraTarget::o: return "o";
        case LoraTarget::mlp_gate: return "mlp-gate";
        case LoraTarget::mlp_up: return "mlp-up";
        case LoraTarget::mlp_down: return "mlp-down";
    }
    return "q";
}

LoraTarget lora_target_from_string(std::string_view name) {
    for (const LoraTarget target : all_lora_targets()) {
        if (to_string(target) == name) return target;
    }
    throw ConfigError("unknown LoRA target '" + std::string(name) + "'");
}

const std::vector<LoraTarget>& all_lora_targets() {
    static const std::vector<LoraTarget> targets = {
        LoraTarget::q,        LoraTarget::k,      LoraTarget::v,       LoraTarget::o,
        LoraTarget::mlp_gate, LoraTarget::mlp_up, LoraTarget::mlp_down};
    return targets;
}

TrainConfig finetune_defaults() {
    TrainConfig config;
    config.dropout = 0.1;
    config.epochs = 2;
    return config;
}

void write_loss_csv(const LossCurve& curve, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << "step,loss,tokens_seen\n";
    char buf[64];
    for (const auto& point : curve.points) {
        std::snprintf(buf, sizeof(buf), "%.17g", point.loss);
        out << point.step << "," << buf << "," << point.tokens_seen << "\n";
    }
    if (!out) throw DataError("failed writing " + path.string());
}

namespace {

}  // namespace

// Walks every (name, weight tensor, gradient tensor) triple in a fixed
// order. Missing gradient entries are skipped.
template <class S, class WS, class GS, class F>
void for_each_weight_grad(WS& weights, GS& grads, F&& visit) {
    visit("tok_embed", weights.tok_embed, grads.tok_embed);
    visit("lm_head", weights.lm_head, grads.lm_head);
    visit("out_norm", weights.out_norm, grads.out_norm);
    for (std::size_t li = 0; li < weights.layers.size(); ++li) {
        auto& lw = weights.layers[li];
        auto& lg = grads.layers[li];
        const std::string prefix = "layer" + std::to_string(li) + ".";
        visit(prefix + "attn_norm", lw.attn_norm, lg.attn_norm);
        visit(prefix + "wq", lw.wq, lg.wq);
        visit(prefix + "wk", lw.wk, lg.wk);
        visit(prefix + "wv", lw.wv, lg.wv);
        visit(prefix + "wo", lw.wo, lg.wo);
        visit(prefix + "mlp_norm", lw.mlp_norm, lg.mlp_norm);
        visit(prefix + "w_gate", lw.w_gate, lg.w_gate);
        visit(prefix + "w_up", lw.w_up, lg.w_up);
        visit(prefix + "w_down", lw.w_down, lg.w_down);
        for (auto& [target, pair] : lw.lora) {
            auto git = lg.lora.find(target);
            if (git == lg.lora.end()) continue;
            const std::string lora_prefix = prefix + "lora." + std::string(to_string(target));
            visit(lora_prefix + ".a", pair.a, git->second.first);
            visit(lora_prefix + ".b", pair.b, git->second.second);
        }
    }
}

// Walks every (name, tensor) pair of the weights in checkpoint order.
template <class S, class WS, class F>
void for_each_named_tensor(WS& weights, F&& visit) {
    visit("tok_embed", weights.tok_embed);
    visit("lm_head", weights.lm_head);
    visit("out_norm", weights.out_norm);
    for (std::size_t li = 0; li < weights.layers.size(); ++li) {
        auto& lw = weights.layers[li];
        const std::string prefix = "layer" + std::to_string(li) + ".";
        visit(prefix + "attn_norm", lw.attn_norm);
        visit(prefix + "wq", lw.wq);
        visit(prefix + "wk", lw.wk);
        visit(prefix + "wv", lw.wv);
        visit(prefix + "wo", lw.wo);
        visit(prefix + "mlp_norm", lw.mlp_norm);
        visit(prefix + "w_gate", lw.w_gate);
        visit(prefix + "w_up", lw.w_up);
        visit(prefix + "w_down", lw.w_down);
        for (auto& [target, pair] : lw.lora) {
            const std::string lora_prefix = prefix + "lora." + std::string(to_string(target));
            visit(lora_prefix + ".a", pair.a);
            visit(lora_prefix + ".b", pair.b);
        }
    }
}

namespace {

template <class S>
void accumulate(Gradients<S>& acc, const Gradients<S>& g) {
    const auto add = [](auto& into, const auto& from) {
        if (from.size() == 0) return;
        if (into.size() == 0) {
            into = from;
        } else {
            into += from;
        }
    };
    add(acc.tok_embed, g.tok_embed);
    add(acc.lm_head, g.lm_head);
    add(acc.out_norm, g.out_norm);
    if (acc.layers.size() < g.layers.size()) acc.layers.resize(g.layers.size());
    for (std::size_t li = 0; li < g.layers.size(); ++li) {
        const auto& src = g.layers[li];
        auto& dst = acc.layers[li];
        add(dst.attn_norm, src.attn_norm);
        add(dst.mlp_norm, src.mlp_norm);
        add(dst.wq, src.wq);
        add(dst.wk, src.wk);
        add(dst.wv, src.wv);
        add(dst.wo, src.wo);
        add(dst.w_gate, src.w_gate);
        add(dst.w_up, src.w_up);
        add(dst.w_down, src.w_down);
        for (const auto& [target, pair] : src.lora) {
            auto& slot = dst.lora[target];
            add(slot.first, pair.first);
            add(slot.second, pair.second);
        }
    }
}

template <class S>
void scale_grads(Gradients<S>& g, S factor) {
    const auto scale = [factor](auto& tensor) {
        if (tensor.size() > 0) tensor *= factor;
    };
    scale(g.tok_embed);
    scale(g.lm_head);
    scale(g.out_norm);
    for (auto& layer : g.layers) {
        scale(layer.attn_norm);
        scale(layer.mlp_norm);
        scale(layer.wq);
        scale(layer.wk);
        scale(layer.wv);
        scale(layer.wo);
        scale(layer.w_gate);
        scale(layer.w_up);
        scale(layer.w_down);
        for (auto& [target, pair] : layer.lora) {
            scale(pair.first);
            scale(pair.second);
        }
    }
}

// Four-way tensor walk: weights, gradients and the two Adam moment
// structures share the Gradients layout.
template <class F>
void for_each_param(Weights<float>& w, Gradients<float>& g, Gradients<float>& m,
                    Gradients<float>& v, F&& visit) {
    visit(w.tok_embed, g.tok_embed, m.tok_embed, v.tok_embed);
    visit(w.lm_head, g.lm_head, m.lm_head, v.lm_head);
    visit(w.out_norm, g.out_norm, m.out_norm, v.out_norm);
    for (std::size_t li = 0; li < w.layers.size(); ++li) {
        auto& lw = w.layers[li];
        auto& lg = g.layers[li];
        auto& lm = m.layers[li];
        auto& lv = v.layers[li];
        visit(lw.attn_norm, lg.attn_norm, lm.attn_norm, lv.attn_norm);
        visit(lw.wq, lg.wq, lm.wq, lv.wq);
        visit(lw.wk, lg.wk, lm.wk, lv.wk);
        visit(lw.wv, lg.wv, lm.wv, lv.wv);
        visit(lw.wo, lg.wo, lm.wo, lv.wo);
        visit(lw.mlp_norm, lg.mlp_norm, lm.mlp_norm, lv.mlp_norm);
        visit(lw.w_gate, lg.w_gate, lm.w_gate, lv.w_gate);
        visit(lw.w_up, lg.w_up, lm.w_up, lv.w_up);
        visit(lw.w_down, lg.w_down, lm.w_down, lv.w_down);
        for (auto& [target, pair] : lw.lora) {
            auto git = lg.lora.find(target);
            if (git == lg.lora.end()) continue;
            auto& mp = lm.lora[target];
            auto& vp = lv.lora[target];
            visit(pair.a, git->second.first, mp.first, vp.first);
            visit(pair.b, git->second.second, mp.second, vp.second);
        }
    }
}

struct AdamState {
    Gradients<float> m;
    Gradients<float> v;
};

void adam_step(Weights<float>& weights, Gradients<float>& grads, AdamState& state, int step,
               const TrainConfig& config) {
    if (state.m.layers.size() != weights.layers.size()) {
        state.m.layers.resize(weights.layers.size());
        state.v.layers.resize(weights.layers.size());
    }
    const float beta1 = static_cast<float>(config.adam_beta1);
    const float beta2 = static_cast<float>(config.adam_beta2);
    const float eps = static_cast<float>(config.adam_eps);
    const float lr = static_cast<float>(config.learning_rate);
    const float bc1 = 1.0f - std::pow(beta1, static_cast<float>(step));
    const float bc2 = 1.0f - std::pow(beta2, static_cast<float>(step));

    for_each_param(weights, grads, state.m, state.v, [&](auto& w, auto& g, auto& m, auto& v) {
        if (g.size() == 0) return;  // frozen tensor
        if (m.size() == 0) {
            m = g;
            m.setZero();
            v = g;
            v.setZero();
        }
        m = beta1 * m + (1.0f - beta1) * g;
        v = (beta2 * v.array() + (1.0f - beta2) * g.array().square()).matrix();
        w = (w.array() - lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps)).matrix();
    });
}

}  // namespace

LossCurve train(Weights<float>& weights, const std::vector<int>& corpus_ids,
                const TrainConfig& config, const std::function<void(const LossPoint&)>& on_step) {
    config.validate();
    weights.config.validate();
    const int seq_len = std::min(config.seq_len, weights.config.max_seq);
    const std::size_t n_chunks = corpus_ids.size() / static_cast<std::size_t>(seq_len);
    if (n_chunks == 0) {
        throw DataError("training corpus shorter than one sequence (" + std::to_string(seq_len) +
                        " tokens)");
    }
    const TrainableSet trainable = config.lora_targets.empty()
                                       ? TrainableSet::all
                                       : TrainableSet::lora_plus_embeddings;
    if (!config.lora_targets.empty() && !weights.lora_attached) {
        throw ConfigError("train: lora_targets set but no adapters attached");
    }

    Rng rng(config.seed);
    AdamState adam;
    LossCurve curve;
    std::uint64_t tokens_seen = 0;
    int step = 0;

    std::vector<std::size_t> order(n_chunks);
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[rng.below(i)]);
        }
        std::size_t cursor = 0;
        while (cursor < order.size()) {
            const std::size_t batch_end =
                std::min(order.size(), cursor + static_cast<std::size_t>(config.batch_size));
            Gradients<float> acc;
            acc.layers.resize(weights.layers.size());
            double batch_loss = 0.0;
            int batch_n = 0;
            for (std::size_t b = cursor; b < batch_end; ++b) {
                const int* begin = corpus_ids.data() + order[b] * seq_len;
                const std::span<const int> ids(begin, seq_len);
                const std::span<const int> targets(begin + 1, seq_len - 1);
                ForwardCache<float> cache;
                DropoutConfig dropout{config.dropout, &rng};
                const Mat<float> logits =
                    forward(weights, ids, &cache, config.dropout > 0.0 ? &dropout : nullptr);
                batch_loss += clm_loss(logits, targets);
                const Mat<float> dlogits = clm_loss_grad(logits, targets);
                Gradients<float> g = backward(weights, cache, dlogits, trainable);
                accumulate(acc, g);
                tokens_seen += static_cast<std::uint64_t>(seq_len);
                ++batch_n;
            }
            batch_loss /= batch_n;
            if (!std::isfinite(batch_loss)) {
                throw DataError("training diverged: non-finite loss at step " +
                                std::to_string(step + 1));
            }
            scale_grads(acc, 1.0f / static_cast<float>(batch_n));
            ++step;
            adam_step(weights, acc, adam, step, config);
            const LossPoint point{step, batch_loss, tokens_seen};
            curve.points.push_back(point);
            if (on_step) on_step(point);
            cursor = batch_end;
        }
    }
    return curve;
}

namespace {

nlohmann::json config_to_json(const ModelConfig& c) {
    return {{"vocab", c.vocab},       {"hidden", c.hidden},
            {"layers", c.layers},     {"heads", c.heads},
            {"max_seq", c.max_seq},   {"rms_eps", c.rms_eps},
            {"rope_base", c.rope_base}, {"mlp_hidden", c.mlp_hidden},
            {"init_std", c.init_std}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    try {
        c.vocab = j.at("vocab").get<int>();
        c.hidden = j.at("hidden").get<int>();
        c.layers = j.at("layers").get<int>();
        c.heads = j.at("heads").get<int>();
        c.max_seq = j.at("max_seq").get<int>();
        c.rms_eps = j.at("rms_eps").get<double>();
        c.rope_base = j.at("rope_base").get<double>();
        c.mlp_hidden = j.value("mlp_hidden", 0);
        c.init_std = j.value("init_std", 0.02);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("checkpoint manifest: " + std::string(e.what()));
    }
    return c;
}

}  // namespace

void save_checkpoint(const Weights<float>& weights, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::json adapters = nlohmann::json::array();
    for (std::size_t li = 0; li < weights.layers.size(); ++li) {
        for (const auto& [target, pair] : weights.layers[li].lora) {
            adapters.push_back({{"layer", li},
                                {"target", std::string(to_string(target))},
                                {"rank", pair.rank},
                                {"alpha", pair.alpha},
                                {"seed", pair.seed}});
        }
    }
    const nlohmann::json manifest = {{"version", 1},
                                     {"model", config_to_json(weights.config)},
                                     {"lora_attached", weights.lora_attached},
                                     {"adapters", adapters}};
    std::ofstream out(dir / "manifest.json", std::ios::binary);
    if (!out) throw DataError("cannot write " + (dir / "manifest.json").string());
    out << manifest.dump(2) << "\n";

    for_each_named_tensor<float>(weights, [&](const std::string& name, const auto& tensor) {
        MatF as_matrix;
        if constexpr (std::decay_t<decltype(tensor)>::ColsAtCompileTime == 1) {
            as_matrix = tensor.transpose();
        } else {
            as_matrix = tensor;
        }
        save_matrix(as_matrix, dir / (name + ".mat"));
    });
}

Weights<float> load_checkpoint(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json", std::ios::binary);
    if (!in) throw DataError("cannot read " + (dir / "manifest.json").string());
    nlohmann::json manifest;
    try {
        in >> manifest;
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError("checkpoint manifest: " + std::string(e.what()));
    }
    if (manifest.value("version", 0) != 1) throw DataError("checkpoint: unsupported version");

    Weights<float> weights;
    weights.config = config_from_json(manifest.at("model"));
    weights.config.validate();
    weights.layers.resize(weights.config.layers);
    weights.lora_attached = manifest.value("lora_attached", false);
    for (const auto& entry : manifest.value("adapters", nlohmann::json::array())) {
        const std::size_t li = entry.at("layer").get<std::size_t>();
        if (li >= weights.layers.size()) throw DataError("checkpoint: adapter layer out of range");
        LoraPair<float> pair;
        pair.rank = entry.at("rank").get<int>();
        pair.alpha = entry.at("alpha").get<double>();
        pair.seed = entry.at("seed").get<std::uint64_t>();
        weights.layers[li].lora.emplace(lora_target_from_string(entry.at("target").get<std::string>()),
                                        std::move(pair));
    }

    for_each_named_tensor<float>(weights, [&](const std::string& name, auto& tensor) {
        const MatF loaded = load_matrix(dir / (name + ".mat"));
        if constexpr (std::decay_t<decltype(tensor)>::ColsAtCompileTime == 1) {
            if (loaded.rows() != 1) {
                throw DataError("checkpoint: " + name + " should be a row vector");
            }
            tensor = loaded.row(0).transpose();
        } else {
            tensor = loaded;
        }
    });
    return weights;
}

GradCheckResult grad_check(const ModelConfig& config, std::uint64_t seed, int seq_len,
                           double epsilon, bool with_lora, int lora_rank, double lora_alpha) {
    config.validate();
    Weights<double> weights = init_weights<double>(config, seed);
    if (with_lora) {
        std::set<LoraTarget> targets(all_lora_targets().begin(), all_lora_targets().end());
        attach_lora(weights, targets, lora_rank, lora_alpha, seed + 1);
        // Zero-initialized B factors would silence the A gradients; give both
        // factors signal for the check.
        Rng rng(seed + 2);
        for (auto& layer : weights.layers) {
            for (auto& [target, pair] : layer.lora) {
                for (int r = 0; r < pair.b.rows(); ++r) {
                    for (int c = 0; c < pair.b.cols(); ++c) {
                        pair.b(r, c) = 0.05 * rng.gaussian();
                    }
                }
            }
        }
    }

    Rng data_rng(seed + 3);
    std::vector<int> ids(seq_len);
    for (int& id : ids) id = static_cast<int>(data_rng.below(config.vocab));
    const std::span<const int> inputs(ids.data(), ids.size());
    const std::span<const int> targets(ids.data() + 1, ids.size() - 1);

    const auto loss_at = [&]() {
        const Mat<double> logits = forward<double>(weights, inputs);
        return clm_loss(logits, targets);
    };

    ForwardCache<double> cache;
    const Mat<double> logits = forward<double>(weights, inputs, &cache);
    const Mat<double> dlogits = clm_loss_grad(logits, targets);
    Gradients<double> analytic = backward(weights, cache, dlogits, TrainableSet::all);

    GradCheckResult result;
    for_each_weight_grad<double>(weights, analytic,
                                 [&](const std::string& name, auto& w, auto& g) {
        GradCheckGroup group{name, 0.0};
        for (Eigen::Index i = 0; i < w.size(); ++i) {
            double* value = w.data() + i;
            const double saved = *value;
            *value = saved + epsilon;
            const double up = loss_at();
            *value = saved - epsilon;
            const double down = loss_at();
            *value = saved;
            const double numeric = (up - down) / (2.0 * epsilon);
            const double analytic_val = g.size() > 0 ? *(g.data() + i) : 0.0;
            const double denom = std::max({std::abs(numeric), std::abs(analytic_val), 1e-6});
            group.max_rel_error =
                std::max(group.max_rel_error, std::abs(numeric - analytic_val) / denom);
        }
        result.max_rel_error = std::max(result.max_rel_error, group.max_rel_error);
        result.groups.push_back(std::move(group));
    });
    return result;
}

}  // namespace lmforge::tinylm
