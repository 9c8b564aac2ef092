#include "lmforge/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <nlohmann/json.hpp>

#include "lmforge/errors.hpp"

namespace lmforge::gen {

namespace {
constexpr float kMaskedLogit = -std::numeric_limits<float>::infinity();
}

void GenerationConfig::validate() const {
    if (temperature <= 0.0) throw ConfigError("generation: temperature must be > 0");
    if (top_k < 0) throw ConfigError("generation: top_k must be >= 0");
    if (top_p <= 0.0 || top_p > 1.0) throw ConfigError("generation: top_p must be in (0, 1]");
    if (repetition_penalty < 1.0) throw ConfigError("generation: repetition_penalty must be >= 1");
    if (max_new_tokens < 0) throw ConfigError("generation: max_new_tokens must be >= 0");
}

void to_json(nlohmann::json& j, const GenerationConfig& c) {
    j = {{"temperature", c.temperature},
         {"top_k", c.top_k},
         {"top_p", c.top_p},
         {"repetition_penalty", c.repetition_penalty},
         {"max_new_tokens", c.max_new_tokens},
         {"seed", c.seed},
         {"stop_ids", std::vector<int>(c.stop_ids.begin(), c.stop_ids.end())},
         {"greedy", c.greedy}};
}

void from_json(const nlohmann::json& j, GenerationConfig& c) {
    c.temperature = j.value("temperature", c.temperature);
    c.top_k = j.value("top_k", c.top_k);
    c.top_p = j.value("top_p", c.top_p);
    c.repetition_penalty = j.value("repetition_penalty", c.repetition_penalty);
    c.max_new_tokens = j.value("max_new_tokens", c.max_new_tokens);
    c.seed = j.value("seed", c.seed);
    c.greedy = j.value("greedy", c.greedy);
    if (j.contains("stop_ids")) {
        const auto ids = j.at("stop_ids").get<std::vector<int>>();
        c.stop_ids = std::set<int>(ids.begin(), ids.end());
    }
    c.validate();
}

VecF apply_repetition_penalty(VecF logits, const std::set<int>& history, double penalty) {
    if (penalty < 1.0) throw ConfigError("repetition penalty must be >= 1");
    for (const int id : history) {
        if (id < 0 || id >= logits.size()) continue;
        const float value = logits(id);
        if (!std::isfinite(value)) continue;
        logits(id) = value > 0.0f ? static_cast<float>(value / penalty)
                                  : static_cast<float>(value * penalty);
    }
    return logits;
}

VecF apply_temperature(VecF logits, double temperature) {
    if (temperature <= 0.0) throw ConfigError("temperature must be > 0");
    for (Eigen::Index i = 0; i < logits.size(); ++i) {
        if (std::isfinite(logits(i))) logits(i) = static_cast<float>(logits(i) / temperature);
    }
    return logits;
}

VecF top_k_filter(VecF logits, int k) {
    const Eigen::Index v = logits.size();
    if (k <= 0 || k >= v) return logits;
    std::vector<int> order(v);
    std::iota(order.begin(), order.end(), 0);
    // Value descending, id ascending at equal values.
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (logits(a) != logits(b)) return logits(a) > logits(b);
        return a < b;
    });
    VecF out = VecF::Constant(v, kMaskedLogit);
    for (int i = 0; i < k; ++i) out(order[i]) = logits(order[i]);
    return out;
}

VecF top_p_filter(VecF logits, double p) {
    if (p <= 0.0 || p > 1.0) throw ConfigError("top_p must be in (0, 1]");
    const Eigen::Index v = logits.size();
    std::vector<int> finite;
    finite.reserve(v);
    double max_logit = -std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < v; ++i) {
        if (std::isfinite(logits(i))) {
            finite.push_back(static_cast<int>(i));
            max_logit = std::max(max_logit, static_cast<double>(logits(i)));
        }
    }
    if (finite.empty()) throw DataError("top_p: no finite logits");
    std::sort(finite.begin(), finite.end(), [&](int a, int b) {
        if (logits(a) != logits(b)) return logits(a) > logits(b);
        return a < b;
    });
    double z = 0.0;
    for (const int id : finite) z += std::exp(static_cast<double>(logits(id)) - max_logit);

    VecF out = VecF::Constant(v, kMaskedLogit);
    double cumulative = 0.0;
    for (const int id : finite) {
        out(id) = logits(id);
        cumulative += std::exp(static_cast<double>(logits(id)) - max_logit) / z;
        if (cumulative >= p) break;
    }
    return out;
}

int sample_token(const VecF& logits, Rng& rng) {
    const Eigen::Index v = logits.size();
    double max_logit = -std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < v; ++i) {
        if (std::isfinite(logits(i))) max_logit = std::max(max_logit, static_cast<double>(logits(i)));
    }
    if (!std::isfinite(max_logit)) throw DataError("sample_token: all logits are masked");
    double z = 0.0;
    for (Eigen::Index i = 0; i < v; ++i) {
        if (std::isfinite(logits(i))) z += std::exp(static_cast<double>(logits(i)) - max_logit);
    }
    const double draw = rng.uniform() * z;
    double cumulative = 0.0;
    int last_finite = -1;
    for (Eigen::Index i = 0; i < v; ++i) {
        if (!std::isfinite(logits(i))) continue;
        last_finite = static_cast<int>(i);
        cumulative += std::exp(static_cast<double>(logits(i)) - max_logit);
        if (draw < cumulative) return static_cast<int>(i);
    }
    return last_finite;  // draw == z edge case
}

int argmax_token(const VecF& logits) {
    int best = -1;
    float best_value = kMaskedLogit;
    for (Eigen::Index i = 0; i < logits.size(); ++i) {
        if (std::isfinite(logits(i)) && (best < 0 || logits(i) > best_value)) {
            best = static_cast<int>(i);
            best_value = logits(i);
        }
    }
    if (best < 0) throw DataError("argmax_token: all logits are masked");
    return best;
}

std::string_view to_string(StopReason reason) {
    return reason == StopReason::stop_id ? "stop_id" : "length";
}

GenerationResult generate(const tinylm::Weights<float>& weights,
                          const tok::TokenizerModel& tokenizer, const std::string& prompt,
                          const GenerationConfig& config) {
    config.validate();
    if (tokenizer.size() != weights.config.vocab) {
        throw ConfigError("generate: tokenizer size " + std::to_string(tokenizer.size()) +
                          " does not match model vocab " + std::to_string(weights.config.vocab));
    }
    std::vector<int> context = tok::encode(tokenizer, prompt);
    if (context.empty()) context.push_back(1);  // <s> keeps the model fed on empty prompts
    if (static_cast<int>(context.size()) >= weights.config.max_seq) {
        throw DataError("generate: prompt occupies the whole context window (" +
                        std::to_string(context.size()) + " of " +
                        std::to_string(weights.config.max_seq) + " tokens)");
    }

    GenerationResult result;
    Rng rng(config.seed);
    std::set<int> history(context.begin(), context.end());
    for (int produced = 0; produced < config.max_new_tokens; ++produced) {
        if (static_cast<int>(context.size()) >= weights.config.max_seq) break;
        VecF logits = tinylm::forward_last(weights, std::span<const int>(context));
        logits = apply_repetition_penalty(std::move(logits), history, config.repetition_penalty);
        logits = apply_temperature(std::move(logits), config.temperature);
        logits = top_k_filter(std::move(logits), config.top_k);
        logits = top_p_filter(std::move(logits), config.top_p);
        const int id = config.greedy ? argmax_token(logits) : sample_token(logits, rng);
        if (config.stop_ids.count(id)) {
            result.stop_reason = StopReason::stop_id;
            result.text = tok::decode(tokenizer, result.ids).text;
            return result;
        }
        result.ids.push_back(id);
        context.push_back(id);
        history.insert(id);
    }
    result.stop_reason = StopReason::length;
    result.text = tok::decode(tokenizer, result.ids).text;
    return result;
}

}  // namespace lmforge::gen
