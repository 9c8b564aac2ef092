#pragma once

#include <cstdint>
#include <set>
#include <string>

#include <nlohmann/json_fwd.hpp>

#include "lmforge/matrix.hpp"
#include "lmforge/rng.hpp"
#include "lmforge/tinylm.hpp"
#include "lmforge/tokenizer.hpp"

namespace lmforge::gen {

// Defaults mirror the evaluation setup: T=0.2 (0.7 for creative prompts),
// top-k 50, top-p 0.90, repetition penalty 1.1, 512 new tokens.
struct GenerationConfig {
    double temperature = 0.2;
    int top_k = 50;
    double top_p = 0.90;
    double repetition_penalty = 1.1;
    int max_new_tokens = 512;
    std::uint64_t seed = 0;
    std::set<int> stop_ids;
    bool greedy = false;

    void validate() const;
    GenerationConfig creative() const {
        GenerationConfig c = *this;
        c.temperature = 0.7;
        return c;
    }
};

void to_json(nlohmann::json& j, const GenerationConfig& c);
void from_json(const nlohmann::json& j, GenerationConfig& c);

// Logit transforms. Each is pure; the generation loop applies them in the
// order penalty -> temperature -> top-k -> top-p. Masked entries are -inf.

// Ids in `history`: positive logits are divided by the penalty, non-positive
// ones multiplied by it.
VecF apply_repetition_penalty(VecF logits, const std::set<int>& history, double penalty);

VecF apply_temperature(VecF logits, double temperature);

// Keeps the k highest logits (ties at the boundary keep the lower id). k = 0
// or k >= V is the identity.
VecF top_k_filter(VecF logits, int k);

// Keeps the smallest descending-probability prefix whose cumulative softmax
// mass reaches p; ties between equal probabilities keep the lower id.
VecF top_p_filter(VecF logits, double p);

// Draws from the softmax over finite entries; walks the cumulative
// distribution in id order.
int sample_token(const VecF& logits, Rng& rng);

int argmax_token(const VecF& logits);

enum class StopReason { stop_id, length };

std::string_view to_string(StopReason reason);

struct GenerationResult {
    std::string text;          // decoded continuation, stop id excluded
    std::vector<int> ids;      // generated ids, stop id excluded
    StopReason stop_reason = StopReason::length;
};

GenerationResult generate(const tinylm::Weights<float>& weights, const tok::TokenizerModel& tokenizer,
                          const std::string& prompt, const GenerationConfig& config);

}  // namespace lmforge::gen
