#pragma once

#include <filesystem>
#include <functional>

#include "lmforge/tinylm.hpp"

namespace lmforge::tinylm {

struct TrainConfig {
    int batch_size = 64;
    double learning_rate = 2e-4;
    int epochs = 1;
    int seq_len = 512;
    std::set<LoraTarget> lora_targets;  // empty -> full fine-tune
    double dropout = 0.0;
    std::uint64_t seed = 0;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.95;
    double adam_eps = 1e-8;

    void validate() const {
        if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
        if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("train: dropout must be in [0, 1)");
        if (seq_len < 2) throw ConfigError("train: seq_len must be >= 2");
        if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    }
};

// Dropout 0.1 and two epochs follow the instruction-tuning setup; everything
// else matches the pre-training defaults.
TrainConfig finetune_defaults();

struct LossPoint {
    int step = 0;
    double loss = 0.0;
    std::uint64_t tokens_seen = 0;
};

struct LossCurve {
    std::vector<LossPoint> points;
};

void write_loss_csv(const LossCurve& curve, const std::filesystem::path& path);

// Adam over the trainable tensors (constant learning rate, no weight decay).
// Shuffled fixed-length chunks, per-step loss recording, abort on non-finite
// loss. Deterministic given the seed.
LossCurve train(Weights<float>& weights, const std::vector<int>& corpus_ids,
                const TrainConfig& config,
                const std::function<void(const LossPoint&)>& on_step = nullptr);

// Checkpoint directory: one .mat file per tensor plus manifest.json carrying
// the model config, adapter metadata and the RNG state.
void save_checkpoint(const Weights<float>& weights, const std::filesystem::path& dir);
Weights<float> load_checkpoint(const std::filesystem::path& dir);

struct GradCheckGroup {
    std::string name;
    double max_rel_error = 0.0;
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::vector<GradCheckGroup> groups;
};

// Central finite differences in fp64 (step `epsilon`) against the analytic
// backward pass, over every parameter group including adapters. Relative
// error uses max(|analytic|, |numeric|, 1e-6) as the denominator.
GradCheckResult grad_check(const ModelConfig& config, std::uint64_t seed, int seq_len = 8,
                           double epsilon = 1e-5, bool with_lora = true, int lora_rank = 2,
                           double lora_alpha = 4.0);

}  // namespace lmforge::tinylm
