#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "lmforge/matrix.hpp"

namespace lmforge::adapt {

// Low-rank additive update for a named weight: delta = (alpha / rank) * b * a
// with a: rank x d_in, b: d_out x rank. b starts at zero so attaching an
// adapter leaves the model's function unchanged.
struct LoraAdapter {
    std::string target;  // one of q, k, v, o, mlp-gate, mlp-up, mlp-down
    int rank = 0;
    float alpha = 0.0f;
    std::uint64_t seed = 0;
    MatF a;  // rank x d_in, N(0, (1/rank)^2) at init
    MatF b;  // d_out x rank, zero at init

    float scale() const { return alpha / static_cast<float>(rank); }
};

LoraAdapter lora_init(const std::string& target, int d_out, int d_in, int rank, float alpha,
                      std::uint64_t seed);

// w + scale * (b * a); w is a d_out x d_in weight in the adapter's frame.
MatF lora_apply(const MatF& w, const LoraAdapter& adapter);

MatF lora_merge(const MatF& w, const LoraAdapter& adapter);

// Inverse of lora_merge; the subtraction runs in fp64 so the roundtrip stays
// within 1e-6 of the original fp32 weights.
MatF lora_unmerge(const MatF& w_merged, const LoraAdapter& adapter);

// Checkpoint directory: a.mat, b.mat plus manifest.json
// {target, rank, alpha, seed}.
void save_adapter(const LoraAdapter& adapter, const std::filesystem::path& dir);
LoraAdapter load_adapter(const std::filesystem::path& dir);

}  // namespace lmforge::adapt
