#pragma once

#include <cstdint>
#include <map>
#include <string_view>
#include <vector>

#include "lmforge/matrix.hpp"
#include "lmforge/tokenizer.hpp"

namespace lmforge::adapt {

// Initialization for embedding/LM-head rows appended by a vocabulary
// extension. subtoken_mean averages the base rows of each new piece's
// base-tokenizer decomposition; it keeps new tokens distinguishable and
// starts them near the distribution the base model already knows.
enum class InitPolicy { subtoken_mean, global_mean, gaussian };

std::string_view to_string(InitPolicy policy);
InitPolicy init_policy_from_string(std::string_view name);

struct ResizePlan {
    int v_old = 0;
    int v_new = 0;
    int hidden = 0;
    InitPolicy init = InitPolicy::subtoken_mean;
    std::map<int, std::vector<int>> subtoken_map;  // new id -> base ids, each < v_old
    double gaussian_sigma = 0.02;
    std::uint64_t seed = 0;
};

// Rows [0, v_old) of the result are bit-identical to the input; rows
// [v_old, v_new) follow the plan's policy.
MatF resize_embeddings(const MatF& embeddings, const ResizePlan& plan);

// Decomposes every merged piece with id >= base.size() using the base
// tokenizer. Byte fallback guarantees a non-empty base-id list per new piece.
std::map<int, std::vector<int>> build_subtoken_map(const tok::TokenizerModel& base,
                                                   const tok::TokenizerModel& merged);

}  // namespace lmforge::adapt
