#include "lmforge/resize.hpp"

#include "lmforge/errors.hpp"
#include "lmforge/lattice.hpp"
#include "lmforge/rng.hpp"

namespace lmforge::adapt {

std::string_view to_string(InitPolicy policy) {
    switch (policy) {
        case InitPolicy::subtoken_mean: return "subtoken-mean";
        case InitPolicy::global_mean: return "global-mean";
        case InitPolicy::gaussian: return "gaussian";
    }
    return "subtoken-mean";
}

InitPolicy init_policy_from_string(std::string_view name) {
    if (name == "subtoken-mean") return InitPolicy::subtoken_mean;
    if (name == "global-mean") return InitPolicy::global_mean;
    if (name == "gaussian") return InitPolicy::gaussian;
    throw ConfigError("unknown init policy '" + std::string(name) + "'");
}

MatF resize_embeddings(const MatF& embeddings, const ResizePlan& plan) {
    if (embeddings.rows() != plan.v_old || embeddings.cols() != plan.hidden) {
        throw ConfigError("resize: embedding shape " + std::to_string(embeddings.rows()) + "x" +
                          std::to_string(embeddings.cols()) + " does not match plan " +
                          std::to_string(plan.v_old) + "x" + std::to_string(plan.hidden));
    }
    if (plan.v_new < plan.v_old) throw ConfigError("resize: v_new must be >= v_old");

    MatF out(plan.v_new, plan.hidden);
    out.topRows(plan.v_old) = embeddings;
    if (plan.v_new == plan.v_old) return out;

    switch (plan.init) {
        case InitPolicy::subtoken_mean: {
            for (int row = plan.v_old; row < plan.v_new; ++row) {
                const auto it = plan.subtoken_map.find(row);
                if (it == plan.subtoken_map.end() || it->second.empty()) {
                    throw ConfigError("resize: subtoken-mean needs base ids for new id " +
                                      std::to_string(row));
                }
                VecD mean = VecD::Zero(plan.hidden);
                for (const int base_id : it->second) {
                    if (base_id < 0 || base_id >= plan.v_old) {
                        throw ConfigError("resize: subtoken id " + std::to_string(base_id) +
                                          " out of base range for new id " + std::to_string(row));
                    }
                    mean += embeddings.row(base_id).transpose().cast<double>();
                }
                mean /= static_cast<double>(it->second.size());
                out.row(row) = mean.transpose().cast<float>();
            }
            break;
        }
        case InitPolicy::global_mean: {
            VecD mean = VecD::Zero(plan.hidden);
            for (int row = 0; row < plan.v_old; ++row) {
                mean += embeddings.row(row).transpose().cast<double>();
            }
            mean /= static_cast<double>(plan.v_old);
            const VecF mean_f = mean.cast<float>();
            for (int row = plan.v_old; row < plan.v_new; ++row) {
                out.row(row) = mean_f.transpose();
            }
            break;
        }
        case InitPolicy::gaussian: {
            Rng rng(plan.seed);
            for (int row = plan.v_old; row < plan.v_new; ++row) {
                for (int col = 0; col < plan.hidden; ++col) {
                    out(row, col) = static_cast<float>(plan.gaussian_sigma * rng.gaussian());
                }
            }
            break;
        }
    }
    return out;
}

std::map<int, std::vector<int>> build_subtoken_map(const tok::TokenizerModel& base,
                                                   const tok::TokenizerModel& merged) {
    std::map<int, std::vector<int>> map;
    for (int id = base.size(); id < merged.size(); ++id) {
        const auto& piece = merged.pieces[id];
        std::vector<int> sub = tok::encode_surface(base, piece.surface);
        if (sub.empty()) {
            throw DataError("subtoken map: piece '" + piece.surface +
                            "' decomposes to nothing under the base tokenizer");
        }
        map[id] = std::move(sub);
    }
    return map;
}

}  // namespace lmforge::adapt
