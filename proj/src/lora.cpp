#include "lmforge/lora.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "lmforge/errors.hpp"
#include "lmforge/rng.hpp"

namespace lmforge::adapt {

LoraAdapter lora_init(const std::string& target, int d_out, int d_in, int rank, float alpha,
                      std::uint64_t seed) {
    if (rank < 1) throw ConfigError("lora: rank must be >= 1");
    if (rank > std::min(d_out, d_in)) {
        throw ConfigError("lora: rank " + std::to_string(rank) + " exceeds min(d_out, d_in) = " +
                          std::to_string(std::min(d_out, d_in)));
    }
    LoraAdapter adapter;
    adapter.target = target;
    adapter.rank = rank;
    adapter.alpha = alpha;
    adapter.seed = seed;
    adapter.a = MatF(rank, d_in);
    adapter.b = MatF::Zero(d_out, rank);
    Rng rng(seed);
    const double sigma = 1.0 / static_cast<double>(rank);
    for (int r = 0; r < rank; ++r) {
        for (int c = 0; c < d_in; ++c) {
            adapter.a(r, c) = static_cast<float>(sigma * rng.gaussian());
        }
    }
    return adapter;
}

namespace {

void check_shapes(const MatF& w, const LoraAdapter& adapter) {
    if (w.rows() != adapter.b.rows() || w.cols() != adapter.a.cols()) {
        throw ConfigError("lora: weight " + std::to_string(w.rows()) + "x" +
                          std::to_string(w.cols()) + " does not conform to adapter " +
                          std::to_string(adapter.b.rows()) + "x" + std::to_string(adapter.a.cols()));
    }
}

}  // namespace

MatF lora_apply(const MatF& w, const LoraAdapter& adapter) {
    check_shapes(w, adapter);
    return w + adapter.scale() * (adapter.b * adapter.a);
}

MatF lora_merge(const MatF& w, const LoraAdapter& adapter) { return lora_apply(w, adapter); }

MatF lora_unmerge(const MatF& w_merged, const LoraAdapter& adapter) {
    check_shapes(w_merged, adapter);
    const MatD delta =
        static_cast<double>(adapter.scale()) * (adapter.b.cast<double>() * adapter.a.cast<double>());
    return (w_merged.cast<double>() - delta).cast<float>();
}

void save_adapter(const LoraAdapter& adapter, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    save_matrix(adapter.a, dir / "a.mat");
    save_matrix(adapter.b, dir / "b.mat");
    const nlohmann::json manifest = {{"target", adapter.target},
                                     {"rank", adapter.rank},
                                     {"alpha", adapter.alpha},
                                     {"seed", adapter.seed}};
    std::ofstream out(dir / "manifest.json", std::ios::binary);
    if (!out) throw DataError("cannot write " + (dir / "manifest.json").string());
    out << manifest.dump(2) << "\n";
}

LoraAdapter load_adapter(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json", std::ios::binary);
    if (!in) throw DataError("cannot read " + (dir / "manifest.json").string());
    nlohmann::json manifest;
    try {
        in >> manifest;
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError("adapter manifest: " + std::string(e.what()));
    }
    LoraAdapter adapter;
    try {
        adapter.target = manifest.at("target").get<std::string>();
        adapter.rank = manifest.at("rank").get<int>();
        adapter.alpha = manifest.at("alpha").get<float>();
        adapter.seed = manifest.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError("adapter manifest: " + std::string(e.what()));
    }
    adapter.a = load_matrix(dir / "a.mat");
    adapter.b = load_matrix(dir / "b.mat");
    if (adapter.a.rows() != adapter.rank || adapter.b.cols() != adapter.rank) {
        throw DataError("adapter matrices do not match the manifest rank");
    }
    return adapter;
}

}  // namespace lmforge::adapt
