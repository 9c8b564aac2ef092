#include "lmforge/merge.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "lmforge/errors.hpp"
#include "lmforge/trainer.hpp"

namespace lmforge::tok {

std::string_view to_string(ScorePolicy policy) {
    switch (policy) {
        case ScorePolicy::keep_raw: return "keep-raw";
        case ScorePolicy::shift_to_median: return "shift-to-median";
        case ScorePolicy::refit_on_corpus: return "refit-on-corpus";
    }
    return "shift-to-median";
}

ScorePolicy score_policy_from_string(std::string_view name) {
    if (name == "keep-raw") return ScorePolicy::keep_raw;
    if (name == "shift-to-median") return ScorePolicy::shift_to_median;
    if (name == "refit-on-corpus") return ScorePolicy::refit_on_corpus;
    throw ConfigError("unknown score policy '" + std::string(name) + "'");
}

namespace {

double median_normal_score(const TokenizerModel& model) {
    std::vector<double> scores;
    for (const auto& piece : model.pieces) {
        if (piece.kind == PieceKind::normal) scores.push_back(piece.score);
    }
    if (scores.empty()) throw DataError("model has no normal pieces");
    std::sort(scores.begin(), scores.end());
    const std::size_t n = scores.size();
    if (n % 2 == 1) return scores[n / 2];
    return 0.5 * (scores[n / 2 - 1] + scores[n / 2]);
}

}  // namespace

std::pair<TokenizerModel, MergeReport> merge_tokenizers(const TokenizerModel& base,
                                                        const TokenizerModel& addon,
                                                        const MergeOptions& options) {
    if (!(base.normalization == addon.normalization)) {
        throw ConfigError("tokenizer merge: normalization policies are incompatible");
    }
    if (options.policy == ScorePolicy::refit_on_corpus && options.refit_corpus == nullptr) {
        throw ConfigError("tokenizer merge: refit-on-corpus requires a reference corpus");
    }

    std::unordered_set<std::string> base_reserved;
    for (const auto& piece : base.pieces) {
        if (piece.kind == PieceKind::control || piece.kind == PieceKind::unknown) {
            base_reserved.insert(piece.surface);
        }
    }

    TokenizerModel merged;
    merged.normalization = base.normalization;
    merged.byte_fallback = base.byte_fallback;
    merged.pieces = base.pieces;

    MergeReport report;
    report.base_size = base.size();

    std::vector<int> appended_ids;
    for (const auto& piece : addon.pieces) {
        if (piece.kind != PieceKind::normal) continue;
        ++report.addon_size;
        if (base_reserved.count(piece.surface)) {
            throw ConfigError("tokenizer merge: addon piece '" + piece.surface +
                              "' collides with a base control piece");
        }
        if (base.find_normal(piece.surface) >= 0) {
            ++report.duplicates_skipped;
            continue;
        }
        Piece appended = piece;
        appended.id = static_cast<int>(merged.pieces.size());
        appended_ids.push_back(appended.id);
        merged.pieces.push_back(std::move(appended));
        ++report.appended;
    }
    report.final_size = static_cast<int>(merged.pieces.size());
    merged.target_vocab_size = report.final_size;
    merged.rebuild_index();

    if (!appended_ids.empty()) {
        switch (options.policy) {
            case ScorePolicy::keep_raw:
                break;
            case ScorePolicy::shift_to_median: {
                double addon_max = -std::numeric_limits<double>::infinity();
                for (const auto& piece : addon.pieces) {
                    if (piece.kind == PieceKind::normal) addon_max = std::max(addon_max, piece.score);
                }
                const double shift = median_normal_score(base) - addon_max;
                for (const int id : appended_ids) merged.pieces[id].score += shift;
                break;
            }
            case ScorePolicy::refit_on_corpus: {
                // Bootstrap appended scores onto the base scale, then replace
                // them with their expected-count estimates on the corpus.
                double addon_max = -std::numeric_limits<double>::infinity();
                for (const auto& piece : addon.pieces) {
                    if (piece.kind == PieceKind::normal) addon_max = std::max(addon_max, piece.score);
                }
                const double shift = median_normal_score(base) - addon_max;
                for (const int id : appended_ids) merged.pieces[id].score += shift;
                const EStepResult e = e_step(*options.refit_corpus, merged);
                double total = 0.0;
                for (const auto& piece : merged.pieces) {
                    if (piece.kind == PieceKind::normal) total += std::max(e.expected[piece.id], 1e-12);
                }
                if (total <= 0.0) throw DataError("refit corpus produced no expected counts");
                for (const int id : appended_ids) {
                    merged.pieces[id].score =
                        std::log(std::max(e.expected[id], 1e-12)) - std::log(total);
                }
                break;
            }
        }
    }
    return {std::move(merged), report};
}

EfficiencyStats compare_efficiency(const TokenizerModel& tok_a, const TokenizerModel& tok_b,
                                   const std::vector<std::string>& texts) {
    if (texts.empty()) throw DataError("compare_efficiency: no texts given");
    EfficiencyStats stats;
    stats.texts = texts.size();
    stats.per_text_ratios.reserve(texts.size());
    for (const auto& text : texts) {
        const std::size_t a = encode(tok_a, text).size();
        const std::size_t b = encode(tok_b, text).size();
        stats.tokens_a += a;
        stats.tokens_b += b;
        stats.per_text_tokens_a.push_back(a);
        stats.per_text_tokens_b.push_back(b);
        stats.per_text_ratios.push_back(
            a == 0 ? 1.0 : static_cast<double>(b) / static_cast<double>(a));
    }
    if (stats.tokens_a == 0) throw DataError("compare_efficiency: texts produced no tokens");
    stats.ratio = static_cast<double>(stats.tokens_b) / static_cast<double>(stats.tokens_a);
    std::vector<double> sorted = stats.per_text_ratios;
    std::sort(sorted.begin(), sorted.end());
    stats.per_text_min = sorted.front();
    stats.per_text_max = sorted.back();
    const std::size_t n = sorted.size();
    stats.per_text_median =
        n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    return stats;
}

nlohmann::json merge_report_to_json(const MergeReport& report) {
    return {{"base_size", report.base_size},
            {"addon_size", report.addon_size},
            {"appended", report.appended},
            {"duplicates_skipped", report.duplicates_skipped},
            {"final_size", report.final_size}};
}

nlohmann::json efficiency_to_json(const EfficiencyStats& stats) {
    return {{"texts", stats.texts},
            {"tokens_a", stats.tokens_a},
            {"tokens_b", stats.tokens_b},
            {"ratio", stats.ratio},
            {"per_text_ratios",
             {{"min", stats.per_text_min},
              {"median", stats.per_text_median},
              {"max", stats.per_text_max}}}};
}

void write_efficiency_csv(const EfficiencyStats& stats, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << "text_id,tokens_a,tokens_b,ratio\n";
    char buf[64];
    for (std::size_t i = 0; i < stats.per_text_ratios.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.17g", stats.per_text_ratios[i]);
        out << i << "," << stats.per_text_tokens_a[i] << "," << stats.per_text_tokens_b[i] << ","
            << buf << "\n";
    }
    if (!out) throw DataError("failed writing " + path.string());
}

}  // namespace lmforge::tok
