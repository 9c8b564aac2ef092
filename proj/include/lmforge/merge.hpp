#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "lmforge/corpus.hpp"
#include "lmforge/tokenizer.hpp"

namespace lmforge::tok {

// How appended pieces get their scores. Raw cross-model log-probabilities are
// not comparable, so the default shifts the addon's best normal score onto
// the base's median normal score. refit_on_corpus instead re-estimates
// appended scores from expected counts on a reference corpus.
enum class ScorePolicy { keep_raw, shift_to_median, refit_on_corpus };

std::string_view to_string(ScorePolicy policy);
ScorePolicy score_policy_from_string(std::string_view name);

struct MergeOptions {
    ScorePolicy policy = ScorePolicy::shift_to_median;
    const corpus::CorpusSample* refit_corpus = nullptr;  // required for refit_on_corpus
};

struct MergeReport {
    int base_size = 0;   // total base pieces (ids preserved)
    int addon_size = 0;  // addon normal pieces considered
    int appended = 0;
    int duplicates_skipped = 0;
    int final_size = 0;
};

// Appends addon normal pieces absent from the base, preserving every base
// piece bit-for-bit (ids, surfaces, scores, kinds). Byte and control pieces
// come from the base only.
std::pair<TokenizerModel, MergeReport> merge_tokenizers(const TokenizerModel& base,
                                                        const TokenizerModel& addon,
                                                        const MergeOptions& options = {});

struct EfficiencyStats {
    std::uint64_t texts = 0;
    std::uint64_t tokens_a = 0;
    std::uint64_t tokens_b = 0;
    double ratio = 0.0;  // tokens_b / tokens_a
    double per_text_min = 0.0;
    double per_text_median = 0.0;
    double per_text_max = 0.0;
    std::vector<double> per_text_ratios;
    std::vector<std::uint64_t> per_text_tokens_a;
    std::vector<std::uint64_t> per_text_tokens_b;
};

EfficiencyStats compare_efficiency(const TokenizerModel& tok_a, const TokenizerModel& tok_b,
                                   const std::vector<std::string>& texts);

nlohmann::json merge_report_to_json(const MergeReport& report);
nlohmann::json efficiency_to_json(const EfficiencyStats& stats);
void write_efficiency_csv(const EfficiencyStats& stats, const std::filesystem::path& path);

}  // namespace lmforge::tok
