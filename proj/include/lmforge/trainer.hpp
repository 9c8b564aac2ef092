#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lmforge/corpus.hpp"
#include "lmforge/tokenizer.hpp"

namespace lmforge::tok {

struct WordEntry {
    std::string marked;  // word text, prefixed with the marker when word_marker is on
    std::uint64_t freq = 0;
};

// Whitespace-split word-frequency table over the normalized corpus, sorted by
// (freq desc, word asc). Errors on an empty corpus.
std::vector<WordEntry> build_word_table(const corpus::CorpusSample& sample,
                                        const NormalizationPolicy& policy);

struct SeedCandidate {
    std::string surface;
    std::uint64_t freq = 0;
};

struct SeedVocab {
    std::vector<SeedCandidate> candidates;  // ranked: freq desc, length desc, surface asc
    std::vector<std::string> covered_chars; // single characters above the coverage threshold
};

// Most frequent word-internal substrings of length <= max_piece_len whose
// characters all sit above the coverage threshold. Every covered single
// character is always included.
SeedVocab build_seed_vocab(const std::vector<WordEntry>& words, std::size_t max_seed_size,
                           int max_piece_len, double character_coverage);

struct EStepResult {
    std::vector<double> expected;  // indexed by piece id; only normal pieces populated
    double log_likelihood = 0.0;
};

EStepResult e_step(const std::vector<WordEntry>& words, const TokenizerModel& model,
                   int threads = 1);
EStepResult e_step(const corpus::CorpusSample& sample, const TokenizerModel& model,
                   int threads = 1);

// Maximum-likelihood refit: score = log(count / sum) over normal pieces.
// Counts below 1e-12 are floored there. Errors when all counts are zero.
void m_step(TokenizerModel& model, const std::vector<double>& expected);

struct PruneReport {
    int dropped = 0;
    bool clamped_to_mandatory = false;
};

// Drops the lowest-utility normal pieces until ceil(keep_ratio * n) remain.
// Utility of a piece is freq(piece on Viterbi paths) * (score - score of its
// best alternative segmentation). Single-character pieces are never dropped.
TokenizerModel prune_vocab(const TokenizerModel& model, const std::vector<WordEntry>& words,
                           double keep_ratio, PruneReport* report = nullptr);
TokenizerModel prune_vocab_keep(const TokenizerModel& model, const std::vector<WordEntry>& words,
                                int keep, PruneReport* report = nullptr);

struct TrainerConfig {
    int target_vocab_size = 16000;
    std::size_t max_seed_size = 0;  // 0 -> 4 * target_vocab_size
    int max_piece_len = 8;
    double character_coverage = 0.9995;
    int em_iters_per_round = 2;
    double keep_ratio = 0.75;
    int threads = 1;
    NormalizationPolicy normalization;
    bool byte_fallback = true;
};

struct TrainLogEntry {
    int round = 0;
    int iteration = 0;
    int normal_pieces = 0;
    double log_likelihood = 0.0;
};

// Seed -> (EM x em_iters, prune) until the target is reached, then a final EM
// polish. Normal pieces are sorted by score (descending) in the result.
TokenizerModel train_unigram(const corpus::CorpusSample& sample, const TrainerConfig& config,
                             std::vector<TrainLogEntry>* log = nullptr);

}  // namespace lmforge::tok
