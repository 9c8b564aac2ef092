#include "lmforge/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <thread>
#include <unordered_map>

#include "lmforge/errors.hpp"
#include "lmforge/lattice.hpp"
#include "lmforge/utf8.hpp"

namespace lmforge::tok {

std::vector<WordEntry> build_word_table(const corpus::CorpusSample& sample,
                                        const NormalizationPolicy& policy) {
    std::unordered_map<std::string, std::uint64_t> freq;
    for (const auto& doc : sample.documents) {
        const std::string text = normalize_text(doc.text, policy);
        std::size_t start = 0;
        while (start < text.size()) {
            std::size_t end = text.find(' ', start);
            if (end == std::string::npos) end = text.size();
            if (end > start) {
                std::string word;
                if (policy.word_marker) word = std::string(kWordMarker);
                word.append(text, start, end - start);
                ++freq[word];
            }
            start = end + 1;
        }
    }
    if (freq.empty()) throw DataError("empty training corpus");

    std::vector<WordEntry> words;
    words.reserve(freq.size());
    for (auto& [word, count] : freq) words.push_back({word, count});
    std::sort(words.begin(), words.end(), [](const WordEntry& a, const WordEntry& b) {
        if (a.freq != b.freq) return a.freq > b.freq;
        return a.marked < b.marked;
    });
    return words;
}

SeedVocab build_seed_vocab(const std::vector<WordEntry>& words, std::size_t max_seed_size,
                           int max_piece_len, double character_coverage) {
    if (words.empty()) throw DataError("empty training corpus");
    if (max_piece_len < 1) throw ConfigError("max_piece_len must be >= 1");

    // Character coverage: most frequent characters first until the requested
    // fraction of all character occurrences is reachable with dedicated
    // pieces; the rest is left to byte fallback.
    std::map<std::string, std::uint64_t> char_freq;
    std::uint64_t total_chars = 0;
    for (const auto& word : words) {
        std::size_t pos = 0;
        while (pos < word.marked.size()) {
            const std::size_t begin = pos;
            utf8::decode_next(word.marked, pos);
            char_freq[word.marked.substr(begin, pos - begin)] += word.freq;
            total_chars += word.freq;
        }
    }
    std::vector<std::pair<std::string, std::uint64_t>> by_freq(char_freq.begin(), char_freq.end());
    std::sort(by_freq.begin(), by_freq.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    std::unordered_map<std::string, bool> covered;
    SeedVocab seed;
    std::uint64_t running = 0;
    const auto budget =
        static_cast<std::uint64_t>(std::ceil(character_coverage * static_cast<double>(total_chars)));
    for (const auto& [ch, f] : by_freq) {
        if (running >= budget) break;
        covered[ch] = true;
        seed.covered_chars.push_back(ch);
        running += f;
    }

    std::unordered_map<std::string, std::uint64_t> substr_freq;
    for (const auto& word : words) {
        const auto offsets = utf8::codepoint_offsets(word.marked);
        const int n = static_cast<int>(offsets.size()) - 1;
        std::vector<bool> char_covered(n);
        for (int i = 0; i < n; ++i) {
            char_covered[i] =
                covered.count(word.marked.substr(offsets[i], offsets[i + 1] - offsets[i])) > 0;
        }
        for (int i = 0; i < n; ++i) {
            if (!char_covered[i]) continue;
            for (int len = 1; len <= max_piece_len && i + len <= n; ++len) {
                if (!char_covered[i + len - 1]) break;
                substr_freq[word.marked.substr(offsets[i], offsets[i + len] - offsets[i])] +=
                    word.freq;
            }
        }
    }

    std::vector<SeedCandidate> ranked;
    ranked.reserve(substr_freq.size());
    for (auto& [surface, f] : substr_freq) ranked.push_back({surface, f});
    std::sort(ranked.begin(), ranked.end(), [](const SeedCandidate& a, const SeedCandidate& b) {
        if (a.freq != b.freq) return a.freq > b.freq;
        const auto alen = utf8::decode(a.surface).size();
        const auto blen = utf8::decode(b.surface).size();
        if (alen != blen) return alen > blen;
        return a.surface < b.surface;
    });

    std::unordered_map<std::string, bool> taken;
    for (const auto& cand : ranked) {
        if (seed.candidates.size() >= max_seed_size) break;
        seed.candidates.push_back(cand);
        taken[cand.surface] = true;
    }
    // Covered single characters are mandatory regardless of the budget.
    for (const auto& ch : seed.covered_chars) {
        if (!taken.count(ch)) seed.candidates.push_back({ch, char_freq[ch]});
    }
    return seed;
}

namespace {

struct ShardResult {
    std::vector<double> expected;
    double log_likelihood = 0.0;
};

void accumulate_shard(const std::vector<WordEntry>& words, std::size_t begin, std::size_t end,
                      const TokenizerModel& model, ShardResult& out) {
    out.expected.assign(model.pieces.size(), 0.0);
    for (std::size_t w = begin; w < end; ++w) {
        const auto& word = words[w];
        const Lattice lattice = build_lattice(model, word.marked);
        const ForwardBackward fb = forward_backward(lattice, model);
        const double freq = static_cast<double>(word.freq);
        out.log_likelihood += freq * fb.log_z;
        const int n = lattice.size();
        for (int pos = 0; pos < n; ++pos) {
            if (fb.alpha[pos] <= kLogZero) continue;
            for (const auto& edge : lattice.edges_from[pos]) {
                if (edge.piece_id < 0) continue;
                if (fb.beta[edge.end] <= kLogZero) continue;
                const double posterior =
                    std::exp(fb.alpha[pos] + edge.score + fb.beta[edge.end] - fb.log_z);
                out.expected[edge.piece_id] += freq * posterior;
            }
        }
    }
}

}  // namespace

EStepResult e_step(const std::vector<WordEntry>& words, const TokenizerModel& model, int threads) {
    threads = std::max(1, threads);
    const std::size_t shard_count = std::min<std::size_t>(threads, std::max<std::size_t>(words.size(), 1));
    std::vector<ShardResult> shards(shard_count);

    if (shard_count == 1) {
        accumulate_shard(words, 0, words.size(), model, shards[0]);
    } else {
        std::vector<std::thread> pool;
        const std::size_t chunk = (words.size() + shard_count - 1) / shard_count;
        for (std::size_t s = 0; s < shard_count; ++s) {
            const std::size_t begin = s * chunk;
            const std::size_t end = std::min(words.size(), begin + chunk);
            pool.emplace_back([&, s, begin, end] {
                accumulate_shard(words, begin, end, model, shards[s]);
            });
        }
        for (auto& t : pool) t.join();
    }

    // Shards reduce in index order so results are reproducible for a fixed
    // thread count.
    EStepResult result;
    result.expected.assign(model.pieces.size(), 0.0);
    for (const auto& shard : shards) {
        result.log_likelihood += shard.log_likelihood;
        for (std::size_t i = 0; i < shard.expected.size(); ++i) {
            result.expected[i] += shard.expected[i];
        }
    }
    return result;
}

EStepResult e_step(const corpus::CorpusSample& sample, const TokenizerModel& model, int threads) {
    return e_step(build_word_table(sample, model.normalization), model, threads);
}

void m_step(TokenizerModel& model, const std::vector<double>& expected) {
    if (expected.size() != model.pieces.size()) {
        throw ConfigError("expected-count vector size does not match the model");
    }
    double total = 0.0;
    double raw_total = 0.0;
    for (const auto& piece : model.pieces) {
        if (piece.kind != PieceKind::normal) continue;
        if (expected[piece.id] < 0.0) throw DataError("negative expected count");
        raw_total += expected[piece.id];
        total += std::max(expected[piece.id], 1e-12);
    }
    if (raw_total <= 0.0 || model.normal_count() == 0) {
        throw DataError("degenerate model: all expected counts are zero");
    }
    const double log_total = std::log(total);
    for (auto& piece : model.pieces) {
        if (piece.kind != PieceKind::normal) continue;
        piece.score = std::log(std::max(expected[piece.id], 1e-12)) - log_total;
    }
}

namespace {

int surface_char_count(const std::string& surface) {
    return static_cast<int>(utf8::decode(surface).size());
}

}  // namespace

TokenizerModel prune_vocab_keep(const TokenizerModel& model, const std::vector<WordEntry>& words,
                                int keep, PruneReport* report) {
    const int n_normal = model.normal_count();
    int mandatory = 0;
    for (const auto& piece : model.pieces) {
        if (piece.kind == PieceKind::normal && surface_char_count(piece.surface) == 1) ++mandatory;
    }
    bool clamped = false;
    if (keep < mandatory) {
        keep = mandatory;
        clamped = true;
    }
    if (keep >= n_normal) {
        if (report) *report = {0, clamped};
        return model;
    }

    // Piece usage along Viterbi segmentations of the corpus.
    std::vector<double> usage(model.pieces.size(), 0.0);
    for (const auto& word : words) {
        const Lattice lattice = build_lattice(model, word.marked);
        const ViterbiResult vit = viterbi(lattice, model);
        for (const auto* edge : vit.path) {
            if (edge->piece_id >= 0) usage[edge->piece_id] += static_cast<double>(word.freq);
        }
    }

    struct Candidate {
        int id;
        double loss;
    };
    std::vector<Candidate> candidates;
    for (const auto& piece : model.pieces) {
        if (piece.kind != PieceKind::normal || surface_char_count(piece.surface) == 1) continue;
        double loss = 0.0;
        if (usage[piece.id] > 0.0) {
            const Lattice lattice = build_lattice(model, piece.surface);
            double alt = -std::numeric_limits<double>::infinity();
            try {
                alt = viterbi(lattice, model, piece.id).score;
            } catch (const DataError&) {
                // No alternative segmentation: the piece is irreplaceable.
            }
            if (!std::isfinite(alt)) {
                loss = std::numeric_limits<double>::infinity();
            } else {
                loss = usage[piece.id] * (piece.score - alt);
            }
        }
        candidates.push_back({piece.id, loss});
    }
    std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
        if (a.loss != b.loss) return a.loss < b.loss;
        return a.id > b.id;
    });

    const int to_drop = n_normal - keep;
    std::vector<bool> drop(model.pieces.size(), false);
    for (int i = 0; i < to_drop && i < static_cast<int>(candidates.size()); ++i) {
        drop[candidates[i].id] = true;
    }

    TokenizerModel pruned;
    pruned.normalization = model.normalization;
    pruned.byte_fallback = model.byte_fallback;
    pruned.target_vocab_size = model.target_vocab_size;
    for (const auto& piece : model.pieces) {
        if (drop[piece.id]) continue;
        pruned.pieces.push_back(piece);
    }
    pruned.rebuild_index();
    if (report) *report = {to_drop, clamped};
    return pruned;
}

TokenizerModel prune_vocab(const TokenizerModel& model, const std::vector<WordEntry>& words,
                           double keep_ratio, PruneReport* report) {
    if (keep_ratio <= 0.0 || keep_ratio >= 1.0) {
        throw ConfigError("keep_ratio must lie strictly between 0 and 1");
    }
    const int keep = static_cast<int>(std::ceil(keep_ratio * model.normal_count()));
    return prune_vocab_keep(model, words, keep, report);
}

TokenizerModel train_unigram(const corpus::CorpusSample& sample, const TrainerConfig& config,
                             std::vector<TrainLogEntry>* log) {
    const std::vector<WordEntry> words = build_word_table(sample, config.normalization);
    const std::size_t max_seed = config.max_seed_size
                                     ? config.max_seed_size
                                     : static_cast<std::size_t>(4) * config.target_vocab_size;
    if (max_seed <= static_cast<std::size_t>(config.target_vocab_size)) {
        throw ConfigError("max_seed_size must exceed target_vocab_size");
    }
    const SeedVocab seed =
        build_seed_vocab(words, max_seed, config.max_piece_len, config.character_coverage);
    if (static_cast<int>(seed.covered_chars.size()) > config.target_vocab_size) {
        throw ConfigError("target_vocab_size is below the number of mandatory character pieces (" +
                          std::to_string(seed.covered_chars.size()) + ")");
    }

    TokenizerModel model = make_base_model(config.normalization, config.byte_fallback);
    double seed_total = 0.0;
    for (const auto& cand : seed.candidates) seed_total += static_cast<double>(cand.freq);
    for (const auto& cand : seed.candidates) {
        model.pieces.push_back({cand.surface,
                                std::log(static_cast<double>(cand.freq) / seed_total),
                                static_cast<int>(model.pieces.size()), PieceKind::normal});
    }
    model.rebuild_index();

    int round = 0;
    const auto run_em = [&] {
        for (int it = 0; it < config.em_iters_per_round; ++it) {
            const EStepResult e = e_step(words, model, config.threads);
            m_step(model, e.expected);
            if (log) log->push_back({round, it, model.normal_count(), e.log_likelihood});
        }
    };

    while (model.normal_count() > config.target_vocab_size) {
        run_em();
        const int n_normal = model.normal_count();
        const int keep =
            std::max(config.target_vocab_size,
                     std::min(n_normal - 1,
                              static_cast<int>(std::ceil(config.keep_ratio * n_normal))));
        TokenizerModel pruned = prune_vocab_keep(model, words, keep, nullptr);
        if (pruned.normal_count() >= n_normal) break;  // nothing prunable left
        model = std::move(pruned);
        ++round;
    }
    run_em();

    // Stable ids: normal pieces sorted by score, specials and bytes keep
    // their scaffold positions.
    std::vector<Piece> normals;
    TokenizerModel finalized = make_base_model(config.normalization, config.byte_fallback);
    for (const auto& piece : model.pieces) {
        if (piece.kind == PieceKind::normal) normals.push_back(piece);
    }
    std::sort(normals.begin(), normals.end(), [](const Piece& a, const Piece& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.surface < b.surface;
    });
    for (auto& piece : normals) {
        piece.id = static_cast<int>(finalized.pieces.size());
        finalized.pieces.push_back(piece);
    }
    finalized.target_vocab_size = config.target_vocab_size;
    finalized.rebuild_index();
    return finalized;
}

}  // namespace lmforge::tok
