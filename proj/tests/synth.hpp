#pragma once

// Deterministic synthetic Tamil-script corpus for tokenizer training tests,
// plus a Latin-only 32k base tokenizer whose Tamil coverage is byte fallback
// only. Word shapes follow Tamil orthography (consonant + vowel sign
// syllables, virama clusters) so trained pieces look like real subwords, but
// the text itself is generated, not sourced.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "lmforge/corpus.hpp"
#include "lmforge/rng.hpp"
#include "lmforge/tokenizer.hpp"
#include "lmforge/utf8.hpp"

namespace synth {

class TamilGenerator {
public:
    explicit TamilGenerator(std::uint64_t seed, std::size_t lexicon_size = 12000)
        : rng_(seed) {
        const std::vector<char32_t> consonants = {0x0B95, 0x0B99, 0x0B9A, 0x0B9E, 0x0B9F, 0x0BA3,
                                                  0x0BA4, 0x0BA8, 0x0BAA, 0x0BAE, 0x0BAF, 0x0BB0,
                                                  0x0BB2, 0x0BB5, 0x0BB4, 0x0BB3, 0x0BB1, 0x0BA9};
        const std::vector<char32_t> vowels = {0x0B85, 0x0B86, 0x0B87, 0x0B89, 0x0B8E, 0x0B92};
        const std::vector<char32_t> signs = {0x0BBE, 0x0BBF, 0x0BC0, 0x0BC1, 0x0BC2,
                                             0x0BC6, 0x0BC7, 0x0BC8, 0x0BCD};
        const auto syllable = [&](lmforge::Rng& rng, std::string& out) {
            lmforge::utf8::append(out, consonants[rng.below(consonants.size())]);
            const std::uint64_t kind = rng.below(10);
            if (kind < 6) lmforge::utf8::append(out, signs[rng.below(signs.size())]);
        };
        lexicon_.reserve(lexicon_size);
        while (lexicon_.size() < lexicon_size) {
            std::string word;
            if (rng_.below(5) == 0) lmforge::utf8::append(word, vowels[rng_.below(vowels.size())]);
            const std::uint64_t syllables = 1 + rng_.below(4);
            for (std::uint64_t s = 0; s < syllables; ++s) syllable(rng_, word);
            lexicon_.push_back(std::move(word));
        }
        suffixes_ = {"", "", "", "கள்", "ில்",
                     "ை", "ுக்கு", "ாக"};
        // Zipf-like rank weights over the lexicon.
        cumulative_.resize(lexicon_.size());
        double total = 0.0;
        for (std::size_t k = 0; k < lexicon_.size(); ++k) {
            total += 1.0 / std::pow(static_cast<double>(k + 2), 1.07);
            cumulative_[k] = total;
        }
        for (double& c : cumulative_) c /= total;
    }

    std::string word() {
        const double u = rng_.uniform();
        const auto it = std::lower_bound(cumulative_.begin(), cumulative_.end(), u);
        const std::size_t rank =
            it == cumulative_.end() ? cumulative_.size() - 1 : it - cumulative_.begin();
        std::string w = lexicon_[rank];
        w += suffixes_[rng_.below(suffixes_.size())];
        return w;
    }

    std::string sentence(int n_words) {
        std::string out;
        for (int i = 0; i < n_words; ++i) {
            if (i) out.push_back(' ');
            out += word();
        }
        return out;
    }

    std::string document(int approx_words) {
        std::string out;
        int written = 0;
        while (written < approx_words) {
            const int n = 4 + static_cast<int>(rng_.below(9));
            if (!out.empty()) out.push_back(' ');
            out += sentence(n);
            written += n;
        }
        return out;
    }

    // Documents until the sample holds at least `min_bytes` of text.
    lmforge::corpus::CorpusSample corpus(std::uint64_t min_bytes, int words_per_doc = 120) {
        lmforge::corpus::CorpusSample sample;
        sample.seed = 0;
        std::uint64_t index = 0;
        while (sample.total_bytes < min_bytes) {
            lmforge::corpus::Document doc;
            doc.text = document(words_per_doc);
            doc.byte_len = doc.text.size();
            doc.source = "synthetic";
            doc.record_index = index;
            doc.id = "synthetic#" + std::to_string(index);
            ++index;
            sample.total_bytes += doc.byte_len;
            sample.documents.push_back(std::move(doc));
        }
        return sample;
    }

private:
    lmforge::Rng rng_;
    std::vector<std::string> lexicon_;
    std::vector<std::string> suffixes_;
    std::vector<double> cumulative_;
};

// A base tokenizer of exactly `size` pieces (specials + bytes + Latin normal
// pieces, word marker included) with no Tamil-script pieces at all.
inline lmforge::tok::TokenizerModel latin_base_model(int size = 32000) {
    using namespace lmforge::tok;
    lmforge::NormalizationPolicy policy;  // nfc + marker defaults
    TokenizerModel model = make_base_model(policy, /*byte_fallback=*/true);
    std::vector<std::string> surfaces;
    surfaces.push_back(std::string(kWordMarker));
    // Shortlex a..z, aa..zz, ... plus marker-prefixed forms.
    std::vector<std::string> previous = {""};
    while (static_cast<int>(surfaces.size()) < size) {
        std::vector<std::string> current;
        for (const auto& stem : previous) {
            for (char c = 'a'; c <= 'z'; ++c) {
                current.push_back(stem + c);
            }
        }
        for (const auto& word : current) {
            surfaces.push_back(word);
            surfaces.push_back(std::string(kWordMarker) + word);
        }
        previous = current;
    }
    const int needed = size - model.size();
    for (int i = 0; i < needed; ++i) {
        model.pieces.push_back({surfaces[i], -1.0 - 0.0005 * i, model.size(), PieceKind::normal});
    }
    model.target_vocab_size = size;
    model.rebuild_index();
    return model;
}

// `count` distinct Tamil-script surfaces; guaranteed disjoint from any
// Latin-only base vocabulary.
inline lmforge::tok::TokenizerModel tamil_addon_model(int count) {
    using namespace lmforge::tok;
    lmforge::NormalizationPolicy policy;
    TokenizerModel model = make_base_model(policy, /*byte_fallback=*/true);
    int emitted = 0;
    std::string surface;
    for (int a = 0x0B85; emitted < count; ++a) {
        for (int b = 0x0B85; b <= 0x0BB9 && emitted < count; ++b) {
            for (int c = 0x0B95; c <= 0x0BB9 && emitted < count; ++c) {
                surface.clear();
                lmforge::utf8::append(surface, static_cast<char32_t>(0x0B85 + (a - 0x0B85) % 0x30));
                lmforge::utf8::append(surface, static_cast<char32_t>(b));
                lmforge::utf8::append(surface, static_cast<char32_t>(c));
                model.pieces.push_back(
                    {surface, -2.0 - 0.0003 * emitted, model.size(), PieceKind::normal});
                ++emitted;
            }
        }
    }
    model.target_vocab_size = model.size();
    model.rebuild_index();
    return model;
}

}  // namespace synth
