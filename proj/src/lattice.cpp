#include "lmforge/lattice.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "lmforge/errors.hpp"
#include "lmforge/utf8.hpp"

namespace lmforge::tok {

double log_add(double a, double b) {
    if (a <= kLogZero) return b;
    if (b <= kLogZero) return a;
    const double hi = std::max(a, b);
    const double lo = std::min(a, b);
    return hi + std::log1p(std::exp(lo - hi));
}

Lattice build_lattice(const TokenizerModel& model, std::string_view text) {
    Lattice lattice;
    lattice.text = std::string(text);
    lattice.offsets = utf8::codepoint_offsets(lattice.text);
    const int n = lattice.size();
    lattice.edges_from.resize(n + 1);

    const int max_chars = std::max(model.max_piece_chars(), 1);
    for (int pos = 0; pos < n; ++pos) {
        const std::size_t begin = lattice.offsets[pos];
        for (int len = 1; len <= max_chars && pos + len <= n; ++len) {
            const std::string_view surface =
                std::string_view(lattice.text).substr(begin, lattice.offsets[pos + len] - begin);
            const int id = model.find_normal(surface);
            if (id < 0) continue;
            lattice.edges_from[pos].push_back({pos, pos + len, id, model.pieces[id].score, 1});
        }
        const std::size_t char_end = lattice.offsets[pos + 1];
        const bool has_char_piece =
            model.find_normal(std::string_view(lattice.text).substr(begin, char_end - begin)) >= 0;
        if (model.byte_fallback && !has_char_piece) {
            const int nbytes = static_cast<int>(char_end - begin);
            lattice.edges_from[pos].push_back(
                {pos, pos + 1, -1, nbytes * byte_piece_score(), nbytes});
        }
    }
    return lattice;
}

namespace {

[[noreturn]] void throw_uncovered(const Lattice& lattice, int frontier) {
    std::size_t p = lattice.offsets[frontier];
    const char32_t cp = utf8::decode_next(lattice.text, p);
    char buf[16];
    std::snprintf(buf, sizeof(buf), "U+%04X", static_cast<unsigned>(cp));
    throw DataError(std::string("character ") + buf +
                    " is not covered by the vocabulary and byte fallback is disabled");
}

}  // namespace

ForwardBackward forward_backward(const Lattice& lattice, const TokenizerModel& model) {
    (void)model;
    const int n = lattice.size();
    ForwardBackward fb;
    fb.alpha.assign(n + 1, kLogZero);
    fb.beta.assign(n + 1, kLogZero);
    fb.alpha[0] = 0.0;
    for (int pos = 0; pos < n; ++pos) {
        if (fb.alpha[pos] <= kLogZero) continue;
        for (const auto& edge : lattice.edges_from[pos]) {
            fb.alpha[edge.end] = log_add(fb.alpha[edge.end], fb.alpha[pos] + edge.score);
        }
    }
    fb.beta[n] = 0.0;
    for (int pos = n - 1; pos >= 0; --pos) {
        for (const auto& edge : lattice.edges_from[pos]) {
            if (fb.beta[edge.end] <= kLogZero) continue;
            fb.beta[pos] = log_add(fb.beta[pos], edge.score + fb.beta[edge.end]);
        }
    }
    fb.log_z = fb.alpha[n];
    if (n > 0 && fb.log_z <= kLogZero) {
        int frontier = 0;
        for (int pos = 0; pos <= n; ++pos) {
            if (fb.alpha[pos] > kLogZero) frontier = pos;
        }
        throw_uncovered(lattice, std::min(frontier, n - 1));
    }
    return fb;
}

ViterbiResult viterbi(const Lattice& lattice, const TokenizerModel& model,
                      int exclude_full_span_id) {
    const int n = lattice.size();
    struct Step {
        double score = -std::numeric_limits<double>::infinity();
        std::int64_t tokens = 0;
        const LatticeEdge* edge = nullptr;
        bool reachable = false;
    };
    std::vector<Step> best(n + 1);
    best[n] = {0.0, 0, nullptr, true};

    const auto tie_id = [&](const LatticeEdge& edge) {
        if (edge.piece_id >= 0) return edge.piece_id;
        return model.byte_id(static_cast<unsigned char>(lattice.text[lattice.offsets[edge.start]]));
    };

    for (int pos = n - 1; pos >= 0; --pos) {
        for (const auto& edge : lattice.edges_from[pos]) {
            if (edge.piece_id == exclude_full_span_id && edge.start == 0 && edge.end == n) continue;
            const Step& next = best[edge.end];
            if (!next.reachable) continue;
            const double score = edge.score + next.score;
            const std::int64_t tokens = edge.token_count + next.tokens;
            Step& cur = best[pos];
            bool take = false;
            if (!cur.reachable) {
                take = true;
            } else if (score != cur.score) {
                take = score > cur.score;
            } else if (tokens != cur.tokens) {
                take = tokens < cur.tokens;
            } else {
                const int cur_len = cur.edge->end - cur.edge->start;
                const int new_len = edge.end - edge.start;
                if (new_len != cur_len) {
                    take = new_len > cur_len;
                } else {
                    take = tie_id(edge) < tie_id(*cur.edge);
                }
            }
            if (take) cur = {score, tokens, &edge, true};
        }
    }

    ViterbiResult result;
    if (n == 0) return result;
    if (!best[0].reachable) {
        std::vector<bool> fwd(n + 1, false);
        fwd[0] = true;
        int frontier = 0;
        for (int pos = 0; pos < n; ++pos) {
            if (!fwd[pos]) continue;
            frontier = pos;
            for (const auto& edge : lattice.edges_from[pos]) {
                if (edge.piece_id == exclude_full_span_id && edge.start == 0 && edge.end == n) {
                    continue;
                }
                fwd[edge.end] = true;
            }
        }
        throw_uncovered(lattice, frontier);
    }
    result.score = best[0].score;
    int pos = 0;
    while (pos < n) {
        const LatticeEdge* edge = best[pos].edge;
        result.path.push_back(edge);
        pos = edge->end;
    }
    return result;
}

std::vector<int> encode_surface(const TokenizerModel& model, std::string_view surface) {
    const Lattice lattice = build_lattice(model, surface);
    const ViterbiResult vit = viterbi(lattice, model);
    std::vector<int> ids;
    for (const auto* edge : vit.path) {
        if (edge->piece_id >= 0) {
            ids.push_back(edge->piece_id);
        } else {
            const std::string_view bytes = lattice.piece_text(*edge);
            for (const char byte : bytes) {
                ids.push_back(model.byte_id(static_cast<unsigned char>(byte)));
            }
        }
    }
    return ids;
}

}  // namespace lmforge::tok
