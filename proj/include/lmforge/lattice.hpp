#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "lmforge/tokenizer.hpp"

namespace lmforge::tok {

struct LatticeEdge {
    int start = 0;        // codepoint positions
    int end = 0;
    int piece_id = -1;    // -1 marks a byte-run edge over one character
    double score = 0.0;
    int token_count = 1;  // 1 for pieces, byte count for byte runs
};

// Segmentation lattice over a short span of already-transformed text (the
// trainer feeds it marked words). Every edge spans at least one character;
// byte-run edges appear only where no single-character piece exists.
struct Lattice {
    std::string text;
    std::vector<std::size_t> offsets;               // codepoint byte offsets, size()+1 entries
    std::vector<std::vector<LatticeEdge>> edges_from;  // indexed by start position

    int size() const { return static_cast<int>(offsets.empty() ? 0 : offsets.size() - 1); }
    std::string_view piece_text(const LatticeEdge& e) const {
        return std::string_view(text).substr(offsets[e.start], offsets[e.end] - offsets[e.start]);
    }
};

Lattice build_lattice(const TokenizerModel& model, std::string_view text);

constexpr double kLogZero = -1e30;

// log(exp(a) + exp(b)) tolerant of kLogZero sentinels.
double log_add(double a, double b);

struct ForwardBackward {
    std::vector<double> alpha;  // log mass of paths from 0 to each position
    std::vector<double> beta;   // log mass of paths from each position to the end
    double log_z = kLogZero;
};

// Throws a coverage error naming the first unreachable character when the
// lattice admits no complete path and byte fallback is off.
ForwardBackward forward_backward(const Lattice& lattice, const TokenizerModel& model);

struct ViterbiResult {
    std::vector<const LatticeEdge*> path;
    double score = 0.0;
};

// Same objective and tie rules as encode(): score, then fewer tokens, then
// longer leading piece, then lower id. `exclude_full_span_id` removes the
// single edge covering the whole text with that piece id (used by pruning to
// score a piece's best alternative segmentation); pass -2 to disable.
ViterbiResult viterbi(const Lattice& lattice, const TokenizerModel& model,
                      int exclude_full_span_id = -2);

// Segments text that is already in surface form (markers stay markers, no
// dummy prefix). Byte-run edges expand to their byte-piece ids.
std::vector<int> encode_surface(const TokenizerModel& model, std::string_view surface);

}  // namespace lmforge::tok
