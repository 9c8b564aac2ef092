#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "lmforge/normalize.hpp"

namespace lmforge::tok {

enum class PieceKind { normal, unknown, control, byte };

std::string_view to_string(PieceKind kind);
PieceKind piece_kind_from_string(std::string_view name);

struct Piece {
    std::string surface;  // byte pieces use the "<0xNN>" convention
    double score = 0.0;   // log probability; <= 0 for normal pieces
    int id = 0;
    PieceKind kind = PieceKind::normal;

    bool operator==(const Piece&) const = default;
};

// Word-start marker used when the normalization policy enables word_marker.
inline constexpr std::string_view kWordMarker = "\xE2\x96\x81";  // U+2581
inline constexpr char32_t kWordMarkerCp = 0x2581;

// Score assigned to byte pieces: a uniform distribution over byte values.
double byte_piece_score();

struct StringHash {
    using is_transparent = void;
    std::size_t operator()(std::string_view s) const { return std::hash<std::string_view>{}(s); }
};

using SurfaceIndex = std::unordered_map<std::string, int, StringHash, std::equal_to<>>;

struct TokenizerModel {
    std::vector<Piece> pieces;  // ids equal positions
    NormalizationPolicy normalization;
    bool byte_fallback = true;
    int target_vocab_size = 0;

    int size() const { return static_cast<int>(pieces.size()); }
    int normal_count() const;

    // Lookup structures derived from `pieces`; every API that hands out a
    // model keeps them fresh. Call after editing `pieces` directly.
    void rebuild_index();

    const SurfaceIndex& normal_index() const { return normal_to_id_; }
    int find_normal(std::string_view surface) const;
    int byte_id(unsigned char value) const;
    int max_piece_chars() const { return max_piece_chars_; }
    int unknown_id() const { return unknown_id_; }

private:
    SurfaceIndex normal_to_id_;
    std::vector<int> byte_ids_ = std::vector<int>(256, -1);
    int max_piece_chars_ = 0;
    int unknown_id_ = -1;
};

// Empty model scaffold: <unk>, <s>, </s>, then the 256 byte pieces when byte
// fallback is on. Normal pieces append after these.
TokenizerModel make_base_model(const NormalizationPolicy& policy, bool byte_fallback);

struct EncodeResult {
    std::vector<int> ids;
    double score = 0.0;  // Viterbi path score
};

// Maximum-score segmentation. Ties break toward fewer tokens, then the longer
// first piece, then the lower piece id. Input text is taken verbatim: the
// model's normalization policy applies to training corpora, not here, so that
// decode(encode(s)) == s holds for arbitrary strings under byte fallback.
EncodeResult encode_scored(const TokenizerModel& model, std::string_view text);
std::vector<int> encode(const TokenizerModel& model, std::string_view text);

struct DecodeResult {
    std::string text;
    bool invalid_bytes = false;  // some byte-piece run was not valid UTF-8
};

DecodeResult decode(const TokenizerModel& model, const std::vector<int>& ids);

// Model file I/O. JSON schema:
//   {version, normalization, byte_fallback, target_vocab_size,
//    pieces: [{surface, score, kind}, ...]}
// Piece ids are implicit by position; scores round-trip bit-exactly.
void save_model(const TokenizerModel& model, const std::filesystem::path& path);
TokenizerModel load_model(const std::filesystem::path& path);
std::string model_to_json_string(const TokenizerModel& model);
TokenizerModel model_from_json_string(std::string_view text);

}  // namespace lmforge::tok
