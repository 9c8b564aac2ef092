#include "lmforge/tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>

#include "lmforge/errors.hpp"
#include "lmforge/utf8.hpp"

namespace lmforge::tok {

std::string_view to_string(PieceKind kind) {
    switch (kind) {
        case PieceKind::normal: return "normal";
        case PieceKind::unknown: return "unknown";
        case PieceKind::control: return "control";
        case PieceKind::byte: return "byte";
    }
    return "normal";
}

PieceKind piece_kind_from_string(std::string_view name) {
    if (name == "normal") return PieceKind::normal;
    if (name == "unknown") return PieceKind::unknown;
    if (name == "control") return PieceKind::control;
    if (name == "byte") return PieceKind::byte;
    throw DataError("unknown piece kind '" + std::string(name) + "'");
}

double byte_piece_score() { return std::log(1.0 / 256.0); }

namespace {

std::string byte_surface(unsigned char value) {
    static constexpr char kHex[] = "0123456789ABCDEF";
    std::string s = "<0x00>";
    s[3] = kHex[value >> 4];
    s[4] = kHex[value & 0xF];
    return s;
}

int parse_byte_surface(std::string_view surface) {
    if (surface.size() != 6 || surface.substr(0, 3) != "<0x" || surface[5] != '>') return -1;
    auto hex = [](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'A' && c <= 'F') return c - 'A' + 10;
        return -1;
    };
    const int hi = hex(surface[3]);
    const int lo = hex(surface[4]);
    if (hi < 0 || lo < 0) return -1;
    return hi * 16 + lo;
}

int codepoint_count(std::string_view s) {
    int count = 0;
    std::size_t pos = 0;
    while (pos < s.size()) {
        utf8::decode_next(s, pos);
        ++count;
    }
    return count;
}

}  // namespace

int TokenizerModel::normal_count() const {
    int count = 0;
    for (const auto& piece : pieces) {
        if (piece.kind == PieceKind::normal) ++count;
    }
    return count;
}

void TokenizerModel::rebuild_index() {
    normal_to_id_.clear();
    byte_ids_.assign(256, -1);
    max_piece_chars_ = 0;
    unknown_id_ = -1;
    for (std::size_t i = 0; i < pieces.size(); ++i) {
        Piece& piece = pieces[i];
        piece.id = static_cast<int>(i);
        switch (piece.kind) {
            case PieceKind::normal: {
                if (piece.surface.empty()) throw DataError("normal piece with empty surface");
                const auto [it, inserted] = normal_to_id_.emplace(piece.surface, piece.id);
                if (!inserted) {
                    throw DataError("duplicate normal piece surface '" + piece.surface + "'");
                }
                max_piece_chars_ = std::max(max_piece_chars_, codepoint_count(piece.surface));
                break;
            }
            case PieceKind::byte: {
                const int value = parse_byte_surface(piece.surface);
                if (value < 0) throw DataError("malformed byte piece '" + piece.surface + "'");
                byte_ids_[value] = piece.id;
                break;
            }
            case PieceKind::unknown:
                unknown_id_ = piece.id;
                break;
            case PieceKind::control:
                break;
        }
    }
    if (byte_fallback) {
        for (int value = 0; value < 256; ++value) {
            if (byte_ids_[value] < 0) {
                throw DataError("byte fallback enabled but byte piece " +
                                byte_surface(static_cast<unsigned char>(value)) + " is missing");
            }
        }
    }
}

int TokenizerModel::find_normal(std::string_view surface) const {
    const auto it = normal_to_id_.find(surface);
    return it == normal_to_id_.end() ? -1 : it->second;
}

int TokenizerModel::byte_id(unsigned char value) const { return byte_ids_[value]; }

TokenizerModel make_base_model(const NormalizationPolicy& policy, bool byte_fallback) {
    TokenizerModel model;
    model.normalization = policy;
    model.byte_fallback = byte_fallback;
    model.pieces.push_back({"<unk>", 0.0, 0, PieceKind::unknown});
    model.pieces.push_back({"<s>", 0.0, 1, PieceKind::control});
    model.pieces.push_back({"</s>", 0.0, 2, PieceKind::control});
    if (byte_fallback) {
        for (int value = 0; value < 256; ++value) {
            model.pieces.push_back({byte_surface(static_cast<unsigned char>(value)),
                                    byte_piece_score(), static_cast<int>(model.pieces.size()),
                                    PieceKind::byte});
        }
    }
    model.rebuild_index();
    return model;
}

namespace {

// One transformed input character: offsets into the transformed byte string,
// plus whether piece edges may cover it. Literal U+2581 in the raw input is
// forced onto the byte path so that decode can tell it apart from a marker.
struct EncChar {
    std::size_t begin = 0;
    std::size_t end = 0;
    bool forced_byte = false;
};

struct Transformed {
    std::string text;
    std::vector<EncChar> chars;
};

Transformed transform_for_encode(const TokenizerModel& model, std::string_view text) {
    Transformed out;
    const bool marker = model.normalization.word_marker;
    out.text.reserve(text.size() + (marker ? kWordMarker.size() : 0));
    auto push = [&](std::string_view bytes, bool forced) {
        EncChar ch;
        ch.begin = out.text.size();
        out.text.append(bytes);
        ch.end = out.text.size();
        ch.forced_byte = forced;
        out.chars.push_back(ch);
    };
    if (marker) push(kWordMarker, false);
    std::size_t pos = 0;
    while (pos < text.size()) {
        const std::size_t start = pos;
        const char32_t cp = utf8::decode_next(text, pos);
        if (marker && cp == U' ') {
            push(kWordMarker, false);
        } else if (marker && cp == kWordMarkerCp) {
            push(kWordMarker, true);
        } else {
            push(text.substr(start, pos - start), false);
        }
    }
    return out;
}

struct PathStep {
    double score = -std::numeric_limits<double>::infinity();
    std::int64_t tokens = 0;
    int edge_chars = 0;  // characters covered by the chosen edge
    int piece_id = -1;   // -1 marks a byte-run edge
    int tie_id = -1;     // piece id, or first byte-piece id for byte runs
    bool reachable = false;
};

[[noreturn]] void throw_coverage_error(std::string_view text, std::size_t byte_offset) {
    std::size_t p = byte_offset;
    const char32_t cp = utf8::decode_next(text, p);
    char buf[16];
    std::snprintf(buf, sizeof(buf), "U+%04X", static_cast<unsigned>(cp));
    throw DataError(std::string("character ") + buf +
                    " is not covered by the vocabulary and byte fallback is disabled");
}

}  // namespace

EncodeResult encode_scored(const TokenizerModel& model, std::string_view text) {
    const Transformed input = transform_for_encode(model, text);
    const std::size_t n = input.chars.size();

    std::vector<PathStep> best(n + 1);
    best[n].score = 0.0;
    best[n].reachable = true;

    const auto better = [](double score, std::int64_t tokens, int chars, int id,
                           const PathStep& cur) {
        if (!cur.reachable) return true;
        if (score != cur.score) return score > cur.score;
        if (tokens != cur.tokens) return tokens < cur.tokens;
        if (chars != cur.edge_chars) return chars > cur.edge_chars;
        return id < cur.tie_id;
    };

    const int max_chars = std::max(model.max_piece_chars(), 1);
    for (std::size_t pos = n; pos-- > 0;) {
        const EncChar& ch = input.chars[pos];
        if (!ch.forced_byte) {
            for (int len = 1; len <= max_chars && pos + len <= n; ++len) {
                const EncChar& last = input.chars[pos + len - 1];
                if (last.forced_byte) break;  // pieces may not span forced characters
                if (!best[pos + len].reachable) continue;
                const std::string_view surface =
                    std::string_view(input.text).substr(ch.begin, last.end - ch.begin);
                const int id = model.find_normal(surface);
                if (id < 0) continue;
                const PathStep& next = best[pos + len];
                const double score = model.pieces[id].score + next.score;
                const std::int64_t tokens = 1 + next.tokens;
                if (better(score, tokens, len, id, best[pos])) {
                    best[pos] = {score, tokens, len, id, id, true};
                }
            }
        }
        const bool has_char_piece =
            !ch.forced_byte &&
            model.find_normal(std::string_view(input.text).substr(ch.begin, ch.end - ch.begin)) >= 0;
        if (model.byte_fallback && !has_char_piece && best[pos + 1].reachable) {
            const int nbytes = static_cast<int>(ch.end - ch.begin);
            const double score = nbytes * byte_piece_score() + best[pos + 1].score;
            const std::int64_t tokens = nbytes + best[pos + 1].tokens;
            const int first_byte_id = model.byte_id(static_cast<unsigned char>(input.text[ch.begin]));
            if (better(score, tokens, 1, first_byte_id, best[pos])) {
                best[pos] = {score, tokens, 1, -1, first_byte_id, true};
            }
        }
    }

    EncodeResult result;
    if (n == 0) return result;
    if (!best[0].reachable) {
        // Walk forward to the last position a partial segmentation can reach;
        // the character there is the one the vocabulary cannot cover.
        std::size_t frontier = 0;
        std::vector<bool> fwd(n + 1, false);
        fwd[0] = true;
        for (std::size_t pos = 0; pos < n; ++pos) {
            if (!fwd[pos]) continue;
            frontier = std::max(frontier, pos);
            const EncChar& ch = input.chars[pos];
            if (ch.forced_byte) continue;
            for (int len = 1; len <= max_chars && pos + len <= n; ++len) {
                const EncChar& last = input.chars[pos + len - 1];
                if (last.forced_byte) break;
                const std::string_view surface =
                    std::string_view(input.text).substr(ch.begin, last.end - ch.begin);
                if (model.find_normal(surface) >= 0) fwd[pos + len] = true;
            }
        }
        throw_coverage_error(input.text, input.chars[frontier].begin);
    }
    result.score = best[0].score;
    std::size_t pos = 0;
    while (pos < n) {
        const PathStep& step = best[pos];
        const EncChar& ch = input.chars[pos];
        if (step.piece_id >= 0) {
            result.ids.push_back(step.piece_id);
        } else {
            const std::string_view bytes =
                std::string_view(input.text).substr(ch.begin, ch.end - ch.begin);
            if (!ch.forced_byte && model.normalization.word_marker && bytes == kWordMarker) {
                throw DataError(
                    "vocabulary cannot represent the word marker; add a '\xE2\x96\x81' piece or "
                    "disable word_marker");
            }
            for (std::size_t b = ch.begin; b < ch.end; ++b) {
                result.ids.push_back(model.byte_id(static_cast<unsigned char>(input.text[b])));
            }
        }
        pos += step.edge_chars;
    }
    return result;
}

std::vector<int> encode(const TokenizerModel& model, std::string_view text) {
    return encode_scored(model, text).ids;
}

DecodeResult decode(const TokenizerModel& model, const std::vector<int>& ids) {
    DecodeResult result;
    const bool marker = model.normalization.word_marker;
    std::string pending_bytes;
    bool first_unit = true;
    bool strip_leading_space = false;

    auto flush_bytes = [&] {
        if (pending_bytes.empty()) return;
        if (utf8::is_valid(pending_bytes)) {
            result.text += pending_bytes;
        } else {
            std::uint64_t replaced = 0;
            result.text += utf8::sanitize(pending_bytes, &replaced);
            result.invalid_bytes = true;
        }
        pending_bytes.clear();
        first_unit = false;
    };

    for (std::size_t i = 0; i < ids.size(); ++i) {
        const int id = ids[i];
        if (id < 0 || id >= model.size()) {
            throw DataError("token id " + std::to_string(id) + " at index " + std::to_string(i) +
                            " is out of range (vocab size " + std::to_string(model.size()) + ")");
        }
        const Piece& piece = model.pieces[id];
        switch (piece.kind) {
            case PieceKind::byte:
                pending_bytes.push_back(static_cast<char>(parse_byte_surface(piece.surface)));
                break;
            case PieceKind::normal: {
                flush_bytes();
                std::string surface = piece.surface;
                if (marker) {
                    if (first_unit && surface.starts_with(kWordMarker)) strip_leading_space = true;
                    std::size_t at = 0;
                    while ((at = surface.find(kWordMarker, at)) != std::string::npos) {
                        surface.replace(at, kWordMarker.size(), " ");
                        ++at;
                    }
                }
                result.text += surface;
                first_unit = false;
                break;
            }
            case PieceKind::unknown:
            case PieceKind::control:
                flush_bytes();
                first_unit = false;
                break;
        }
    }
    flush_bytes();
    if (strip_leading_space && !result.text.empty() && result.text.front() == ' ') {
        result.text.erase(0, 1);
    }
    return result;
}

namespace {

constexpr int kModelVersion = 1;

}  // namespace

std::string model_to_json_string(const TokenizerModel& model) {
    nlohmann::json pieces = nlohmann::json::array();
    for (const auto& piece : model.pieces) {
        pieces.push_back({{"surface", piece.surface},
                          {"score", piece.score},
                          {"kind", std::string(to_string(piece.kind))}});
    }
    const nlohmann::json j = {{"version", kModelVersion},
                              {"normalization", model.normalization},
                              {"byte_fallback", model.byte_fallback},
                              {"target_vocab_size", model.target_vocab_size},
                              {"pieces", pieces}};
    return j.dump(2) + "\n";
}

TokenizerModel model_from_json_string(std::string_view text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError(std::string("tokenizer model is not valid JSON: ") + e.what());
    }
    if (!j.contains("version") || !j["version"].is_number_integer()) {
        throw DataError("tokenizer model: missing integer field 'version'");
    }
    if (j["version"].get<int>() != kModelVersion) {
        throw DataError("tokenizer model: unsupported version " +
                        std::to_string(j["version"].get<int>()) + " (expected " +
                        std::to_string(kModelVersion) + ")");
    }
    TokenizerModel model;
    try {
        model.normalization = j.at("normalization").get<NormalizationPolicy>();
        model.byte_fallback = j.at("byte_fallback").get<bool>();
        model.target_vocab_size = j.value("target_vocab_size", 0);
        const auto& pieces = j.at("pieces");
        if (!pieces.is_array()) throw DataError("tokenizer model: 'pieces' must be an array");
        model.pieces.reserve(pieces.size());
        for (std::size_t i = 0; i < pieces.size(); ++i) {
            const auto& p = pieces[i];
            const std::string where = "pieces[" + std::to_string(i) + "]";
            if (!p.is_object() || !p.contains("surface") || !p.contains("score") ||
                !p.contains("kind")) {
                throw DataError("tokenizer model: " + where +
                                " must carry surface, score and kind");
            }
            if (!p["score"].is_number()) {
                throw DataError("tokenizer model: " + where + ".score must be a number");
            }
            model.pieces.push_back({p["surface"].get<std::string>(), p["score"].get<double>(),
                                    static_cast<int>(i),
                                    piece_kind_from_string(p["kind"].get<std::string>())});
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("tokenizer model: ") + e.what());
    }
    model.rebuild_index();
    return model;
}

void save_model(const TokenizerModel& model, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << model_to_json_string(model);
    if (!out) throw DataError("failed writing " + path.string());
}

TokenizerModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read " + path.string());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return model_from_json_string(text);
}

}  // namespace lmforge::tok
