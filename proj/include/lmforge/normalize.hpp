#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include <nlohmann/json_fwd.hpp>

namespace lmforge {

// Text normalization applied to corpora before tokenizer training. Canonical
// composition (NFC) is used rather than compatibility folding: compatibility
// normalization can merge distinctions that matter in Indic scripts.
//
// `word_marker` selects the whitespace treatment of the tokenizer built on
// top of this policy: when true, encode() marks word starts with U+2581 and
// pieces carry the marker; when false, whitespace is ordinary text. It lives
// here so that tokenizer-merge compatibility checks cover it.
struct NormalizationPolicy {
    enum class Form { none, nfc };

    Form form = Form::nfc;
    bool strip_control = true;
    bool collapse_whitespace = true;
    bool trim = true;
    bool word_marker = true;

    bool operator==(const NormalizationPolicy&) const = default;

    static NormalizationPolicy none() {
        return {Form::none, false, false, false, false};
    }
};

void to_json(nlohmann::json& j, const NormalizationPolicy& p);
void from_json(const nlohmann::json& j, NormalizationPolicy& p);

struct NormalizeReport {
    std::uint64_t replaced_invalid_bytes = 0;
};

// Total function: invalid UTF-8 is replaced (and counted), control characters
// other than tab/newline are removed, whitespace runs collapse to single
// spaces, the result is trimmed and canonically composed. Idempotent.
std::string normalize_text(std::string_view text, const NormalizationPolicy& policy,
                           NormalizeReport* report = nullptr);

bool is_unicode_whitespace(char32_t cp);

}  // namespace lmforge
