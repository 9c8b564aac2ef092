#include "lmforge/normalize.hpp"

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>

#include <nlohmann/json.hpp>

#include "lmforge/errors.hpp"
#include "lmforge/utf8.hpp"

namespace lmforge {

void to_json(nlohmann::json& j, const NormalizationPolicy& p) {
    j = nlohmann::json{{"form", p.form == NormalizationPolicy::Form::nfc ? "nfc" : "none"},
                       {"strip_control", p.strip_control},
                       {"collapse_whitespace", p.collapse_whitespace},
                       {"trim", p.trim},
                       {"word_marker", p.word_marker}};
}

void from_json(const nlohmann::json& j, NormalizationPolicy& p) {
    const std::string form = j.at("form").get<std::string>();
    if (form == "nfc") {
        p.form = NormalizationPolicy::Form::nfc;
    } else if (form == "none") {
        p.form = NormalizationPolicy::Form::none;
    } else {
        throw DataError("normalization.form: unknown value '" + form + "'");
    }
    j.at("strip_control").get_to(p.strip_control);
    j.at("collapse_whitespace").get_to(p.collapse_whitespace);
    j.at("trim").get_to(p.trim);
    j.at("word_marker").get_to(p.word_marker);
}

bool is_unicode_whitespace(char32_t cp) { return u_isUWhiteSpace(static_cast<UChar32>(cp)); }

namespace {

bool is_stripped_control(char32_t cp) {
    if (cp == U'\n' || cp == U'\t') return false;
    const auto type = u_charType(static_cast<UChar32>(cp));
    return type == U_CONTROL_CHAR || type == U_FORMAT_CHAR;
}

std::string compose_nfc(const std::string& text) {
    UErrorCode status = U_ZERO_ERROR;
    const icu::Normalizer2* nfc = icu::Normalizer2::getNFCInstance(status);
    if (U_FAILURE(status)) throw DataError("ICU NFC normalizer unavailable");
    const icu::UnicodeString input = icu::UnicodeString::fromUTF8(text);
    const icu::UnicodeString composed = nfc->normalize(input, status);
    if (U_FAILURE(status)) throw DataError("unicode normalization failed");
    std::string out;
    composed.toUTF8String(out);
    return out;
}

}  // namespace

std::string normalize_text(std::string_view text, const NormalizationPolicy& policy,
                           NormalizeReport* report) {
    std::uint64_t replaced = 0;
    const std::string clean = utf8::sanitize(text, &replaced);
    if (report) report->replaced_invalid_bytes += replaced;

    std::vector<char32_t> cps;
    cps.reserve(clean.size());
    std::size_t pos = 0;
    while (pos < clean.size()) {
        const char32_t cp = utf8::decode_next(clean, pos);
        if (policy.strip_control && is_stripped_control(cp)) continue;
        cps.push_back(cp);
    }

    if (policy.collapse_whitespace) {
        std::vector<char32_t> collapsed;
        collapsed.reserve(cps.size());
        bool in_run = false;
        for (const char32_t cp : cps) {
            if (is_unicode_whitespace(cp)) {
                in_run = true;
                continue;
            }
            if (in_run) collapsed.push_back(U' ');
            in_run = false;
            collapsed.push_back(cp);
        }
        if (in_run) collapsed.push_back(U' ');
        cps = std::move(collapsed);
    }
    if (policy.trim) {
        std::size_t begin = 0;
        std::size_t end = cps.size();
        while (begin < end && is_unicode_whitespace(cps[begin])) ++begin;
        while (end > begin && is_unicode_whitespace(cps[end - 1])) --end;
        cps.assign(cps.begin() + begin, cps.begin() + end);
    }

    std::string filtered;
    filtered.reserve(cps.size());
    for (const char32_t cp : cps) utf8::append(filtered, cp);

    if (policy.form == NormalizationPolicy::Form::nfc) return compose_nfc(filtered);
    return filtered;
}

}  // namespace lmforge
