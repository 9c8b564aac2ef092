#include "lmforge/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "lmforge/errors.hpp"
#include "lmforge/rng.hpp"
#include "lmforge/utf8.hpp"

namespace lmforge::corpus {

namespace {

void emit_document(std::vector<Document>& out, const std::filesystem::path& path,
                   std::uint64_t record_index, std::string_view raw, const IngestOptions& options,
                   IngestReport* report) {
    NormalizeReport norm_report;
    std::string text = normalize_text(raw, options.normalization, &norm_report);
    if (report) report->replaced_invalid_bytes += norm_report.replaced_invalid_bytes;
    if (text.empty()) {
        if (report) ++report->empty_records_dropped;
        return;
    }
    Document doc;
    doc.source = path.string();
    doc.record_index = record_index;
    doc.id = doc.source + "#" + std::to_string(record_index);
    doc.byte_len = text.size();
    doc.text = std::move(text);
    out.push_back(std::move(doc));
}

void ingest_plain(const std::filesystem::path& path, std::ifstream& in, bool blocks,
                  const IngestOptions& options, std::vector<Document>& out, IngestReport* report) {
    std::string line;
    std::string block;
    std::uint64_t record = 0;
    auto flush_block = [&] {
        if (!block.empty()) emit_document(out, path, record++, block, options, report);
        block.clear();
    };
    while (std::getline(in, line)) {
        if (!blocks) {
            emit_document(out, path, record++, line, options, report);
            continue;
        }
        const bool blank = line.find_first_not_of(" \t\r") == std::string::npos;
        if (blank) {
            flush_block();
        } else {
            if (!block.empty()) block.push_back('\n');
            block += line;
        }
    }
    if (blocks) flush_block();
}

void ingest_jsonl(const std::filesystem::path& path, std::ifstream& in,
                  const IngestOptions& options, std::vector<Document>& out, IngestReport* report) {
    std::string line;
    std::uint64_t line_no = 0;
    std::uint64_t record = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::string message;
        try {
            const nlohmann::json parsed = nlohmann::json::parse(line);
            if (!parsed.is_object() || !parsed.contains("text") || !parsed["text"].is_string()) {
                message = "missing string field 'text'";
            } else {
                emit_document(out, path, record++, parsed["text"].get<std::string>(), options,
                              report);
                continue;
            }
        } catch (const nlohmann::json::parse_error& e) {
            message = e.what();
        }
        if (!options.lenient) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + message);
        }
        if (report) report->record_errors.push_back({path.string(), line_no, message});
    }
}

}  // namespace

std::vector<Document> ingest(std::vector<std::filesystem::path> paths, const IngestOptions& options,
                             IngestReport* report) {
    std::sort(paths.begin(), paths.end());
    std::vector<Document> out;
    for (const auto& path : paths) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw DataError("cannot read " + path.string());
        switch (options.format) {
            case IngestFormat::plain_lines:
                ingest_plain(path, in, /*blocks=*/false, options, out, report);
                break;
            case IngestFormat::plain_blocks:
                ingest_plain(path, in, /*blocks=*/true, options, out, report);
                break;
            case IngestFormat::jsonl:
                ingest_jsonl(path, in, options, out, report);
                break;
        }
    }
    return out;
}

CorpusSample sample_documents(const std::vector<Document>& stream, const SampleTarget& target,
                              std::uint64_t seed) {
    if (!target.max_docs && !target.max_bytes) throw ConfigError("sample target not set");
    if ((target.max_docs && *target.max_docs == 0) || (target.max_bytes && *target.max_bytes == 0)) {
        throw ConfigError("sample target must be positive");
    }

    CorpusSample sample;
    sample.seed = seed;
    Rng rng(seed);
    std::vector<std::size_t> selected;

    if (target.max_docs) {
        const std::uint64_t k = *target.max_docs;
        if (stream.size() <= k) {
            selected.resize(stream.size());
            std::iota(selected.begin(), selected.end(), 0);
            sample.shortfall = stream.size() < k;
        } else {
            selected.resize(k);
            std::iota(selected.begin(), selected.end(), 0);
            for (std::size_t i = k; i < stream.size(); ++i) {
                const std::uint64_t j = rng.below(i + 1);
                if (j < k) selected[j] = i;
            }
        }
    } else {
        std::vector<std::size_t> order(stream.size());
        std::iota(order.begin(), order.end(), 0);
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[rng.below(i)]);
        }
        std::uint64_t bytes = 0;
        for (const std::size_t idx : order) {
            if (bytes >= *target.max_bytes) break;
            selected.push_back(idx);
            bytes += stream[idx].byte_len;
        }
        sample.shortfall = bytes < *target.max_bytes;
    }

    std::sort(selected.begin(), selected.end());
    sample.documents.reserve(selected.size());
    for (const std::size_t idx : selected) {
        sample.documents.push_back(stream[idx]);
        sample.total_bytes += stream[idx].byte_len;
    }
    return sample;
}

namespace {

const char* classify(char32_t cp, const StatsConfig& config) {
    if (is_unicode_whitespace(cp)) return "whitespace";
    for (const auto& [lo, hi] : config.target_blocks) {
        if (cp >= lo && cp <= hi) return "target";
    }
    if ((cp >= U'A' && cp <= U'Z') || (cp >= U'a' && cp <= U'z') ||
        (cp >= 0xC0 && cp <= 0x24F)) {
        return "latin";
    }
    if (cp >= U'0' && cp <= U'9') return "digit";
    if (cp < 0x80) return "punct";
    return "other";
}

}  // namespace

CorpusStats corpus_stats(const CorpusSample& sample, const StatsConfig& config) {
    CorpusStats stats;
    stats.doc_count = sample.documents.size();
    std::uint64_t target = 0;
    std::uint64_t non_whitespace = 0;
    for (const auto& doc : sample.documents) {
        stats.total_bytes += doc.byte_len;
        std::size_t pos = 0;
        while (pos < doc.text.size()) {
            const char32_t cp = utf8::decode_next(doc.text, pos);
            const char* cls = classify(cp, config);
            ++stats.char_histogram[cls];
            if (cls != std::string_view("whitespace")) {
                ++non_whitespace;
                if (cls == std::string_view("target")) ++target;
            }
        }
    }
    stats.target_script_fraction =
        non_whitespace == 0 ? 0.0 : static_cast<double>(target) / static_cast<double>(non_whitespace);
    return stats;
}

nlohmann::json sample_manifest(const CorpusSample& sample) {
    nlohmann::json docs = nlohmann::json::array();
    for (const auto& doc : sample.documents) {
        docs.push_back({{"id", doc.id},
                        {"source", doc.source},
                        {"record_index", doc.record_index},
                        {"byte_len", doc.byte_len}});
    }
    return {{"documents", docs},
            {"total_bytes", sample.total_bytes},
            {"seed", sample.seed},
            {"shortfall", sample.shortfall}};
}

nlohmann::json stats_to_json(const CorpusStats& stats) {
    return {{"doc_count", stats.doc_count},
            {"total_bytes", stats.total_bytes},
            {"char_histogram", stats.char_histogram},
            {"target_script_fraction", stats.target_script_fraction}};
}

}  // namespace lmforge::corpus
