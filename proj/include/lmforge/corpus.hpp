#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "lmforge/normalize.hpp"

namespace lmforge::corpus {

struct Document {
    std::string id;  // "<source path>#<record index>", stable across re-normalization
    std::string text;
    std::uint64_t byte_len = 0;
    std::string source;
    std::uint64_t record_index = 0;
};

enum class IngestFormat { plain_lines, plain_blocks, jsonl };

struct IngestOptions {
    IngestFormat format = IngestFormat::plain_lines;
    bool lenient = false;  // skip malformed JSONL records instead of failing
    NormalizationPolicy normalization;
};

struct RecordError {
    std::string path;
    std::uint64_t line = 0;
    std::string message;
};

struct IngestReport {
    std::vector<RecordError> record_errors;
    std::uint64_t replaced_invalid_bytes = 0;
    std::uint64_t empty_records_dropped = 0;
};

// Reads documents from `paths` in path-sorted, record-ordered sequence.
// Records that normalize to the empty string are dropped (counted).
std::vector<Document> ingest(std::vector<std::filesystem::path> paths, const IngestOptions& options,
                             IngestReport* report = nullptr);

struct SampleTarget {
    std::optional<std::uint64_t> max_docs;
    std::optional<std::uint64_t> max_bytes;
};

struct CorpusSample {
    std::vector<Document> documents;
    std::uint64_t total_bytes = 0;
    std::uint64_t seed = 0;
    bool shortfall = false;  // stream was smaller than the target
};

// Uniform sample without replacement, deterministic given the seed.
//
// max_docs uses reservoir sampling (Algorithm R): the first k documents fill
// the reservoir; document i >= k replaces slot j = rng.below(i + 1) when
// j < k. max_bytes applies a seeded Fisher-Yates shuffle (i from n-1 down to
// 1, swap with rng.below(i + 1)) and takes shuffled documents until the byte
// budget is reached, including the document that crosses it. Selected
// documents are returned in stream order.
CorpusSample sample_documents(const std::vector<Document>& stream, const SampleTarget& target,
                              std::uint64_t seed);

struct StatsConfig {
    // Inclusive codepoint ranges counted as the target script. Default: Tamil.
    std::vector<std::pair<char32_t, char32_t>> target_blocks = {{0x0B80, 0x0BFF}};
};

struct CorpusStats {
    std::uint64_t doc_count = 0;
    std::uint64_t total_bytes = 0;
    std::map<std::string, std::uint64_t> char_histogram;  // codepoint class -> count
    double target_script_fraction = 0.0;                  // over non-whitespace characters
};

CorpusStats corpus_stats(const CorpusSample& sample, const StatsConfig& config = {});

nlohmann::json sample_manifest(const CorpusSample& sample);
nlohmann::json stats_to_json(const CorpusStats& stats);

}  // namespace lmforge::corpus
