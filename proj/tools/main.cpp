// lmforge: train/merge subword tokenizers, resize embeddings, run LoRA
// training on a desk-scale causal LM, generate, and score instruction evals.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "lmforge/corpus.hpp"
#include "lmforge/errors.hpp"
#include "lmforge/evalkit.hpp"
#include "lmforge/lattice.hpp"
#include "lmforge/merge.hpp"
#include "lmforge/resize.hpp"
#include "lmforge/sampling.hpp"
#include "lmforge/train.hpp"
#include "lmforge/trainer.hpp"

namespace {

using nlohmann::json;
using namespace lmforge;

struct GlobalFlags {
    bool json_output = false;
    bool force = false;
    std::uint64_t seed = 0;
    bool seed_set = false;
};

std::uint64_t fnv1a(const std::string& text) {
    std::uint64_t hash = 1469598103934665603ULL;
    for (const unsigned char c : text) {
        hash ^= c;
        hash *= 1099511628211ULL;
    }
    return hash;
}

// Content address of the effective subcommand parameters. File paths (inputs
// and outputs alike) stay out of it: the same pipeline run from two
// directories produces byte-identical artifacts, while changed parameters
// refuse to silently overwrite an existing output.
std::string config_hash(const CLI::App* cmd) {
    static const std::set<std::string> kPathOptions = {
        "--input",  "--checkpoint", "--tokenizer", "--model",   "--base",
        "--addon",  "--merged",     "--texts",     "--items",   "--template",
        "--seeds",  "--verdicts",   "--matrix",    "--refit-corpus", "--client",
        "--a",      "--b",          "--loss-csv",  "--report",  "--csv",
        "--config", "--force",      "--help"};
    std::vector<std::string> parts;
    for (const CLI::Option* opt : cmd->get_options()) {
        const std::string name = opt->get_name();
        if (name.rfind("--out", 0) == 0 || kPathOptions.count(name)) continue;
        if (opt->count() == 0) continue;
        std::string joined;
        for (const auto& value : opt->results()) joined += value + "\x1f";
        parts.push_back(name + "=" + joined);
    }
    std::sort(parts.begin(), parts.end());
    std::string canonical = cmd->get_name() + "\x1e";
    for (const auto& part : parts) canonical += part + "\x1e";
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a(canonical)));
    return buf;
}

void guard_output(const std::filesystem::path& path, const std::string& hash, bool force) {
    if (force || !std::filesystem::exists(path)) return;
    std::ifstream in(path, std::ios::binary);
    json existing;
    try {
        in >> existing;
    } catch (...) {
        return;  // not JSON; no provenance to compare
    }
    if (existing.is_object() && existing.contains("config_hash") &&
        existing["config_hash"] != hash) {
        throw ConfigError(path.string() +
                          " was produced by a different configuration; pass --force to replace it");
    }
}

void emit_result(const json& result, const std::optional<std::string>& out_path,
                 const GlobalFlags& flags, const std::string& hash) {
    json stamped = result;
    stamped["config_hash"] = hash;
    const std::string text = stamped.dump(2) + "\n";
    if (out_path) {
        guard_output(*out_path, hash, flags.force);
        std::ofstream out(*out_path, std::ios::binary);
        if (!out) throw DataError("cannot write " + *out_path);
        out << text;
    }
    if (!out_path || flags.json_output) std::cout << text;
}

corpus::IngestFormat parse_format(const std::string& name) {
    if (name == "plain-lines") return corpus::IngestFormat::plain_lines;
    if (name == "plain-blocks") return corpus::IngestFormat::plain_blocks;
    if (name == "jsonl") return corpus::IngestFormat::jsonl;
    throw ConfigError("unknown format '" + name + "' (plain-lines | plain-blocks | jsonl)");
}

std::vector<std::filesystem::path> to_paths(const std::vector<std::string>& inputs) {
    return {inputs.begin(), inputs.end()};
}

std::vector<std::string> read_texts(const std::filesystem::path& path, const std::string& format) {
    corpus::IngestOptions options;
    options.format = parse_format(format);
    options.normalization = NormalizationPolicy::none();
    std::vector<std::string> texts;
    for (auto& doc : corpus::ingest({path}, options)) texts.push_back(std::move(doc.text));
    return texts;
}

corpus::CorpusSample load_corpus(const std::vector<std::string>& inputs, const std::string& format,
                                 bool lenient, const NormalizationPolicy& policy) {
    corpus::IngestOptions options;
    options.format = parse_format(format);
    options.lenient = lenient;
    options.normalization = policy;
    corpus::CorpusSample sample;
    sample.documents = corpus::ingest(to_paths(inputs), options);
    for (const auto& doc : sample.documents) sample.total_bytes += doc.byte_len;
    return sample;
}

std::vector<int> tokenize_corpus(const tok::TokenizerModel& tokenizer,
                                 const corpus::CorpusSample& sample) {
    std::vector<int> ids;
    for (const auto& doc : sample.documents) {
        const auto doc_ids = tok::encode(tokenizer, doc.text);
        ids.insert(ids.end(), doc_ids.begin(), doc_ids.end());
        ids.push_back(2);  // document separator: </s>
    }
    return ids;
}

std::unique_ptr<eval::ChatClient> make_client(const std::string& spec) {
    if (spec.rfind("replay:", 0) == 0) return eval::make_replay_client(spec.substr(7));
    if (spec == "http") return eval::make_http_client(eval::http_config_from_env());
    throw ConfigError("unknown client '" + spec + "' (use replay:<fixture.json> or http)");
}

std::set<tinylm::LoraTarget> parse_targets(const std::vector<std::string>& names) {
    std::set<tinylm::LoraTarget> targets;
    for (const auto& name : names) {
        std::size_t start = 0;
        while (start <= name.size()) {
            const std::size_t comma = name.find(',', start);
            const std::string part =
                name.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
            if (!part.empty()) targets.insert(tinylm::lora_target_from_string(part));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
    }
    return targets;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"language-adaptation toolkit for small causal LMs"};
    app.require_subcommand(1);
    app.set_config("--config")->expected(0, 1);
    app.allow_config_extras(CLI::config_extras_mode::error);

    GlobalFlags flags;
    app.add_flag("--json", flags.json_output, "machine-readable stdout");
    app.add_flag("--force", flags.force, "overwrite outputs from other configurations");
    app.add_option("--seed", flags.seed, "global seed, used when a subcommand seed is unset");

    int exit_code = 0;

    // ---------------- corpus-stats ----------------
    {
        auto* cmd = app.add_subcommand("corpus-stats", "character statistics of a corpus");
        auto inputs = std::make_shared<std::vector<std::string>>();
        auto format = std::make_shared<std::string>("plain-lines");
        auto lenient = std::make_shared<bool>(false);
        auto blocks = std::make_shared<std::vector<std::string>>();
        auto out = std::make_shared<std::string>();
        cmd->add_option("--input", *inputs, "input files")->required();
        cmd->add_option("--format", *format, "plain-lines | plain-blocks | jsonl");
        cmd->add_flag("--lenient", *lenient, "skip malformed records");
        cmd->add_option("--target-block", *blocks,
                        "target script codepoint range as HEX-HEX (default 0B80-0BFF)");
        cmd->add_option("--out", *out, "write stats JSON here");
        cmd->callback([=, &flags] {
            const auto sample = load_corpus(*inputs, *format, *lenient, NormalizationPolicy{});
            corpus::StatsConfig stats_config;
            if (!blocks->empty()) {
                stats_config.target_blocks.clear();
                for (const auto& spec : *blocks) {
                    const auto dash = spec.find('-');
                    if (dash == std::string::npos) throw ConfigError("bad --target-block " + spec);
                    stats_config.target_blocks.emplace_back(
                        static_cast<char32_t>(std::stoul(spec.substr(0, dash), nullptr, 16)),
                        static_cast<char32_t>(std::stoul(spec.substr(dash + 1), nullptr, 16)));
                }
            }
            const auto stats = corpus::corpus_stats(sample, stats_config);
            emit_result(corpus::stats_to_json(stats),
                        out->empty() ? std::nullopt : std::make_optional(*out), flags,
                        config_hash(cmd));
        });
    }

    // ---------------- sample ----------------
    {
        auto* cmd = app.add_subcommand("sample", "seeded uniform corpus sample");
        auto inputs = std::make_shared<std::vector<std::string>>();
        auto format = std::make_shared<std::string>("plain-lines");
        auto lenient = std::make_shared<bool>(false);
        auto max_docs = std::make_shared<std::uint64_t>(0);
        auto max_bytes = std::make_shared<std::uint64_t>(0);
        auto seed = std::make_shared<std::uint64_t>(0);
        auto out = std::make_shared<std::string>();
        auto out_text = std::make_shared<std::string>();
        cmd->add_option("--input", *inputs)->required();
        cmd->add_option("--format", *format);
        cmd->add_flag("--lenient", *lenient);
        cmd->add_option("--max-docs", *max_docs);
        cmd->add_option("--max-bytes", *max_bytes);
        auto* seed_opt = cmd->add_option("--sample-seed", *seed, "sampling seed");
        cmd->add_option("--out", *out, "manifest JSON path");
        cmd->add_option("--out-text", *out_text, "sampled documents as JSONL {id, text}");
        cmd->callback([=, &flags] {
            const auto docs = load_corpus(*inputs, *format, *lenient, NormalizationPolicy{});
            corpus::SampleTarget target;
            if (*max_docs) target.max_docs = *max_docs;
            if (*max_bytes) target.max_bytes = *max_bytes;
            const std::uint64_t effective_seed = seed_opt->count() ? *seed : flags.seed;
            const auto sample = corpus::sample_documents(docs.documents, target, effective_seed);
            if (!out_text->empty()) {
                std::ofstream text_out(*out_text, std::ios::binary);
                if (!text_out) throw DataError("cannot write " + *out_text);
                for (const auto& doc : sample.documents) {
                    text_out << json{{"id", doc.id}, {"text", doc.text}}.dump() << "\n";
                }
            }
            emit_result(corpus::sample_manifest(sample),
                        out->empty() ? std::nullopt : std::make_optional(*out), flags,
                        config_hash(cmd));
        });
    }

    // ---------------- train-tokenizer ----------------
    {
        auto* cmd = app.add_subcommand("train-tokenizer", "train a unigram subword tokenizer");
        auto inputs = std::make_shared<std::vector<std::string>>();
        auto format = std::make_shared<std::string>("plain-lines");
        auto config = std::make_shared<tok::TrainerConfig>();
        auto no_marker = std::make_shared<bool>(false);
        auto no_fallback = std::make_shared<bool>(false);
        auto out = std::make_shared<std::string>();
        cmd->add_option("--input", *inputs)->required();
        cmd->add_option("--format", *format);
        cmd->add_option("--vocab-size", config->target_vocab_size, "normal pieces to train");
        cmd->add_option("--max-seed-size", config->max_seed_size);
        cmd->add_option("--max-piece-len", config->max_piece_len);
        cmd->add_option("--coverage", config->character_coverage);
        cmd->add_option("--em-iters", config->em_iters_per_round);
        cmd->add_option("--keep-ratio", config->keep_ratio);
        cmd->add_option("--threads", config->threads);
        cmd->add_flag("--no-word-marker", *no_marker);
        cmd->add_flag("--no-byte-fallback", *no_fallback);
        cmd->add_option("--out", *out, "model JSON path")->required();
        cmd->callback([=, &flags] {
            config->normalization.word_marker = !*no_marker;
            config->byte_fallback = !*no_fallback;
            const auto sample = load_corpus(*inputs, *format, false, config->normalization);
            std::vector<tok::TrainLogEntry> log;
            const auto model = tok::train_unigram(sample, *config, &log);
            tok::save_model(model, *out);
            json result = {{"pieces", model.size()},
                           {"normal_pieces", model.normal_count()},
                           {"target_vocab_size", model.target_vocab_size},
                           {"em_rounds", log.empty() ? 0 : log.back().round + 1},
                           {"model", *out}};
            emit_result(result, std::nullopt, flags, config_hash(cmd));
        });
    }

    // ---------------- merge-tokenizer ----------------
    {
        auto* cmd = app.add_subcommand("merge-tokenizer",
                                       "merge an add-on tokenizer into a base, preserving ids");
        auto base_path = std::make_shared<std::string>();
        auto addon_path = std::make_shared<std::string>();
        auto policy = std::make_shared<std::string>("shift-to-median");
        auto refit = std::make_shared<std::vector<std::string>>();
        auto refit_format = std::make_shared<std::string>("plain-lines");
        auto out = std::make_shared<std::string>();
        auto report_path = std::make_shared<std::string>();
        cmd->add_option("--base", *base_path)->required();
        cmd->add_option("--addon", *addon_path)->required();
        cmd->add_option("--policy", *policy, "keep-raw | shift-to-median | refit-on-corpus");
        cmd->add_option("--refit-corpus", *refit, "corpus files for refit-on-corpus");
        cmd->add_option("--refit-format", *refit_format);
        cmd->add_option("--out", *out, "merged model path")->required();
        cmd->add_option("--report", *report_path, "merge report JSON path");
        cmd->callback([=, &flags] {
            tok::MergeOptions options;
            options.policy = tok::score_policy_from_string(*policy);
            const auto base = tok::load_model(*base_path);
            const auto addon = tok::load_model(*addon_path);
            corpus::CorpusSample refit_sample;
            if (!refit->empty()) {
                refit_sample = load_corpus(*refit, *refit_format, false, base.normalization);
                options.refit_corpus = &refit_sample;
            }
            const auto [merged, report] = tok::merge_tokenizers(base, addon, options);
            tok::save_model(merged, *out);
            json result = tok::merge_report_to_json(report);
            result["model"] = *out;
            if (!report_path->empty()) {
                std::ofstream rep(*report_path, std::ios::binary);
                if (!rep) throw DataError("cannot write " + *report_path);
                rep << tok::merge_report_to_json(report).dump(2) << "\n";
            }
            emit_result(result, std::nullopt, flags, config_hash(cmd));
        });
    }

    // ---------------- encode / decode ----------------
    {
        auto* cmd = app.add_subcommand("encode", "text to token ids");
        auto model_path = std::make_shared<std::string>();
        auto text = std::make_shared<std::string>();
        auto input = std::make_shared<std::string>();
        cmd->add_option("--model", *model_path)->required();
        cmd->add_option("--text", *text);
        cmd->add_option("--input", *input, "file: one text per line");
        cmd->callback([=, &flags] {
            const auto model = tok::load_model(*model_path);
            json result;
            if (!input->empty()) {
                json lines = json::array();
                std::ifstream in(*input, std::ios::binary);
                if (!in) throw DataError("cannot read " + *input);
                std::string line;
                while (std::getline(in, line)) lines.push_back(tok::encode(model, line));
                result["ids_per_line"] = std::move(lines);
            } else {
                result["ids"] = tok::encode(model, *text);
            }
            emit_result(result, std::nullopt, flags, config_hash(cmd));
        });
    }
    {
        auto* cmd = app.add_subcommand("decode", "token ids to text");
        auto model_path = std::make_shared<std::string>();
        auto ids = std::make_shared<std::vector<int>>();
        cmd->add_option("--model", *model_path)->required();
        cmd->add_option("--ids", *ids, "token ids")->required()->delimiter(',');
        cmd->callback([=, &flags] {
            const auto model = tok::load_model(*model_path);
            const auto decoded = tok::decode(model, *ids);
            emit_result(json{{"text", decoded.text}, {"invalid_bytes", decoded.invalid_bytes}},
                        std::nullopt, flags, config_hash(cmd));
        });
    }

    // ---------------- bench-tokenizer ----------------
    {
        auto* cmd = app.add_subcommand("bench-tokenizer", "token-count comparison of two models");
        auto a_path = std::make_shared<std::string>();
        auto b_path = std::make_shared<std::string>();
        auto texts_path = std::make_shared<std::string>();
        auto format = std::make_shared<std::string>("jsonl");
        auto csv = std::make_shared<std::string>();
        auto out = std::make_shared<std::string>();
        cmd->add_option("--a", *a_path, "reference tokenizer")->required();
        cmd->add_option("--b", *b_path, "candidate tokenizer")->required();
        cmd->add_option("--texts", *texts_path)->required();
        cmd->add_option("--format", *format);
        cmd->add_option("--csv", *csv, "per-text CSV path");
        cmd->add_option("--out", *out);
        cmd->callback([=, &flags] {
            const auto tok_a = tok::load_model(*a_path);
            const auto tok_b = tok::load_model(*b_path);
            const auto texts = read_texts(*texts_path, *format);
            const auto stats = tok::compare_efficiency(tok_a, tok_b, texts);
            if (!csv->empty()) tok::write_efficiency_csv(stats, *csv);
            emit_result(tok::efficiency_to_json(stats),
                        out->empty() ? std::nullopt : std::make_optional(*out), flags,
                        config_hash(cmd));
        });
    }

    // ---------------- resize-embeddings ----------------
    {
        auto* cmd = app.add_subcommand(
            "resize-embeddings",
            "extend embeddings and LM head (a matrix or a whole checkpoint) to a merged vocab");
        auto matrix_path = std::make_shared<std::string>();
        auto checkpoint = std::make_shared<std::string>();
        auto base_path = std::make_shared<std::string>();
        auto merged_path = std::make_shared<std::string>();
        auto policy = std::make_shared<std::string>("subtoken-mean");
        auto sigma = std::make_shared<double>(0.02);
        auto seed = std::make_shared<std::uint64_t>(0);
        auto out = std::make_shared<std::string>();
        auto* matrix_opt = cmd->add_option("--matrix", *matrix_path, "single matrix file");
        auto* ckpt_opt =
            cmd->add_option("--checkpoint", *checkpoint, "model checkpoint directory");
        matrix_opt->excludes(ckpt_opt);
        cmd->add_option("--base", *base_path, "base tokenizer")->required();
        cmd->add_option("--merged", *merged_path, "merged tokenizer")->required();
        cmd->add_option("--policy", *policy, "subtoken-mean | global-mean | gaussian");
        cmd->add_option("--sigma", *sigma, "gaussian sigma");
        auto* seed_opt = cmd->add_option("--init-seed", *seed);
        cmd->add_option("--out", *out, "output matrix path / checkpoint dir")->required();
        cmd->callback([=, &flags] {
            const auto base = tok::load_model(*base_path);
            const auto merged = tok::load_model(*merged_path);
            adapt::ResizePlan plan;
            plan.v_old = base.size();
            plan.v_new = merged.size();
            plan.init = adapt::init_policy_from_string(*policy);
            plan.gaussian_sigma = *sigma;
            plan.seed = seed_opt->count() ? *seed : flags.seed;
            if (plan.init == adapt::InitPolicy::subtoken_mean) {
                plan.subtoken_map = adapt::build_subtoken_map(base, merged);
            }
            if (ckpt_opt->count()) {
                auto weights = tinylm::load_checkpoint(*checkpoint);
                if (weights.config.vocab != plan.v_old) {
                    throw ConfigError("checkpoint vocab " + std::to_string(weights.config.vocab) +
                                      " does not match base tokenizer size " +
                                      std::to_string(plan.v_old));
                }
                plan.hidden = weights.config.hidden;
                weights.tok_embed = adapt::resize_embeddings(weights.tok_embed, plan);
                weights.lm_head = adapt::resize_embeddings(weights.lm_head, plan);
                weights.config.vocab = plan.v_new;
                tinylm::save_checkpoint(weights, *out);
            } else if (matrix_opt->count()) {
                const MatF matrix = load_matrix(*matrix_path);
                plan.hidden = static_cast<int>(matrix.cols());
                save_matrix(adapt::resize_embeddings(matrix, plan), *out);
            } else {
                throw ConfigError("resize-embeddings needs --matrix or --checkpoint");
            }
            emit_result(json{{"v_old", plan.v_old},
                             {"v_new", plan.v_new},
                             {"policy", *policy},
                             {"out", *out}},
                        std::nullopt, flags, config_hash(cmd));
        });
    }

    // ---------------- init-model ----------------
    {
        auto* cmd = app.add_subcommand("init-model", "random-init a model checkpoint");
        auto config = std::make_shared<tinylm::ModelConfig>();
        config->vocab = 512;
        config->hidden = 64;
        config->layers = 2;
        config->heads = 8;
        config->max_seq = 256;
        auto seed = std::make_shared<std::uint64_t>(0);
        auto out = std::make_shared<std::string>();
        cmd->add_option("--vocab", config->vocab);
        cmd->add_option("--hidden", config->hidden);
        cmd->add_option("--layers", config->layers);
        cmd->add_option("--heads", config->heads);
        cmd->add_option("--max-seq", config->max_seq);
        cmd->add_option("--rms-eps", config->rms_eps);
        cmd->add_option("--rope-base", config->rope_base);
        cmd->add_option("--mlp-hidden", config->mlp_hidden);
        cmd->add_option("--init-std", config->init_std);
        auto* seed_opt = cmd->add_option("--init-seed", *seed);
        cmd->add_option("--out", *out, "checkpoint directory")->required();
        cmd->callback([=, &flags] {
            const std::uint64_t effective_seed = seed_opt->count() ? *seed : flags.seed;
            const auto weights = tinylm::init_weights<float>(*config, effective_seed);
            tinylm::save_checkpoint(weights, *out);
            emit_result(json{{"checkpoint", *out},
                             {"vocab", config->vocab},
                             {"hidden", config->hidden},
                             {"layers", config->layers},
                             {"heads", config->heads},
                             {"mlp_hidden", config->mlp_dim()},
                             {"seed", effective_seed}},
                        std::nullopt, flags, config_hash(cmd));
        });
    }

    // ---------------- attach-lora ----------------
    {
        auto* cmd = app.add_subcommand("attach-lora", "attach zero-init adapters to a checkpoint");
        auto checkpoint = std::make_shared<std::string>();
        auto targets = std::make_shared<std::vector<std::string>>(
            std::vector<std::string>{"q,k,v,o,mlp-gate,mlp-up,mlp-down"});
        auto rank = std::make_shared<int>(64);
        auto alpha = std::make_shared<double>(128.0);
        auto seed = std::make_shared<std::uint64_t>(0);
        auto out = std::make_shared<std::string>();
        cmd->add_option("--checkpoint", *checkpoint)->required();
        cmd->add_option("--targets", *targets, "comma-separated adapter targets");
        cmd->add_option("--rank", *rank);
        cmd->add_option("--alpha", *alpha);
        auto* seed_opt = cmd->add_option("--init-seed", *seed);
        cmd->add_option("--out", *out, "output checkpoint dir (default: in place)");
        cmd->callback([=, &flags] {
            auto weights = tinylm::load_checkpoint(*checkpoint);
            const std::uint64_t effective_seed = seed_opt->count() ? *seed : flags.seed;
            tinylm::attach_lora(weights, parse_targets(*targets), *rank, *alpha, effective_seed);
            const std::string destination = out->empty() ? *checkpoint : *out;
            tinylm::save_checkpoint(weights, destination);
            emit_result(json{{"checkpoint", destination},
                             {"rank", *rank},
                             {"alpha", *alpha},
                             {"adapters_per_layer", parse_targets(*targets).size()}},
                        std::nullopt, flags, config_hash(cmd));
        });
    }

    // ---------------- train ----------------
    {
        auto* cmd = app.add_subcommand("train", "causal-LM training on a text corpus");
        auto checkpoint = std::make_shared<std::string>();
        auto tokenizer_path = std::make_shared<std::string>();
        auto inputs = std::make_shared<std::vector<std::string>>();
        auto format = std::make_shared<std::string>("plain-lines");
        auto config = std::make_shared<tinylm::TrainConfig>();
        auto lora_targets = std::make_shared<std::vector<std::string>>();
        auto out = std::make_shared<std::string>();
        auto loss_csv = std::make_shared<std::string>();
        cmd->add_option("--checkpoint", *checkpoint)->required();
        cmd->add_option("--tokenizer", *tokenizer_path)->required();
        cmd->add_option("--input", *inputs)->required();
        cmd->add_option("--format", *format);
        cmd->add_option("--batch-size", config->batch_size);
        cmd->add_option("--learning-rate", config->learning_rate);
        cmd->add_option("--epochs", config->epochs);
        cmd->add_option("--seq-len", config->seq_len);
        cmd->add_option("--dropout", config->dropout);
        auto* seed_opt = cmd->add_option("--train-seed", config->seed);
        cmd->add_option("--lora-targets", *lora_targets,
                        "train only adapters + embeddings + LM head");
        cmd->add_option("--out", *out, "output checkpoint dir")->required();
        cmd->add_option("--loss-csv", *loss_csv);
        cmd->callback([=, &flags] {
            auto weights = tinylm::load_checkpoint(*checkpoint);
            const auto tokenizer = tok::load_model(*tokenizer_path);
            if (tokenizer.size() != weights.config.vocab) {
                throw ConfigError("tokenizer size " + std::to_string(tokenizer.size()) +
                                  " does not match model vocab " +
                                  std::to_string(weights.config.vocab));
            }
            if (!seed_opt->count()) config->seed = flags.seed;
            config->lora_targets = parse_targets(*lora_targets);
            const auto sample = load_corpus(*inputs, *format, false, tokenizer.normalization);
            const auto ids = tokenize_corpus(tokenizer, sample);
            const auto curve = tinylm::train(weights, ids, *config);
            tinylm::save_checkpoint(weights, *out);
            if (!loss_csv->empty()) tinylm::write_loss_csv(curve, *loss_csv);
            emit_result(json{{"checkpoint", *out},
                             {"steps", curve.points.size()},
                             {"initial_loss", curve.points.front().loss},
                             {"final_loss", curve.points.back().loss},
                             {"tokens_seen", curve.points.back().tokens_seen}},
                        std::nullopt, flags, config_hash(cmd));
        });
    }

    // ---------------- grad-check ----------------
    {
        auto* cmd =
            app.add_subcommand("grad-check", "finite-difference check of the backward pass");
        auto config = std::make_shared<tinylm::ModelConfig>();
        config->vocab = 32;
        config->hidden = 16;
        config->layers = 2;
        config->heads = 2;
        config->max_seq = 16;
        auto seed = std::make_shared<std::uint64_t>(0);
        auto seq_len = std::make_shared<int>(8);
        auto epsilon = std::make_shared<double>(1e-5);
        auto tolerance = std::make_shared<double>(1e-4);
        auto no_lora = std::make_shared<bool>(false);
        auto rank = std::make_shared<int>(2);
        auto alpha = std::make_shared<double>(4.0);
        cmd->add_option("--vocab", config->vocab);
        cmd->add_option("--hidden", config->hidden);
        cmd->add_option("--layers", config->layers);
        cmd->add_option("--heads", config->heads);
        cmd->add_option("--seq-len", *seq_len);
        cmd->add_option("--epsilon", *epsilon);
        cmd->add_option("--tolerance", *tolerance);
        cmd->add_option("--rank", *rank);
        cmd->add_option("--alpha", *alpha);
        cmd->add_flag("--no-lora", *no_lora);
        auto* seed_opt = cmd->add_option("--check-seed", *seed);
        cmd->callback([=, &flags, &exit_code] {
            config->max_seq = std::max(config->max_seq, *seq_len);
            const std::uint64_t effective_seed = seed_opt->count() ? *seed : flags.seed;
            const auto result = tinylm::grad_check(*config, effective_seed, *seq_len, *epsilon,
                                                   !*no_lora, *rank, *alpha);
            json groups = json::array();
            for (const auto& group : result.groups) {
                groups.push_back({{"name", group.name}, {"max_rel_error", group.max_rel_error}});
            }
            const bool pass = result.max_rel_error < *tolerance;
            emit_result(json{{"max_rel_error", result.max_rel_error},
                             {"tolerance", *tolerance},
                             {"pass", pass},
                             {"groups", groups}},
                        std::nullopt, flags, config_hash(cmd));
            std::fprintf(stderr, "grad-check max relative error: %.3e (%s)\n",
                         result.max_rel_error, pass ? "pass" : "FAIL");
            if (!pass) exit_code = 1;
        });
    }

    // ---------------- generate ----------------
    {
        auto* cmd = app.add_subcommand("generate", "sample a continuation");
        auto checkpoint = std::make_shared<std::string>();
        auto tokenizer_path = std::make_shared<std::string>();
        auto prompt = std::make_shared<std::string>();
        auto config = std::make_shared<gen::GenerationConfig>();
        auto stop_ids = std::make_shared<std::vector<int>>();
        cmd->add_option("--checkpoint", *checkpoint)->required();
        cmd->add_option("--tokenizer", *tokenizer_path)->required();
        cmd->add_option("--prompt", *prompt)->required();
        cmd->add_option("--temperature", config->temperature);
        cmd->add_option("--top-k", config->top_k);
        cmd->add_option("--top-p", config->top_p);
        cmd->add_option("--repetition-penalty", config->repetition_penalty);
        cmd->add_option("--max-new-tokens", config->max_new_tokens);
        cmd->add_flag("--greedy", config->greedy);
        cmd->add_option("--stop-id", *stop_ids)->delimiter(',');
        auto* seed_opt = cmd->add_option("--gen-seed", config->seed);
        cmd->callback([=, &flags] {
            const auto weights = tinylm::load_checkpoint(*checkpoint);
            const auto tokenizer = tok::load_model(*tokenizer_path);
            if (!seed_opt->count()) config->seed = flags.seed;
            config->stop_ids = std::set<int>(stop_ids->begin(), stop_ids->end());
            const auto result = gen::generate(weights, tokenizer, *prompt, *config);
            emit_result(json{{"text", result.text},
                             {"ids", result.ids},
                             {"stop_reason", std::string(gen::to_string(result.stop_reason))}},
                        std::nullopt, flags, config_hash(cmd));
        });
    }

    // ---------------- eval-run ----------------
    {
        auto* cmd = app.add_subcommand("eval-run", "generate, judge and score an item set");
        auto checkpoint = std::make_shared<std::string>();
        auto tokenizer_path = std::make_shared<std::string>();
        auto items_path = std::make_shared<std::string>();
        auto template_path = std::make_shared<std::string>();
        auto client_spec = std::make_shared<std::string>();
        auto out = std::make_shared<std::string>();
        auto gen_config = std::make_shared<gen::GenerationConfig>();
        gen_config->max_new_tokens = 64;
        cmd->add_option("--checkpoint", *checkpoint)->required();
        cmd->add_option("--tokenizer", *tokenizer_path)->required();
        cmd->add_option("--items", *items_path)->required();
        cmd->add_option("--template", *template_path, "prompt template JSON");
        cmd->add_option("--client", *client_spec, "replay:<fixture.json> or http")->required();
        cmd->add_option("--max-new-tokens", gen_config->max_new_tokens);
        auto* seed_opt = cmd->add_option("--gen-seed", gen_config->seed);
        cmd->add_option("--out", *out, "output directory")->required();
        cmd->callback([=, &flags] {
            const auto weights = tinylm::load_checkpoint(*checkpoint);
            const auto tokenizer = tok::load_model(*tokenizer_path);
            const auto items = eval::load_items_jsonl(*items_path);
            const auto client = make_client(*client_spec);
            eval::RunEvalOptions options;
            options.generation = *gen_config;
            if (!seed_opt->count()) options.generation.seed = flags.seed;
            if (!template_path->empty()) {
                std::ifstream in(*template_path, std::ios::binary);
                if (!in) throw DataError("cannot read " + *template_path);
                json parsed;
                in >> parsed;
                options.prompt_template = parsed.get<eval::PromptTemplate>();
            }
            const auto result = eval::run_eval(weights, tokenizer, items, *client, *out, options);
            json report = eval::report_to_json(result.report);
            report["generated"] = result.generated;
            report["resumed"] = result.resumed;
            report["failed"] = result.failed;
            emit_result(report, std::nullopt, flags, config_hash(cmd));
            if (!flags.json_output) std::cerr << eval::render_report_table(result.report);
        });
    }

    // ---------------- eval-score ----------------
    {
        auto* cmd = app.add_subcommand("eval-score", "aggregate stored verdicts into a report");
        auto verdicts_path = std::make_shared<std::string>();
        auto items_path = std::make_shared<std::string>();
        auto out = std::make_shared<std::string>();
        cmd->add_option("--verdicts", *verdicts_path)->required();
        cmd->add_option("--items", *items_path)->required();
        cmd->add_option("--out", *out);
        cmd->callback([=, &flags] {
            const auto verdicts = eval::load_verdicts_jsonl(*verdicts_path);
            const auto items = eval::load_items_jsonl(*items_path);
            const auto report = eval::aggregate(verdicts, items);
            emit_result(eval::report_to_json(report),
                        out->empty() ? std::nullopt : std::make_optional(*out), flags,
                        config_hash(cmd));
            if (!flags.json_output) std::cout << eval::render_report_table(report);
        });
    }

    // ---------------- self-instruct ----------------
    {
        auto* cmd = app.add_subcommand("self-instruct",
                                       "derive new instruction items from seed documents");
        auto client_spec = std::make_shared<std::string>();
        auto seeds_path = std::make_shared<std::string>();
        auto format = std::make_shared<std::string>("plain-lines");
        auto count = std::make_shared<std::size_t>(10);
        auto out = std::make_shared<std::string>();
        cmd->add_option("--client", *client_spec)->required();
        cmd->add_option("--seeds", *seeds_path)->required();
        cmd->add_option("--format", *format);
        cmd->add_option("-n,--count", *count);
        cmd->add_option("--out", *out, "items JSONL path")->required();
        cmd->callback([=, &flags] {
            const auto client = make_client(*client_spec);
            const auto seeds = read_texts(*seeds_path, *format);
            const auto result = eval::self_instruct_generate(*client, seeds, *count);
            eval::save_items_jsonl(result.items, *out);
            emit_result(json{{"items", result.items.size()},
                             {"duplicates_dropped", result.duplicates_dropped},
                             {"failures", result.failures},
                             {"out", *out}},
                        std::nullopt, flags, config_hash(cmd));
        });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const ServiceError& e) {
        std::cerr << "service error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return exit_code;
}
