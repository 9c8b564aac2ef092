#include "lmforge/evalkit.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <regex>
#include <set>
#include <thread>

#include <nlohmann/json.hpp>

#include "lmforge/errors.hpp"
#include "lmforge/normalize.hpp"

namespace lmforge::eval {

namespace {

int count_occurrences(const std::string& haystack, const std::string& needle) {
    int count = 0;
    std::size_t pos = 0;
    while ((pos = haystack.find(needle, pos)) != std::string::npos) {
        ++count;
        pos += needle.size();
    }
    return count;
}

std::string replace_once(std::string text, const std::string& placeholder,
                         const std::string& value) {
    const std::size_t pos = text.find(placeholder);
    if (pos != std::string::npos) text.replace(pos, placeholder.size(), value);
    return text;
}

}  // namespace

void PromptTemplate::validate() const {
    if (count_occurrences(body_with_input, "{instruction}") != 1 ||
        count_occurrences(body_with_input, "{input}") != 1) {
        throw ConfigError(
            "prompt template: body_with_input must contain {instruction} and {input} exactly once");
    }
    if (count_occurrences(body_without_input, "{instruction}") != 1 ||
        count_occurrences(body_without_input, "{input}") != 0) {
        throw ConfigError(
            "prompt template: body_without_input must contain {instruction} exactly once and no "
            "{input}");
    }
}

PromptTemplate PromptTemplate::alpaca_default() {
    PromptTemplate t;
    t.system =
        "Below is an instruction that describes a task. "
        "Write a response that appropriately completes the request.";
    t.body_with_input =
        "\n\n### Instruction:\n{instruction}\n\n### Input:\n{input}\n\n### Response:\n";
    t.body_without_input = "\n\n### Instruction:\n{instruction}\n\n### Response:\n";
    return t;
}

void to_json(nlohmann::json& j, const PromptTemplate& t) {
    j = {{"system", t.system},
         {"body_with_input", t.body_with_input},
         {"body_without_input", t.body_without_input}};
}

void from_json(const nlohmann::json& j, PromptTemplate& t) {
    j.at("system").get_to(t.system);
    j.at("body_with_input").get_to(t.body_with_input);
    j.at("body_without_input").get_to(t.body_without_input);
    t.validate();
}

std::string_view to_string(TaskType type) {
    switch (type) {
        case TaskType::question_answering: return "question-answering";
        case TaskType::open_ended_qa: return "open-ended-qa";
        case TaskType::reasoning: return "reasoning";
        case TaskType::literature: return "literature";
        case TaskType::entertainment: return "entertainment";
        case TaskType::creative_writing: return "creative-writing";
        case TaskType::translation: return "translation";
        case TaskType::coding: return "coding";
        case TaskType::ethics: return "ethics";
        case TaskType::other: return "other";
    }
    return "other";
}

TaskType task_type_from_string(std::string_view name) {
    for (const TaskType type : all_task_types()) {
        if (to_string(type) == name) return type;
    }
    throw DataError("unknown task type '" + std::string(name) + "'");
}

const std::vector<TaskType>& all_task_types() {
    static const std::vector<TaskType> types = {
        TaskType::question_answering, TaskType::open_ended_qa, TaskType::reasoning,
        TaskType::literature,         TaskType::entertainment, TaskType::creative_writing,
        TaskType::translation,        TaskType::coding,        TaskType::ethics,
        TaskType::other};
    return types;
}

std::string render_prompt(const PromptTemplate& tmpl, const EvalItem& item) {
    tmpl.validate();
    const std::string& system = item.system ? *item.system : tmpl.system;
    const bool with_input = item.input && !item.input->empty();
    std::string body = with_input ? tmpl.body_with_input : tmpl.body_without_input;
    body = replace_once(std::move(body), "{instruction}", item.instruction);
    if (with_input) body = replace_once(std::move(body), "{input}", *item.input);
    return system + body;
}

std::string default_rubric() {
    return "You grade one model response to one instruction. Judge relevance, correctness, "
           "fluency and completeness. Reply with a short justification followed by a final line "
           "of exactly the form 'Score: N' where N is an integer from 0 to 10.";
}

bool parse_judge_score(const std::string& reply, int* score) {
    static const std::regex line_pattern(R"(^\s*Score:\s*(10|[0-9])\s*$)",
                                         std::regex::icase | std::regex::multiline);
    std::smatch match;
    // The last matching line wins so a quoted rubric cannot spoof the grade.
    int found = -1;
    auto begin = std::sregex_iterator(reply.begin(), reply.end(), line_pattern);
    for (auto it = begin; it != std::sregex_iterator(); ++it) {
        found = std::stoi((*it)[1].str());
    }
    if (found < 0) return false;
    if (score) *score = found;
    return true;
}

JudgeVerdict judge(ChatClient& client, const EvalItem& item, const std::string& response,
                   const JudgeOptions& options) {
    if (response.empty()) throw DataError("judge: empty response for item " + item.id);
    JudgeVerdict verdict;
    verdict.item_id = item.id;
    verdict.judge_id = client.id();
    verdict.response = response;

    std::vector<ChatMessage> messages;
    messages.push_back({"system", options.rubric});
    std::string user = "Task type: " + std::string(to_string(item.task_type)) +
                       "\nInstruction:\n" + item.instruction;
    if (item.input && !item.input->empty()) user += "\nInput:\n" + *item.input;
    if (item.reference && !item.reference->empty()) user += "\nReference answer:\n" + *item.reference;
    user += "\nModel response:\n" + response;
    messages.push_back({"user", user});

    int backoff = options.backoff_ms;
    for (int attempt = 0; attempt < options.max_attempts; ++attempt) {
        std::string reply;
        try {
            reply = client.complete(messages);
        } catch (const ServiceError&) {
            if (attempt + 1 < options.max_attempts) {
                std::this_thread::sleep_for(std::chrono::milliseconds(backoff));
                backoff *= 2;
                continue;
            }
            return verdict;  // invalid; transport never recovered
        }
        verdict.raw_reply = reply;
        int score = -1;
        if (parse_judge_score(reply, &score)) {
            verdict.score = score;
            verdict.rationale = reply;
            verdict.valid = true;
            return verdict;
        }
    }
    return verdict;  // invalid; no parseable grade
}

AggregateReport aggregate(const std::vector<JudgeVerdict>& verdicts,
                          const std::vector<EvalItem>& items) {
    if (verdicts.empty()) throw DataError("aggregate: empty verdict set");
    std::map<std::string, TaskType> item_task;
    for (const auto& item : items) item_task[item.id] = item.task_type;

    std::map<TaskType, TaskScore> by_task;
    AggregateReport report;
    int total_score = 0;
    for (const auto& verdict : verdicts) {
        const auto it = item_task.find(verdict.item_id);
        if (it == item_task.end()) {
            throw DataError("aggregate: verdict references unknown item '" + verdict.item_id + "'");
        }
        ++report.total;
        if (!verdict.valid && !verdict.manual_override) {
            ++report.invalid;
            continue;
        }
        const int score = verdict.effective_score();
        if (score < 0 || score > 10) {
            throw DataError("aggregate: score out of range for item '" + verdict.item_id + "'");
        }
        ++report.valid;
        total_score += score;
        TaskScore& task = by_task[it->second];
        task.task_type = it->second;
        ++task.n_items;
        task.raw_sum += score;
    }
    if (report.valid == 0) throw DataError("aggregate: no valid verdicts");

    double task_mean_sum = 0.0;
    for (const TaskType type : all_task_types()) {
        const auto it = by_task.find(type);
        if (it == by_task.end()) continue;
        TaskScore task = it->second;
        task.normalized = 100.0 * task.raw_sum / (10.0 * task.n_items);
        task_mean_sum += task.normalized;
        report.tasks.push_back(task);
    }
    report.overall_item_weighted = 100.0 * total_score / (10.0 * report.valid);
    report.overall_task_mean = task_mean_sum / static_cast<double>(report.tasks.size());
    return report;
}

nlohmann::json report_to_json(const AggregateReport& report) {
    nlohmann::json tasks = nlohmann::json::array();
    for (const auto& task : report.tasks) {
        tasks.push_back({{"task_type", std::string(to_string(task.task_type))},
                         {"n_items", task.n_items},
                         {"raw_sum", task.raw_sum},
                         {"normalized", task.normalized}});
    }
    return {{"tasks", tasks},
            {"overall_item_weighted", report.overall_item_weighted},
            {"overall_task_mean", report.overall_task_mean},
            {"valid", report.valid},
            {"invalid", report.invalid},
            {"total", report.total}};
}

std::string render_report_table(const AggregateReport& report) {
    std::string out;
    char line[128];
    std::snprintf(line, sizeof(line), "%-20s %8s %8s\n", "Task Type", "Items", "Score");
    out += line;
    out += std::string(38, '-') + "\n";
    for (const auto& task : report.tasks) {
        std::snprintf(line, sizeof(line), "%-20s %8d %8.2f\n",
                      std::string(to_string(task.task_type)).c_str(), task.n_items,
                      task.normalized);
        out += line;
    }
    out += std::string(38, '-') + "\n";
    std::snprintf(line, sizeof(line), "%-20s %8d %8.2f\n", "Overall (item-wtd)", report.valid,
                  report.overall_item_weighted);
    out += line;
    std::snprintf(line, sizeof(line), "%-20s %8s %8.2f\n", "Overall (task-mean)", "",
                  report.overall_task_mean);
    out += line;
    if (std::abs(report.overall_item_weighted - report.overall_task_mean) > 0.005) {
        std::snprintf(line, sizeof(line),
                      "note: item-weighted overall %.2f differs from unweighted task mean %.2f\n",
                      report.overall_item_weighted, report.overall_task_mean);
        out += line;
    }
    if (report.invalid > 0) {
        std::snprintf(line, sizeof(line), "excluded %d invalid verdict(s) of %d\n", report.invalid,
                      report.total);
        out += line;
    }
    return out;
}

nlohmann::json item_to_json(const EvalItem& item) {
    nlohmann::json j = {{"id", item.id},
                        {"task_type", std::string(to_string(item.task_type))},
                        {"instruction", item.instruction}};
    if (item.input) j["input"] = *item.input;
    if (item.reference) j["reference"] = *item.reference;
    if (item.system) j["system"] = *item.system;
    return j;
}

EvalItem item_from_json(const nlohmann::json& j) {
    EvalItem item;
    try {
        item.id = j.at("id").get<std::string>();
        item.task_type = task_type_from_string(j.at("task_type").get<std::string>());
        item.instruction = j.at("instruction").get<std::string>();
        if (j.contains("input") && !j["input"].is_null()) item.input = j["input"].get<std::string>();
        if (j.contains("reference") && !j["reference"].is_null()) {
            item.reference = j["reference"].get<std::string>();
        }
        if (j.contains("system") && !j["system"].is_null()) {
            item.system = j["system"].get<std::string>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError("eval item: " + std::string(e.what()));
    }
    return item;
}

nlohmann::json verdict_to_json(const JudgeVerdict& verdict) {
    nlohmann::json j = {{"item_id", verdict.item_id}, {"score", verdict.score},
                        {"rationale", verdict.rationale}, {"judge_id", verdict.judge_id},
                        {"valid", verdict.valid},      {"raw_reply", verdict.raw_reply},
                        {"response", verdict.response}};
    if (verdict.manual_override) j["manual_override"] = *verdict.manual_override;
    return j;
}

JudgeVerdict verdict_from_json(const nlohmann::json& j) {
    JudgeVerdict verdict;
    try {
        verdict.item_id = j.at("item_id").get<std::string>();
        verdict.score = j.at("score").get<int>();
        verdict.rationale = j.value("rationale", "");
        verdict.judge_id = j.value("judge_id", "");
        verdict.valid = j.at("valid").get<bool>();
        verdict.raw_reply = j.value("raw_reply", "");
        verdict.response = j.value("response", "");
        if (j.contains("manual_override") && !j["manual_override"].is_null()) {
            verdict.manual_override = j["manual_override"].get<int>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError("verdict: " + std::string(e.what()));
    }
    return verdict;
}

std::vector<EvalItem> load_items_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read " + path.string());
    std::vector<EvalItem> items;
    std::set<std::string> seen;
    std::string line;
    std::uint64_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            items.push_back(item_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::parse_error& e) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
        if (!seen.insert(items.back().id).second) {
            throw DataError(path.string() + ": duplicate item id '" + items.back().id + "'");
        }
    }
    return items;
}

void save_items_jsonl(const std::vector<EvalItem>& items, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    for (const auto& item : items) out << item_to_json(item).dump() << "\n";
}

std::vector<JudgeVerdict> load_verdicts_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read " + path.string());
    std::vector<JudgeVerdict> verdicts;
    std::string line;
    std::uint64_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            verdicts.push_back(verdict_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::parse_error& e) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return verdicts;
}

void append_verdict_jsonl(const JudgeVerdict& verdict, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::app);
    if (!out) throw DataError("cannot write " + path.string());
    out << verdict_to_json(verdict).dump() << "\n";
}

RunEvalResult run_eval(const tinylm::Weights<float>& weights, const tok::TokenizerModel& tokenizer,
                       const std::vector<EvalItem>& items, ChatClient& client,
                       const std::filesystem::path& out_dir, const RunEvalOptions& options) {
    std::filesystem::create_directories(out_dir);
    const auto verdict_path = out_dir / "verdicts.jsonl";

    std::set<std::string> done;
    std::vector<JudgeVerdict> verdicts;
    if (std::filesystem::exists(verdict_path)) {
        verdicts = load_verdicts_jsonl(verdict_path);
        for (const auto& verdict : verdicts) done.insert(verdict.item_id);
    }

    // Deterministic processing order keyed by item id.
    std::vector<const EvalItem*> order;
    for (const auto& item : items) order.push_back(&item);
    std::sort(order.begin(), order.end(),
              [](const EvalItem* a, const EvalItem* b) { return a->id < b->id; });

    RunEvalResult result;
    if (items.empty()) {
        std::ofstream report_json(out_dir / "report.json", std::ios::binary);
        report_json << report_to_json(result.report).dump(2) << "\n";
        std::ofstream report_txt(out_dir / "report.txt", std::ios::binary);
        report_txt << render_report_table(result.report);
        return result;
    }
    for (const EvalItem* item : order) {
        if (done.count(item->id)) {
            ++result.resumed;
            continue;
        }
        try {
            const std::string prompt = render_prompt(options.prompt_template, *item);
            const gen::GenerationConfig gen_config = item->task_type == TaskType::creative_writing
                                                         ? options.generation.creative()
                                                         : options.generation;
            const gen::GenerationResult generation =
                gen::generate(weights, tokenizer, prompt, gen_config);
            ++result.generated;
            const std::string response = generation.text.empty() ? "(empty)" : generation.text;
            JudgeVerdict verdict = judge(client, *item, response, options.judge_options);
            verdicts.push_back(verdict);
            append_verdict_jsonl(verdict, verdict_path);
        } catch (const Error& e) {
            ++result.failed;
            JudgeVerdict verdict;
            verdict.item_id = item->id;
            verdict.raw_reply = std::string("error: ") + e.what();
            verdicts.push_back(verdict);
            append_verdict_jsonl(verdict, verdict_path);
        }
    }

    result.report = aggregate(verdicts, items);
    std::ofstream report_json(out_dir / "report.json", std::ios::binary);
    report_json << report_to_json(result.report).dump(2) << "\n";
    std::ofstream report_txt(out_dir / "report.txt", std::ios::binary);
    report_txt << render_report_table(result.report);
    return result;
}

namespace {

std::string normalize_instruction(const std::string& instruction) {
    NormalizationPolicy policy;
    std::string normalized = normalize_text(instruction, policy);
    std::transform(normalized.begin(), normalized.end(), normalized.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    return normalized;
}

}  // namespace

SelfInstructResult self_instruct_generate(ChatClient& client,
                                          const std::vector<std::string>& seed_documents,
                                          std::size_t n, int max_attempts) {
    SelfInstructResult result;
    if (n == 0) return result;
    if (seed_documents.empty()) throw ConfigError("self-instruct: no seed documents");

    std::set<std::string> seen;
    std::size_t attempt_budget = n * static_cast<std::size_t>(max_attempts);
    std::size_t request = 0;
    while (result.items.size() < n && attempt_budget > 0) {
        --attempt_budget;
        const std::string& seed = seed_documents[request % seed_documents.size()];
        ++request;
        std::vector<ChatMessage> messages;
        messages.push_back(
            {"system",
             "You write one new instruction-following task grounded in the given document. Reply "
             "with a single JSON object with keys: task_type (one of question-answering, "
             "open-ended-qa, reasoning, literature, entertainment, creative-writing, translation, "
             "coding, ethics, other), instruction (string), and optionally input (string). No "
             "other text."});
        messages.push_back({"user", "Document:\n" + seed});
        std::string reply;
        try {
            reply = client.complete(messages);
        } catch (const ServiceError&) {
            ++result.failures;
            continue;
        }
        nlohmann::json parsed;
        try {
            parsed = nlohmann::json::parse(reply);
        } catch (const nlohmann::json::parse_error&) {
            ++result.failures;
            continue;
        }
        if (!parsed.is_object() || !parsed.contains("instruction") ||
            !parsed["instruction"].is_string()) {
            ++result.failures;
            continue;
        }
        EvalItem item;
        item.instruction = parsed["instruction"].get<std::string>();
        if (item.instruction.empty()) {
            ++result.failures;
            continue;
        }
        try {
            item.task_type = parsed.contains("task_type")
                                 ? task_type_from_string(parsed["task_type"].get<std::string>())
                                 : TaskType::other;
        } catch (const Error&) {
            item.task_type = TaskType::other;
        }
        if (parsed.contains("input") && parsed["input"].is_string() &&
            !parsed["input"].get<std::string>().empty()) {
            item.input = parsed["input"].get<std::string>();
        }
        if (!seen.insert(normalize_instruction(item.instruction)).second) {
            ++result.duplicates_dropped;
            continue;
        }
        item.id = "si-" + std::to_string(result.items.size());
        result.items.push_back(std::move(item));
    }
    return result;
}

}  // namespace lmforge::eval
