#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "lmforge/chat_client.hpp"
#include "lmforge/sampling.hpp"
#include "lmforge/tinylm.hpp"
#include "lmforge/tokenizer.hpp"

namespace lmforge::eval {

// Alpaca-style instruction template: a system line followed by one of two
// bodies, picked by whether the item carries an input.
struct PromptTemplate {
    std::string system;
    std::string body_with_input;     // must contain {instruction} and {input} once each
    std::string body_without_input;  // must contain {instruction} once

    void validate() const;
    static PromptTemplate alpaca_default();
};

void to_json(nlohmann::json& j, const PromptTemplate& t);
void from_json(const nlohmann::json& j, PromptTemplate& t);

enum class TaskType {
    question_answering,
    open_ended_qa,
    reasoning,
    literature,
    entertainment,
    creative_writing,
    translation,
    coding,
    ethics,
    other,
};

std::string_view to_string(TaskType type);
TaskType task_type_from_string(std::string_view name);
const std::vector<TaskType>& all_task_types();

struct EvalItem {
    std::string id;
    TaskType task_type = TaskType::other;
    std::string instruction;
    std::optional<std::string> input;
    std::optional<std::string> reference;
    // Items ported from datasets that ship their own system prompt override
    // the template's system line.
    std::optional<std::string> system;
};

std::string render_prompt(const PromptTemplate& tmpl, const EvalItem& item);

struct JudgeVerdict {
    std::string item_id;
    int score = -1;  // 0..10; -1 while invalid
    std::string rationale;
    std::string judge_id;
    std::optional<int> manual_override;
    bool valid = false;
    std::string raw_reply;               // audit trail
    std::string response;                // the judged model output

    int effective_score() const { return manual_override ? *manual_override : score; }
};

// Rubric sent as the system message of every judge call. Replies must carry a
// "Score: <0..10>" line; this grammar is the only accepted way to express the
// grade.
std::string default_rubric();

// Extracts the grade via the strict "Score: <int>" line grammar; returns
// false when no such line exists or the value is out of range.
bool parse_judge_score(const std::string& reply, int* score);

struct JudgeOptions {
    std::string rubric;
    int max_attempts = 3;
    int backoff_ms = 250;  // doubles per retry; transport errors only
};

JudgeVerdict judge(ChatClient& client, const EvalItem& item, const std::string& response,
                   const JudgeOptions& options);

struct TaskScore {
    TaskType task_type = TaskType::other;
    int n_items = 0;    // valid verdicts in this task
    int raw_sum = 0;    // sum of effective scores
    double normalized = 0.0;  // 100 * raw_sum / (10 * n_items)
};

struct AggregateReport {
    std::vector<TaskScore> tasks;           // only tasks with valid verdicts, enum order
    double overall_item_weighted = 0.0;     // 100 * sum(scores) / (10 * valid items)
    double overall_task_mean = 0.0;         // unweighted mean of task scores
    int valid = 0;
    int invalid = 0;
    int total = 0;
};

AggregateReport aggregate(const std::vector<JudgeVerdict>& verdicts,
                          const std::vector<EvalItem>& items);

nlohmann::json report_to_json(const AggregateReport& report);
// Aligned table with one row per task plus both overall aggregations; when
// they differ the footer says so explicitly.
std::string render_report_table(const AggregateReport& report);

// Items file: JSON Lines {id, task_type, instruction, input?, reference?,
// system?}. Verdicts: JSON Lines with the raw reply audit field.
std::vector<EvalItem> load_items_jsonl(const std::filesystem::path& path);
void save_items_jsonl(const std::vector<EvalItem>& items, const std::filesystem::path& path);
std::vector<JudgeVerdict> load_verdicts_jsonl(const std::filesystem::path& path);
void append_verdict_jsonl(const JudgeVerdict& verdict, const std::filesystem::path& path);

nlohmann::json item_to_json(const EvalItem& item);
EvalItem item_from_json(const nlohmann::json& j);
nlohmann::json verdict_to_json(const JudgeVerdict& verdict);
JudgeVerdict verdict_from_json(const nlohmann::json& j);

struct RunEvalOptions {
    PromptTemplate prompt_template = PromptTemplate::alpaca_default();
    gen::GenerationConfig generation;  // creative-writing items switch to the 0.7 preset
    JudgeOptions judge_options{default_rubric(), 3, 250};
};

struct RunEvalResult {
    AggregateReport report;
    int generated = 0;
    int resumed = 0;   // items already present in the verdict file
    int failed = 0;    // items whose generation or judging threw
};

// Generates, judges and aggregates. Verdicts append to out_dir/verdicts.jsonl
// as they land, so re-running skips finished items; one item's failure never
// aborts the batch. Writes report.json and report.txt.
RunEvalResult run_eval(const tinylm::Weights<float>& weights, const tok::TokenizerModel& tokenizer,
                       const std::vector<EvalItem>& items, ChatClient& client,
                       const std::filesystem::path& out_dir, const RunEvalOptions& options = {});

struct SelfInstructResult {
    std::vector<EvalItem> items;
    int duplicates_dropped = 0;
    int failures = 0;
};

// Asks the client for one instruction per request, seeded round-robin from
// `seed_documents`. Replies must be JSON objects {task_type?, instruction,
// input?}; duplicates collapse by normalized instruction text.
SelfInstructResult self_instruct_generate(ChatClient& client,
                                          const std::vector<std::string>& seed_documents,
                                          std::size_t n, int max_attempts = 3);

}  // namespace lmforge::eval
