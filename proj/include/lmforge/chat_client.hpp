#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace lmforge::eval {

struct ChatMessage {
    std::string role;  // system | user | assistant
    std::string content;
};

// Chat-completion abstraction behind the judge and the instruction
// generator. The HTTP client speaks the usual {messages: [{role, content}]}
// JSON shape; the replay client serves canned fixtures so no test needs a
// live service.
class ChatClient {
public:
    virtual ~ChatClient() = default;
    virtual std::string complete(const std::vector<ChatMessage>& messages) = 0;
    virtual std::string id() const = 0;
};

struct HttpClientConfig {
    std::string base_url;      // e.g. http://host:port
    std::string path = "/v1/chat/completions";
    std::string model;
    std::string auth_token;    // usually from LMFORGE_API_TOKEN
    double temperature = 0.0;
    int timeout_seconds = 60;
};

// Reads base url / model / token from LMFORGE_JUDGE_URL, LMFORGE_JUDGE_MODEL
// and LMFORGE_API_TOKEN when fields are empty.
HttpClientConfig http_config_from_env(HttpClientConfig config = {});

std::unique_ptr<ChatClient> make_http_client(const HttpClientConfig& config);

// Fixture file: JSON array of {"match": substring (optional), "reply": text}.
// A request is answered by the first unused entry whose match occurs in the
// last user message; entries without a match field answer in file order.
std::unique_ptr<ChatClient> make_replay_client(const std::filesystem::path& fixture);
std::unique_ptr<ChatClient> make_replay_client_from_replies(std::vector<std::string> replies);

}  // namespace lmforge::eval
