#include "lmforge/chat_client.hpp"

#include <cstdlib>
#include <fstream>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "lmforge/errors.hpp"

namespace lmforge::eval {

HttpClientConfig http_config_from_env(HttpClientConfig config) {
    const auto from_env = [](const char* name) -> std::string {
        const char* value = std::getenv(name);
        return value ? value : "";
    };
    if (config.base_url.empty()) config.base_url = from_env("LMFORGE_JUDGE_URL");
    if (config.model.empty()) config.model = from_env("LMFORGE_JUDGE_MODEL");
    if (config.auth_token.empty()) config.auth_token = from_env("LMFORGE_API_TOKEN");
    return config;
}

namespace {

class HttpChatClient final : public ChatClient {
public:
    explicit HttpChatClient(HttpClientConfig config) : config_(std::move(config)) {
        if (config_.base_url.empty()) {
            throw ConfigError("chat client: no base URL (set LMFORGE_JUDGE_URL)");
        }
        if (config_.model.empty()) {
            throw ConfigError("chat client: no model name (set LMFORGE_JUDGE_MODEL)");
        }
    }

    std::string complete(const std::vector<ChatMessage>& messages) override {
        nlohmann::json body = {{"model", config_.model}, {"temperature", config_.temperature}};
        nlohmann::json msgs = nlohmann::json::array();
        for (const auto& message : messages) {
            msgs.push_back({{"role", message.role}, {"content", message.content}});
        }
        body["messages"] = std::move(msgs);

        httplib::Client client(config_.base_url);
        client.set_read_timeout(config_.timeout_seconds, 0);
        client.set_connection_timeout(config_.timeout_seconds, 0);
        httplib::Headers headers;
        if (!config_.auth_token.empty()) {
            headers.emplace("Authorization", "Bearer " + config_.auth_token);
        }
        const auto response = client.Post(config_.path, headers, body.dump(), "application/json");
        if (!response) {
            throw ServiceError("chat client: transport failure against " + config_.base_url);
        }
        if (response->status != 200) {
            throw ServiceError("chat client: HTTP " + std::to_string(response->status) + ": " +
                               response->body.substr(0, 200));
        }
        try {
            const nlohmann::json parsed = nlohmann::json::parse(response->body);
            return parsed.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            throw ServiceError("chat client: malformed completion response: " +
                               std::string(e.what()));
        }
    }

    std::string id() const override { return "http:" + config_.model; }

private:
    HttpClientConfig config_;
};

class ReplayChatClient final : public ChatClient {
public:
    struct Entry {
        std::string match;  // empty -> sequential
        std::string reply;
        bool used = false;
    };

    explicit ReplayChatClient(std::vector<Entry> entries) : entries_(std::move(entries)) {}

    std::string complete(const std::vector<ChatMessage>& messages) override {
        std::string last_user;
        for (const auto& message : messages) {
            if (message.role == "user") last_user = message.content;
        }
        for (auto& entry : entries_) {
            if (entry.used || entry.match.empty()) continue;
            if (last_user.find(entry.match) != std::string::npos) {
                entry.used = true;
                return entry.reply;
            }
        }
        for (auto& entry : entries_) {
            if (entry.used || !entry.match.empty()) continue;
            entry.used = true;
            return entry.reply;
        }
        throw ServiceError("replay client: fixture exhausted");
    }

    std::string id() const override { return "replay"; }

private:
    std::vector<Entry> entries_;
};

}  // namespace

std::unique_ptr<ChatClient> make_http_client(const HttpClientConfig& config) {
    return std::make_unique<HttpChatClient>(config);
}

std::unique_ptr<ChatClient> make_replay_client(const std::filesystem::path& fixture) {
    std::ifstream in(fixture, std::ios::binary);
    if (!in) throw DataError("cannot read " + fixture.string());
    nlohmann::json parsed;
    try {
        in >> parsed;
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError("replay fixture: " + std::string(e.what()));
    }
    if (!parsed.is_array()) throw DataError("replay fixture: expected a JSON array");
    std::vector<ReplayChatClient::Entry> entries;
    for (const auto& item : parsed) {
        ReplayChatClient::Entry entry;
        entry.match = item.value("match", "");
        if (!item.contains("reply") || !item["reply"].is_string()) {
            throw DataError("replay fixture: every entry needs a string 'reply'");
        }
        entry.reply = item["reply"].get<std::string>();
        entries.push_back(std::move(entry));
    }
    return std::make_unique<ReplayChatClient>(std::move(entries));
}

std::unique_ptr<ChatClient> make_replay_client_from_replies(std::vector<std::string> replies) {
    std::vector<ReplayChatClient::Entry> entries;
    entries.reserve(replies.size());
    for (auto& reply : replies) entries.push_back({"", std::move(reply), false});
    return std::make_unique<ReplayChatClient>(std::move(entries));
}

}  // namespace lmforge::eval
