#pragma once

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "epm/types.hpp"

namespace epm::backend {

/// Decoding parameters for one chat call.
struct Decoding {
    double temperature = 0.7;
    double top_p = 0.95;
    int max_output_tokens = 1024;
};

/// Connection settings for a chat-completion style endpoint.
struct ChatBackend {
    std::string endpoint;  // e.g. http://localhost:8000/v1/chat/completions
    std::string model_name;
    double temperature = 0.7;
    double top_p = 0.95;
    int max_output_tokens = 1024;
    double timeout_seconds = 60.0;
    int max_retries = 3;
    int backoff_ms = 250;
    std::string api_key_env = "EPM_API_KEY";
    int in_flight_cap = 4;

    Decoding decoding() const { return {temperature, top_p, max_output_tokens}; }

    void validate() const
    {
        if (!(top_p >= 0.0 && top_p <= 1.0)) throw validation_error("top_p must be in [0, 1]");
        if (!(temperature >= 0.0)) throw validation_error("temperature must be nonnegative");
        if (max_output_tokens < 1) throw validation_error("max_output_tokens must be positive");
        if (max_retries < 0) throw validation_error("max_retries must be nonnegative");
        if (in_flight_cap < 1) throw validation_error("in_flight_cap must be at least 1");
    }
};

inline ChatBackend backend_from_json(const json& j)
{
    ChatBackend b;
    b.endpoint = j.value("endpoint", b.endpoint);
    b.model_name = j.value("model_name", b.model_name);
    b.temperature = j.value("temperature", b.temperature);
    b.top_p = j.value("top_p", b.top_p);
    b.max_output_tokens = j.value("max_output_tokens", b.max_output_tokens);
    b.timeout_seconds = j.value("timeout_seconds", b.timeout_seconds);
    b.max_retries = j.value("max_retries", b.max_retries);
    b.backoff_ms = j.value("backoff_ms", b.backoff_ms);
    b.api_key_env = j.value("api_key_env", b.api_key_env);
    b.in_flight_cap = j.value("in_flight_cap", b.in_flight_cap);
    b.validate();
    return b;
}

inline json to_json(const ChatBackend& b)
{
    return {{"endpoint", b.endpoint},       {"model_name", b.model_name},
            {"temperature", b.temperature}, {"top_p", b.top_p},
            {"max_output_tokens", b.max_output_tokens}, {"timeout_seconds", b.timeout_seconds},
            {"max_retries", b.max_retries}, {"backoff_ms", b.backoff_ms},
            {"api_key_env", b.api_key_env}, {"in_flight_cap", b.in_flight_cap}};
}

/// Anything that turns a single user message into a plain-text reply.
/// Implementations must be safe to call from several threads.
class ChatClient {
  public:
    virtual ~ChatClient() = default;
    virtual std::string complete(const std::string& prompt, const Decoding& decoding) = 0;
    /// Number of completed or attempted calls, for tests and reports.
    virtual std::size_t call_count() const = 0;
    /// Empty when the backend answers; otherwise a reason.
    virtual std::optional<std::string> probe() { return std::nullopt; }
    /// Parallelism the caller may use against this client.
    virtual int in_flight_cap() const { return 1; }
};

inline std::string prompt_hash(std::string_view prompt) { return text::hex64(text::fnv1a(prompt)); }

/// Offline backend: replies come from a table keyed by prompt hash, then
/// from an optional responder function, then from a fixed default.
class ScriptedBackend final : public ChatClient {
  public:
    using Responder = std::function<std::optional<std::string>(const std::string& prompt)>;

    ScriptedBackend() = default;
    explicit ScriptedBackend(Responder responder, int in_flight = 4)
        : responder_(std::move(responder)), in_flight_(in_flight)
    {}

    /// Replies consumed in order for a given prompt; the last one repeats.
    void script(const std::string& prompt, std::vector<std::string> replies)
    {
        std::lock_guard lock(mu_);
        table_[prompt_hash(prompt)] = {std::move(replies), 0};
    }
    void script_hash(const std::string& hash, std::vector<std::string> replies)
    {
        std::lock_guard lock(mu_);
        table_[hash] = {std::move(replies), 0};
    }
    void set_default(std::string reply) { default_ = std::move(reply); }

    std::string complete(const std::string& prompt, const Decoding& decoding) override
    {
        ++calls_;
        {
            std::lock_guard lock(mu_);
            prompts_.push_back(prompt);
            decodings_.push_back(decoding);
            auto it = table_.find(prompt_hash(prompt));
            if (it != table_.end()) {
                auto& [replies, next] = it->second;
                if (!replies.empty()) {
                    const auto& r = replies[std::min(next, replies.size() - 1)];
                    ++next;
                    return r;
                }
            }
        }
        if (responder_) {
            if (auto r = responder_(prompt)) return *r;
        }
        if (default_) return *default_;
        throw transport_error("scripted backend has no reply for prompt " + prompt_hash(prompt));
    }

    std::size_t call_count() const override { return calls_.load(); }
    int in_flight_cap() const override { return in_flight_; }

    std::vector<std::string> prompts() const
    {
        std::lock_guard lock(mu_);
        return prompts_;
    }
    std::vector<Decoding> decodings() const
    {
        std::lock_guard lock(mu_);
        return decodings_;
    }

  private:
    mutable std::mutex mu_;
    std::map<std::string, std::pair<std::vector<std::string>, std::size_t>> table_;
    std::vector<std::string> prompts_;
    std::vector<Decoding> decodings_;
    Responder responder_;
    std::optional<std::string> default_;
    std::atomic<std::size_t> calls_{0};
    int in_flight_ = 4;
};

}  // namespace epm::backend
