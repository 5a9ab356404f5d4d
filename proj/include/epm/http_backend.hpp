#pragma once

#include <condition_variable>
#include <cstdlib>
#include <mutex>

#include <httplib.h>
// resolv.h defines _res as a macro, which breaks Eigen parameter names.
#ifdef _res
#undef _res
#endif

#include "epm/backend.hpp"

namespace epm::backend {

/// Blocking counter that bounds concurrent calls.
class SlotLimiter {
  public:
    explicit SlotLimiter(int slots) : free_(slots) {}

    void acquire()
    {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return free_ > 0; });
        --free_;
    }
    void release()
    {
        {
            std::lock_guard lock(mu_);
            ++free_;
        }
        cv_.notify_one();
    }

  private:
    std::mutex mu_;
    std::condition_variable cv_;
    int free_;
};

struct Url {
    std::string scheme_host_port;
    std::string path;
};

inline Url split_url(const std::string& url)
{
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw validation_error("endpoint must start with http:// or https://");
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

/// OpenAI-compatible chat completions over HTTP. Transport errors, 429 and
/// 5xx responses are retried with exponential backoff up to max_retries.
class HttpChatClient final : public ChatClient {
  public:
    explicit HttpChatClient(ChatBackend config) : config_(std::move(config)), limiter_(config_.in_flight_cap)
    {
        config_.validate();
        url_ = split_url(config_.endpoint);
    }

    std::string complete(const std::string& prompt, const Decoding& decoding) override
    {
        json body{{"model", config_.model_name},
                  {"messages", json::array({{{"role", "user"}, {"content", prompt}}})},
                  {"temperature", decoding.temperature},
                  {"top_p", decoding.top_p},
                  {"max_tokens", decoding.max_output_tokens}};
        const std::string payload = body.dump();

        limiter_.acquire();
        struct release_on_exit {
            SlotLimiter& l;
            ~release_on_exit() { l.release(); }
        } guard{limiter_};

        std::string last_error;
        for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
            if (attempt > 0)
                std::this_thread::sleep_for(std::chrono::milliseconds(config_.backoff_ms << (attempt - 1)));
            ++calls_;
            auto cli = make_client();
            auto res = cli.Post(url_.path, headers(), payload, "application/json");
            if (!res) {
                last_error = "transport error: " + httplib::to_string(res.error());
                continue;
            }
            if (res->status == 429 || res->status >= 500) {
                last_error = "HTTP " + std::to_string(res->status);
                continue;
            }
            if (res->status != 200)
                throw transport_error("backend returned HTTP " + std::to_string(res->status) + ": " + res->body);
            try {
                auto j = json::parse(res->body);
                return j.at("choices").at(0).at("message").at("content").get<std::string>();
            } catch (const json::exception& e) {
                throw transport_error(std::string("malformed backend response: ") + e.what());
            }
        }
        throw transport_error("backend unavailable after " + std::to_string(config_.max_retries + 1) +
                              " attempts: " + last_error);
    }

    std::size_t call_count() const override { return calls_.load(); }
    int in_flight_cap() const override { return config_.in_flight_cap; }

    std::optional<std::string> probe() override
    {
        auto cli = make_client();
        cli.set_connection_timeout(std::chrono::seconds(2));
        auto res = cli.Get("/");
        if (!res) return "cannot reach " + url_.scheme_host_port + ": " + httplib::to_string(res.error());
        return std::nullopt;
    }

    const ChatBackend& config() const { return config_; }

  private:
    httplib::Client make_client() const
    {
        httplib::Client cli(url_.scheme_host_port);
        const auto timeout = std::chrono::milliseconds(static_cast<long long>(config_.timeout_seconds * 1000.0));
        cli.set_connection_timeout(timeout);
        cli.set_read_timeout(timeout);
        cli.set_write_timeout(timeout);
        cli.set_tcp_nodelay(true);
        return cli;
    }

    httplib::Headers headers() const
    {
        httplib::Headers h;
        if (!config_.api_key_env.empty()) {
            if (const char* key = std::getenv(config_.api_key_env.c_str()); key != nullptr && *key != '\0')
                h.emplace("Authorization", std::string("Bearer ") + key);
        }
        return h;
    }

    ChatBackend config_;
    Url url_;
    SlotLimiter limiter_;
    std::atomic<std::size_t> calls_{0};
};

}  // namespace epm::backend
