#pragma once

// Shared helpers for the test binaries: seeded generators, temp files and a
// fake chat-completions server.

#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "epm/http_backend.hpp"
#include "epm/rng.hpp"
#include "epm/types.hpp"

namespace epm::testing {

inline std::string random_word(rng_t& rng, std::size_t min_len = 1, std::size_t max_len = 6)
{
    static const std::string alphabet = "abcdefghijklmnopqrstuvwxyz0123456789";
    std::string w(min_len + uniform_index(rng, max_len - min_len + 1), 'a');
    for (auto& c : w) c = alphabet[uniform_index(rng, alphabet.size())];
    return w;
}

// Words from a small vocabulary so documents overlap and ties happen.
inline std::string random_text(rng_t& rng, const std::vector<std::string>& vocab, std::size_t min_words,
                               std::size_t max_words)
{
    static const std::vector<std::string> seps{" ", ", ", " - ", "/", "  "};
    std::string out;
    const auto n = min_words + uniform_index(rng, max_words - min_words + 1);
    for (std::size_t i = 0; i < n; ++i) {
        if (i > 0) out += pick(seps, rng);
        auto w = pick(vocab, rng);
        if (uniform_index(rng, 4) == 0 && !w.empty()) w[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(w[0])));
        out += w;
    }
    return out;
}

inline std::vector<std::string> random_vocab(rng_t& rng, std::size_t n)
{
    std::vector<std::string> v;
    for (std::size_t i = 0; i < n; ++i) v.push_back(random_word(rng, 2, 6));
    return v;
}

class TempDir {
  public:
    TempDir()
    {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("epm-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir()
    {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    std::filesystem::path file(const std::string& name, const std::string& content) const
    {
        auto p = path_ / name;
        std::ofstream(p, std::ios::binary) << content;
        return p;
    }
    const std::filesystem::path& path() const { return path_; }

  private:
    std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Local OpenAI-style endpoint. `handler` maps the user message to
/// (status, reply content); the request log keeps every raw body and the
/// Authorization header.
class FakeChatServer {
  public:
    using Handler = std::function<std::pair<int, std::string>(const std::string& prompt)>;

    explicit FakeChatServer(Handler handler) : handler_(std::move(handler))
    {
        server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
            auto body = json::parse(req.body);
            {
                std::lock_guard lock(mu_);
                bodies_.push_back(body);
                auth_.push_back(req.get_header_value("Authorization"));
            }
            auto [status, content] = handler_(body.at("messages").at(0).at("content").get<std::string>());
            res.status = status;
            json reply{{"choices", json::array({{{"message", {{"role", "assistant"}, {"content", content}}}}})}};
            res.set_content(status == 200 ? reply.dump() : std::string("{\"error\":\"fake\"}"), "application/json");
        });
        server_.Get("/", [](const httplib::Request&, httplib::Response& res) { res.set_content("ok", "text/plain"); });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~FakeChatServer()
    {
        server_.stop();
        thread_.join();
    }

    std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1/chat/completions"; }
    std::vector<json> bodies() const
    {
        std::lock_guard lock(mu_);
        return bodies_;
    }
    std::vector<std::string> auth_headers() const
    {
        std::lock_guard lock(mu_);
        return auth_;
    }

  private:
    Handler handler_;
    httplib::Server server_;
    int port_ = 0;
    std::thread thread_;
    mutable std::mutex mu_;
    std::vector<json> bodies_;
    std::vector<std::string> auth_;
};

}  // namespace epm::testing
