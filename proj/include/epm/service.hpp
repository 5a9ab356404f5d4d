#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <set>
#include <string>

#include <httplib.h>

#include "epm/http_backend.hpp"
#include "epm/pipelines.hpp"
#include "epm/version.hpp"

namespace epm::service {

struct ServiceConfig {
    std::string listen_address = "127.0.0.1:8080";
    std::optional<backend::ChatBackend> judge_backend;
    reward::RewardWeights weights;
    int concurrency_cap = 4;
    double request_timeout_seconds = 30.0;
    bool mock_mode = true;
    optim::PeftPreset peft_preset;
    optim::RlPreset rl_preset;

    void validate() const
    {
        if (concurrency_cap < 1) throw validation_error("concurrency_cap must be at least 1");
        if (!(request_timeout_seconds > 0.0)) throw validation_error("request_timeout_seconds must be positive");
        weights.validate();
        if (!mock_mode && !judge_backend) throw validation_error("judge_backend is required unless mock_mode is set");
        if (judge_backend) judge_backend->validate();
    }

    std::pair<std::string, int> host_port() const
    {
        const auto colon = listen_address.rfind(':');
        if (colon == std::string::npos) throw validation_error("listen_address must be host:port");
        return {listen_address.substr(0, colon), std::stoi(listen_address.substr(colon + 1))};
    }
};

inline ServiceConfig config_from_json(const json& j)
{
    static const std::set<std::string> known{"listen_address", "judge_backend", "weights",  "concurrency_cap",
                                             "request_timeout_seconds", "mock_mode", "presets"};
    for (const auto& [key, value] : j.items())
        if (known.count(key) == 0) throw validation_error("unknown config key " + key);
    ServiceConfig c;
    c.listen_address = j.value("listen_address", c.listen_address);
    if (j.contains("judge_backend") && !j.at("judge_backend").is_null())
        c.judge_backend = backend::backend_from_json(j.at("judge_backend"));
    if (j.contains("weights")) c.weights = reward::weights_from_json(j.at("weights"));
    c.concurrency_cap = j.value("concurrency_cap", c.concurrency_cap);
    c.request_timeout_seconds = j.value("request_timeout_seconds", c.request_timeout_seconds);
    c.mock_mode = j.value("mock_mode", c.mock_mode);
    if (auto p = j.find("presets"); p != j.end()) {
        if (auto peft = p->find("peft"); peft != p->end()) {
            auto& x = c.peft_preset;
            x.learning_rate = peft->value("learning_rate", x.learning_rate);
            x.batch_size = peft->value("batch_size", x.batch_size);
            x.lora_rank = peft->value("lora_rank", x.lora_rank);
            x.lora_alpha = peft->value("lora_alpha", x.lora_alpha);
            x.epochs = peft->value("epochs", x.epochs);
        }
        if (auto rl = p->find("rl"); rl != p->end()) {
            auto& x = c.rl_preset;
            x.learning_rate = rl->value("learning_rate", x.learning_rate);
            x.batch_size = rl->value("batch_size", x.batch_size);
            x.rollouts_per_input = rl->value("rollouts_per_input", x.rollouts_per_input);
            x.clip = rl->value("clip", x.clip);
            x.dropout = rl->value("dropout", x.dropout);
            x.epochs = rl->value("epochs", x.epochs);
        }
    }
    c.validate();
    return c;
}

inline ServiceConfig load_config(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw validation_error("cannot open config " + path.string());
    try {
        return config_from_json(json::parse(in, nullptr, true, true));
    } catch (const json::exception& e) {
        throw validation_error(std::string("malformed config: ") + e.what());
    }
}

struct Response {
    int status = 200;
    json body;
};

namespace detail {

inline const json& require(const json& obj, const char* key, const std::string& where)
{
    auto it = obj.find(key);
    if (it == obj.end()) throw validation_error(where + ": missing \"" + key + "\"");
    return *it;
}

}  // namespace detail

/// Parses a score request body into rollout items and weights.
///   {"items": [{"pair": {"base_title", "compared_title", "brand"?}, "gold": 0|1,
///               "rollouts": ["...", ...]}, ...],
///    "weights": {"format", "correctness", "judge"}?}
inline std::pair<std::vector<pipelines::RolloutItem>, reward::RewardWeights>
parse_score_request(const json& body, const reward::RewardWeights& defaults)
{
    if (!body.is_object()) throw validation_error("request body must be a JSON object");
    const auto& items = detail::require(body, "items", "request");
    if (!items.is_array() || items.empty()) throw validation_error("\"items\" must be a non-empty array");
    std::vector<pipelines::RolloutItem> out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        const auto where = "items[" + std::to_string(i) + "]";
        const auto& it = items[i];
        if (!it.is_object()) throw validation_error(where + " must be an object");
        const auto& pair = detail::require(it, "pair", where);
        if (!pair.is_object()) throw validation_error(where + ".pair must be an object");
        const auto& base = detail::require(pair, "base_title", where + ".pair");
        const auto& cmp = detail::require(pair, "compared_title", where + ".pair");
        if (!base.is_string() || !cmp.is_string()) throw validation_error(where + ".pair titles must be strings");
        std::optional<std::string> brand;
        if (auto b = pair.find("brand"); b != pair.end() && b->is_string()) brand = b->get<std::string>();
        const auto& gold = detail::require(it, "gold", where);
        if (!gold.is_number_integer() || (gold.get<long long>() != 0 && gold.get<long long>() != 1))
            throw validation_error(where + ".gold must be 0 or 1");
        const auto& rollouts = detail::require(it, "rollouts", where);
        if (!rollouts.is_array() || rollouts.empty()) throw validation_error(where + ".rollouts must be a non-empty array");
        pipelines::RolloutItem item{make_pair(base.get<std::string>(), cmp.get<std::string>(), brand),
                                    static_cast<int>(gold.get<long long>()), {}};
        for (const auto& r : rollouts) {
            if (!r.is_string()) throw validation_error(where + ".rollouts must contain strings");
            item.rollouts.push_back(r.get<std::string>());
        }
        out.push_back(std::move(item));
    }
    auto weights = defaults;
    if (auto w = body.find("weights"); w != body.end()) {
        if (!w->is_object()) throw validation_error("\"weights\" must be an object");
        for (const char* key : {"format", "correctness", "judge"})
            if (w->contains(key) && !w->at(key).is_number()) throw validation_error(std::string("weights.") + key + " must be a number");
        weights = reward::weights_from_json(*w);
    }
    return {std::move(out), weights};
}

inline json score_response(const std::vector<pipelines::ScoredGroup>& groups)
{
    json items = json::array();
    for (const auto& g : groups) {
        json breakdowns = json::array();
        for (const auto& b : g.breakdowns) breakdowns.push_back(reward::to_json(b));
        items.push_back({{"rewards", g.group.rewards}, {"advantages", *g.group.advantages}, {"breakdowns", breakdowns}});
    }
    return {{"items", std::move(items)}};
}

/// Reward engine behind the HTTP endpoints. Shared state is immutable after
/// construction apart from the in-flight counter.
class ScoringService {
  public:
    explicit ScoringService(ServiceConfig config, std::optional<judges::JudgeProvider> judge_override = std::nullopt)
        : config_(std::move(config))
    {
        config_.validate();
        if (judge_override) {
            judge_ = std::move(*judge_override);
        } else if (config_.mock_mode) {
            judge_ = judges::mock_judge_provider();
        } else {
            client_ = std::make_unique<backend::HttpChatClient>(*config_.judge_backend);
            judge_ = judges::backend_judge_provider(*client_, *config_.judge_backend);
        }
    }

    const ServiceConfig& config() const { return config_; }
    int in_flight() const { return in_flight_.load(); }

    /// POST /v1/score. 400 on schema violations, 502 when a judge backend
    /// fails, 503 when `concurrency_cap` requests are already running.
    Response handle_score_request(const std::string& body)
    {
        if (++in_flight_ > config_.concurrency_cap) {
            --in_flight_;
            return {503, {{"error", "over capacity"}}};
        }
        struct leave {
            std::atomic<int>& n;
            ~leave() { --n; }
        } guard{in_flight_};

        json request;
        try {
            request = json::parse(body);
        } catch (const json::exception& e) {
            return {400, {{"error", std::string("malformed JSON: ") + e.what()}}};
        }
        std::vector<pipelines::RolloutItem> items;
        reward::RewardWeights weights;
        try {
            std::tie(items, weights) = parse_score_request(request, config_.weights);
        } catch (const validation_error& e) {
            return {400, {{"error", e.what()}}};
        }
        try {
            const int workers = client_ ? client_->in_flight_cap() : 1;
            return {200, score_response(pipelines::score_rollout_batch(items, judge_, weights, workers))};
        } catch (const validation_error& e) {
            return {400, {{"error", e.what()}}};
        } catch (const std::exception& e) {
            return {502, {{"error", std::string("judge backend failure: ") + e.what()}}};
        }
    }

    /// GET /v1/health. Side-effect free.
    json health() const
    {
        json h{{"version", version}, {"mock", config_.mock_mode}, {"healthy", true}, {"in_flight", in_flight()},
               {"concurrency_cap", config_.concurrency_cap}};
        if (client_) {
            if (auto reason = client_->probe()) {
                h["healthy"] = false;
                h["reason"] = *reason;
            }
        }
        return h;
    }

  private:
    ServiceConfig config_;
    std::unique_ptr<backend::HttpChatClient> client_;
    judges::JudgeProvider judge_;
    std::atomic<int> in_flight_{0};
};

/// HTTP front end for a ScoringService.
class Server {
  public:
    explicit Server(ScoringService& service) : service_(service)
    {
        const int cap = service_.config().concurrency_cap;
        // Enough workers to answer excess requests with 503 instead of queueing them.
        server_.new_task_queue = [cap] { return new httplib::ThreadPool(static_cast<std::size_t>(cap) + 8); };
        const auto timeout = std::chrono::milliseconds(
            static_cast<long long>(service_.config().request_timeout_seconds * 1000.0));
        server_.set_read_timeout(timeout);
        server_.set_write_timeout(timeout);
        server_.set_tcp_nodelay(true);

        server_.Post("/v1/score", [this](const httplib::Request& req, httplib::Response& res) {
            auto r = service_.handle_score_request(req.body);
            res.status = r.status;
            res.set_content(r.body.dump(), "application/json");
        });
        auto health = [this](const httplib::Request&, httplib::Response& res) {
            res.set_content(service_.health().dump(), "application/json");
        };
        server_.Get("/v1/health", health);
        server_.Get("/", health);
    }

    /// Binds and serves until stop(). Port 0 picks a free port.
    bool listen(const std::string& host, int port) { return server_.listen(host, port); }

    int bind_to_any_port(const std::string& host) { return server_.bind_to_any_port(host); }
    bool listen_after_bind() { return server_.listen_after_bind(); }
    void stop() { server_.stop(); }
    void wait_until_ready() { server_.wait_until_ready(); }

  private:
    ScoringService& service_;
    httplib::Server server_;
};

}  // namespace epm::service
