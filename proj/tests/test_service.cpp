#include <gtest/gtest.h>

#include <condition_variable>
#include <future>

#include "epm/service.hpp"
#include "support.hpp"

using namespace epm;
using namespace epm::service;

namespace {

json sample_request()
{
    return {{"items",
             {{{"pair", {{"base_title", "Volt Power Bank 10000mAh, Gray"}, {"compared_title", "Volt Power Bank 10000mAh Gray Imported"}, {"brand", "Volt"}}},
               {"gold", 1},
               {"rollouts",
                {"<reason>same \"10000mAh\" and \"Gray\"</reason><label>1</label>", "<label>0</label>", "oops"}}}}}};
}

// Judge that blocks until opened; counts how many calls are parked.
class Gate {
  public:
    judges::JudgeProvider provider()
    {
        return [this](judges::JudgeKind kind, const ProductPair&, const std::string&) {
            std::unique_lock lock(mu_);
            ++waiting_;
            cv_.notify_all();
            cv_.wait(lock, [&] { return open_; });
            return judges::JudgeScore{kind, 0.5, "", false};
        };
    }
    void wait_for(int n)
    {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return waiting_ >= n; });
    }
    void open()
    {
        std::lock_guard lock(mu_);
        open_ = true;
        cv_.notify_all();
    }

  private:
    std::mutex mu_;
    std::condition_variable cv_;
    int waiting_ = 0;
    bool open_ = false;
};

}  // namespace

TEST(Config, DefaultsAndParsing)
{
    const auto c = config_from_json(json::object());
    EXPECT_EQ(c.listen_address, "127.0.0.1:8080");
    EXPECT_TRUE(c.mock_mode);
    EXPECT_EQ(c.concurrency_cap, 4);
    EXPECT_EQ(c.host_port(), (std::pair<std::string, int>{"127.0.0.1", 8080}));

    const auto d = config_from_json({{"weights", {{"format", 0.5}}},
                                     {"concurrency_cap", 2},
                                     {"presets", {{"rl", {{"clip", 0.2}}}}},
                                     {"mock_mode", false},
                                     {"judge_backend", {{"endpoint", "http://127.0.0.1:9/v1/chat/completions"}}}});
    EXPECT_EQ(d.weights.format, 0.5);
    EXPECT_EQ(d.rl_preset.clip, 0.2);
    EXPECT_EQ(d.rl_preset.rollouts_per_input, 4);
    ASSERT_TRUE(d.judge_backend.has_value());
}

TEST(Config, Rejections)
{
    EXPECT_THROW(config_from_json({{"listen", "x"}}), validation_error);
    EXPECT_THROW(config_from_json({{"concurrency_cap", 0}}), validation_error);
    EXPECT_THROW(config_from_json({{"mock_mode", false}}), validation_error);
    EXPECT_THROW(config_from_json({{"weights", {{"judge", -1}}}}), validation_error);
    epm::testing::TempDir dir;
    EXPECT_THROW(load_config(dir.file("c.json", "{ nope")), validation_error);
    EXPECT_THROW(load_config(dir.path() / "missing.json"), validation_error);
    const auto ok = load_config(dir.file("ok.json", "{\n // comment\n \"concurrency_cap\": 3\n}"));
    EXPECT_EQ(ok.concurrency_cap, 3);
}

TEST(Request, MatchesInProcessScoring)
{
    ScoringService svc(ServiceConfig{});
    const auto req = sample_request();
    const auto r = svc.handle_score_request(req.dump());
    ASSERT_EQ(r.status, 200) << r.body.dump();

    auto [items, weights] = parse_score_request(req, {});
    const auto direct = score_response(pipelines::score_rollout_batch(items, judges::mock_judge_provider(), weights));
    EXPECT_EQ(r.body.dump(), direct.dump());
    const auto& item = r.body.at("items").at(0);
    EXPECT_EQ(item.at("rewards").size(), 3u);
    EXPECT_EQ(item.at("advantages").size(), 3u);
    EXPECT_EQ(item.at("breakdowns").at(0).at("s_fmt"), 1);
}

TEST(Request, WeightOverride)
{
    ScoringService svc(ServiceConfig{});
    auto req = sample_request();
    req["weights"] = {{"format", 0}, {"correctness", 1}, {"judge", 0}};
    const auto r = svc.handle_score_request(req.dump());
    ASSERT_EQ(r.status, 200);
    EXPECT_EQ(r.body.at("items").at(0).at("rewards"), (json{1.0, 0.0, 0.0}));
}

TEST(Request, SchemaViolationsAre400)
{
    ScoringService svc(ServiceConfig{});
    const std::vector<std::string> bad{
        "not json",
        "[]",
        "{}",
        R"({"items": []})",
        R"({"items": [{"gold": 1, "rollouts": ["x"]}]})",
        R"({"items": [{"pair": {"base_title": "a"}, "gold": 1, "rollouts": ["x"]}]})",
        R"({"items": [{"pair": {"base_title": "a", "compared_title": "b"}, "gold": 2, "rollouts": ["x"]}]})",
        R"({"items": [{"pair": {"base_title": "a", "compared_title": "b"}, "gold": "1", "rollouts": ["x"]}]})",
        R"({"items": [{"pair": {"base_title": "a", "compared_title": "b"}, "gold": 1, "rollouts": []}]})",
        R"({"items": [{"pair": {"base_title": "a", "compared_title": "b"}, "gold": 1, "rollouts": [3]}]})",
        R"({"items": [{"pair": {"base_title": "a", "compared_title": "b"}, "gold": 1, "rollouts": ["x"]}], "weights": {"judge": -1}})",
        R"({"items": [{"pair": {"base_title": "a", "compared_title": "b"}, "gold": 1, "rollouts": ["x"]}], "weights": {"judge": "1"}})",
    };
    for (const auto& body : bad) {
        const auto r = svc.handle_score_request(body);
        EXPECT_EQ(r.status, 400) << body;
        EXPECT_TRUE(r.body.contains("error")) << body;
    }
    EXPECT_EQ(svc.in_flight(), 0);
}

TEST(Request, JudgeFailureIs502)
{
    ScoringService svc(ServiceConfig{}, judges::JudgeProvider([](judges::JudgeKind, const ProductPair&,
                                                                 const std::string&) -> judges::JudgeScore {
                           throw transport_error("judge offline");
                       }));
    const auto r = svc.handle_score_request(sample_request().dump());
    EXPECT_EQ(r.status, 502);
    EXPECT_NE(r.body.at("error").get<std::string>().find("judge offline"), std::string::npos);
}

TEST(Request, CapacityCapReturns503)
{
    ServiceConfig cfg;
    cfg.concurrency_cap = 2;
    Gate gate;
    ScoringService svc(cfg, gate.provider());
    const auto body = sample_request().dump();
    auto a = std::async(std::launch::async, [&] { return svc.handle_score_request(body); });
    auto b = std::async(std::launch::async, [&] { return svc.handle_score_request(body); });
    gate.wait_for(2);
    EXPECT_EQ(svc.in_flight(), 2);
    EXPECT_EQ(svc.handle_score_request(body).status, 503);
    EXPECT_EQ(svc.health().at("in_flight"), 2);
    gate.open();
    EXPECT_EQ(a.get().status, 200);
    EXPECT_EQ(b.get().status, 200);
    EXPECT_EQ(svc.in_flight(), 0);
    EXPECT_EQ(svc.handle_score_request(body).status, 200);
}

TEST(Health, MockAndUnreachableBackend)
{
    ScoringService mock(ServiceConfig{});
    const auto h = mock.health();
    EXPECT_EQ(h.at("healthy"), true);
    EXPECT_EQ(h.at("mock"), true);
    EXPECT_EQ(h.at("version"), std::string(version));

    ServiceConfig live;
    live.mock_mode = false;
    backend::ChatBackend b;
    b.endpoint = "http://127.0.0.1:1/v1/chat/completions";
    live.judge_backend = b;
    ScoringService svc(live);
    const auto bad = svc.health();
    EXPECT_EQ(bad.at("healthy"), false);
    EXPECT_TRUE(bad.contains("reason"));
    // Scoring against the dead backend reports 502, not a crash.
    b.max_retries = 0;
    live.judge_backend = b;
    ScoringService svc2(live);
    EXPECT_EQ(svc2.handle_score_request(sample_request().dump()).status, 502);
}

TEST(Http, EndpointsOverLoopback)
{
    ScoringService svc(ServiceConfig{});
    Server server(svc);
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread th([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    httplib::Client cli("127.0.0.1", port);
    const auto health = cli.Get("/v1/health");
    ASSERT_TRUE(health);
    EXPECT_EQ(health->status, 200);
    EXPECT_EQ(json::parse(health->body).at("healthy"), true);

    const auto req = sample_request().dump();
    const auto scored = cli.Post("/v1/score", req, "application/json");
    ASSERT_TRUE(scored);
    EXPECT_EQ(scored->status, 200);
    EXPECT_EQ(scored->body, svc.handle_score_request(req).body.dump());

    const auto bad = cli.Post("/v1/score", "{", "application/json");
    ASSERT_TRUE(bad);
    EXPECT_EQ(bad->status, 400);
    const auto missing = cli.Get("/v2/nothing");
    ASSERT_TRUE(missing);
    EXPECT_EQ(missing->status, 404);

    server.stop();
    th.join();
}

TEST(Http, LiveJudgeBackendThroughService)
{
    epm::testing::FakeChatServer judge([](const std::string&) { return std::pair{200, std::string("0.6")}; });
    ServiceConfig cfg;
    cfg.mock_mode = false;
    backend::ChatBackend b;
    b.endpoint = judge.endpoint();
    cfg.judge_backend = b;
    ScoringService svc(cfg);
    const auto r = svc.handle_score_request(sample_request().dump());
    ASSERT_EQ(r.status, 200) << r.body.dump();
    EXPECT_NEAR(r.body.at("items").at(0).at("breakdowns").at(0).at("s_judge").get<double>(), 0.6, 1e-15);
    // Two rollouts have no reasoning, so only the first one reaches the judge.
    EXPECT_EQ(judge.bodies().size(), 3u);
    for (const auto& body : judge.bodies()) EXPECT_EQ(body.at("temperature"), 0.0);
    EXPECT_EQ(svc.health().at("healthy"), true);
}
