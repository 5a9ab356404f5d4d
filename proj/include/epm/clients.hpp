#pragma once

#include <memory>

#include "epm/http_backend.hpp"
#include "epm/pipelines.hpp"

namespace epm::pipelines {

/// Builds a chat client from a backend config document:
///   {"type": "mock", "policy": "oracle" | "constant" | "script",
///    "reply": "1", "script": {"<prompt hash>": ["reply", ...]}, "in_flight_cap": 4}
///   {"type": "http", "endpoint": ..., "model_name": ..., ...}
/// The oracle policy answers with the gold label of every pair in `data`.
inline std::unique_ptr<backend::ChatClient> make_chat_client(const json& config, const std::vector<LabeledPair>& data)
{
    const auto type = config.value("type", std::string("http"));
    if (type == "http") return std::make_unique<backend::HttpChatClient>(backend::backend_from_json(config));
    if (type != "mock") throw validation_error("backend type must be \"http\" or \"mock\"");

    const auto policy = config.value("policy", std::string("oracle"));
    const int cap = config.value("in_flight_cap", 4);
    std::unique_ptr<backend::ScriptedBackend> mock;
    if (policy == "oracle") {
        mock = std::make_unique<backend::ScriptedBackend>(oracle_responder(data), cap);
    } else if (policy == "constant" || policy == "script") {
        mock = std::make_unique<backend::ScriptedBackend>(nullptr, cap);
        if (config.contains("reply")) mock->set_default(config.at("reply").get<std::string>());
    } else {
        throw validation_error("unknown mock policy " + policy);
    }
    if (auto it = config.find("script"); it != config.end()) {
        for (const auto& [hash, replies] : it->items())
            mock->script_hash(hash, replies.is_array() ? replies.get<std::vector<std::string>>()
                                                       : std::vector<std::string>{replies.get<std::string>()});
    }
    return mock;
}

}  // namespace epm::pipelines
