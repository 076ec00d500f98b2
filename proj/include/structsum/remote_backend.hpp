#pragma once

#include <string>
#include <utility>

#include <httplib.h>

#include "structsum/llm.hpp"

namespace structsum::llm {

struct RemoteConfig {
    /// Full endpoint URL, e.g. "http://localhost:8080/v1/complete".
    std::string url;
    std::string auth_token;
    std::string model_name;
    int timeout_seconds = 120;
};

/// JSON-over-HTTP completion endpoint.
///
/// Request body:  {"model", "prompt", "temperature", "sample_count",
///                 "max_tokens", "tag"}
/// Response body: {"samples": ["...", ...]}
///
/// Connection failures, 429 and 5xx are reported as TransportError so the
/// gateway retries them; any other non-200 status is permanent.
class RemoteBackend final : public LlmBackend {
public:
    explicit RemoteBackend(RemoteConfig config) : config_(std::move(config)) {
        auto scheme_end = config_.url.find("://");
        if (scheme_end == std::string::npos)
            throw ConfigError("REMOTE_URL must include a scheme: " + config_.url);
        if (config_.url.substr(0, scheme_end) != "http")
            throw ConfigError("only http:// endpoints are supported (use a TLS-terminating proxy): " + config_.url);
        auto path_start = config_.url.find('/', scheme_end + 3);
        origin_ = config_.url.substr(0, path_start);
        path_ = path_start == std::string::npos ? "/" : config_.url.substr(path_start);
    }

    std::string name() const override { return "remote:" + config_.model_name; }

    LlmResponse complete(const LlmRequest& request) override {
        httplib::Client client(origin_);
        client.set_connection_timeout(config_.timeout_seconds);
        client.set_read_timeout(config_.timeout_seconds);
        httplib::Headers headers;
        if (!config_.auth_token.empty())
            headers.emplace("Authorization", "Bearer " + config_.auth_token);

        json body{{"model", config_.model_name},    {"prompt", request.prompt},
                  {"temperature", request.temperature}, {"sample_count", request.sample_count},
                  {"max_tokens", request.max_tokens}, {"tag", request.tag}};
        auto res = client.Post(path_, headers, body.dump(), "application/json");
        if (!res) throw TransportError("request failed: " + httplib::to_string(res.error()));
        if (res->status == 429 || res->status >= 500)
            throw TransportError("server returned HTTP " + std::to_string(res->status));
        if (res->status != 200)
            throw BackendError("server returned HTTP " + std::to_string(res->status) + ": " + res->body);

        auto j = json::parse(res->body, nullptr, false);
        if (j.is_discarded() || !j.contains("samples") || !j.at("samples").is_array())
            throw BackendError("malformed completion response");
        LlmResponse out;
        out.backend_name = name();
        for (const auto& s : j.at("samples")) {
            if (!s.is_string()) throw BackendError("completion sample is not a string");
            out.samples.push_back(s.get<std::string>());
        }
        return out;
    }

private:
    RemoteConfig config_;
    std::string origin_;
    std::string path_;
};

}  // namespace structsum::llm
