#pragma once

#include <chrono>
#include <cstddef>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "structsum/errors.hpp"
#include "structsum/model.hpp"

namespace structsum::llm {

struct LlmRequest {
    std::string prompt;
    double temperature = 0.0;
    int sample_count = 1;
    int max_tokens = 1024;
    /// Pipeline step issuing the call, e.g. "mindmap.expand". Ledger key.
    std::string tag;
};

struct LlmResponse {
    /// In backend order; index 0 is the "topmost" sample.
    std::vector<std::string> samples;
    std::string backend_name;
};

/// Completed-call counts per step tag. One call counts once no matter how
/// many samples it carried.
class CallLedger {
public:
    void record(const std::string& tag) {
        std::lock_guard lock(mu_);
        ++counts_[tag];
    }

    std::size_t count(const std::string& tag) const {
        std::lock_guard lock(mu_);
        auto it = counts_.find(tag);
        return it == counts_.end() ? 0 : it->second;
    }

    std::size_t total() const {
        std::lock_guard lock(mu_);
        std::size_t t = 0;
        for (const auto& [_, c] : counts_) t += c;
        return t;
    }

    std::map<std::string, std::size_t> snapshot() const {
        std::lock_guard lock(mu_);
        return counts_;
    }

private:
    mutable std::mutex mu_;
    std::map<std::string, std::size_t> counts_;
};

/// A completion provider. Implementations throw TransportError for failures
/// worth retrying and any other BackendError for permanent ones.
class LlmBackend {
public:
    virtual ~LlmBackend() = default;
    virtual std::string name() const = 0;
    virtual LlmResponse complete(const LlmRequest& request) = 0;
};

// ---------------------------------------------------------------------------
// Scripted replay
// ---------------------------------------------------------------------------

struct ScriptStep {
    std::string tag;
    std::vector<std::string> samples;
};

/// Answers calls by consuming a script strictly in order. The tag of each
/// call must equal the tag of the next step, so tests have to model the
/// exact call sequence.
class ReplayBackend final : public LlmBackend {
public:
    ReplayBackend() = default;
    explicit ReplayBackend(std::vector<ScriptStep> script) { register_script(std::move(script)); }

    std::string name() const override { return "replay"; }

    /// Appends steps to the pending script.
    void register_script(std::vector<ScriptStep> script) {
        std::lock_guard lock(mu_);
        for (auto& s : script) pending_.push_back(std::move(s));
    }

    std::size_t remaining() const {
        std::lock_guard lock(mu_);
        return pending_.size();
    }

    LlmResponse complete(const LlmRequest& request) override {
        std::lock_guard lock(mu_);
        if (pending_.empty())
            throw ScriptExhausted("replay script exhausted at call tagged '" + request.tag + "'");
        const auto& step = pending_.front();
        if (step.tag != request.tag)
            throw ScriptMismatch("replay script expected tag '" + step.tag + "' but got '" +
                                 request.tag + "'");
        LlmResponse resp{step.samples, name()};
        if (request.sample_count > 0 &&
            resp.samples.size() > static_cast<std::size_t>(request.sample_count))
            resp.samples.resize(static_cast<std::size_t>(request.sample_count));
        pending_.pop_front();
        return resp;
    }

    /// JSONL fixture: one {"tag": ..., "samples": [...]} object per line.
    static std::vector<ScriptStep> parse_script(std::istream& in) {
        std::vector<ScriptStep> steps;
        std::size_t lineno = 0;
        for (std::string line; std::getline(in, line);) {
            ++lineno;
            if (text::trim_view(line).empty()) continue;
            auto j = json::parse(line, nullptr, false);
            if (j.is_discarded() || !j.contains("tag") || !j.contains("samples") ||
                !j.at("samples").is_array())
                throw SchemaError("replay fixture line " + std::to_string(lineno) +
                                  ": expected {tag, samples:[...]}");
            steps.push_back({j.at("tag").get<std::string>(),
                             j.at("samples").get<std::vector<std::string>>()});
        }
        return steps;
    }

    static std::vector<ScriptStep> load_script(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open replay fixture: " + path.string());
        return parse_script(in);
    }

    static std::string dump_script(const std::vector<ScriptStep>& steps) {
        std::string out;
        for (const auto& s : steps) out += json{{"tag", s.tag}, {"samples", s.samples}}.dump() + "\n";
        return out;
    }

private:
    mutable std::mutex mu_;
    std::deque<ScriptStep> pending_;
};

/// Backend driven by a function; handy as a programmable fake model.
class CallbackBackend final : public LlmBackend {
public:
    using Fn = std::function<std::vector<std::string>(const LlmRequest&)>;
    explicit CallbackBackend(Fn fn, std::string name = "callback")
        : fn_(std::move(fn)), name_(std::move(name)) {}

    std::string name() const override { return name_; }
    LlmResponse complete(const LlmRequest& request) override {
        std::lock_guard lock(mu_);
        return {fn_(request), name_};
    }

private:
    std::mutex mu_;
    Fn fn_;
    std::string name_;
};

// ---------------------------------------------------------------------------
// Gateway
// ---------------------------------------------------------------------------

struct RetryPolicy {
    int max_retries = 3;
    std::chrono::milliseconds base_delay{200};
};

/// Decoding defaults applied by LlmGateway::ask. Per-tag temperatures
/// override `temperature`.
struct DecodingDefaults {
    double temperature = 0.0;
    int max_tokens = 1024;
    std::map<std::string, double> temperature_by_tag = {{"mindmap.expand", 0.7}};

    double temperature_for(const std::string& tag) const {
        auto it = temperature_by_tag.find(tag);
        return it == temperature_by_tag.end() ? temperature : it->second;
    }
};

/// Cheap-to-copy handle over a backend, a shared call ledger and an
/// optional prompt trace. All model calls in the pipeline go through here.
class LlmGateway {
public:
    explicit LlmGateway(std::shared_ptr<LlmBackend> backend, RetryPolicy retry = {},
                        DecodingDefaults defaults = {})
        : backend_(std::move(backend)),
          ledger_(std::make_shared<CallLedger>()),
          retry_(retry),
          defaults_(std::make_shared<const DecodingDefaults>(std::move(defaults))) {
        if (!backend_) throw ConfigError("LLM backend not configured");
    }

    /// Retries TransportError up to `max_retries` times with exponential
    /// backoff, then raises BackendUnavailable. Other errors propagate at once.
    LlmResponse complete(const LlmRequest& request) const {
        if (request.sample_count < 1) throw std::invalid_argument("sample_count must be >= 1");
        LlmResponse resp;
        for (int attempt = 0;; ++attempt) {
            try {
                resp = backend_->complete(request);
                break;
            } catch (const TransportError& e) {
                if (attempt >= retry_.max_retries)
                    throw BackendUnavailable(std::string("backend unavailable after retries: ") + e.what());
                std::this_thread::sleep_for(retry_.base_delay * (1 << attempt));
            }
        }
        if (resp.samples.empty()) throw EmptyResponse("backend returned no completions for '" + request.tag + "'");
        ledger_->record(request.tag);
        if (trace_) {
            for (const auto& s : resp.samples) trace_->push_back({request.prompt, s});
        }
        return resp;
    }

    /// Builds a request from the decoding defaults and completes it.
    LlmResponse ask(const std::string& tag, std::string prompt, int sample_count = 1) const {
        LlmRequest req;
        req.prompt = std::move(prompt);
        req.tag = tag;
        req.sample_count = sample_count;
        req.temperature = defaults_->temperature_for(tag);
        req.max_tokens = defaults_->max_tokens;
        return complete(req);
    }

    /// Single-sample convenience.
    std::string ask_one(const std::string& tag, std::string prompt) const {
        return ask(tag, std::move(prompt), 1).samples.front();
    }

    /// A handle sharing backend and ledger that also appends every
    /// (prompt, sample) pair to `trace`.
    LlmGateway traced(PromptTrace& trace) const {
        LlmGateway copy = *this;
        copy.trace_ = &trace;
        return copy;
    }

    CallLedger& ledger() const { return *ledger_; }
    const LlmBackend& backend() const { return *backend_; }

private:
    std::shared_ptr<LlmBackend> backend_;
    std::shared_ptr<CallLedger> ledger_;
    RetryPolicy retry_;
    std::shared_ptr<const DecodingDefaults> defaults_;
    PromptTrace* trace_ = nullptr;
};

}  // namespace structsum::llm
