#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "structsum/autoqa.hpp"
#include "structsum/critics.hpp"
#include "structsum/errors.hpp"
#include "structsum/llm.hpp"
#include "structsum/mindmapgen.hpp"
#include "structsum/model.hpp"
#include "structsum/prompting.hpp"
#include "structsum/remote_backend.hpp"
#include "structsum/services.hpp"
#include "structsum/stats.hpp"
#include "structsum/tablegen.hpp"
#include "structsum/textproc.hpp"

namespace structsum::pipeline {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

enum class TableMode { multi, single };

inline std::string to_string(TableMode m) { return m == TableMode::multi ? "multi" : "single"; }

inline TableMode table_mode_from_string(std::string_view s) {
    if (s == "multi") return TableMode::multi;
    if (s == "single") return TableMode::single;
    throw ConfigError("unknown table mode: " + std::string(s));
}

struct RunConfig {
    std::string backend = "replay";  // replay | remote
    std::string replay_fixture;
    std::string remote_url;
    std::string auth_token;  // never written to the manifest
    std::string model_name;
    std::optional<double> temperature;
    std::string templates_dir = prompting::default_templates_dir().string();
    std::string abbreviations;  // empty: built-in list
    Modality modality = Modality::mindmap;
    TableMode table_mode = TableMode::multi;
    std::string query;  // focus query for every table; a passage's own "query" field wins
    bool table_filter = false;
    int max_steps = 5;
    int samples = 4;
    int qa_pairs = autoqa::kDefaultPairCount;
    std::vector<double> thresholds = autoqa::default_thresholds();
    std::string input;
    std::string output_dir = "out";
    std::uint64_t seed = 0;
    int workers = 1;

    /// Everything except the credential, in a fixed key order.
    ordered_json to_json() const {
        ordered_json j;
        j["backend"] = backend;
        j["replay_fixture"] = replay_fixture;
        j["remote_url"] = remote_url;
        j["model_name"] = model_name;
        j["temperature"] = temperature ? ordered_json(*temperature) : ordered_json(nullptr);
        j["templates_dir"] = templates_dir;
        j["abbreviations"] = abbreviations;
        j["modality"] = structsum::to_string(modality);
        j["table_mode"] = to_string(table_mode);
        j["query"] = query;
        j["table_filter"] = table_filter;
        j["max_steps"] = max_steps;
        j["samples"] = samples;
        j["qa_pairs"] = qa_pairs;
        j["thresholds"] = thresholds;
        j["input"] = input;
        j["output_dir"] = output_dir;
        j["seed"] = seed;
        j["workers"] = workers;
        return j;
    }

    std::string hash() const { return text::hex64(text::fnv1a(to_json().dump())); }
};

namespace detail {

inline bool parse_bool(const std::string& key, const std::string& v) {
    auto s = text::to_lower(v);
    if (s == "1" || s == "true" || s == "yes" || s == "on") return true;
    if (s == "0" || s == "false" || s == "no" || s == "off") return false;
    throw ConfigError(key + ": expected a boolean, got '" + v + "'");
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
    std::istringstream in(v);
    T out{};
    if (!(in >> out) || !(in >> std::ws).eof()) throw ConfigError(key + ": expected a number, got '" + v + "'");
    return out;
}

inline std::vector<double> parse_thresholds(const std::string& v) {
    std::vector<double> out;
    std::string item;
    std::istringstream in(v);
    while (std::getline(in, item, ',')) {
        if (text::trim_view(item).empty()) continue;
        out.push_back(parse_number<double>("thresholds", text::trim(item)));
    }
    if (out.empty()) throw ConfigError("thresholds: empty list");
    return out;
}

}  // namespace detail

/// Applies one key=value setting; keys match RunConfig field names.
inline void set_option(RunConfig& c, const std::string& key, const std::string& value) {
    using detail::parse_number;
    if (key == "backend") c.backend = value;
    else if (key == "replay_fixture") c.replay_fixture = value;
    else if (key == "remote_url") c.remote_url = value;
    else if (key == "auth_token") c.auth_token = value;
    else if (key == "model_name") c.model_name = value;
    else if (key == "temperature") c.temperature = parse_number<double>(key, value);
    else if (key == "templates_dir") c.templates_dir = value;
    else if (key == "abbreviations") c.abbreviations = value;
    else if (key == "modality") c.modality = modality_from_string(value);
    else if (key == "table_mode") c.table_mode = table_mode_from_string(value);
    else if (key == "query") c.query = value;
    else if (key == "table_filter") c.table_filter = detail::parse_bool(key, value);
    else if (key == "max_steps") c.max_steps = parse_number<int>(key, value);
    else if (key == "samples") c.samples = parse_number<int>(key, value);
    else if (key == "qa_pairs") c.qa_pairs = parse_number<int>(key, value);
    else if (key == "thresholds") c.thresholds = detail::parse_thresholds(value);
    else if (key == "input") c.input = value;
    else if (key == "output_dir") c.output_dir = value;
    else if (key == "seed") c.seed = parse_number<std::uint64_t>(key, value);
    else if (key == "workers") c.workers = parse_number<int>(key, value);
    else throw ConfigError("unknown config key: " + key);
}

/// Flat "key = value" lines; '#' starts a comment line.
inline void apply_config_text(RunConfig& c, std::string_view content) {
    std::size_t lineno = 0;
    for (const auto& raw : text::split_lines(content)) {
        ++lineno;
        auto line = text::trim(raw);
        if (line.empty() || line.front() == '#') continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        set_option(c, text::trim(line.substr(0, eq)), text::trim(line.substr(eq + 1)));
    }
}

inline void apply_config_file(RunConfig& c, const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    apply_config_text(c, ss.str());
}

/// BACKEND, REPLAY_FIXTURE, REMOTE_URL, AUTH_TOKEN, MODEL_NAME, TEMPERATURE.
inline void apply_environment(RunConfig& c,
                              const std::function<const char*(const char*)>& getenv_fn = [](const char* k) {
                                  return std::getenv(k);
                              }) {
    const std::pair<const char*, const char*> vars[] = {{"BACKEND", "backend"},       {"REPLAY_FIXTURE", "replay_fixture"},
                                                        {"REMOTE_URL", "remote_url"}, {"AUTH_TOKEN", "auth_token"},
                                                        {"MODEL_NAME", "model_name"}, {"TEMPERATURE", "temperature"}};
    for (const auto& [env, key] : vars)
        if (const char* v = getenv_fn(env); v && *v) set_option(c, key, v);
}

/// Checks the configuration before any stage runs.
inline void validate(const RunConfig& c) {
    if (c.backend == "replay") {
        if (c.replay_fixture.empty()) throw ConfigError("replay backend needs REPLAY_FIXTURE");
        if (!fs::exists(c.replay_fixture)) throw ConfigError("replay fixture not found: " + c.replay_fixture);
    } else if (c.backend == "remote") {
        if (c.remote_url.empty()) throw ConfigError("remote backend needs REMOTE_URL");
    } else {
        throw ConfigError("unknown backend: " + c.backend);
    }
    if (!fs::is_directory(c.templates_dir)) throw ConfigError("template directory not found: " + c.templates_dir);
    if (!c.abbreviations.empty() && !fs::exists(c.abbreviations))
        throw ConfigError("abbreviation list not found: " + c.abbreviations);
    if (c.max_steps < 1) throw ConfigError("max_steps must be >= 1");
    if (c.samples < 1) throw ConfigError("samples must be >= 1");
    if (c.qa_pairs < 1) throw ConfigError("qa_pairs must be >= 1");
    if (c.workers < 1) throw ConfigError("workers must be >= 1");
    if (!std::is_sorted(c.thresholds.begin(), c.thresholds.end())) throw ConfigError("thresholds must be ascending");
}

inline textproc::SplitterRules splitter_rules(const RunConfig& c) {
    return c.abbreviations.empty() ? textproc::SplitterRules::defaults()
                                   : textproc::SplitterRules::from_file(c.abbreviations);
}

inline std::shared_ptr<llm::LlmBackend> make_backend(const RunConfig& c) {
    if (c.backend == "replay") {
        auto b = std::make_shared<llm::ReplayBackend>();
        b->register_script(llm::ReplayBackend::load_script(c.replay_fixture));
        return b;
    }
    if (c.backend == "remote")
        return std::make_shared<llm::RemoteBackend>(llm::RemoteConfig{c.remote_url, c.auth_token, c.model_name});
    throw ConfigError("unknown backend: " + c.backend);
}

inline Services make_services(const RunConfig& c, std::shared_ptr<llm::LlmBackend> backend = nullptr) {
    auto registry = std::make_shared<prompting::TemplateRegistry>(prompting::TemplateRegistry::load(c.templates_dir));
    registry->require_catalog();
    llm::DecodingDefaults defaults;
    if (c.temperature) defaults.temperature = *c.temperature;
    return Services(registry, llm::LlmGateway(backend ? std::move(backend) : make_backend(c), {}, defaults));
}

/// A replay script is consumed in order, so it only supports one worker.
inline int effective_workers(const RunConfig& c) { return c.backend == "replay" ? 1 : c.workers; }

// ---------------------------------------------------------------------------
// Stage plumbing
// ---------------------------------------------------------------------------

struct Issue {
    std::string stage;
    std::string id;
    std::string message;
};

inline json issue_to_json(const Issue& i) { return json{{"stage", i.stage}, {"id", i.id}, {"message", i.message}}; }

struct StageCounts {
    std::size_t in = 0;
    std::size_t out = 0;
};

/// Collects per-instance problems and stage counts across a run.
class RunLog {
public:
    void issue(std::string stage, std::string id, std::string message) {
        std::lock_guard lock(mu_);
        issues_.push_back({std::move(stage), std::move(id), std::move(message)});
    }
    void counts(const std::string& stage, std::size_t in, std::size_t out) {
        std::lock_guard lock(mu_);
        counts_[stage] = {in, out};
        order_.push_back(stage);
    }
    const std::vector<Issue>& issues() const { return issues_; }
    const std::map<std::string, StageCounts>& stage_counts() const { return counts_; }
    const std::vector<std::string>& stage_order() const { return order_; }

private:
    std::mutex mu_;
    std::vector<Issue> issues_;
    std::map<std::string, StageCounts> counts_;
    std::vector<std::string> order_;
};

/// Runs fn(i) for i in [0, n) on up to `workers` threads. Results keep
/// input order.
template <typename T>
std::vector<T> ordered_map(std::size_t n, int workers, const std::function<T(std::size_t)>& fn) {
    std::vector<T> out(n);
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) out[i] = fn(i);
        return out;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mu;
    auto worker = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < n;) {
            try {
                out[i] = fn(i);
            } catch (...) {
                std::lock_guard lock(failure_mu);
                if (!failure) failure = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    for (int w = 0; w < std::min<int>(workers, static_cast<int>(n)); ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
    return out;
}

// ---------------------------------------------------------------------------
// JSONL helpers
// ---------------------------------------------------------------------------

inline std::vector<json> read_jsonl(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read " + path.string());
    std::vector<json> out;
    std::size_t lineno = 0;
    for (std::string line; std::getline(in, line);) {
        ++lineno;
        if (text::trim_view(line).empty()) continue;
        auto j = json::parse(line, nullptr, false);
        if (j.is_discarded())
            throw SchemaError(path.string() + ":" + std::to_string(lineno) + ": not a JSON value");
        out.push_back(std::move(j));
    }
    return out;
}

template <typename Range>
void write_jsonl(const fs::path& path, const Range& values) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + path.string());
    for (const auto& v : values) out << v.dump() << "\n";
}

inline void write_text(const fs::path& path, const std::string& content) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << content;
}

/// A passage line may carry a "query" for query-focused table generation.
struct PassageInput {
    Passage passage;
    std::optional<std::string> query;
};

inline json passage_input_to_json(const PassageInput& p) {
    auto j = passage_to_json(p.passage);
    if (p.query) j["query"] = *p.query;
    return j;
}

inline std::vector<PassageInput> read_passages(const fs::path& path, const textproc::SplitterRules& rules) {
    std::vector<PassageInput> out;
    for (const auto& j : read_jsonl(path)) {
        PassageInput p{passage_from_json(j, rules), std::nullopt};
        if (j.contains("query") && j.at("query").is_string()) p.query = j.at("query").get<std::string>();
        out.push_back(std::move(p));
    }
    return out;
}

inline std::map<std::string, Passage> passage_index(const std::vector<PassageInput>& passages) {
    std::map<std::string, Passage> out;
    for (const auto& p : passages) out.emplace(p.passage.id, p.passage);
    return out;
}

inline std::vector<GenerationRecord> read_records(const fs::path& path) {
    std::vector<GenerationRecord> out;
    for (const auto& j : read_jsonl(path)) out.push_back(record_from_json(j));
    return out;
}

inline std::vector<json> records_to_json(const std::vector<GenerationRecord>& records) {
    std::vector<json> out;
    for (const auto& r : records) out.push_back(record_to_json(r));
    return out;
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

/// Corpus documents to passages; optionally keeps only table-worthy ones.
inline std::vector<PassageInput> ingest(const std::vector<textproc::CorpusDocument>& docs, bool table_filter,
                                        const textproc::SplitterRules& rules, RunLog& log) {
    std::vector<PassageInput> out;
    std::size_t seen = 0;
    for (const auto& d : docs) {
        for (auto& p : textproc::split_paragraphs(d, rules)) {
            ++seen;
            if (table_filter && !textproc::passes_table_filter(p)) continue;
            out.push_back({std::move(p), std::nullopt});
        }
    }
    log.counts("ingest", seen, out.size());
    return out;
}

inline std::vector<textproc::CorpusDocument> read_corpus(const fs::path& path) {
    if (!fs::exists(path)) throw ConfigError("corpus not found: " + path.string());
    if (fs::is_regular_file(path) && path.extension() == ".jsonl") {
        std::ifstream in(path);
        return textproc::read_corpus_jsonl(in);
    }
    return textproc::read_corpus_text(path);
}

inline std::optional<std::string> query_for(const PassageInput& in, const RunConfig& cfg) {
    if (in.query) return in.query;
    if (!cfg.query.empty()) return cfg.query;
    return std::nullopt;
}

/// Generates one structured summary per passage. A passage that fails is
/// logged and skipped.
inline std::vector<GenerationRecord> generate(const Services& svc, const std::vector<PassageInput>& passages,
                                              const RunConfig& cfg, RunLog& log) {
    const std::string stage = cfg.modality == Modality::table ? "generate.tables" : "generate.mindmaps";
    using Slot = std::optional<GenerationRecord>;
    auto slots = ordered_map<Slot>(passages.size(), effective_workers(cfg), [&](std::size_t i) -> Slot {
        const auto& in = passages[i];
        GenerationRecord rec;
        rec.passage_id = in.passage.id;
        auto traced = svc.traced(rec.prompt_trace);
        try {
            if (cfg.modality == Modality::mindmap) {
                auto st = mindmapgen::iterative_generate(traced, in.passage, {cfg.max_steps, cfg.samples});
                for (const auto& w : st.warnings) log.issue(stage, in.passage.id, w);
                rec.structsum = mindmapgen::to_structsum(st, in.passage);
            } else if (cfg.table_mode == TableMode::single) {
                rec.structsum = tablegen::generate_single_table(traced, in.passage, query_for(in, cfg));
            } else {
                auto res = tablegen::divide_and_generate(traced, in.passage, query_for(in, cfg));
                for (const auto& w : res.warnings) log.issue(stage, in.passage.id, w);
                rec.structsum = std::move(res.structsum);
            }
        } catch (const Error& e) {
            log.issue(stage, in.passage.id, e.what());
            return std::nullopt;
        } catch (const std::invalid_argument& e) {
            log.issue(stage, in.passage.id, e.what());
            return std::nullopt;
        }
        return rec;
    });
    std::vector<GenerationRecord> out;
    for (auto& s : slots)
        if (s) out.push_back(std::move(*s));
    log.counts(stage, passages.size(), out.size());
    return out;
}

struct CritiqueEntry {
    std::string passage_id;
    std::optional<bool> passed;  // nullopt when the critics could not finish
    std::vector<Verdict> verdicts;
    std::string error;
};

inline json critique_entry_to_json(const CritiqueEntry& e) {
    json verdicts = json::array();
    for (const auto& v : e.verdicts) verdicts.push_back(verdict_to_json(v));
    json j{{"passage_id", e.passage_id},
           {"passed", e.passed ? json(*e.passed) : json(nullptr)},
           {"verdicts", std::move(verdicts)}};
    if (!e.error.empty()) j["error"] = e.error;
    return j;
}

struct CritiqueResult {
    std::vector<GenerationRecord> judged;  // every record that got a full verdict set
    std::vector<GenerationRecord> filtered;
    std::vector<CritiqueEntry> report;
    std::map<CriticKind, std::pair<std::size_t, std::size_t>> per_critic;  // passed, evaluated

    json pass_rates() const {
        json j = json::object();
        for (const auto& [k, pe] : per_critic)
            j[to_string(k)] = {{"passed", pe.first},
                               {"evaluated", pe.second},
                               {"rate", pe.second ? static_cast<double>(pe.first) / static_cast<double>(pe.second) : 0.0}};
        return j;
    }
};

/// Runs the three critics over each record. A record whose critique fails
/// at the backend gets no verdict: it is reported and left out of the
/// filtered output.
inline CritiqueResult critique(const Services& svc, const std::vector<GenerationRecord>& records,
                               const std::map<std::string, Passage>& passages, const RunConfig& cfg, RunLog& log) {
    using Slot = std::pair<CritiqueEntry, std::optional<GenerationRecord>>;
    auto slots = ordered_map<Slot>(records.size(), effective_workers(cfg), [&](std::size_t i) -> Slot {
        const auto& r = records[i];
        CritiqueEntry entry{r.passage_id, std::nullopt, {}, {}};
        auto it = passages.find(r.passage_id);
        if (it == passages.end()) {
            entry.error = "source passage not found";
            log.issue("critique", r.passage_id, entry.error);
            return {entry, std::nullopt};
        }
        GenerationRecord judged = r;
        try {
            judged.verdicts = critics::run_critics(svc.traced(judged.prompt_trace), it->second, r.structsum);
        } catch (const Error& e) {
            entry.error = e.what();
            log.issue("critique", r.passage_id, entry.error);
            return {entry, std::nullopt};
        }
        entry.verdicts = judged.verdicts;
        entry.passed = critics::combine(judged.verdicts);
        return {entry, std::move(judged)};
    });
    CritiqueResult out;
    for (auto& [entry, judged] : slots) {
        out.report.push_back(entry);
        if (!judged) continue;
        for (const auto& v : judged->verdicts) {
            auto& pe = out.per_critic[v.critic];
            ++pe.second;
            if (v.passed()) ++pe.first;
        }
        out.judged.push_back(std::move(*judged));
    }
    out.filtered = critics::filter_records(out.judged);
    log.counts("critique", records.size(), out.filtered.size());
    return out;
}

struct CoverageStage {
    std::vector<GenerationRecord> records;  // coverage filled in (null when undefined)
    std::vector<autoqa::CoverageResult> results;
    std::vector<autoqa::CurvePoint> curve;
};

inline CoverageStage evaluate_coverage(const Services& svc, const std::vector<GenerationRecord>& records,
                                       const std::map<std::string, Passage>& passages, const RunConfig& cfg,
                                       RunLog& log) {
    using Slot = std::pair<GenerationRecord, std::optional<autoqa::CoverageResult>>;
    auto slots = ordered_map<Slot>(records.size(), effective_workers(cfg), [&](std::size_t i) -> Slot {
        GenerationRecord r = records[i];
        r.coverage.reset();
        auto it = passages.find(r.passage_id);
        if (it == passages.end()) {
            log.issue("evaluate.coverage", r.passage_id, "source passage not found");
            return {std::move(r), std::nullopt};
        }
        try {
            auto res = autoqa::coverage(svc.traced(r.prompt_trace), r.structsum, it->second, cfg.qa_pairs);
            for (const auto& w : res.warnings) log.issue("evaluate.coverage", r.passage_id, w);
            if (!res.defined()) log.issue("evaluate.coverage", r.passage_id, "no QA pair survived filtering");
            r.coverage = res.value();
            return {std::move(r), std::move(res)};
        } catch (const Error& e) {
            log.issue("evaluate.coverage", r.passage_id, e.what());
            return {std::move(r), std::nullopt};
        }
    });
    CoverageStage out;
    std::vector<std::optional<double>> values;
    for (auto& [rec, res] : slots) {
        values.push_back(rec.coverage);
        out.records.push_back(std::move(rec));
        if (res) out.results.push_back(std::move(*res));
    }
    out.curve = autoqa::coverage_curve(values, cfg.thresholds);
    std::size_t defined = std::count_if(values.begin(), values.end(), [](const auto& v) { return v.has_value(); });
    log.counts("evaluate.coverage", records.size(), defined);
    return out;
}

inline std::string curve_to_csv(const std::vector<autoqa::CurvePoint>& curve) {
    std::ostringstream out;
    out << "threshold,percent\n";
    out.setf(std::ios::fixed);
    for (const auto& p : curve) {
        out.precision(2);
        out << p.threshold << ",";
        out.precision(4);
        out << p.percent << "\n";
    }
    return out.str();
}

/// One line per question: {"passage", "question", "answer"}.
inline std::map<std::string, std::vector<autoqa::ExternalQA>> read_external_qa(const fs::path& path) {
    std::map<std::string, std::vector<autoqa::ExternalQA>> out;
    for (const auto& j : read_jsonl(path)) {
        try {
            out[j.at("passage").get<std::string>()].push_back(
                {j.at("question").get<std::string>(), j.at("answer").get<std::string>()});
        } catch (const json::exception& e) {
            throw SchemaError(std::string("malformed QA triple: ") + e.what());
        }
    }
    return out;
}

struct ExternalQAStage {
    std::map<std::string, autoqa::ExternalQAResult> per_passage;
    autoqa::ExternalQAResult total;
};

inline ExternalQAStage evaluate_external_qa(const Services& svc, const std::vector<GenerationRecord>& records,
                                            const std::map<std::string, std::vector<autoqa::ExternalQA>>& qa,
                                            RunLog& log) {
    ExternalQAStage out;
    for (const auto& r : records) {
        auto it = qa.find(r.passage_id);
        if (it == qa.end()) continue;
        try {
            auto res = autoqa::evaluate_with_external_qa(svc, r.structsum, it->second);
            out.per_passage[r.passage_id] = res;
            out.total.total += res.total;
            out.total.correct += res.correct;
        } catch (const Error& e) {
            log.issue("evaluate.external_qa", r.passage_id, e.what());
        }
    }
    log.counts("evaluate.external_qa", records.size(), out.per_passage.size());
    return out;
}

// ---------------------------------------------------------------------------
// Full run
// ---------------------------------------------------------------------------

inline ordered_json make_manifest(const RunConfig& cfg, const llm::CallLedger& ledger, const RunLog& log) {
    ordered_json m;
    m["config_hash"] = cfg.hash();
    m["config"] = cfg.to_json();
    ordered_json calls = ordered_json::object();
    for (const auto& [tag, n] : ledger.snapshot()) calls[tag] = n;
    m["ledger"] = calls;
    m["ledger_total"] = ledger.total();
    ordered_json stages = ordered_json::array();
    for (const auto& name : log.stage_order()) {
        const auto& c = log.stage_counts().at(name);
        stages.push_back({{"stage", name}, {"in", c.in}, {"out", c.out}});
    }
    m["stages"] = stages;
    m["issues"] = log.issues().size();
    return m;
}

struct RunOutcome {
    int exit_code = 0;
    std::string failed_stage;
    std::string message;
};

/// ingest -> generate -> critique -> coverage (on the filtered records) ->
/// stats, writing every stage's output and a manifest into output_dir.
/// `backend` overrides the configured one (used by tests).
inline RunOutcome run(const RunConfig& cfg, std::shared_ptr<llm::LlmBackend> backend = nullptr) {
    std::string stage = "config";
    try {
        if (!backend) validate(cfg);
        const auto rules = splitter_rules(cfg);
        auto svc = make_services(cfg, std::move(backend));
        RunLog log;
        const fs::path out = cfg.output_dir;
        fs::create_directories(out);

        stage = "ingest";
        auto passages = ingest(read_corpus(cfg.input), cfg.table_filter, rules, log);
        std::vector<json> pj;
        for (const auto& p : passages) pj.push_back(passage_input_to_json(p));
        write_jsonl(out / "passages.jsonl", pj);
        auto index = passage_index(passages);

        stage = cfg.modality == Modality::table ? "generate.tables" : "generate.mindmaps";
        auto generated = generate(svc, passages, cfg, log);
        write_jsonl(out / "generated.jsonl", records_to_json(generated));

        stage = "critique";
        auto crit = critique(svc, generated, index, cfg, log);
        std::vector<json> report;
        for (const auto& e : crit.report) report.push_back(critique_entry_to_json(e));
        write_jsonl(out / "verdicts.jsonl", report);
        write_jsonl(out / "filtered.jsonl", records_to_json(crit.filtered));
        write_text(out / "pass_rates.json", crit.pass_rates().dump(2) + "\n");

        stage = "evaluate.coverage";
        auto cov = evaluate_coverage(svc, crit.filtered, index, cfg, log);
        write_jsonl(out / "coverage.jsonl", records_to_json(cov.records));
        write_text(out / "coverage_curve.csv", curve_to_csv(cov.curve));

        stage = "stats";
        std::map<std::string, std::string> texts;
        for (const auto& [id, p] : index) texts[id] = p.text;
        auto st = stats::corpus_stats(cov.records, texts, rules);
        write_text(out / "stats.json", stats::stats_to_json(st).dump(2) + "\n");
        log.counts("stats", cov.records.size(), cov.records.size());

        std::vector<json> issues;
        for (const auto& i : log.issues()) issues.push_back(issue_to_json(i));
        write_jsonl(out / "issues.jsonl", issues);
        write_text(out / "manifest.json", make_manifest(cfg, svc.llm.ledger(), log).dump(2) + "\n");
        return {};
    } catch (const std::exception& e) {
        return {1, stage, e.what()};
    }
}

}  // namespace structsum::pipeline
