// Command-line front end for the StructSum pipeline.
//
//   structsum ingest --input corpus.jsonl --out passages.jsonl [--table-filter]
//   structsum generate mindmaps --in passages.jsonl --out generated.jsonl
//   structsum critique --in generated.jsonl --passages passages.jsonl --out filtered.jsonl
//   structsum evaluate coverage --in filtered.jsonl --passages passages.jsonl --out coverage.jsonl
//   structsum stats --records coverage.jsonl --passages passages.jsonl
//   structsum study serve --definition study.json --port 8080
//   structsum pipeline --input corpus.jsonl --output-dir out
//
// Backend settings come from --config, then the environment (BACKEND,
// REPLAY_FIXTURE, REMOTE_URL, AUTH_TOKEN, MODEL_NAME, TEMPERATURE), then
// command-line flags.

#include <cstdio>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "structsum/pipeline.hpp"
#include "structsum/study_server.hpp"

namespace {

using namespace structsum;
using namespace structsum::pipeline;

struct StageFailure : std::runtime_error {
    StageFailure(std::string stage, const std::string& message)
        : std::runtime_error(message), stage(std::move(stage)) {}
    std::string stage;
};

/// Settings collected from flags, applied after the config file and the
/// environment so the command line always wins.
class Settings {
public:
    void bind(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
        app->add_option_function<std::string>(
            flag, [this, key](const std::string& v) { overrides_.emplace_back(key, v); }, help);
    }
    void set(const std::string& key, const std::string& value) { overrides_.emplace_back(key, value); }

    RunConfig build() const {
        RunConfig c;
        if (!config_path.empty()) apply_config_file(c, config_path);
        apply_environment(c);
        for (const auto& [k, v] : overrides_) set_option(c, k, v);
        return c;
    }

    std::string config_path;

private:
    std::vector<std::pair<std::string, std::string>> overrides_;
};

void print_issues(const RunLog& log) {
    for (const auto& i : log.issues()) std::cerr << "warning [" << i.stage << "] " << i.id << ": " << i.message << "\n";
}

void print_counts(const RunLog& log) {
    for (const auto& name : log.stage_order()) {
        const auto& c = log.stage_counts().at(name);
        std::cout << name << ": " << c.in << " in, " << c.out << " out\n";
    }
}

void print_pass_rates(const CritiqueResult& crit) {
    std::printf("%-18s %8s %10s %8s\n", "critic", "passed", "evaluated", "rate");
    for (const auto& [kind, pe] : crit.per_critic)
        std::printf("%-18s %8zu %10zu %7.1f%%\n", to_string(kind).c_str(), pe.first, pe.second,
                    pe.second ? 100.0 * static_cast<double>(pe.first) / static_cast<double>(pe.second) : 0.0);
    std::printf("%-18s %8zu %10zu\n", "all", crit.filtered.size(), crit.judged.size());
}

std::map<std::string, Passage> load_passage_index(const std::string& path, const RunConfig& cfg) {
    return passage_index(read_passages(path, splitter_rules(cfg)));
}

// ---------------------------------------------------------------------------
// Subcommand bodies
// ---------------------------------------------------------------------------

void cmd_ingest(const RunConfig& cfg, const std::string& out) {
    RunLog log;
    auto passages = ingest(read_corpus(cfg.input), cfg.table_filter, splitter_rules(cfg), log);
    std::vector<json> lines;
    for (const auto& p : passages) lines.push_back(passage_input_to_json(p));
    write_jsonl(out, lines);
    print_counts(log);
}

void cmd_generate(const RunConfig& cfg, const std::string& in, const std::string& out) {
    validate(cfg);
    auto svc = make_services(cfg);
    RunLog log;
    auto passages = read_passages(in, splitter_rules(cfg));
    auto records = generate(svc, passages, cfg, log);
    write_jsonl(out, records_to_json(records));
    print_issues(log);
    print_counts(log);
    if (records.empty() && !passages.empty()) throw ConfigError("no passage produced a summary");
}

void cmd_critique(const RunConfig& cfg, const std::string& in, const std::string& passages, const std::string& out,
                  const std::string& report) {
    validate(cfg);
    auto svc = make_services(cfg);
    RunLog log;
    auto crit = critique(svc, read_records(in), load_passage_index(passages, cfg), cfg, log);
    write_jsonl(out, records_to_json(crit.filtered));
    if (!report.empty()) {
        std::vector<json> lines;
        for (const auto& e : crit.report) lines.push_back(critique_entry_to_json(e));
        write_jsonl(report, lines);
    }
    print_issues(log);
    print_pass_rates(crit);
}

void cmd_coverage(const RunConfig& cfg, const std::string& in, const std::string& passages, const std::string& out,
                  const std::string& curve_out) {
    validate(cfg);
    auto svc = make_services(cfg);
    RunLog log;
    auto cov = evaluate_coverage(svc, read_records(in), load_passage_index(passages, cfg), cfg, log);
    write_jsonl(out, records_to_json(cov.records));
    auto csv = curve_to_csv(cov.curve);
    if (!curve_out.empty()) write_text(curve_out, csv);
    print_issues(log);
    print_counts(log);
    std::cout << csv;
}

void cmd_external_qa(const RunConfig& cfg, const std::string& in, const std::string& qa_path,
                     const std::string& kind_filter) {
    validate(cfg);
    auto svc = make_services(cfg);
    RunLog log;
    auto records = read_records(in);
    if (!kind_filter.empty()) {
        auto wanted = modality_from_string(kind_filter);
        std::erase_if(records, [&](const GenerationRecord& r) { return r.structsum.modality() != wanted; });
    }
    auto res = evaluate_external_qa(svc, records, read_external_qa(qa_path), log);
    print_issues(log);
    for (const auto& [id, r] : res.per_passage)
        std::printf("%-24s %4zu/%-4zu %6.1f%%\n", id.c_str(), r.correct, r.total, 100.0 * r.accuracy());
    std::printf("%-24s %4zu/%-4zu %6.1f%%\n", "all", res.total.correct, res.total.total, 100.0 * res.total.accuracy());
}

void cmd_stats(const RunConfig& cfg, const std::string& records, const std::string& passages,
               const std::string& format) {
    std::map<std::string, std::string> texts;
    if (!passages.empty())
        for (const auto& [id, p] : load_passage_index(passages, cfg)) texts[id] = p.text;
    auto rep = stats::corpus_stats(read_records(records), texts, splitter_rules(cfg));
    if (format == "json") std::cout << stats::stats_to_json(rep).dump(2) << "\n";
    else std::cout << stats::stats_to_table(rep);
}

void cmd_study_serve(const std::string& definition, const std::string& log_path, const std::string& host, int port,
                     const std::string& static_dir) {
    std::ifstream in(definition);
    if (!in) throw ConfigError("cannot read study definition " + definition);
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw SchemaError(definition + ": not JSON");
    std::optional<std::filesystem::path> log;
    if (!log_path.empty()) log = log_path;
    study::StudyStore store(study::definition_from_json(j), log);
    std::optional<std::filesystem::path> statics;
    if (!static_dir.empty()) statics = static_dir;
    study::StudyServer server(store, statics);
    std::cout << "study server listening on http://" << host << ":" << port << std::endl;
    if (!server.listen(host, port)) throw ConfigError("cannot listen on " + host + ":" + std::to_string(port));
}

void cmd_pipeline(const RunConfig& cfg) {
    auto outcome = run(cfg);
    if (outcome.exit_code != 0) throw StageFailure(outcome.failed_stage, outcome.message);
    auto manifest = json::parse(std::ifstream(std::filesystem::path(cfg.output_dir) / "manifest.json"));
    for (const auto& s : manifest["stages"])
        std::cout << s["stage"].get<std::string>() << ": " << s["in"] << " in, " << s["out"] << " out\n";
    auto rates = json::parse(std::ifstream(std::filesystem::path(cfg.output_dir) / "pass_rates.json"));
    for (const auto& [critic, r] : rates.items())
        std::printf("pass rate %-17s %5.1f%% (%d/%d)\n", critic.c_str(), 100.0 * r["rate"].get<double>(),
                    r["passed"].get<int>(), r["evaluated"].get<int>());
    std::cout << "model calls: " << manifest["ledger_total"] << ", issues: " << manifest["issues"]
              << ", outputs in " << cfg.output_dir << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"StructSum: LLM-generated tables and mind maps, critics and Auto-QA evaluation"};
    app.require_subcommand(1);
    app.fallthrough();
    Settings settings;
    app.add_option("--config", settings.config_path, "Flat key = value configuration file");
    settings.bind(&app, "--templates-dir", "templates_dir", "Prompt template directory");
    settings.bind(&app, "--abbreviations", "abbreviations", "Abbreviation list for the sentence splitter");
    settings.bind(&app, "--backend", "backend", "replay or remote");
    settings.bind(&app, "--replay-fixture", "replay_fixture", "Replay script (JSONL)");
    settings.bind(&app, "--remote-url", "remote_url", "Completion endpoint URL");
    settings.bind(&app, "--model", "model_name", "Model name sent to the remote backend");
    settings.bind(&app, "--temperature", "temperature", "Override the default sampling temperature");
    settings.bind(&app, "--workers", "workers", "Concurrent instances (replay always uses one)");
    settings.bind(&app, "--seed", "seed", "Seed recorded in the run manifest");

    std::string in, out, passages, report, curve_out, qa_path, kind_filter, records, format = "table";
    std::string definition, log_path, host = "127.0.0.1", static_dir;
    int port = 8080;

    auto* ingest_cmd = app.add_subcommand("ingest", "Split a corpus into passages");
    settings.bind(ingest_cmd, "--input", "input", "Corpus: JSONL {doc_id, raw_text}, a text file or a directory");
    ingest_cmd->add_option("--out", out, "Passages JSONL")->required();
    ingest_cmd->add_flag_callback("--table-filter", [&] { settings.set("table_filter", "true"); },
                                  "Keep only passages suitable for tables");

    std::string gen_kind;
    auto* gen_cmd = app.add_subcommand("generate", "Generate tables or mind maps");
    gen_cmd->add_option("kind", gen_kind, "tables or mindmaps")
        ->required()
        ->check(CLI::IsMember({"tables", "mindmaps"}));
    gen_cmd->add_option("--in", in, "Passages JSONL")->required();
    gen_cmd->add_option("--out", out, "Generated records JSONL")->required();
    settings.bind(gen_cmd, "--mode", "table_mode", "Table mode: multi or single");
    settings.bind(gen_cmd, "--query", "query", "Focus query for every table");
    settings.bind(gen_cmd, "--max-steps", "max_steps", "Mind-map expansion steps");
    settings.bind(gen_cmd, "--samples", "samples", "Mind-map expansion samples per step");

    auto* crit_cmd = app.add_subcommand("critique", "Run the critics and keep records that pass all three");
    crit_cmd->add_option("--in", in, "Generated records JSONL")->required();
    crit_cmd->add_option("--passages", passages, "Passages JSONL")->required();
    crit_cmd->add_option("--out", out, "Filtered records JSONL")->required();
    crit_cmd->add_option("--report", report, "Per-record verdicts JSONL");

    std::string eval_kind;
    auto* eval_cmd = app.add_subcommand("evaluate", "Auto-QA coverage or externally written QA");
    eval_cmd->add_option("kind", eval_kind, "coverage or external-qa")
        ->required()
        ->check(CLI::IsMember({"coverage", "external-qa"}));
    eval_cmd->add_option("--in", in, "Records JSONL")->required();
    eval_cmd->add_option("--passages", passages, "Passages JSONL (coverage)");
    eval_cmd->add_option("--out", out, "Records with coverage JSONL (coverage)");
    eval_cmd->add_option("--curve-out", curve_out, "Coverage curve CSV (coverage)");
    eval_cmd->add_option("--qa", qa_path, "QA JSONL {passage, question, answer} (external-qa)");
    eval_cmd->add_option("--mode", kind_filter, "Only score table or mindmap records (external-qa)")
        ->check(CLI::IsMember({"table", "mindmap"}));
    settings.bind(eval_cmd, "--qa-pairs", "qa_pairs", "Questions requested per passage");
    settings.bind(eval_cmd, "--thresholds", "thresholds", "Comma-separated coverage thresholds");

    auto* stats_cmd = app.add_subcommand("stats", "Corpus and summary statistics");
    stats_cmd->add_option("--records", records, "Records JSONL")->required();
    stats_cmd->add_option("--passages", passages, "Passages JSONL for input statistics");
    stats_cmd->add_option("--format", format, "table or json")->check(CLI::IsMember({"table", "json"}));

    auto* study_cmd = app.add_subcommand("study", "Human reading study");
    study_cmd->require_subcommand(1);
    auto* serve_cmd = study_cmd->add_subcommand("serve", "Serve the study HTTP API");
    serve_cmd->add_option("--definition", definition, "Study definition JSON")->required();
    serve_cmd->add_option("--log", log_path, "Append-only event log (JSONL)");
    serve_cmd->add_option("--host", host, "Bind address");
    serve_cmd->add_option("--port", port, "Port");
    serve_cmd->add_option("--static-dir", static_dir, "Front-end files to serve");

    auto* pipe_cmd = app.add_subcommand("pipeline", "ingest, generate, critique, coverage and stats in one run");
    settings.bind(pipe_cmd, "--input", "input", "Corpus: JSONL {doc_id, raw_text}, a text file or a directory");
    settings.bind(pipe_cmd, "--output-dir", "output_dir", "Directory for every stage's output");
    settings.bind(pipe_cmd, "--modality", "modality", "table or mindmap");
    settings.bind(pipe_cmd, "--mode", "table_mode", "Table mode: multi or single");
    settings.bind(pipe_cmd, "--query", "query", "Focus query for every table");
    settings.bind(pipe_cmd, "--max-steps", "max_steps", "Mind-map expansion steps");
    settings.bind(pipe_cmd, "--samples", "samples", "Mind-map expansion samples per step");
    settings.bind(pipe_cmd, "--qa-pairs", "qa_pairs", "Questions requested per passage");
    settings.bind(pipe_cmd, "--thresholds", "thresholds", "Comma-separated coverage thresholds");
    pipe_cmd->add_flag_callback("--table-filter", [&] { settings.set("table_filter", "true"); },
                                "Keep only passages suitable for tables");

    CLI11_PARSE(app, argc, argv);

    std::string stage = "config";
    try {
        if (*gen_cmd) settings.set("modality", gen_kind == "tables" ? "table" : "mindmap");
        const auto cfg = settings.build();
        if (*ingest_cmd) {
            stage = "ingest";
            cmd_ingest(cfg, out);
        } else if (*gen_cmd) {
            stage = "generate." + gen_kind;
            cmd_generate(cfg, in, out);
        } else if (*crit_cmd) {
            stage = "critique";
            cmd_critique(cfg, in, passages, out, report);
        } else if (*eval_cmd && eval_kind == "coverage") {
            stage = "evaluate.coverage";
            if (passages.empty() || out.empty()) throw ConfigError("coverage needs --passages and --out");
            cmd_coverage(cfg, in, passages, out, curve_out);
        } else if (*eval_cmd) {
            stage = "evaluate.external_qa";
            if (qa_path.empty()) throw ConfigError("external-qa needs --qa");
            cmd_external_qa(cfg, in, qa_path, kind_filter);
        } else if (*stats_cmd) {
            stage = "stats";
            cmd_stats(cfg, records, passages, format);
        } else if (*serve_cmd) {
            stage = "study";
            cmd_study_serve(definition, log_path, host, port, static_dir);
        } else if (*pipe_cmd) {
            stage = "pipeline";
            cmd_pipeline(cfg);
        }
    } catch (const StageFailure& e) {
        std::cerr << "structsum: stage " << e.stage << " failed: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "structsum: stage " << stage << " failed: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
