#include <gtest/gtest.h>

#include <atomic>
#include <filesystem>
#include <map>

#include "structsum/pipeline.hpp"
#include "support/demo_fixture.hpp"
#include "support/test_support.hpp"

namespace {

using namespace structsum;
using namespace structsum::pipeline;
namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("structsum_pipeline_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

fs::path demo_file(const std::string& name) { return fs::path(STRUCTSUM_DEMO_DIR) / name; }

std::map<std::string, std::string> read_tree(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file()) out[e.path().filename().string()] = testsupport::read_file(e.path());
    return out;
}

RunConfig demo_run_config(const fs::path& out) {
    auto cfg = testsupport::demo::demo_config();
    cfg.replay_fixture = demo_file("replay_mindmaps.jsonl").string();
    cfg.input = demo_file("corpus.jsonl").string();
    cfg.output_dir = out.string();
    return cfg;
}

Services callback_with(llm::CallbackBackend::Fn fn) { return testsupport::callback_services(std::move(fn)); }

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

TEST(Config, SetOptionParsesEachKind) {
    RunConfig c;
    set_option(c, "temperature", "0.25");
    set_option(c, "table_filter", "YES");
    set_option(c, "thresholds", "0.1, 0.5,0.9");
    set_option(c, "modality", "table");
    set_option(c, "table_mode", "single");
    set_option(c, "seed", "18446744073709551615");
    EXPECT_EQ(c.temperature, 0.25);
    EXPECT_TRUE(c.table_filter);
    EXPECT_EQ(c.thresholds, (std::vector<double>{0.1, 0.5, 0.9}));
    EXPECT_EQ(c.modality, Modality::table);
    EXPECT_EQ(c.table_mode, TableMode::single);
    EXPECT_EQ(c.seed, 18446744073709551615ull);
    EXPECT_THROW(set_option(c, "colour", "blue"), ConfigError);
    EXPECT_THROW(set_option(c, "max_steps", "5x"), ConfigError);
    EXPECT_THROW(set_option(c, "table_filter", "maybe"), ConfigError);
    EXPECT_THROW(set_option(c, "table_mode", "double"), ConfigError);
    EXPECT_THROW(set_option(c, "thresholds", " , "), ConfigError);
}

TEST(Config, TextFormatWithCommentsAndLineNumbers) {
    RunConfig c;
    apply_config_text(c, "# demo\n\nmax_steps = 3\n  samples=2  \nquery = ships = boats\n");
    EXPECT_EQ(c.max_steps, 3);
    EXPECT_EQ(c.samples, 2);
    EXPECT_EQ(c.query, "ships = boats");
    try {
        apply_config_text(c, "seed = 1\nbogus line\n");
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
    }
    EXPECT_THROW(apply_config_file(c, "/nonexistent/structsum.conf"), ConfigError);
}

TEST(Config, EnvironmentOverridesAndCredentialStaysOut) {
    std::map<std::string, std::string> env{{"BACKEND", "remote"},
                                           {"REMOTE_URL", "http://127.0.0.1:9"},
                                           {"AUTH_TOKEN", "s3cret"},
                                           {"MODEL_NAME", "m-1"},
                                           {"TEMPERATURE", ""}};
    RunConfig c;
    apply_environment(c, [&](const char* k) -> const char* {
        auto it = env.find(k);
        return it == env.end() ? nullptr : it->second.c_str();
    });
    EXPECT_EQ(c.backend, "remote");
    EXPECT_EQ(c.remote_url, "http://127.0.0.1:9");
    EXPECT_EQ(c.auth_token, "s3cret");
    EXPECT_EQ(c.model_name, "m-1");
    EXPECT_FALSE(c.temperature);
    EXPECT_EQ(c.to_json().dump().find("s3cret"), std::string::npos);
}

TEST(Config, HashIgnoresCredentialOnly) {
    RunConfig a, b;
    b.auth_token = "token";
    EXPECT_EQ(a.hash(), b.hash());
    EXPECT_EQ(a.hash().size(), 16u);
    b.max_steps = 4;
    EXPECT_NE(a.hash(), b.hash());
}

TEST(Config, ValidateRejectsBadSettings) {
    auto good = demo_run_config(fs::temp_directory_path());
    EXPECT_NO_THROW(validate(good));
    auto broken = [&](auto mutate) {
        auto c = good;
        mutate(c);
        return c;
    };
    EXPECT_THROW(validate(broken([](RunConfig& c) { c.replay_fixture.clear(); })), ConfigError);
    EXPECT_THROW(validate(broken([](RunConfig& c) { c.replay_fixture = "/nonexistent.jsonl"; })), ConfigError);
    EXPECT_THROW(validate(broken([](RunConfig& c) { c.backend = "pigeon"; })), ConfigError);
    EXPECT_THROW(validate(broken([](RunConfig& c) { c.backend = "remote"; })), ConfigError);
    EXPECT_THROW(validate(broken([](RunConfig& c) { c.templates_dir = "/nonexistent"; })), ConfigError);
    EXPECT_THROW(validate(broken([](RunConfig& c) { c.abbreviations = "/nonexistent.txt"; })), ConfigError);
    EXPECT_THROW(validate(broken([](RunConfig& c) { c.max_steps = 0; })), ConfigError);
    EXPECT_THROW(validate(broken([](RunConfig& c) { c.samples = 0; })), ConfigError);
    EXPECT_THROW(validate(broken([](RunConfig& c) { c.qa_pairs = 0; })), ConfigError);
    EXPECT_THROW(validate(broken([](RunConfig& c) { c.workers = 0; })), ConfigError);
    EXPECT_THROW(validate(broken([](RunConfig& c) { c.thresholds = {0.5, 0.1}; })), ConfigError);
    auto remote = broken([](RunConfig& c) {
        c.backend = "remote";
        c.remote_url = "http://127.0.0.1:9";
        c.workers = 4;
    });
    EXPECT_NO_THROW(validate(remote));
    EXPECT_EQ(effective_workers(remote), 4);
    EXPECT_EQ(effective_workers(broken([](RunConfig& c) { c.workers = 4; })), 1);
}

TEST(Config, AbbreviationFileFeedsTheSplitter) {
    RunConfig c;
    c.abbreviations = std::string(STRUCTSUM_DATA_DIR) + "/abbreviations.txt";
    auto rules = splitter_rules(c);
    Passage p("x", "Dr. Smith arrived. He left.", rules);
    EXPECT_EQ(p.sentences.size(), 2u);
}

// ---------------------------------------------------------------------------
// Plumbing
// ---------------------------------------------------------------------------

TEST(OrderedMap, KeepsInputOrderAcrossWorkers) {
    std::atomic<int> calls{0};
    auto out = ordered_map<std::size_t>(1000, 8, [&](std::size_t i) {
        ++calls;
        return i * i;
    });
    ASSERT_EQ(out.size(), 1000u);
    for (std::size_t i = 0; i < out.size(); ++i) EXPECT_EQ(out[i], i * i);
    EXPECT_EQ(calls.load(), 1000);
    auto serial = ordered_map<std::size_t>(5, 1, [](std::size_t i) { return i + 1; });
    EXPECT_EQ(serial, (std::vector<std::size_t>{1, 2, 3, 4, 5}));
}

TEST(OrderedMap, PropagatesFailures) {
    EXPECT_THROW(ordered_map<int>(50, 4,
                                  [](std::size_t i) -> int {
                                      if (i == 17) throw SchemaError("bad");
                                      return 0;
                                  }),
                 SchemaError);
}

TEST(Jsonl, RoundTripAndMalformedLines) {
    auto dir = scratch("jsonl");
    testsupport::Gen gen(3);
    std::vector<GenerationRecord> records;
    for (int i = 0; i < 20; ++i) {
        GenerationRecord r;
        r.passage_id = "p" + std::to_string(i);
        r.structsum = gen.structsum(r.passage_id);
        if (i % 2) r.coverage = 0.5;
        r.prompt_trace.push_back({"prompt " + std::to_string(i), "reply"});
        records.push_back(std::move(r));
    }
    write_jsonl(dir / "nested" / "records.jsonl", records_to_json(records));
    EXPECT_EQ(read_records(dir / "nested" / "records.jsonl"), records);

    write_text(dir / "bad.jsonl", "{\"a\": 1}\n\n{oops\n");
    try {
        read_jsonl(dir / "bad.jsonl");
        FAIL() << "expected SchemaError";
    } catch (const SchemaError& e) {
        EXPECT_NE(std::string(e.what()).find(":3:"), std::string::npos);
    }
    EXPECT_THROW(read_jsonl(dir / "missing.jsonl"), ConfigError);
    fs::remove_all(dir);
}

TEST(Jsonl, PassagesKeepTheirQuery) {
    auto dir = scratch("passages");
    std::vector<PassageInput> in{{Passage("a", "One. Two."), std::string("Which ships?")},
                                 {Passage("b", "Three."), std::nullopt}};
    std::vector<json> lines;
    for (const auto& p : in) lines.push_back(passage_input_to_json(p));
    write_jsonl(dir / "p.jsonl", lines);
    auto back = read_passages(dir / "p.jsonl", textproc::SplitterRules::defaults());
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[0].query, "Which ships?");
    EXPECT_FALSE(back[1].query);
    EXPECT_EQ(back[0].passage.sentences.size(), 2u);
    EXPECT_EQ(passage_index(back).count("b"), 1u);
    fs::remove_all(dir);
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

TEST(Stages, IngestSplitsAndFilters) {
    const std::string mersey = testsupport::fixture_text("mersey.txt");
    std::vector<textproc::CorpusDocument> docs{
        {"d", mersey + "_START_PARAGRAPH_Short words only. No digits here. Third sentence."}, {"e", "  "}};
    RunLog log;
    auto all = ingest(docs, false, textproc::SplitterRules::defaults(), log);
    ASSERT_EQ(all.size(), 2u);
    EXPECT_EQ(all[0].passage.id, "d#0");
    EXPECT_EQ(all[1].passage.id, "d#1");
    auto filtered = ingest(docs, true, textproc::SplitterRules::defaults(), log);
    ASSERT_EQ(filtered.size(), 1u);
    EXPECT_EQ(filtered[0].passage.id, "d#0");
    EXPECT_EQ(log.stage_counts().at("ingest").in, 2u);
    EXPECT_EQ(log.stage_counts().at("ingest").out, 1u);
}

TEST(Stages, GenerateSkipsAndLogsFailures) {
    auto svc = callback_with([](const llm::LlmRequest& r) -> std::vector<std::string> {
        if (r.prompt.find("Broken") != std::string::npos) throw BackendError("model refused");
        if (r.tag == "mindmap.root") return {R"({"label": "Topic", "children": []})"};
        return {"No"};
    });
    std::vector<PassageInput> passages{{Passage("a", "Alpha."), {}}, {Passage("b", "Broken."), {}},
                                       {Passage("c", "Gamma."), {}}};
    RunConfig cfg;
    RunLog log;
    auto out = generate(svc, passages, cfg, log);
    ASSERT_EQ(out.size(), 2u);
    EXPECT_EQ(out[0].passage_id, "a");
    EXPECT_EQ(out[1].passage_id, "c");
    EXPECT_EQ(out[0].prompt_trace.size(), 2u);
    ASSERT_EQ(log.issues().size(), 1u);
    EXPECT_EQ(log.issues()[0].stage, "generate.mindmaps");
    EXPECT_EQ(log.issues()[0].id, "b");
    EXPECT_EQ(log.stage_counts().at("generate.mindmaps").out, 2u);
}

TEST(Stages, TableQueryComesFromPassageBeforeConfig) {
    std::vector<std::string> prompts;
    auto svc = callback_with([&](const llm::LlmRequest& r) -> std::vector<std::string> {
        prompts.push_back(r.prompt);
        return {"| Ship | Year |\n|---|---|\n| Mersey | 1885 |"};
    });
    RunConfig cfg;
    cfg.modality = Modality::table;
    cfg.table_mode = TableMode::single;
    cfg.query = "Which guns?";
    std::vector<PassageInput> passages{{Passage("a", "Mersey was launched."), std::string("Which years?")},
                                       {Passage("b", "Thames was launched."), std::nullopt}};
    RunLog log;
    auto out = generate(svc, passages, cfg, log);
    ASSERT_EQ(out.size(), 2u);
    ASSERT_EQ(prompts.size(), 2u);
    EXPECT_NE(prompts[0].find("Which years?"), std::string::npos);
    EXPECT_EQ(prompts[0].find("Which guns?"), std::string::npos);
    EXPECT_NE(prompts[1].find("Which guns?"), std::string::npos);
    EXPECT_EQ(out[0].structsum.tables().at(0).rows.size(), 1u);
    EXPECT_EQ(log.stage_counts().count("generate.tables"), 1u);
}

TEST(Stages, CritiqueReportsMissingPassagesAndBackendFailures) {
    auto svc = callback_with([](const llm::LlmRequest& r) -> std::vector<std::string> {
        if (r.tag == "critic.factuality.mindmap") {
            if (r.prompt.find("Down") != std::string::npos) throw BackendError("unavailable");
            return {"[1]"};
        }
        return {"Yes"};
    });
    auto rec = [](std::string id) {
        GenerationRecord r;
        r.passage_id = id;
        r.structsum = StructSum{MindMap{{"Root", {{"leaf", {}}}}}, id};
        return r;
    };
    std::map<std::string, Passage> index{{"ok", Passage("ok", "Fine text.")},
                                         {"down", Passage("down", "Down text.")}};
    RunConfig cfg;
    RunLog log;
    auto res = critique(svc, {rec("ok"), rec("down"), rec("ghost")}, index, cfg, log);
    ASSERT_EQ(res.report.size(), 3u);
    EXPECT_EQ(res.report[0].passed, true);
    EXPECT_FALSE(res.report[1].passed);
    EXPECT_NE(res.report[1].error.find("unavailable"), std::string::npos);
    EXPECT_EQ(res.report[2].error, "source passage not found");
    ASSERT_EQ(res.filtered.size(), 1u);
    EXPECT_EQ(res.filtered[0].verdicts.size(), 3u);
    EXPECT_EQ(res.judged.size(), 1u);
    EXPECT_EQ(log.issues().size(), 2u);
    auto rates = res.pass_rates();
    EXPECT_EQ(rates["factuality"]["evaluated"], 1);
    EXPECT_EQ(rates["factuality"]["rate"], 1.0);
    auto j = critique_entry_to_json(res.report[1]);
    EXPECT_TRUE(j["passed"].is_null());
    EXPECT_TRUE(j.contains("error"));
}

TEST(Stages, CoverageUndefinedIsNullAndLeavesTheCurve) {
    auto svc = callback_with([](const llm::LlmRequest& r) -> std::vector<std::string> {
        if (r.tag == "autoqa.genqa") {
            if (r.prompt.find("Empty") != std::string::npos) return {"Q: Who?\nA: Nobody at all\n"};
            return {"Q: What colour?\nA: Red\n"};
        }
        return {"Red"};
    });
    auto rec = [](std::string id) {
        GenerationRecord r;
        r.passage_id = id;
        r.structsum = StructSum{MindMap{{"Colour", {{"Red", {}}}}}, id};
        r.coverage = 0.123;
        return r;
    };
    std::map<std::string, Passage> index{{"full", Passage("full", "The door is red.")},
                                         {"empty", Passage("empty", "Empty room.")}};
    RunConfig cfg;
    cfg.thresholds = {0.0, 0.5, 1.0};
    RunLog log;
    auto res = evaluate_coverage(svc, {rec("full"), rec("empty")}, index, cfg, log);
    ASSERT_EQ(res.records.size(), 2u);
    EXPECT_EQ(res.records[0].coverage, 1.0);
    EXPECT_FALSE(res.records[1].coverage);
    ASSERT_EQ(res.curve.size(), 3u);
    for (const auto& p : res.curve) EXPECT_EQ(p.percent, 100.0);
    EXPECT_EQ(log.stage_counts().at("evaluate.coverage").out, 1u);
    EXPECT_EQ(curve_to_csv(res.curve), "threshold,percent\n0.00,100.0000\n0.50,100.0000\n1.00,100.0000\n");
}

TEST(Stages, ExternalQaAggregatesPerPassage) {
    auto dir = scratch("external");
    write_text(dir / "qa.jsonl",
               "{\"passage\": \"a\", \"question\": \"Year?\", \"answer\": \"1961\"}\n"
               "{\"passage\": \"a\", \"question\": \"Firm?\", \"answer\": \"Revlon\"}\n"
               "{\"passage\": \"z\", \"question\": \"Unused?\", \"answer\": \"x\"}\n");
    auto qa = read_external_qa(dir / "qa.jsonl");
    EXPECT_EQ(qa.at("a").size(), 2u);
    auto svc = callback_with([](const llm::LlmRequest& r) -> std::vector<std::string> {
        if (r.tag == "autoqa.answer") return {r.prompt.find("Year?") != std::string::npos ? "1961" : "Chanel"};
        return {"No"};
    });
    GenerationRecord r;
    r.passage_id = "a";
    r.structsum = StructSum{MindMap{{"Kay Daly", {{"Revlon, 1961", {}}}}}, "a"};
    RunLog log;
    auto res = evaluate_external_qa(svc, {r}, qa, log);
    EXPECT_EQ(res.total.total, 2u);
    EXPECT_EQ(res.total.correct, 1u);
    EXPECT_EQ(res.per_passage.size(), 1u);
    write_text(dir / "bad.jsonl", "{\"passage\": \"a\"}\n");
    EXPECT_THROW(read_external_qa(dir / "bad.jsonl"), SchemaError);
    fs::remove_all(dir);
}

// ---------------------------------------------------------------------------
// Demo corpus, full runs
// ---------------------------------------------------------------------------

TEST(Demo, CommittedFilesMatchTheGenerator) {
    EXPECT_EQ(testsupport::read_file(demo_file("corpus.jsonl")), testsupport::demo::corpus_jsonl());
    EXPECT_EQ(testsupport::read_file(demo_file("replay_mindmaps.jsonl")), testsupport::demo::replay_jsonl());
}

TEST(Demo, FullRunProducesEveryStageOutput) {
    auto out = scratch("demo_run");
    auto cfg = demo_run_config(out);
    auto script = llm::ReplayBackend::load_script(cfg.replay_fixture);
    auto backend = std::make_shared<llm::ReplayBackend>(script);
    auto outcome = run(cfg, backend);
    ASSERT_EQ(outcome.exit_code, 0) << outcome.failed_stage << ": " << outcome.message;
    EXPECT_EQ(backend->remaining(), 0u);

    auto generated = read_records(out / "generated.jsonl");
    ASSERT_EQ(generated.size(), 5u);
    auto filtered = read_records(out / "filtered.jsonl");
    std::vector<std::string> ids;
    for (const auto& r : filtered) ids.push_back(r.passage_id);
    EXPECT_EQ(ids, (std::vector<std::string>{"kay_daly#0", "bell_rock#1", "halley#0"}));

    auto covered = read_records(out / "coverage.jsonl");
    ASSERT_EQ(covered.size(), 3u);
    EXPECT_NEAR(*covered[0].coverage, 2.0 / 3.0, 1e-12);
    EXPECT_FALSE(covered[1].coverage);
    EXPECT_EQ(covered[2].coverage, 1.0);

    auto verdicts = read_jsonl(out / "verdicts.jsonl");
    ASSERT_EQ(verdicts.size(), 5u);
    EXPECT_EQ(verdicts[1]["passed"], false);
    EXPECT_EQ(verdicts[2]["passed"], false);

    // Manifest ledger equals the script's per-tag counts, and the critic
    // share equals the predicted critic cost of the generated summaries.
    auto manifest = json::parse(testsupport::read_file(out / "manifest.json"));
    std::map<std::string, std::size_t> scripted;
    for (const auto& s : script) ++scripted[s.tag];
    std::map<std::string, std::size_t> ledger;
    for (const auto& [tag, n] : manifest["ledger"].items()) ledger[tag] = n.get<std::size_t>();
    EXPECT_EQ(ledger, scripted);
    EXPECT_EQ(manifest["ledger_total"], script.size());
    std::map<std::string, std::size_t> predicted;
    for (const auto& r : generated)
        for (const auto& [kind, n] : critics::critic_call_cost(r.structsum))
            predicted[critics::critic_tag(kind, Modality::mindmap)] += n;
    for (const auto& [tag, n] : predicted) EXPECT_EQ(ledger[tag], n) << tag;
    EXPECT_EQ(ledger["mindmap.root"], 5u);
    EXPECT_EQ(ledger["mindmap.json_repair"], 2u);
    EXPECT_FALSE(manifest["config"].contains("auth_token"));

    std::vector<std::tuple<std::string, std::size_t, std::size_t>> stages;
    for (const auto& s : manifest["stages"]) stages.emplace_back(s["stage"], s["in"], s["out"]);
    using S = std::tuple<std::string, std::size_t, std::size_t>;
    EXPECT_EQ(stages, (std::vector<S>{S{"ingest", 5, 5}, S{"generate.mindmaps", 5, 5}, S{"critique", 5, 3},
                                      S{"evaluate.coverage", 3, 2}, S{"stats", 3, 3}}));

    auto issues = read_jsonl(out / "issues.jsonl");
    EXPECT_EQ(manifest["issues"], issues.size());
    bool undefined_logged = false;
    for (const auto& i : issues)
        undefined_logged = undefined_logged || (i["stage"] == "evaluate.coverage" && i["id"] == "bell_rock#1");
    EXPECT_TRUE(undefined_logged);

    auto stats = json::parse(testsupport::read_file(out / "stats.json"));
    EXPECT_EQ(stats["n"], 3);
    EXPECT_EQ(testsupport::read_file(out / "coverage_curve.csv").substr(0, 18), "threshold,percent\n");
    EXPECT_TRUE(fs::exists(out / "pass_rates.json"));
    EXPECT_TRUE(fs::exists(out / "passages.jsonl"));
    fs::remove_all(out);
}

TEST(Demo, RepeatedRunsAreByteIdentical) {
    auto out = scratch("demo_repeat");
    auto cfg = demo_run_config(out);
    ASSERT_EQ(run(cfg).exit_code, 0);
    auto first = read_tree(out);
    fs::remove_all(out);
    ASSERT_EQ(run(cfg).exit_code, 0);
    auto second = read_tree(out);
    EXPECT_EQ(first.size(), 10u);
    EXPECT_EQ(first, second);
    fs::remove_all(out);
}

TEST(Demo, FailuresNameTheStage) {
    auto out = scratch("demo_fail");
    auto cfg = demo_run_config(out);
    cfg.backend = "pigeon";
    auto bad_backend = run(cfg);
    EXPECT_EQ(bad_backend.exit_code, 1);
    EXPECT_EQ(bad_backend.failed_stage, "config");

    cfg = demo_run_config(out);
    cfg.input = (out / "no_such_corpus.jsonl").string();
    auto bad_input = run(cfg);
    EXPECT_EQ(bad_input.exit_code, 1);
    EXPECT_EQ(bad_input.failed_stage, "ingest");

    cfg = demo_run_config(out);
    auto short_script = llm::ReplayBackend::load_script(cfg.replay_fixture);
    short_script.resize(20);
    auto truncated = run(cfg, std::make_shared<llm::ReplayBackend>(short_script));
    EXPECT_EQ(truncated.exit_code, 0);
    EXPECT_FALSE(read_jsonl(out / "issues.jsonl").empty());
    fs::remove_all(out);
}

}  // namespace
