// Acceptance suite: one PASS/FAIL line per primary criterion. Exits nonzero
// when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "structsum/autoqa.hpp"
#include "structsum/critics.hpp"
#include "structsum/mindmapgen.hpp"
#include "structsum/pipeline.hpp"
#include "structsum/stats.hpp"
#include "structsum/study.hpp"
#include "structsum/tablegen.hpp"
#include "structsum/textproc.hpp"
#include "support/alg1_fixtures.hpp"
#include "support/coverage_fixtures.hpp"
#include "support/demo_fixture.hpp"
#include "support/stats_oracle.hpp"
#include "support/study_fixtures.hpp"
#include "support/test_support.hpp"
#include "support/textproc_oracle.hpp"

namespace {

using namespace structsum;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

// Pinned tolerances and limits.
constexpr double kAlg1TimeLimitS = 1.0;
constexpr double kReplayTimeLimitS = 5.0;
constexpr double kStatsTolerance = 1e-9;
constexpr double kReductionTarget = 42.9;
constexpr double kReductionTolerancePp = 0.1;
constexpr double kConstantMeanS = 10.0;

struct Outcome {
    bool pass = false;
    std::string detail;
};

/// Collects mismatches; the criterion passes when there are none.
class Tally {
public:
    void check(bool ok, const std::string& what) {
        ++checks_;
        if (!ok && first_failure_.empty()) first_failure_ = what;
        failures_ += !ok;
    }
    bool ok() const { return failures_ == 0; }
    std::string summary(const std::string& extra = {}) const {
        std::ostringstream out;
        out << checks_ - failures_ << "/" << checks_ << " checks";
        if (!extra.empty()) out << ", " << extra;
        if (!first_failure_.empty()) out << "; first failure: " << first_failure_;
        return out.str();
    }
    Outcome outcome(const std::string& extra = {}) const { return {ok(), summary(extra)}; }

private:
    std::size_t checks_ = 0;
    std::size_t failures_ = 0;
    std::string first_failure_;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* pattern, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, pattern, v);
    return buf;
}

Passage fixture_passage(const std::string& id, const std::string& file) {
    return Passage(id, testsupport::fixture_text(file));
}

// ---------------------------------------------------------------------------
// Criteria
// ---------------------------------------------------------------------------

Outcome algorithm1_fidelity() {
    Tally t;
    const auto kay = fixture_passage("kay", "kay_daly.txt");
    std::set<mindmapgen::Termination> terminations;
    bool repair_seen = false;
    const auto t0 = Clock::now();
    const auto fixtures = testsupport::alg1_fixtures();
    for (const auto& f : fixtures) {
        testsupport::RecordingReplay rr(f.script);
        auto st = mindmapgen::iterative_generate(rr.svc, kay, f.options);
        t.check(rr.call_letters() == f.expected_calls, f.name + ": calls " + rr.call_letters());
        t.check(st.step == f.expected_step, f.name + ": step");
        t.check(st.terminated_by == f.expected_termination, f.name + ": termination " + to_string(st.terminated_by));
        t.check(st.expansions == f.expected_expansions, f.name + ": expansions");
        t.check(st.repairs == f.expected_repairs, f.name + ": repairs");
        t.check(node_count(st.mindmap) == f.expected_nodes, f.name + ": nodes");
        t.check(rr.replay->remaining() == 0, f.name + ": script not consumed");
        terminations.insert(st.terminated_by);
        repair_seen = repair_seen || st.repairs > 0;
    }
    const double elapsed = seconds_since(t0);
    t.check(fixtures.size() == 10, "fixture count");
    t.check(fixtures.front().expected_calls == "RC", "continue=no at step 1 fixture");
    t.check(terminations.count(mindmapgen::Termination::max_steps) > 0, "max_steps exhaustion covered");
    t.check(terminations.count(mindmapgen::Termination::expansion_rejected) > 0, "expansion rejection covered");
    t.check(repair_seen, "repair path covered");
    t.check(elapsed < kAlg1TimeLimitS, "runtime");
    return t.outcome(std::to_string(fixtures.size()) + " fixtures in " + fmt("%.3f s", elapsed) + " (limit 1 s)");
}

Outcome cost_accounting() {
    Tally t;
    testsupport::Gen gen(50);
    auto svc = testsupport::callback_services([](const llm::LlmRequest& r) {
        return std::vector<std::string>{r.tag.rfind("critic.factuality", 0) == 0 ? "[1]" : "yes"};
    });
    const auto p = fixture_passage("mersey", "mersey.txt");
    std::map<std::string, std::size_t> kinds;
    for (int round = 0; round < 50; ++round) {
        auto s = gen.structsum("p");
        ++kinds[s.kind()];
        auto before = svc.llm.ledger().snapshot();
        critics::run_critics(svc, p, s);
        auto after = svc.llm.ledger().snapshot();
        auto predicted = critics::critic_call_cost(s);
        for (auto k : all_critics) {
            auto tag = critics::critic_tag(k, s.modality());
            std::size_t delta = tag.empty() ? 0 : after[tag] - before[tag];
            t.check(delta == predicted[k], "round " + std::to_string(round) + " " + to_string(k));
        }
        const auto tables = s.tables();
        if (s.modality() == Modality::table) {
            std::size_t cols = 0;
            for (const auto& tb : tables) cols += tb.header.size();
            t.check(predicted[CriticKind::factuality] == tables.size(), "factuality is one call per table");
            t.check(predicted[CriticKind::local_structure] == cols, "table local is one call per column");
            t.check(predicted[CriticKind::global_structure] == 0, "table global makes no call");
        } else {
            const auto& root = std::get<MindMap>(s.content).root;
            t.check(predicted[CriticKind::factuality] == 1, "mind-map factuality is one call");
            t.check(predicted[CriticKind::local_structure] == mindmap_paths(root).size(),
                    "mind-map local is one call per path");
            t.check(predicted[CriticKind::global_structure] == 1, "mind-map global is one call");
        }
    }
    return t.outcome("50 structsums (" + std::to_string(kinds["single_table"]) + " single, " +
                     std::to_string(kinds["multi_table"]) + " multi, " + std::to_string(kinds["mind_map"]) +
                     " mind maps)");
}

Verdict verdict(CriticKind k, bool pass) {
    Verdict v{k, Modality::table, {}, {}};
    if (!pass) v.failures.push_back({"scripted", -1, -1, {}});
    return v;
}

Outcome critic_combinator() {
    Tally t;
    for (int mask = 0; mask < 8; ++mask) {
        bool f = mask & 1, l = mask & 2, g = mask & 4;
        t.check(critics::combine({verdict(CriticKind::factuality, f), verdict(CriticKind::local_structure, l),
                                  verdict(CriticKind::global_structure, g)}) == (f && l && g),
                "truth table row " + std::to_string(mask));
    }
    testsupport::Gen gen(5);
    for (int round = 0; round < 100; ++round) {
        std::vector<GenerationRecord> records;
        for (int i = gen.uniform(0, 12); i > 0; --i) {
            GenerationRecord r;
            r.passage_id = "p" + std::to_string(i);
            r.structsum = gen.structsum(r.passage_id);
            for (auto k : all_critics) r.verdicts.push_back(verdict(k, gen.chance(0.7)));
            records.push_back(std::move(r));
        }
        auto once = critics::filter_records(records);
        t.check(once.size() <= records.size(), "filtered set grew");
        t.check(critics::filter_records(once) == once, "filter not idempotent");
    }
    return t.outcome("8 truth-table rows, 100 random record sets");
}

Outcome serialization_round_trips() {
    Tally t;
    testsupport::Gen gen(1000);
    std::size_t failures = 0;
    for (int i = 0; i < 1000; ++i) {
        auto tree = gen.tree();
        bool ok = parse_mindmap_json(mindmap_to_json_text(tree)) == tree;
        failures += !ok;
        t.check(ok, "mind map " + std::to_string(i));
    }
    for (int i = 0; i < 1000; ++i) {
        auto table = gen.table();
        table.caption.clear();
        bool ok = tablegen::parse_markdown_table(table_to_markdown(table)) == table;
        failures += !ok;
        t.check(ok, "table " + std::to_string(i));
    }
    return t.outcome("1000 mind maps + 1000 tables, " + std::to_string(failures) + " failures");
}

StructSum ships_summary() {
    Table tb;
    tb.header = {"Ship", "Length"};
    tb.rows = {{"Mersey", "300 feet"}};
    return StructSum{SingleTable{tb}, "mersey"};
}

Outcome coverage_oracle() {
    Tally t;
    testsupport::Gen gen(100);
    std::vector<std::optional<double>> values;
    std::vector<std::pair<std::size_t, std::size_t>> rationals;
    std::size_t undefined = 0;
    for (int i = 0; i < 100; ++i) {
        auto f = testsupport::random_coverage_fixture(gen, i);
        auto oracle = testsupport::coverage_oracle(f);
        auto svc = testsupport::coverage_services(f);
        auto r = autoqa::coverage(svc, ships_summary(), f.passage);
        const auto id = "fixture " + std::to_string(i);
        t.check(r.surviving_pairs == oracle.survivors, id + ": survivors");
        t.check(r.answered_equivalent == oracle.equivalent, id + ": equivalent");
        t.check(r.defined() == (oracle.survivors > 0), id + ": undefined iff zero survivors");
        t.check(svc.llm.ledger().snapshot() == oracle.calls, id + ": model calls");
        if (oracle.survivors == 0) {
            ++undefined;
            t.check(!r.value().has_value(), id + ": value should be undefined");
        } else {
            t.check(r.value() == static_cast<double>(oracle.equivalent) / static_cast<double>(oracle.survivors),
                    id + ": value");
            rationals.emplace_back(oracle.equivalent, oracle.survivors);
        }
        values.push_back(r.value());
    }
    auto thresholds = autoqa::default_thresholds();
    auto curve = autoqa::coverage_curve(values, thresholds);
    t.check(curve.size() == thresholds.size(), "curve size");
    for (std::size_t k = 0; k < curve.size(); ++k) {
        // value >= k/10  <=>  10 * num >= k * den
        std::size_t at_least = 0;
        for (auto [num, den] : rationals) at_least += 10 * num >= k * den;
        t.check(curve[k].percent == 100.0 * static_cast<double>(at_least) / static_cast<double>(rationals.size()),
                "curve point " + std::to_string(k));
        if (k > 0) t.check(curve[k].percent <= curve[k - 1].percent, "curve increases at " + std::to_string(k));
    }
    return t.outcome("100 fixtures, " + std::to_string(undefined) + " undefined, 11-point curve");
}

QAPair qa(std::string q, std::string a) {
    return {std::move(q), std::move(a), QAOrigin::auto_generated, QAFilterState::raw, {}};
}

Outcome filter_semantics() {
    Tally t;
    const auto p = fixture_passage("mersey", "mersey.txt");
    testsupport::Scripted s({testsupport::step("autoqa.cycle", "MERSEY"),
                             testsupport::step("autoqa.cycle", "the Leander class"),
                             testsupport::step("autoqa.equivalence", "yes"), testsupport::step("autoqa.cycle", "400 feet"),
                             testsupport::step("autoqa.equivalence", "no")});
    auto rep = autoqa::filter_qa_report(s.svc, p,
                                        {qa("Lead ship?", "Mersey"), qa("lead ship?", "Mersey"),
                                         qa("Capital of Peru?", "Lima"), qa("Predecessor class?", "Leander"),
                                         qa("Length?", "300 feet")});
    std::map<std::string, std::size_t> rejected;
    for (const auto& r : rep.rejected) ++rejected[r.reject_reason];
    t.check(rejected["duplicate"] == 1, "dedup rejects the repeated question");
    t.check(rejected["grounding"] == 1, "grounding rejects the foreign answer");
    t.check(rejected["cycle"] == 1, "cycle check rejects the inconsistent answer");
    // Both survivors passed all three stages, one through each cycle outcome.
    t.check(rep.survivors.size() == 2, "two pairs pass every stage");
    t.check(s.backend->remaining() == 0, "script consumed");

    testsupport::Gen gen(77);
    auto keys = [](const std::vector<QAPair>& v) {
        std::vector<std::pair<std::string, std::string>> out;
        for (const auto& x : v) out.emplace_back(x.question, x.answer);
        return out;
    };
    for (int i = 0; i < 100; ++i) {
        auto f = testsupport::random_coverage_fixture(gen, i);
        auto svc = testsupport::coverage_services(f);
        auto pairs = autoqa::gen_qa(svc, f.passage);
        auto once = autoqa::filter_qa(svc, f.passage, pairs);
        auto all = keys(pairs), kept = keys(once);
        std::size_t j = 0;
        for (const auto& k : all)
            if (j < kept.size() && k == kept[j]) ++j;
        t.check(j == kept.size(), "set " + std::to_string(i) + ": survivors not a subset");
        t.check(keys(autoqa::filter_qa(svc, f.passage, once)) == kept, "set " + std::to_string(i) + ": not idempotent");
    }
    return t.outcome("3 stages x {reject, pass}, 100 random QA sets");
}

Outcome replay_determinism() {
    Tally t;
    const auto out = fs::temp_directory_path() / "structsum_acceptance_replay";
    auto cfg = testsupport::demo::demo_config();
    cfg.replay_fixture = (fs::path(STRUCTSUM_DEMO_DIR) / "replay_mindmaps.jsonl").string();
    cfg.input = (fs::path(STRUCTSUM_DEMO_DIR) / "corpus.jsonl").string();
    cfg.output_dir = out.string();
    auto snapshot = [&] {
        std::map<std::string, std::string> files;
        for (const auto& e : fs::directory_iterator(out))
            files[e.path().filename().string()] = testsupport::read_file(e.path());
        return files;
    };
    const auto t0 = Clock::now();
    fs::remove_all(out);
    auto first_run = pipeline::run(cfg);
    t.check(first_run.exit_code == 0, "first run failed at " + first_run.failed_stage + ": " + first_run.message);
    auto first = snapshot();
    fs::remove_all(out);
    auto second_run = pipeline::run(cfg);
    t.check(second_run.exit_code == 0, "second run failed at " + second_run.failed_stage);
    auto second = snapshot();
    const double elapsed = seconds_since(t0);
    fs::remove_all(out);

    std::size_t jsonl = 0;
    for (const auto& [name, body] : first) {
        jsonl += name.size() > 6 && name.substr(name.size() - 6) == ".jsonl";
        t.check(second.count(name) && second.at(name) == body, name + " differs between runs");
    }
    t.check(first.size() == second.size(), "different file sets");
    t.check(first.count("manifest.json") == 1, "manifest missing");
    t.check(pipeline::read_jsonl(cfg.input).size() == 4 && std::count(first["passages.jsonl"].begin(),
                                                                       first["passages.jsonl"].end(), '\n') == 5,
            "corpus is not 5 passages");
    t.check(elapsed < kReplayTimeLimitS, "runtime");
    return t.outcome(std::to_string(first.size()) + " files (" + std::to_string(jsonl) + " JSONL) identical, 2 runs in " +
                     fmt("%.3f s", elapsed) + " (limit 5 s)");
}

Outcome textproc_filter() {
    Tally t;
    testsupport::Gen gen(606);
    std::size_t passing = 0;
    for (int i = 0; i < 100; ++i) {
        auto f = testsupport::random_filter_instance(gen);
        Passage p("r" + std::to_string(i), f.text);
        bool oracle = testsupport::oracle_table_filter(f);
        passing += oracle;
        t.check(p.sentences.size() == f.sentences, "passage " + std::to_string(i) + ": sentence count");
        t.check(textproc::passes_table_filter(p) == oracle, "passage " + std::to_string(i) + ": filter verdict");
    }
    const auto mersey = fixture_passage("mersey", "mersey.txt");
    t.check(textproc::passes_table_filter(mersey), "cruiser passage should pass");
    return t.outcome("100 random passages (" + std::to_string(passing) + " pass), cruiser passage " +
                     std::to_string(textproc::count_numeric_tokens(mersey.text)) + " numbers / " +
                     std::to_string(mersey.sentences.size()) + " sentences");
}

GenerationRecord stats_record(std::string id, StructSum s) {
    GenerationRecord r;
    r.passage_id = std::move(id);
    r.structsum = std::move(s);
    return r;
}

Outcome stats_oracle() {
    Tally t;
    testsupport::Gen gen(10);
    double worst = 0.0;
    auto near = [&](double a, double b, const std::string& what) {
        worst = std::max(worst, std::fabs(a - b));
        t.check(std::fabs(a - b) <= kStatsTolerance, what);
    };
    for (int round = 0; round < 50; ++round) {
        std::vector<GenerationRecord> records;
        std::map<std::string, std::string> passages;
        for (int i = 0; i < 10; ++i) {
            auto id = "p" + std::to_string(i);
            records.push_back(stats_record(id, gen.structsum(id)));
            if (gen.chance(0.9)) passages[id] = gen.passage(8);
        }
        auto rep = stats::corpus_stats(records, passages);
        auto o = testsupport::stats_oracle(records, passages);
        near(rep.tables.avg_words_per_chunk, o.words_per_chunk, "words per chunk");
        near(rep.tables.avg_sentences_per_chunk, o.sentences_per_chunk, "sentences per chunk");
        near(rep.tables.avg_words_per_input, o.words_per_input, "words per input");
        near(rep.tables.avg_sentences_per_input, o.sentences_per_input, "sentences per input");
        near(rep.tables.avg_rows, o.rows, "rows");
        near(rep.tables.avg_cols, o.cols, "cols");
        near(rep.tables.avg_tables, o.tables, "tables");
        t.check(rep.tables.max_tables == o.max_tables, "max tables");
        near(rep.mindmaps.avg_words, o.mm_words, "mind-map words");
        near(rep.mindmaps.avg_sentences, o.mm_sentences, "mind-map sentences");
        near(rep.mindmaps.avg_nodes, o.nodes, "nodes");
        near(rep.mindmaps.avg_depth, o.depth, "depth");
    }
    auto md = testsupport::fixture_text("seven_by_three.md");
    auto golden = stats::corpus_stats({stats_record("p", StructSum{SingleTable{tablegen::parse_markdown_table(md)}, "p"})});
    t.check(golden.tables.avg_rows == 7.0, "golden avg_rows");
    t.check(golden.tables.avg_cols == 3.0, "golden avg_cols");
    return t.outcome("50 ten-record corpora, max |error| " + fmt("%.1e", worst) + " (tol 1e-9), golden 7x3 " +
                     fmt("%.0f", golden.tables.avg_rows) + "x" + fmt("%.0f", golden.tables.avg_cols));
}

study::StudyResponse timed(std::string annotator, std::string item, std::int64_t ms) {
    study::StudyResponse r;
    r.annotator_id = std::move(annotator);
    r.item_id = std::move(item);
    r.elapsed_ms = ms;
    r.answer_text = "1961";
    return r;
}

Outcome study_math() {
    using study::Combination;
    Tally t;
    testsupport::Gen gen(100);
    for (int round = 0; round < 100; ++round) {
        std::vector<std::string> qs;
        for (int i = gen.uniform(0, 15); i > 0; --i) qs.push_back("q" + std::to_string(i));
        std::vector<Combination> combos;
        for (auto c : study::all_combinations)
            if (gen.chance(0.7)) combos.push_back(c);
        if (combos.empty()) combos.push_back(Combination::text_only);
        int rep = gen.uniform(1, 3);
        auto need = combos.size() * static_cast<std::size_t>(rep);
        auto annotators = testsupport::annotator_ids(need + static_cast<std::size_t>(gen.uniform(0, 5)));
        std::map<std::string, std::size_t> cells;
        for (const auto& a : study::build_assignments(qs, combos, annotators, rep)) {
            std::set<std::string> seen;
            for (const auto& id : a.item_ids) {
                t.check(seen.insert(id.substr(0, id.find('/'))).second, a.annotator_id + " repeats a question");
                ++cells[id];
            }
        }
        t.check(cells.size() == qs.size() * combos.size(), "round " + std::to_string(round) + ": cells missing");
        for (const auto& [id, n] : cells) t.check(n == static_cast<std::size_t>(rep), id + " replication");
    }

    std::vector<study::StudyResponse> constant;
    std::map<std::string, Combination> constant_items;
    for (int i = 0; i < 5; ++i) {
        auto id = "q" + std::to_string(i) + "/text_only";
        constant.push_back(timed("a", id, 10000));
        constant_items[id] = Combination::text_only;
    }
    auto cs = study::summarize(constant, constant_items).by_combination.at(Combination::text_only);
    t.check(cs.mean_time_s == kConstantMeanS && cs.ci95_low == kConstantMeanS && cs.ci95_high == kConstantMeanS,
            "constant times");

    // Text answers average 14 s, structure answers 8 s.
    std::vector<study::StudyResponse> rs;
    std::map<std::string, Combination> items;
    for (int i = 0; i < 4; ++i) {
        auto tx = "q" + std::to_string(i) + "/text_only";
        auto st = "q" + std::to_string(i) + "/structure_only";
        items[tx] = Combination::text_only;
        items[st] = Combination::structure_only;
        rs.push_back(timed("a" + std::to_string(i), tx, i % 2 ? 13000 : 15000));
        rs.push_back(timed("b" + std::to_string(i), st, i % 2 ? 7000 : 9000));
    }
    auto reduction = study::summarize(rs, items).time_reduction_pct;
    t.check(reduction && std::fabs(*reduction - kReductionTarget) <= kReductionTolerancePp, "reduction");
    return t.outcome("100 assignment configs, constant mean " + fmt("%.1f", cs.mean_time_s) + " s +/- " +
                     fmt("%.1f", cs.ci95_high - cs.mean_time_s) + ", reduction " +
                     fmt("%.2f%%", reduction.value_or(NAN)) + " (target 42.9 +/- 0.1 pp)");
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"algorithm1_fidelity", algorithm1_fidelity},
        {"cost_accounting", cost_accounting},
        {"critic_combinator", critic_combinator},
        {"serialization_round_trips", serialization_round_trips},
        {"coverage_oracle", coverage_oracle},
        {"filter_semantics", filter_semantics},
        {"replay_determinism", replay_determinism},
        {"textproc_filter", textproc_filter},
        {"stats", stats_oracle},
        {"study_math", study_math},
    };
    int failed = 0;
    for (const auto& [name, check] : criteria) {
        Outcome o;
        try {
            o = check();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += !o.pass;
        std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
