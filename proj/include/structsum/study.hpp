#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "structsum/errors.hpp"
#include "structsum/model.hpp"

namespace structsum::study {

enum class Combination { structure_only, text_only, structure_plus_text };

inline constexpr Combination all_combinations[] = {Combination::structure_only, Combination::text_only,
                                                   Combination::structure_plus_text};

inline std::string to_string(Combination c) {
    switch (c) {
        case Combination::structure_only: return "structure_only";
        case Combination::text_only: return "text_only";
        case Combination::structure_plus_text: return "structure_plus_text";
    }
    return "?";
}

inline Combination combination_from_string(std::string_view s) {
    for (auto c : all_combinations)
        if (to_string(c) == s) return c;
    throw SchemaError("unknown combination: " + std::string(s));
}

enum class Grade { ungraded, correct, incorrect };

inline std::string to_string(Grade g) {
    switch (g) {
        case Grade::ungraded: return "ungraded";
        case Grade::correct: return "correct";
        case Grade::incorrect: return "incorrect";
    }
    return "?";
}

inline Grade grade_from_string(std::string_view s) {
    if (s == "ungraded") return Grade::ungraded;
    if (s == "correct") return Grade::correct;
    if (s == "incorrect") return Grade::incorrect;
    throw SchemaError("unknown grade: " + std::string(s));
}

struct StudyQuestion {
    std::string question_id;
    std::string question;
    std::string reference_answer;
    Passage passage;
    StructSum structsum;
};

/// One (question, combination) cell.
struct StudyItem {
    std::string item_id;
    std::string question_id;
    std::string question;
    Passage passage;
    StructSum structsum;
    Combination combination = Combination::text_only;
};

inline std::string item_id_for(const std::string& question_id, Combination c) {
    return question_id + "/" + to_string(c);
}

struct Assignment {
    std::string annotator_id;
    std::vector<std::string> item_ids;
};

struct StudyResponse {
    std::string annotator_id;
    std::string item_id;
    std::optional<std::string> answer_text;
    bool unanswerable = false;
    std::int64_t elapsed_ms = 0;  // reveal to submission, measured by the client
    Grade grade = Grade::ungraded;
};

// ---------------------------------------------------------------------------
// Assignment construction
// ---------------------------------------------------------------------------

struct CellRef {
    std::string question_id;
    Combination combination;
};

/// Deals every (question, combination) cell, `replication` times, to
/// annotators round-robin. Consecutive cells of one question land on
/// distinct annotators as long as there are at least
/// combinations * replication annotators, so nobody sees a question twice.
inline std::vector<Assignment> build_assignments(const std::vector<std::string>& question_ids,
                                                 const std::vector<Combination>& combinations,
                                                 const std::vector<std::string>& annotators, int replication = 1) {
    if (replication < 1) throw std::invalid_argument("replication must be >= 1");
    const auto per_question = combinations.size() * static_cast<std::size_t>(replication);
    if (annotators.size() < per_question)
        throw AssignmentInfeasible("need at least " + std::to_string(per_question) + " annotators, have " +
                                   std::to_string(annotators.size()));
    std::vector<Assignment> out;
    for (const auto& a : annotators) out.push_back({a, {}});
    std::size_t k = 0;
    for (const auto& q : question_ids)
        for (auto c : combinations)
            for (int r = 0; r < replication; ++r) out[k++ % annotators.size()].item_ids.push_back(item_id_for(q, c));
    return out;
}

// ---------------------------------------------------------------------------
// Summary statistics
// ---------------------------------------------------------------------------

struct CombinationSummary {
    std::size_t n = 0;  // responses in the cell
    std::size_t n_timing = 0;
    std::size_t n_unanswerable = 0;
    double mean_time_s = 0;
    double ci95_low = 0;
    double ci95_high = 0;
    std::size_t graded = 0;
    std::size_t correct = 0;
    std::optional<double> accuracy;  // correct / graded
    double unanswerable_rate = 0;
};

struct StudySummary {
    std::map<Combination, CombinationSummary> by_combination;
    /// (text mean - structure mean) / text mean, in percent.
    std::optional<double> time_reduction_pct;
    std::optional<double> structure_plus_text_reduction_pct;
};

/// Per-combination timing (unanswerable responses excluded) with a normal
/// approximation 95% interval mean +/- 1.96 s / sqrt(n), where s is the
/// sample standard deviation (taken as 0 for n < 2). Combinations with no
/// responses are omitted.
inline StudySummary summarize(const std::vector<StudyResponse>& responses,
                              const std::map<std::string, Combination>& item_combination) {
    std::map<Combination, std::vector<const StudyResponse*>> cells;
    for (const auto& r : responses) {
        auto it = item_combination.find(r.item_id);
        if (it == item_combination.end()) throw NotFound("response for unknown item " + r.item_id);
        cells[it->second].push_back(&r);
    }
    StudySummary out;
    for (const auto& [combo, rs] : cells) {
        CombinationSummary s;
        s.n = rs.size();
        std::vector<double> times;
        for (const auto* r : rs) {
            if (r->unanswerable) ++s.n_unanswerable;
            else times.push_back(static_cast<double>(r->elapsed_ms) / 1000.0);
            if (r->grade != Grade::ungraded) {
                ++s.graded;
                if (r->grade == Grade::correct) ++s.correct;
            }
        }
        s.n_timing = times.size();
        if (!times.empty()) {
            double sum = 0;
            for (double t : times) sum += t;
            s.mean_time_s = sum / static_cast<double>(times.size());
            double sd = 0;
            if (times.size() >= 2) {
                double ss = 0;
                for (double t : times) ss += (t - s.mean_time_s) * (t - s.mean_time_s);
                sd = std::sqrt(ss / static_cast<double>(times.size() - 1));
            }
            double half = 1.96 * sd / std::sqrt(static_cast<double>(times.size()));
            s.ci95_low = s.mean_time_s - half;
            s.ci95_high = s.mean_time_s + half;
        }
        if (s.graded) s.accuracy = static_cast<double>(s.correct) / static_cast<double>(s.graded);
        s.unanswerable_rate = static_cast<double>(s.n_unanswerable) / static_cast<double>(s.n);
        out.by_combination[combo] = s;
    }
    auto reduction = [&](Combination c) -> std::optional<double> {
        auto text_it = out.by_combination.find(Combination::text_only);
        auto other = out.by_combination.find(c);
        if (text_it == out.by_combination.end() || other == out.by_combination.end()) return std::nullopt;
        if (text_it->second.n_timing == 0 || other->second.n_timing == 0 || text_it->second.mean_time_s <= 0)
            return std::nullopt;
        return 100.0 * (text_it->second.mean_time_s - other->second.mean_time_s) / text_it->second.mean_time_s;
    };
    out.time_reduction_pct = reduction(Combination::structure_only);
    out.structure_plus_text_reduction_pct = reduction(Combination::structure_plus_text);
    return out;
}

inline json summary_to_json(const StudySummary& s) {
    json combos = json::object();
    for (const auto& [c, v] : s.by_combination) {
        combos[to_string(c)] = {{"n", v.n},
                                {"n_timing", v.n_timing},
                                {"n_unanswerable", v.n_unanswerable},
                                {"mean_time_s", v.mean_time_s},
                                {"ci95_low", v.ci95_low},
                                {"ci95_high", v.ci95_high},
                                {"graded", v.graded},
                                {"correct", v.correct},
                                {"accuracy_after_grading", v.accuracy ? json(*v.accuracy) : json(nullptr)},
                                {"unanswerable_rate", v.unanswerable_rate}};
    }
    return json{{"by_combination", combos},
                {"time_reduction_pct", s.time_reduction_pct ? json(*s.time_reduction_pct) : json(nullptr)},
                {"structure_plus_text_reduction_pct",
                 s.structure_plus_text_reduction_pct ? json(*s.structure_plus_text_reduction_pct) : json(nullptr)}};
}

// ---------------------------------------------------------------------------
// Study definition and event-log store
// ---------------------------------------------------------------------------

struct StudyDefinition {
    std::vector<StudyQuestion> questions;
    std::vector<Combination> combinations{std::begin(all_combinations), std::end(all_combinations)};
    std::vector<std::string> annotators;
    int replication = 1;
};

/// {"questions": [{question_id, question, answer, passage: {id, text},
/// structsum}], "combinations": [...], "annotators": [...], "replication": n}
inline StudyDefinition definition_from_json(const json& j) {
    try {
        StudyDefinition d;
        for (const auto& q : j.at("questions")) {
            d.questions.push_back({q.at("question_id").get<std::string>(), q.at("question").get<std::string>(),
                                   q.value("answer", std::string{}), passage_from_json(q.at("passage")),
                                   structsum_from_json(q.at("structsum"))});
        }
        if (j.contains("combinations")) {
            d.combinations.clear();
            for (const auto& c : j.at("combinations")) d.combinations.push_back(combination_from_string(c.get<std::string>()));
        }
        d.annotators = j.at("annotators").get<std::vector<std::string>>();
        d.replication = j.value("replication", 1);
        return d;
    } catch (const json::exception& e) {
        throw SchemaError(std::string("malformed study definition: ") + e.what());
    }
}

/// What the reader sees for a structured summary: markdown tables with
/// captions, or the mind map as a plain indented outline.
inline std::string render_structure_for_reader(const StructSum& s) {
    if (const auto* mm = std::get_if<MindMap>(&s.content)) return mindmap_to_toc(mm->root);
    return serialize_for_qa(s);
}

struct AuditEntry {
    std::string item_id;
    std::string annotator_id;
    Grade from = Grade::ungraded;
    Grade to = Grade::ungraded;
};

/// Study state backed by an append-only JSONL event log. Every accepted
/// response and grade is written before it becomes visible; the log is
/// replayed on construction. All methods are safe to call concurrently.
class StudyStore {
public:
    StudyStore(StudyDefinition def, std::optional<std::filesystem::path> log_path = std::nullopt)
        : log_path_(std::move(log_path)) {
        for (const auto& q : def.questions) {
            if (!question_ids_.insert(q.question_id).second)
                throw SchemaError("duplicate question id " + q.question_id);
            for (auto c : def.combinations) {
                StudyItem item{item_id_for(q.question_id, c), q.question_id, q.question, q.passage, q.structsum, c};
                items_.emplace(item.item_id, std::move(item));
            }
        }
        std::vector<std::string> qids;
        for (const auto& q : def.questions) qids.push_back(q.question_id);
        for (auto& a : build_assignments(qids, def.combinations, def.annotators, def.replication))
            assignments_[a.annotator_id] = std::move(a);
        if (log_path_) replay();
    }

    const std::map<std::string, Assignment>& assignments() const { return assignments_; }

    const StudyItem& item(const std::string& item_id) const {
        auto it = items_.find(item_id);
        if (it == items_.end()) throw NotFound("unknown item " + item_id);
        return it->second;
    }

    /// First assigned item the annotator has not answered, if any.
    std::optional<StudyItem> next_item(const std::string& annotator_id) const {
        std::lock_guard lock(mu_);
        const auto& a = assignment(annotator_id);
        for (const auto& id : a.item_ids)
            if (responses_.count({annotator_id, id}) == 0) return items_.at(id);
        return std::nullopt;
    }

    /// Context payload for an assigned, unanswered item.
    json reveal(const std::string& annotator_id, const std::string& item_id) {
        std::lock_guard lock(mu_);
        check_assigned(annotator_id, item_id);
        if (responses_.count({annotator_id, item_id})) throw AlreadyAnswered("item " + item_id + " already answered");
        const auto& it = items_.at(item_id);
        json payload{{"item_id", item_id}, {"combination", to_string(it.combination)}};
        if (it.combination != Combination::structure_only) payload["text"] = it.passage.text;
        if (it.combination != Combination::text_only) {
            payload["structure"] = render_structure_for_reader(it.structsum);
            payload["structure_kind"] = it.structsum.kind();
        }
        append({{"type", "reveal"}, {"annotator_id", annotator_id}, {"item_id", item_id}});
        return payload;
    }

    void record_response(const StudyResponse& resp) {
        std::lock_guard lock(mu_);
        validate(resp);
        append(response_event(resp));
        responses_[{resp.annotator_id, resp.item_id}] = resp;
        order_.emplace_back(resp.annotator_id, resp.item_id);
    }

    void grade_response(const std::string& item_id, const std::string& annotator_id, Grade grade) {
        std::lock_guard lock(mu_);
        auto it = responses_.find({annotator_id, item_id});
        if (it == responses_.end()) throw NotFound("no response from " + annotator_id + " for " + item_id);
        append({{"type", "grade"}, {"annotator_id", annotator_id}, {"item_id", item_id}, {"grade", to_string(grade)}});
        apply_grade(it->second, grade);
    }

    std::vector<StudyResponse> responses() const {
        std::lock_guard lock(mu_);
        std::vector<StudyResponse> out;
        for (const auto& key : order_) out.push_back(responses_.at(key));
        return out;
    }

    std::vector<AuditEntry> audit_log() const {
        std::lock_guard lock(mu_);
        return audit_;
    }

    std::map<std::string, Combination> item_combinations(std::optional<Modality> modality = std::nullopt) const {
        std::map<std::string, Combination> out;
        for (const auto& [id, it] : items_)
            if (!modality || it.structsum.modality() == *modality) out[id] = it.combination;
        return out;
    }

    /// Overall summary plus one per modality present in the study.
    json summary_json() const {
        auto rs = responses();
        json out{{"overall", summary_to_json(summarize(rs, item_combinations()))}};
        for (auto m : {Modality::table, Modality::mindmap}) {
            auto combos = item_combinations(m);
            std::vector<StudyResponse> subset;
            for (const auto& r : rs)
                if (combos.count(r.item_id)) subset.push_back(r);
            if (!subset.empty()) out["by_modality"][to_string(m)] = summary_to_json(summarize(subset, combos));
        }
        return out;
    }

private:
    using Key = std::pair<std::string, std::string>;  // annotator, item

    const Assignment& assignment(const std::string& annotator_id) const {
        auto it = assignments_.find(annotator_id);
        if (it == assignments_.end()) throw NotAssigned("unknown annotator " + annotator_id);
        return it->second;
    }

    void check_assigned(const std::string& annotator_id, const std::string& item_id) const {
        const auto& a = assignment(annotator_id);
        if (std::find(a.item_ids.begin(), a.item_ids.end(), item_id) == a.item_ids.end())
            throw NotAssigned("item " + item_id + " is not assigned to " + annotator_id);
    }

    void validate(const StudyResponse& r) const {
        check_assigned(r.annotator_id, r.item_id);
        if (responses_.count({r.annotator_id, r.item_id}))
            throw AlreadyAnswered("item " + r.item_id + " already answered by " + r.annotator_id);
        if (r.answer_text.has_value() == r.unanswerable)
            throw SchemaError("a response carries either answer_text or the unanswerable flag");
        if (r.elapsed_ms <= 0) throw SchemaError("elapsed_ms must be positive");
    }

    void apply_grade(StudyResponse& r, Grade grade) {
        if (r.grade != Grade::ungraded) audit_.push_back({r.item_id, r.annotator_id, r.grade, grade});
        r.grade = grade;
    }

    static json response_event(const StudyResponse& r) {
        json j{{"type", "response"},
               {"annotator_id", r.annotator_id},
               {"item_id", r.item_id},
               {"unanswerable", r.unanswerable},
               {"elapsed_ms", r.elapsed_ms}};
        if (r.answer_text) j["answer_text"] = *r.answer_text;
        return j;
    }

    void append(const json& event) {
        if (!log_path_) return;
        std::ofstream out(*log_path_, std::ios::app);
        if (!out) throw ConfigError("cannot append to study log " + log_path_->string());
        out << event.dump() << "\n";
        out.flush();
        if (!out) throw ConfigError("write to study log failed");
    }

    void replay() {
        std::ifstream in(*log_path_);
        if (!in) return;
        std::size_t lineno = 0;
        for (std::string line; std::getline(in, line);) {
            ++lineno;
            if (text::trim_view(line).empty()) continue;
            auto j = json::parse(line, nullptr, false);
            if (j.is_discarded()) throw SchemaError("study log line " + std::to_string(lineno) + " is not JSON");
            auto type = j.value("type", std::string{});
            if (type == "response") {
                StudyResponse r;
                r.annotator_id = j.at("annotator_id").get<std::string>();
                r.item_id = j.at("item_id").get<std::string>();
                r.unanswerable = j.value("unanswerable", false);
                if (j.contains("answer_text")) r.answer_text = j.at("answer_text").get<std::string>();
                r.elapsed_ms = j.at("elapsed_ms").get<std::int64_t>();
                validate(r);
                responses_[{r.annotator_id, r.item_id}] = r;
                order_.emplace_back(r.annotator_id, r.item_id);
            } else if (type == "grade") {
                auto it = responses_.find({j.at("annotator_id").get<std::string>(), j.at("item_id").get<std::string>()});
                if (it == responses_.end())
                    throw SchemaError("study log line " + std::to_string(lineno) + " grades a missing response");
                apply_grade(it->second, grade_from_string(j.at("grade").get<std::string>()));
            }
        }
    }

    std::optional<std::filesystem::path> log_path_;
    std::set<std::string> question_ids_;
    std::map<std::string, StudyItem> items_;
    std::map<std::string, Assignment> assignments_;
    mutable std::mutex mu_;
    std::map<Key, StudyResponse> responses_;
    std::vector<Key> order_;
    std::vector<AuditEntry> audit_;
};

}  // namespace structsum::study
