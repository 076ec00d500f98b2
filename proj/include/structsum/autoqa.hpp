#pragma once

#include <algorithm>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "structsum/model.hpp"
#include "structsum/services.hpp"
#include "structsum/text_util.hpp"

namespace structsum::autoqa {

inline constexpr int kDefaultPairCount = 10;

// ---------------------------------------------------------------------------
// QA generation and filtering
// ---------------------------------------------------------------------------

namespace detail {

// Strips "Q:"/"A:" style prefixes (also "Q1:", "Question:", "Answer:").
inline std::optional<std::string> tagged_line(std::string_view line, char tag) {
    auto s = text::trim_view(line);
    while (!s.empty() && (s.front() == '*' || s.front() == '-')) s.remove_prefix(1);
    s = text::trim_view(s);
    if (s.empty() || std::toupper(static_cast<unsigned char>(s.front())) != tag) return std::nullopt;
    const std::string_view word = tag == 'Q' ? "question" : "answer";
    std::size_t i = 1;
    if (s.size() >= word.size() && text::iequals(s.substr(0, word.size()), word)) i = word.size();
    while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i;
    while (i < s.size() && s[i] == '*') ++i;
    if (i >= s.size() || (s[i] != ':' && s[i] != '.')) return std::nullopt;
    auto rest = s.substr(i + 1);
    while (!rest.empty() && rest.front() == '*') rest.remove_prefix(1);
    auto out = text::trim(rest);
    if (out.empty()) return std::nullopt;
    return out;
}

}  // namespace detail

/// Reads alternating "Q: ..." / "A: ..." lines. A question is paired with
/// the next answer line; stray or unpaired lines are skipped.
inline std::vector<QAPair> parse_qa_pairs(std::string_view response) {
    std::vector<QAPair> out;
    std::optional<std::string> question;
    for (const auto& line : text::split_lines(response)) {
        if (auto q = detail::tagged_line(line, 'Q')) {
            question = std::move(q);
        } else if (auto a = detail::tagged_line(line, 'A')) {
            if (question) out.push_back({std::move(*question), std::move(*a), QAOrigin::auto_generated,
                                         QAFilterState::raw, {}});
            question.reset();
        }
    }
    return out;
}

/// One "autoqa.genqa" call; pairs come back as origin=auto, state=raw.
inline std::vector<QAPair> gen_qa(const Services& svc, const Passage& p, int pair_count = kDefaultPairCount) {
    if (p.empty()) throw std::invalid_argument("cannot generate questions for an empty passage");
    auto reply = svc.llm.ask_one(
        "autoqa.genqa", svc.render("autoqa.genqa", {{"passage", p.text}, {"num_pairs", std::to_string(pair_count)}}));
    return parse_qa_pairs(reply);
}

/// Case-folded trimmed equality short-circuits; otherwise one
/// "autoqa.equivalence" call decides. Unrecognized replies are "no".
inline bool answers_equivalent(const Services& svc, std::string_view question, std::string_view a,
                               std::string_view b) {
    if (text::fold(a) == text::fold(b)) return true;
    auto reply = svc.llm.ask_one("autoqa.equivalence",
                                 svc.render("autoqa.equivalence", {{"question", std::string(question)},
                                                                   {"answer_a", std::string(a)},
                                                                   {"answer_b", std::string(b)}}));
    return text::parse_yes_no(reply).value_or(false);
}

/// True iff at least one word of the answer occurs among the passage's words
/// (case-folded, punctuation stripped, no stopword removal).
inline bool answer_grounded(std::string_view answer, std::string_view passage_text) {
    auto words = text::word_tokens(passage_text);
    std::set<std::string> vocab(words.begin(), words.end());
    for (const auto& w : text::word_tokens(answer))
        if (vocab.count(w)) return true;
    return false;
}

struct FilterReport {
    std::vector<QAPair> survivors;
    std::vector<QAPair> rejected;
    std::vector<std::string> warnings;
};

/// Three stages in order: drop repeated questions (first kept), drop answers
/// with no word in the passage, then re-answer each question from the
/// passage ("autoqa.cycle") and keep it only if that answer is equivalent to
/// the original. Pairs already rejected are passed through untouched.
inline FilterReport filter_qa_report(const Services& svc, const Passage& p, std::vector<QAPair> pairs) {
    FilterReport rep;
    std::set<std::string> seen;
    for (auto& qa : pairs) {
        if (qa.rejected()) {
            rep.rejected.push_back(std::move(qa));
            continue;
        }
        if (!seen.insert(text::fold(qa.question)).second) {
            qa.advance(QAFilterState::rejected, "duplicate");
            rep.rejected.push_back(std::move(qa));
            continue;
        }
        if (qa.state < QAFilterState::deduped) qa.advance(QAFilterState::deduped);
        if (!answer_grounded(qa.answer, p.text)) {
            qa.advance(QAFilterState::rejected, "grounding");
            rep.rejected.push_back(std::move(qa));
            continue;
        }
        if (qa.state < QAFilterState::grounded) qa.advance(QAFilterState::grounded);
        bool consistent = false;
        try {
            auto from_text = text::first_line(svc.llm.ask_one(
                "autoqa.cycle", svc.render("autoqa.answer", {{"context", p.text}, {"question", qa.question}})));
            consistent = answers_equivalent(svc, qa.question, from_text, qa.answer);
        } catch (const BackendError& e) {
            rep.warnings.push_back("cycle check failed for \"" + qa.question + "\": " + e.what());
            qa.advance(QAFilterState::rejected, "backend");
            rep.rejected.push_back(std::move(qa));
            continue;
        }
        if (!consistent) {
            qa.advance(QAFilterState::rejected, "cycle");
            rep.rejected.push_back(std::move(qa));
            continue;
        }
        if (qa.state < QAFilterState::cycle_checked) qa.advance(QAFilterState::cycle_checked);
        rep.survivors.push_back(std::move(qa));
    }
    return rep;
}

inline std::vector<QAPair> filter_qa(const Services& svc, const Passage& p, std::vector<QAPair> pairs) {
    return filter_qa_report(svc, p, std::move(pairs)).survivors;
}

// ---------------------------------------------------------------------------
// Answering from a structured summary and coverage
// ---------------------------------------------------------------------------

/// Answers from the serialized summary only ("autoqa.answer"); returns the
/// trimmed first line of the reply.
inline std::string answer_from_structsum(const Services& svc, const StructSum& s, std::string_view question) {
    auto reply = svc.llm.ask_one("autoqa.answer", svc.render("autoqa.answer", {{"context", serialize_for_qa(s)},
                                                                               {"question", std::string(question)}}));
    return text::first_line(reply);
}

struct CoverageResult {
    std::string passage_id;
    std::size_t surviving_pairs = 0;
    std::size_t answered_equivalent = 0;
    std::vector<std::string> warnings;

    bool defined() const { return surviving_pairs > 0; }
    std::optional<double> value() const {
        if (!defined()) return std::nullopt;
        return static_cast<double>(answered_equivalent) / static_cast<double>(surviving_pairs);
    }
};

/// Fraction of surviving auto-generated questions whose answer from the
/// summary is equivalent to the reference answer. Undefined with zero
/// survivors. A pair whose answering fails at the backend leaves the
/// denominator.
inline CoverageResult coverage_for_pairs(const Services& svc, const StructSum& s, const std::string& passage_id,
                                         const std::vector<QAPair>& survivors) {
    CoverageResult r;
    r.passage_id = passage_id;
    for (const auto& qa : survivors) {
        try {
            auto answer = answer_from_structsum(svc, s, qa.question);
            bool eq = answers_equivalent(svc, qa.question, answer, qa.answer);
            ++r.surviving_pairs;
            if (eq) ++r.answered_equivalent;
        } catch (const BackendError& e) {
            r.warnings.push_back("answering \"" + qa.question + "\" failed: " + e.what());
        }
    }
    return r;
}

inline CoverageResult coverage(const Services& svc, const StructSum& s, const Passage& p,
                               int pair_count = kDefaultPairCount) {
    auto filtered = filter_qa_report(svc, p, gen_qa(svc, p, pair_count));
    auto r = coverage_for_pairs(svc, s, p.id, filtered.survivors);
    r.warnings.insert(r.warnings.begin(), filtered.warnings.begin(), filtered.warnings.end());
    return r;
}

struct CurvePoint {
    double threshold = 0.0;
    double percent = 0.0;  // 0..100
};

/// For each threshold, the percentage of defined coverage values at or
/// above it. Undefined values are left out entirely.
inline std::vector<CurvePoint> coverage_curve(const std::vector<std::optional<double>>& values,
                                              const std::vector<double>& thresholds) {
    if (!std::is_sorted(thresholds.begin(), thresholds.end()))
        throw std::invalid_argument("coverage thresholds must be sorted ascending");
    std::vector<double> defined;
    for (const auto& v : values)
        if (v) defined.push_back(*v);
    if (defined.empty()) return {};
    std::sort(defined.begin(), defined.end());
    std::vector<CurvePoint> out;
    for (double t : thresholds) {
        auto it = std::lower_bound(defined.begin(), defined.end(), t);
        auto at_least = static_cast<double>(defined.end() - it);
        out.push_back({t, 100.0 * at_least / static_cast<double>(defined.size())});
    }
    return out;
}

inline std::vector<double> default_thresholds() {
    std::vector<double> t;
    for (int i = 0; i <= 10; ++i) t.push_back(i / 10.0);
    return t;
}

struct ExternalQA {
    std::string question;
    std::string answer;
};

struct ExternalQAResult {
    std::size_t total = 0;
    std::size_t correct = 0;
    double accuracy() const { return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total); }
};

/// Scores externally written QA pairs against the summary; they skip the
/// Auto-QA filters.
inline ExternalQAResult evaluate_with_external_qa(const Services& svc, const StructSum& s,
                                                  const std::vector<ExternalQA>& triples) {
    if (triples.empty()) throw std::invalid_argument("no external QA pairs");
    ExternalQAResult r;
    for (const auto& t : triples) {
        QAPair qa{t.question, t.answer, QAOrigin::external, QAFilterState::raw, {}};
        auto answer = answer_from_structsum(svc, s, qa.question);
        ++r.total;
        if (answers_equivalent(svc, qa.question, answer, qa.answer)) ++r.correct;
    }
    return r;
}

}  // namespace structsum::autoqa
