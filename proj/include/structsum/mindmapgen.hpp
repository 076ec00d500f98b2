#pragma once

#include <optional>
#include <string>
#include <vector>

#include "structsum/model.hpp"
#include "structsum/services.hpp"
#include "structsum/text_util.hpp"

namespace structsum::mindmapgen {

enum class Termination { in_progress, continue_no, max_steps, expansion_rejected };

inline std::string to_string(Termination t) {
    switch (t) {
        case Termination::in_progress: return "in_progress";
        case Termination::continue_no: return "continue_no";
        case Termination::max_steps: return "max_steps";
        case Termination::expansion_rejected: return "expansion_rejected";
    }
    return "?";
}

struct IterationState {
    int step = 0;
    MindMapNode mindmap;
    int max_steps = 5;
    Termination terminated_by = Termination::in_progress;
    int expansions = 0;
    int repairs = 0;
    std::vector<std::string> warnings;
};

struct Options {
    int max_steps = 5;
    int samples = 4;  // expansion samples per step
};

/// Parses one candidate; nullopt when it is not a valid tree or, if
/// `expected_root` is given, when it renames the root (case-insensitive).
inline std::optional<MindMapNode> try_parse(const std::string& candidate,
                                            const std::optional<std::string>& expected_root = std::nullopt) {
    try {
        auto tree = parse_mindmap_json(candidate);
        if (expected_root && !text::iequals(text::trim(*expected_root), tree.label)) return std::nullopt;
        return tree;
    } catch (const MindMapParseError&) {
        return std::nullopt;
    }
}

/// Root concept as a single-node tree. Samples are tried in order; each may
/// be JSON or a bare label on one line.
inline MindMapNode generate_root(const Services& svc, const Passage& p, int samples = 1) {
    if (p.empty()) throw std::invalid_argument("cannot build a mind map for an empty passage");
    auto resp = svc.llm.ask("mindmap.root", svc.render("mindmap.root", {{"passage", p.text}}), samples);
    for (const auto& s : resp.samples) {
        if (auto tree = try_parse(s)) return MindMapNode{tree->label, {}};
        if (s.find('{') != std::string::npos) continue;  // malformed JSON, not a bare label
        auto label = text::first_line(s);
        while (!label.empty() && (label.front() == '"' || label.front() == '*')) label.erase(label.begin());
        while (!label.empty() && (label.back() == '"' || label.back() == '*' || label.back() == '.'))
            label.pop_back();
        label = text::trim(label);
        if (!label.empty()) return MindMapNode{label, {}};
    }
    throw RootGenerationFailed("no usable root concept for passage " + p.id);
}

struct ContinueDecision {
    bool expand = false;
    bool recognized = true;
};

/// Unrecognized replies count as "no".
inline ContinueDecision should_continue(const Services& svc, const Passage& p, const MindMapNode& mindmap) {
    auto reply = svc.llm.ask_one(
        "mindmap.continue",
        svc.render("mindmap.continue", {{"passage", p.text}, {"mindmap", mindmap_to_json_text(mindmap)}}));
    auto yn = text::parse_yes_no(reply);
    return {yn.value_or(false), yn.has_value()};
}

/// One call carrying `k` samples; each is a full expanded mind map.
inline std::vector<std::string> expand(const Services& svc, const Passage& p, const MindMapNode& mindmap, int k) {
    if (k < 1) throw std::invalid_argument("expansion sample count must be >= 1");
    return svc.llm
        .ask("mindmap.expand",
             svc.render("mindmap.expand", {{"passage", p.text}, {"mindmap", mindmap_to_json_text(mindmap)}}), k)
        .samples;
}

struct Selection {
    MindMapNode tree;
    std::size_t chosen = 0;
    bool repaired = false;
};

/// First candidate that parses to a valid tree (keeping `expected_root`, if
/// given) wins. Otherwise candidate 0 goes through one "mindmap.json_repair"
/// call; if that output is unusable too, ExpansionRejected is raised.
inline Selection select_or_repair(const Services& svc, const std::vector<std::string>& candidates,
                                  const std::optional<std::string>& expected_root = std::nullopt) {
    if (candidates.empty()) throw std::invalid_argument("no expansion candidates");
    for (std::size_t i = 0; i < candidates.size(); ++i)
        if (auto tree = try_parse(candidates[i], expected_root)) return {std::move(*tree), i, false};
    auto repaired = svc.llm.ask_one("mindmap.json_repair",
                                    svc.render("mindmap.json_repair", {{"candidate", candidates.front()}}));
    if (auto tree = try_parse(repaired, expected_root)) return {std::move(*tree), 0, true};
    throw ExpansionRejected("no expansion candidate parsed, and the repair failed");
}

/// Iterative prompting: generate the root, then up to `max_steps` rounds of
/// continue-decision plus sampled expansion. The step counter advances at
/// the top of each round, so a "no" on round n returns with step == n.
inline IterationState iterative_generate(const Services& svc, const Passage& p, Options opts = {}) {
    if (opts.max_steps < 1) throw std::invalid_argument("max_steps must be >= 1");
    IterationState st;
    st.max_steps = opts.max_steps;
    st.mindmap = generate_root(svc, p);
    while (st.step < st.max_steps) {
        ++st.step;
        auto decision = should_continue(svc, p, st.mindmap);
        if (!decision.recognized)
            st.warnings.push_back("unrecognized continue reply at step " + std::to_string(st.step) +
                                  "; treated as no");
        if (!decision.expand) {
            st.terminated_by = Termination::continue_no;
            return st;
        }
        auto candidates = expand(svc, p, st.mindmap, opts.samples);
        try {
            auto sel = select_or_repair(svc, candidates, st.mindmap.label);
            st.mindmap = std::move(sel.tree);
            ++st.expansions;
            if (sel.repaired) ++st.repairs;
        } catch (const ExpansionRejected& e) {
            st.warnings.push_back(std::string("step ") + std::to_string(st.step) + ": " + e.what());
            st.terminated_by = Termination::expansion_rejected;
            return st;
        }
    }
    st.terminated_by = Termination::max_steps;
    return st;
}

inline StructSum to_structsum(const IterationState& st, const Passage& p) {
    return StructSum{MindMap{st.mindmap}, p.id};
}

}  // namespace structsum::mindmapgen
