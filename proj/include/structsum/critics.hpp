#pragma once

#include <algorithm>
#include <cctype>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "structsum/model.hpp"
#include "structsum/services.hpp"
#include "structsum/text_util.hpp"

namespace structsum::critics {

// ---------------------------------------------------------------------------
// Citation parsing
// ---------------------------------------------------------------------------

namespace detail {

// Bracket groups holding either NA or a comma/space separated list of
// integers, in order of appearance. Other bracketed text is skipped.
struct BracketGroup {
    bool na = false;
    std::vector<long long> indices;
};

inline std::vector<BracketGroup> bracket_groups(std::string_view s) {
    std::vector<BracketGroup> out;
    std::size_t pos = 0;
    while ((pos = s.find('[', pos)) != std::string_view::npos) {
        auto close = s.find(']', pos + 1);
        if (close == std::string_view::npos) break;
        auto inner = text::trim_view(s.substr(pos + 1, close - pos - 1));
        pos = close + 1;
        if (text::iequals(inner, "NA") || text::iequals(inner, "N/A")) {
            out.push_back({true, {}});
            continue;
        }
        BracketGroup g;
        bool ok = !inner.empty();
        std::string num;
        auto flush = [&] {
            if (num.empty()) return;
            if (num.size() > 9) ok = false;
            else g.indices.push_back(std::stoll(num));
            num.clear();
        };
        for (char c : inner) {
            if (std::isdigit(static_cast<unsigned char>(c))) num += c;
            else if (c == ',' || text::is_space(c)) flush();
            else { ok = false; break; }
        }
        flush();
        if (ok && !g.indices.empty()) out.push_back(std::move(g));
    }
    return out;
}

}  // namespace detail

/// Maps bracket expressions to units in order: "[x,y]" (or any "[i,j,...]")
/// cites those 1-based sentences, "[NA]" cites nothing. A group with an index
/// outside [1, sentence_count] is treated as NA and flagged. Units without a
/// group are NA.
inline std::vector<AttributionCitation> parse_citations(std::string_view response, std::size_t unit_count,
                                                        std::size_t sentence_count) {
    if (unit_count < 1) throw std::invalid_argument("unit_count must be >= 1");
    auto groups = detail::bracket_groups(response);
    std::vector<AttributionCitation> out(unit_count);
    for (std::size_t u = 0; u < unit_count; ++u) {
        out[u].unit_index = static_cast<int>(u);
        if (u >= groups.size() || groups[u].na) continue;
        std::vector<int> cited;
        bool in_range = true;
        for (auto i : groups[u].indices) {
            if (i < 1 || static_cast<std::size_t>(i) > sentence_count) in_range = false;
            else cited.push_back(static_cast<int>(i));
        }
        if (!in_range) {
            out[u].range_violation = true;
            continue;
        }
        out[u].cited = std::move(cited);
    }
    return out;
}

inline bool is_valid_citation(const AttributionCitation& c) {
    return c.cited && !c.cited->empty() && !c.range_violation;
}

// ---------------------------------------------------------------------------
// Individual critics
// ---------------------------------------------------------------------------

inline std::string row_text(const std::vector<std::string>& row) {
    return "| " + text::join(row, " | ") + " |";
}

inline std::string path_text(const std::vector<std::string>& path) { return text::join(path, " -> "); }

namespace detail {

inline void table_factuality(const Services& svc, const Passage& p, const Table& table, int table_index,
                             Verdict& v) {
    std::vector<std::string> rows;
    for (const auto& r : table.rows) rows.push_back(row_text(r));
    auto reply = svc.llm.ask_one("critic.factuality.table",
                                 svc.render("critic.factuality.table", {{"sentences", p.sentences},
                                                                         {"header", text::join(table.header, " | ")},
                                                                         {"rows", rows}}));
    if (table.rows.empty()) {
        v.failures.push_back({"no_rows", table_index, -1, "table has no rows to attribute"});
        return;
    }
    auto cites = parse_citations(reply, table.rows.size(), p.sentences.size());
    for (auto& c : cites) {
        c.table_index = table_index;
        if (!is_valid_citation(c))
            v.failures.push_back({c.range_violation ? "citation_out_of_range" : "unattributed_row", table_index,
                                  c.unit_index, row_text(table.rows[static_cast<std::size_t>(c.unit_index)])});
        v.citations.push_back(std::move(c));
    }
}

inline void table_local(const Services& svc, const Table& table, int table_index, Verdict& v) {
    for (std::size_t col = 0; col < table.header.size(); ++col) {
        std::vector<std::string> cells;
        for (const auto& r : table.rows)
            if (col < r.size()) cells.push_back(r[col]);
        auto reply = svc.llm.ask_one("critic.local.table",
                                     svc.render("critic.local.table", {{"column", table.header[col]}, {"cells", cells}}));
        auto yn = text::parse_yes_no(reply);
        if (!yn.value_or(false))
            v.failures.push_back({yn ? "column_category_mismatch" : "unrecognized_reply", table_index,
                                  static_cast<int>(col), table.header[col]});
    }
}

inline void table_global(const Table& table, int table_index, Verdict& v) {
    if (table.header.empty()) v.failures.push_back({"empty_header", table_index, -1, {}});
    if (table.rows.empty()) v.failures.push_back({"no_rows", table_index, -1, {}});
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        if (row.size() != table.header.size())
            v.failures.push_back({"row_width_mismatch", table_index, static_cast<int>(r),
                                  std::to_string(row.size()) + " cells vs " + std::to_string(table.header.size()) +
                                      " columns"});
        if (std::all_of(row.begin(), row.end(), [](const std::string& c) { return text::trim_view(c).empty(); }))
            v.failures.push_back({"empty_row", table_index, static_cast<int>(r), {}});
    }
}

}  // namespace detail

/// Post-attribution of every row in one call; passes iff each row cites at
/// least one in-range sentence.
inline Verdict critic_factuality_table(const Services& svc, const Passage& p, const Table& table) {
    Verdict v{CriticKind::factuality, Modality::table, {}, {}};
    detail::table_factuality(svc, p, table, -1, v);
    return v;
}

/// Same as the table variant with root-to-leaf paths as units.
inline Verdict critic_factuality_mindmap(const Services& svc, const Passage& p, const MindMapNode& root) {
    Verdict v{CriticKind::factuality, Modality::mindmap, {}, {}};
    auto paths = mindmap_paths(root);
    std::vector<std::string> lines;
    for (const auto& path : paths) lines.push_back(path_text(path));
    auto reply = svc.llm.ask_one("critic.factuality.mindmap",
                                 svc.render("critic.factuality.mindmap", {{"sentences", p.sentences}, {"paths", lines}}));
    for (auto& c : parse_citations(reply, paths.size(), p.sentences.size())) {
        if (!is_valid_citation(c))
            v.failures.push_back({c.range_violation ? "citation_out_of_range" : "unattributed_path", -1, c.unit_index,
                                  lines[static_cast<std::size_t>(c.unit_index)]});
        v.citations.push_back(std::move(c));
    }
    return v;
}

/// One call per column: does every cell fit the header as a category?
inline Verdict critic_local_table(const Services& svc, const Table& table) {
    Verdict v{CriticKind::local_structure, Modality::table, {}, {}};
    detail::table_local(svc, table, -1, v);
    return v;
}

/// One call per root-to-leaf path: is the terminal node a specific value?
inline Verdict critic_local_mindmap(const Services& svc, const MindMapNode& root) {
    Verdict v{CriticKind::local_structure, Modality::mindmap, {}, {}};
    auto paths = mindmap_paths(root);
    for (std::size_t i = 0; i < paths.size(); ++i) {
        auto reply = svc.llm.ask_one("critic.local.mindmap",
                                     svc.render("critic.local.mindmap",
                                                {{"path", path_text(paths[i])}, {"leaf", paths[i].back()}}));
        auto yn = text::parse_yes_no(reply);
        if (!yn.value_or(false))
            v.failures.push_back({yn ? "terminal_not_specific" : "unrecognized_reply", -1, static_cast<int>(i),
                                  path_text(paths[i])});
    }
    return v;
}

/// Form-only heuristics, no model call: non-empty header, at least one row,
/// every row as wide as the header, no all-empty row.
inline Verdict critic_global_table(const Table& table) {
    Verdict v{CriticKind::global_structure, Modality::table, {}, {}};
    detail::table_global(table, -1, v);
    return v;
}

/// Renders the mind map as a numbered outline and asks whether it sits at
/// the right level of abstraction.
inline Verdict critic_global_mindmap(const Services& svc, const Passage& p, const MindMapNode& root) {
    Verdict v{CriticKind::global_structure, Modality::mindmap, {}, {}};
    auto reply = svc.llm.ask_one("critic.global.mindmap",
                                 svc.render("critic.global.mindmap", {{"passage", p.text}, {"toc", mindmap_to_toc(root)}}));
    auto yn = text::parse_yes_no(reply);
    if (!yn.value_or(false)) v.failures.push_back({yn ? "wrong_abstraction_level" : "unrecognized_reply", -1, -1, {}});
    return v;
}

// ---------------------------------------------------------------------------
// Suite, combination and cost
// ---------------------------------------------------------------------------

/// All three critics for one structured summary. For multiple tables each
/// table is checked on its own and findings carry its index, so the
/// instance fails a critic when any member table fails it. Critics run in
/// the order factuality, local, global; tables in order within each.
inline std::vector<Verdict> run_critics(const Services& svc, const Passage& p, const StructSum& s) {
    if (const auto* mm = std::get_if<MindMap>(&s.content)) {
        return {critic_factuality_mindmap(svc, p, mm->root), critic_local_mindmap(svc, mm->root),
                critic_global_mindmap(svc, p, mm->root)};
    }
    const auto tables = s.tables();
    const bool multi = std::holds_alternative<MultiTable>(s.content);
    Verdict fact{CriticKind::factuality, Modality::table, {}, {}};
    Verdict local{CriticKind::local_structure, Modality::table, {}, {}};
    Verdict global{CriticKind::global_structure, Modality::table, {}, {}};
    for (std::size_t i = 0; i < tables.size(); ++i)
        detail::table_factuality(svc, p, tables[i], multi ? static_cast<int>(i) : -1, fact);
    for (std::size_t i = 0; i < tables.size(); ++i)
        detail::table_local(svc, tables[i], multi ? static_cast<int>(i) : -1, local);
    for (std::size_t i = 0; i < tables.size(); ++i)
        detail::table_global(tables[i], multi ? static_cast<int>(i) : -1, global);
    return {fact, local, global};
}

/// Logical AND over one verdict per critic dimension.
inline bool combine(const std::vector<Verdict>& verdicts) {
    std::set<CriticKind> seen;
    for (const auto& v : verdicts) seen.insert(v.critic);
    for (auto k : all_critics)
        if (seen.count(k) == 0) throw IncompleteVerdictSet("missing verdict for critic " + to_string(k));
    return std::all_of(verdicts.begin(), verdicts.end(), [](const Verdict& v) { return v.passed(); });
}

/// Keeps records whose verdicts combine to true.
inline std::vector<GenerationRecord> filter_records(const std::vector<GenerationRecord>& records) {
    std::vector<GenerationRecord> out;
    for (const auto& r : records)
        if (combine(r.verdicts)) out.push_back(r);
    return out;
}

using CostMap = std::map<CriticKind, std::size_t>;

/// Predicted model calls per critic: tables {1, #cols, 0} per table, mind
/// maps {1, #paths, 1}.
inline CostMap critic_call_cost(const StructSum& s) {
    CostMap cost{{CriticKind::factuality, 0}, {CriticKind::local_structure, 0}, {CriticKind::global_structure, 0}};
    if (const auto* mm = std::get_if<MindMap>(&s.content)) {
        cost[CriticKind::factuality] = 1;
        cost[CriticKind::local_structure] = leaf_count(mm->root);
        cost[CriticKind::global_structure] = 1;
        return cost;
    }
    for (const auto& t : s.tables()) {
        cost[CriticKind::factuality] += 1;
        cost[CriticKind::local_structure] += t.header.size();
    }
    return cost;
}

/// Ledger tag each critic's calls are recorded under, per modality.
inline std::string critic_tag(CriticKind k, Modality m) {
    switch (k) {
        case CriticKind::factuality:
            return m == Modality::table ? "critic.factuality.table" : "critic.factuality.mindmap";
        case CriticKind::local_structure:
            return m == Modality::table ? "critic.local.table" : "critic.local.mindmap";
        case CriticKind::global_structure:
            return m == Modality::table ? "" : "critic.global.mindmap";
    }
    return {};
}

}  // namespace structsum::critics
