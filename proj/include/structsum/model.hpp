#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "structsum/errors.hpp"
#include "structsum/sentence_splitter.hpp"
#include "structsum/text_util.hpp"

namespace structsum {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Passage
// ---------------------------------------------------------------------------

struct Passage {
    std::string id;
    std::string text;
    std::vector<std::string> sentences;

    Passage() = default;
    Passage(std::string id_, std::string text_,
            const textproc::SplitterRules& rules = textproc::SplitterRules::defaults())
        : id(std::move(id_)), text(std::move(text_)), sentences(textproc::split_sentences(text, rules)) {}

    bool empty() const { return text::trim_view(text).empty(); }
};

// ---------------------------------------------------------------------------
// Tables
// ---------------------------------------------------------------------------

struct Table {
    std::string caption;
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column_count() const { return header.size(); }

    bool well_formed() const {
        if (header.empty()) return false;
        for (const auto& r : rows)
            if (r.size() != header.size()) return false;
        return true;
    }

    friend bool operator==(const Table&, const Table&) = default;
};

/// Serialized table plus the indices of rows that had to be padded or cut
/// to the header width.
struct MarkdownRendering {
    std::string text;
    std::vector<std::size_t> ragged_rows;
};

namespace detail {

inline std::string escape_cell(std::string_view cell) {
    std::string out;
    out.reserve(cell.size());
    for (char c : cell) {
        if (c == '|' || c == '\\') {
            out += '\\';
            out += c;
        } else if (c == '\n' || c == '\r') {
            out += ' ';
        } else {
            out += c;
        }
    }
    return out;
}

inline void append_row(std::string& out, const std::vector<std::string>& cells, std::size_t width) {
    out += '|';
    for (std::size_t i = 0; i < width; ++i) {
        out += ' ';
        if (i < cells.size()) out += escape_cell(cells[i]);
        out += " |";
    }
}

}  // namespace detail

inline MarkdownRendering table_to_markdown_checked(const Table& table) {
    MarkdownRendering r;
    const std::size_t width = table.header.size();
    detail::append_row(r.text, table.header, width);
    r.text += "\n|";
    for (std::size_t i = 0; i < width; ++i) r.text += " --- |";
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        if (table.rows[i].size() != width) r.ragged_rows.push_back(i);
        r.text += '\n';
        detail::append_row(r.text, table.rows[i], width);
    }
    return r;
}

/// Pipe table: header line, dash separator, one line per row. Literal '|'
/// in cells is written as "\|" (and '\' as "\\"). Ragged rows are padded (or cut) to the
/// header width; use table_to_markdown_checked to learn which ones.
inline std::string table_to_markdown(const Table& table) {
    return table_to_markdown_checked(table).text;
}

// ---------------------------------------------------------------------------
// Mind maps
// ---------------------------------------------------------------------------

struct MindMapNode {
    std::string label;
    std::vector<MindMapNode> children;

    bool is_leaf() const { return children.empty(); }
    friend bool operator==(const MindMapNode&, const MindMapNode&) = default;
};

inline std::size_t node_count(const MindMapNode& n) {
    std::size_t c = 1;
    for (const auto& ch : n.children) c += node_count(ch);
    return c;
}

inline std::size_t leaf_count(const MindMapNode& n) {
    if (n.is_leaf()) return 1;
    std::size_t c = 0;
    for (const auto& ch : n.children) c += leaf_count(ch);
    return c;
}

/// Edges on the longest root-to-leaf path; a single node has depth 0.
inline std::size_t tree_depth(const MindMapNode& n) {
    std::size_t d = 0;
    for (const auto& ch : n.children) d = std::max(d, 1 + tree_depth(ch));
    return d;
}

inline ordered_json mindmap_to_json(const MindMapNode& node) {
    ordered_json children = ordered_json::array();
    for (const auto& ch : node.children) children.push_back(mindmap_to_json(ch));
    ordered_json out;
    out["label"] = node.label;
    out["children"] = std::move(children);
    return out;
}

/// Canonical compact form: {"label":...,"children":[...]}, keys in that order.
inline std::string mindmap_to_json_text(const MindMapNode& root) {
    return mindmap_to_json(root).dump();
}

namespace detail {

inline std::string checked_label(const std::string& raw) {
    auto label = text::trim(raw);
    if (label.empty()) throw MindMapParseError("mind map node has an empty label");
    return label;
}

template <class Json>
MindMapNode node_from_json(const Json& j);

// An element of a children array: a bare string leaf, a canonical node,
// or a {"label": [...]} shorthand object (which may hold several keys).
template <class Json>
void append_children(const Json& value, std::vector<MindMapNode>& out) {
    if (value.is_string()) {
        out.push_back({checked_label(value.template get<std::string>()), {}});
    } else if (value.is_array()) {
        for (const auto& el : value) append_children(el, out);
    } else if (value.is_object()) {
        if (value.contains("label")) {
            out.push_back(node_from_json(value));
            return;
        }
        if (value.empty()) throw MindMapParseError("empty object in children list");
        for (const auto& [key, sub] : value.items()) {
            MindMapNode child{checked_label(key), {}};
            if (!sub.is_null()) append_children(sub, child.children);
            out.push_back(std::move(child));
        }
    } else if (value.is_number() || value.is_boolean()) {
        out.push_back({checked_label(value.dump()), {}});
    } else {
        throw MindMapParseError("unsupported value in mind map children");
    }
}

template <class Json>
MindMapNode node_from_json(const Json& j) {
    if (!j.is_object()) throw MindMapParseError("mind map node must be a JSON object");
    if (j.contains("label")) {
        const auto& label = j.at("label");
        if (!label.is_string()) throw MindMapParseError("label must be a string");
        MindMapNode node{checked_label(label.template get<std::string>()), {}};
        if (j.contains("children")) {
            const auto& ch = j.at("children");
            if (!ch.is_array() && !ch.is_null())
                throw MindMapParseError("children must be an array");
            if (ch.is_array())
                for (const auto& el : ch) append_children(el, node.children);
        }
        return node;
    }
    if (j.size() != 1)
        throw MindMapParseError("shorthand mind map root must have exactly one key");
    std::vector<MindMapNode> roots;
    append_children(j, roots);
    return std::move(roots.front());
}

// Model output often wraps JSON in prose or ``` fences; take the outermost
// brace-balanced object, respecting string literals.
inline std::optional<std::string> extract_json_object(std::string_view s) {
    auto open = s.find('{');
    while (open != std::string_view::npos) {
        int depth = 0;
        bool in_string = false;
        bool escape = false;
        for (std::size_t i = open; i < s.size(); ++i) {
            char c = s[i];
            if (in_string) {
                if (escape) escape = false;
                else if (c == '\\') escape = true;
                else if (c == '"') in_string = false;
                continue;
            }
            if (c == '"') in_string = true;
            else if (c == '{') ++depth;
            else if (c == '}' && --depth == 0) return std::string(s.substr(open, i - open + 1));
        }
        open = s.find('{', open + 1);
    }
    return std::nullopt;
}

}  // namespace detail

template <class Json>
MindMapNode mindmap_from_json(const Json& j) {
    return detail::node_from_json(j);
}

/// Accepts the canonical {label, children} schema or the shorthand
/// {"<label>": [children...]} where children may be strings, canonical
/// nodes or further shorthand objects. Surrounding prose and code fences
/// are ignored.
inline MindMapNode parse_mindmap_json(std::string_view raw) {
    auto body = detail::extract_json_object(raw);
    if (!body) throw MindMapParseError("no JSON object found");
    // ordered so shorthand objects with several keys keep their sibling order
    ordered_json j = ordered_json::parse(*body, nullptr, false);
    if (j.is_discarded()) throw MindMapParseError("malformed JSON");
    return detail::node_from_json(j);
}

namespace detail {

inline void toc_lines(const MindMapNode& node, const std::string& number, std::size_t depth,
                      std::vector<std::string>& out) {
    std::string line(depth * 2, ' ');
    line += depth == 0 ? number + "." : number;
    line += ' ';
    line += node.label;
    out.push_back(std::move(line));
    for (std::size_t i = 0; i < node.children.size(); ++i)
        toc_lines(node.children[i], number + "." + std::to_string(i + 1), depth + 1, out);
}

inline void collect_paths(const MindMapNode& node, std::vector<std::string>& prefix,
                          std::vector<std::vector<std::string>>& out) {
    prefix.push_back(node.label);
    if (node.is_leaf()) {
        out.push_back(prefix);
    } else {
        for (const auto& ch : node.children) collect_paths(ch, prefix, out);
    }
    prefix.pop_back();
}

}  // namespace detail

/// Numbered outline: "1. root", "  1.1 child", "    1.1.1 grandchild".
inline std::string mindmap_to_toc(const MindMapNode& root) {
    std::vector<std::string> lines;
    detail::toc_lines(root, "1", 0, lines);
    return text::join(lines, "\n");
}

/// Root-to-leaf label sequences, leaves in preorder.
inline std::vector<std::vector<std::string>> mindmap_paths(const MindMapNode& root) {
    std::vector<std::vector<std::string>> out;
    std::vector<std::string> prefix;
    detail::collect_paths(root, prefix, out);
    return out;
}

// ---------------------------------------------------------------------------
// StructSum
// ---------------------------------------------------------------------------

struct SingleTable {
    Table table;
    friend bool operator==(const SingleTable&, const SingleTable&) = default;
};

struct MultiTable {
    std::vector<Table> tables;
    /// Source chunk text per table, when the generator recorded it.
    std::vector<std::string> chunks;
    friend bool operator==(const MultiTable&, const MultiTable&) = default;
};

struct MindMap {
    MindMapNode root;
    friend bool operator==(const MindMap&, const MindMap&) = default;
};

enum class Modality { table, mindmap };

struct StructSum {
    std::variant<SingleTable, MultiTable, MindMap> content;
    std::string source_passage_id;

    Modality modality() const {
        return std::holds_alternative<MindMap>(content) ? Modality::mindmap : Modality::table;
    }

    std::string kind() const {
        switch (content.index()) {
            case 0: return "single_table";
            case 1: return "multi_table";
            default: return "mind_map";
        }
    }

    /// The tables of either table variant; empty for mind maps.
    std::vector<Table> tables() const {
        if (const auto* s = std::get_if<SingleTable>(&content)) return {s->table};
        if (const auto* m = std::get_if<MultiTable>(&content)) return m->tables;
        return {};
    }

    friend bool operator==(const StructSum&, const StructSum&) = default;
};

/// Context text a reader (or the QA model) sees for a structured summary:
/// markdown for tables, caption lines above each table, canonical JSON for
/// mind maps.
inline std::string serialize_for_qa(const StructSum& s) {
    auto with_caption = [](const Table& t) {
        std::string out;
        if (!t.caption.empty()) out += "Caption: " + t.caption + "\n";
        return out + table_to_markdown(t);
    };
    if (const auto* single = std::get_if<SingleTable>(&s.content)) return with_caption(single->table);
    if (const auto* multi = std::get_if<MultiTable>(&s.content)) {
        std::vector<std::string> blocks;
        for (const auto& t : multi->tables) blocks.push_back(with_caption(t));
        return text::join(blocks, "\n\n");
    }
    return mindmap_to_json_text(std::get<MindMap>(s.content).root);
}

// ---------------------------------------------------------------------------
// QA pairs
// ---------------------------------------------------------------------------

enum class QAOrigin { auto_generated, external };

enum class QAFilterState { raw = 0, deduped = 1, grounded = 2, cycle_checked = 3, rejected = 4 };

struct QAPair {
    std::string question;
    std::string answer;
    QAOrigin origin = QAOrigin::auto_generated;
    QAFilterState state = QAFilterState::raw;
    std::string reject_reason;

    /// Moves the pair forward through the filter states. Moving backwards or
    /// out of `rejected` is a logic error; re-entering the current state is a no-op.
    void advance(QAFilterState next, std::string reason = {}) {
        if (state == QAFilterState::rejected || static_cast<int>(next) < static_cast<int>(state))
            throw std::logic_error("QA filter state may only move forward");
        state = next;
        if (next == QAFilterState::rejected) reject_reason = std::move(reason);
    }

    bool rejected() const { return state == QAFilterState::rejected; }
};

// ---------------------------------------------------------------------------
// Verdicts
// ---------------------------------------------------------------------------

enum class CriticKind { factuality, local_structure, global_structure };

inline constexpr CriticKind all_critics[] = {CriticKind::factuality, CriticKind::local_structure,
                                             CriticKind::global_structure};

/// One failure a critic found. Index fields are -1 when not applicable.
struct Finding {
    std::string reason;
    int table_index = -1;
    int unit_index = -1;  // row, column or path, depending on the critic
    std::string detail;
    friend bool operator==(const Finding&, const Finding&) = default;
};

/// Per-unit attribution: 1-based sentence indices, or nullopt for NA.
struct AttributionCitation {
    int table_index = -1;
    int unit_index = 0;
    std::optional<std::vector<int>> cited;
    bool range_violation = false;
    friend bool operator==(const AttributionCitation&, const AttributionCitation&) = default;
};

struct Verdict {
    CriticKind critic = CriticKind::factuality;
    Modality modality = Modality::table;
    std::vector<Finding> failures;
    std::vector<AttributionCitation> citations;

    bool passed() const { return failures.empty(); }
    friend bool operator==(const Verdict&, const Verdict&) = default;
};

// ---------------------------------------------------------------------------
// Generation record
// ---------------------------------------------------------------------------

struct TraceEntry {
    std::string prompt;
    std::string response;
    friend bool operator==(const TraceEntry&, const TraceEntry&) = default;
};

using PromptTrace = std::vector<TraceEntry>;

struct GenerationRecord {
    std::string passage_id;
    StructSum structsum;
    std::vector<Verdict> verdicts;
    std::optional<double> coverage;
    PromptTrace prompt_trace;
    friend bool operator==(const GenerationRecord&, const GenerationRecord&) = default;
};

// ---------------------------------------------------------------------------
// JSON mapping
// ---------------------------------------------------------------------------

inline std::string to_string(CriticKind k) {
    switch (k) {
        case CriticKind::factuality: return "factuality";
        case CriticKind::local_structure: return "local_structure";
        case CriticKind::global_structure: return "global_structure";
    }
    return "?";
}

inline CriticKind critic_from_string(std::string_view s) {
    for (auto k : all_critics)
        if (to_string(k) == s) return k;
    throw SchemaError("unknown critic: " + std::string(s));
}

inline std::string to_string(Modality m) { return m == Modality::table ? "table" : "mindmap"; }

inline Modality modality_from_string(std::string_view s) {
    if (s == "table") return Modality::table;
    if (s == "mindmap") return Modality::mindmap;
    throw SchemaError("unknown modality: " + std::string(s));
}

inline json table_to_json(const Table& t) {
    return json{{"caption", t.caption}, {"header", t.header}, {"rows", t.rows}};
}

inline Table table_from_json(const json& j) {
    Table t;
    t.caption = j.value("caption", std::string{});
    t.header = j.at("header").get<std::vector<std::string>>();
    t.rows = j.at("rows").get<std::vector<std::vector<std::string>>>();
    return t;
}

inline json structsum_to_json(const StructSum& s) {
    json j{{"kind", s.kind()}, {"source_passage_id", s.source_passage_id}};
    if (const auto* single = std::get_if<SingleTable>(&s.content)) {
        j["table"] = table_to_json(single->table);
    } else if (const auto* multi = std::get_if<MultiTable>(&s.content)) {
        json tables = json::array();
        for (const auto& t : multi->tables) tables.push_back(table_to_json(t));
        j["tables"] = std::move(tables);
        j["chunks"] = multi->chunks;
    } else {
        j["root"] = json::parse(mindmap_to_json_text(std::get<MindMap>(s.content).root));
    }
    return j;
}

inline StructSum structsum_from_json(const json& j) {
    StructSum s;
    s.source_passage_id = j.value("source_passage_id", std::string{});
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "single_table") {
        s.content = SingleTable{table_from_json(j.at("table"))};
    } else if (kind == "multi_table") {
        MultiTable m;
        for (const auto& t : j.at("tables")) m.tables.push_back(table_from_json(t));
        if (m.tables.empty()) throw SchemaError("multi_table must hold at least one table");
        if (j.contains("chunks")) m.chunks = j.at("chunks").get<std::vector<std::string>>();
        s.content = std::move(m);
    } else if (kind == "mind_map") {
        s.content = MindMap{mindmap_from_json(j.at("root"))};
    } else {
        throw SchemaError("unknown structsum kind: " + kind);
    }
    return s;
}

inline json finding_to_json(const Finding& f) {
    json j{{"reason", f.reason}};
    if (f.table_index >= 0) j["table_index"] = f.table_index;
    if (f.unit_index >= 0) j["unit_index"] = f.unit_index;
    if (!f.detail.empty()) j["detail"] = f.detail;
    return j;
}

inline Finding finding_from_json(const json& j) {
    return Finding{j.at("reason").get<std::string>(), j.value("table_index", -1),
                   j.value("unit_index", -1), j.value("detail", std::string{})};
}

inline json citation_to_json(const AttributionCitation& c) {
    json j{{"unit_index", c.unit_index}};
    if (c.table_index >= 0) j["table_index"] = c.table_index;
    j["cited"] = c.cited ? json(*c.cited) : json("NA");
    if (c.range_violation) j["range_violation"] = true;
    return j;
}

inline AttributionCitation citation_from_json(const json& j) {
    AttributionCitation c;
    c.unit_index = j.at("unit_index").get<int>();
    c.table_index = j.value("table_index", -1);
    if (j.at("cited").is_array()) c.cited = j.at("cited").get<std::vector<int>>();
    c.range_violation = j.value("range_violation", false);
    return c;
}

inline json verdict_to_json(const Verdict& v) {
    json failures = json::array();
    for (const auto& f : v.failures) failures.push_back(finding_to_json(f));
    json citations = json::array();
    for (const auto& c : v.citations) citations.push_back(citation_to_json(c));
    return json{{"critic", to_string(v.critic)},
                {"modality", to_string(v.modality)},
                {"passed", v.passed()},
                {"evidence", {{"failures", failures}, {"citations", citations}}}};
}

inline Verdict verdict_from_json(const json& j) {
    Verdict v;
    v.critic = critic_from_string(j.at("critic").get<std::string>());
    v.modality = modality_from_string(j.at("modality").get<std::string>());
    const auto& ev = j.at("evidence");
    for (const auto& f : ev.at("failures")) v.failures.push_back(finding_from_json(f));
    for (const auto& c : ev.at("citations")) v.citations.push_back(citation_from_json(c));
    if (j.contains("passed") && j.at("passed").get<bool>() != v.passed())
        throw SchemaError("verdict 'passed' disagrees with its evidence");
    return v;
}

inline json record_to_json(const GenerationRecord& r) {
    json verdicts = json::array();
    for (const auto& v : r.verdicts) verdicts.push_back(verdict_to_json(v));
    json trace = json::array();
    for (const auto& t : r.prompt_trace) trace.push_back({{"prompt", t.prompt}, {"response", t.response}});
    return json{{"passage_id", r.passage_id},
                {"structsum", structsum_to_json(r.structsum)},
                {"verdicts", std::move(verdicts)},
                {"coverage", r.coverage ? json(*r.coverage) : json(nullptr)},
                {"prompt_trace", std::move(trace)}};
}

inline GenerationRecord record_from_json(const json& j) {
    GenerationRecord r;
    try {
        r.passage_id = j.at("passage_id").get<std::string>();
        r.structsum = structsum_from_json(j.at("structsum"));
        for (const auto& v : j.at("verdicts")) r.verdicts.push_back(verdict_from_json(v));
        const auto& cov = j.at("coverage");
        if (!cov.is_null()) {
            r.coverage = cov.get<double>();
            if (*r.coverage < 0.0 || *r.coverage > 1.0) throw SchemaError("coverage outside [0,1]");
        }
        for (const auto& t : j.at("prompt_trace"))
            r.prompt_trace.push_back({t.at("prompt").get<std::string>(), t.at("response").get<std::string>()});
    } catch (const json::exception& e) {
        throw SchemaError(std::string("malformed generation record: ") + e.what());
    }
    return r;
}

inline json passage_to_json(const Passage& p) { return json{{"id", p.id}, {"text", p.text}}; }

inline Passage passage_from_json(const json& j,
                                 const textproc::SplitterRules& rules = textproc::SplitterRules::defaults()) {
    try {
        return Passage(j.at("id").get<std::string>(), j.at("text").get<std::string>(), rules);
    } catch (const json::exception& e) {
        throw SchemaError(std::string("malformed passage: ") + e.what());
    }
}

}  // namespace structsum
