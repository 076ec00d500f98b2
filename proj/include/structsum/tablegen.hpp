#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "structsum/model.hpp"
#include "structsum/services.hpp"
#include "structsum/text_util.hpp"

namespace structsum::tablegen {

/// A contiguous piece of a passage; `begin`/`end` are byte offsets into the
/// parent text and `text` is exactly that slice.
struct Chunk {
    std::string parent_passage_id;
    std::size_t ordinal = 0;
    std::string text;
    std::size_t begin = 0;
    std::size_t end = 0;
};

struct Segmentation {
    std::vector<Chunk> chunks;
    std::vector<std::string> warnings;
    bool fell_back = false;  // every proposed chunk was rejected
};

// ---------------------------------------------------------------------------
// Markdown table parsing
// ---------------------------------------------------------------------------

namespace detail {

// Splits a pipe row on unescaped '|', dropping the outer border pipes.
inline std::optional<std::vector<std::string>> split_pipe_row(std::string_view line) {
    auto s = text::trim_view(line);
    std::vector<std::string> cells;
    std::string cur;
    bool saw_pipe = false;
    bool trailing_pipe = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
        char c = s[i];
        trailing_pipe = false;
        if (c == '\\' && i + 1 < s.size() && (s[i + 1] == '|' || s[i + 1] == '\\')) {
            cur += '\\';
            cur += s[++i];
        } else if (c == '|') {
            saw_pipe = trailing_pipe = true;
            cells.push_back(std::move(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!saw_pipe) return std::nullopt;
    cells.push_back(std::move(cur));
    if (s.front() == '|') cells.erase(cells.begin());
    if (trailing_pipe && !cells.empty()) cells.pop_back();
    for (auto& c : cells) c = text::trim(c);
    return cells;
}

inline std::string unescape_cell(std::string_view s) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '\\' && i + 1 < s.size() && (s[i + 1] == '|' || s[i + 1] == '\\')) ++i;
        out += s[i];
    }
    return out;
}

inline bool is_separator_row(const std::vector<std::string>& cells) {
    if (cells.empty()) return false;
    for (const auto& c : cells) {
        auto t = text::trim_view(c);
        if (t.empty()) return false;
        std::size_t dashes = 0;
        for (std::size_t i = 0; i < t.size(); ++i) {
            if (t[i] == '-') ++dashes;
            else if (t[i] == ':' && (i == 0 || i + 1 == t.size())) continue;
            else return false;
        }
        if (dashes == 0) return false;
    }
    return true;
}

}  // namespace detail

/// First pipe-table block in `text`: a header row, a separator row of dashes
/// (optionally with alignment colons), then zero or more rows up to the
/// first line without a pipe. Cells are trimmed and "\|" / "\\" unescaped.
/// Rows are kept as written, even when their width differs from the header.
inline Table parse_markdown_table(std::string_view text) {
    auto lines = text::split_lines(text);
    for (std::size_t i = 0; i + 1 < lines.size(); ++i) {
        auto header = detail::split_pipe_row(lines[i]);
        if (!header) continue;
        auto sep = detail::split_pipe_row(lines[i + 1]);
        if (!sep || !detail::is_separator_row(*sep)) continue;
        Table t;
        for (auto& h : *header) t.header.push_back(detail::unescape_cell(h));
        for (std::size_t r = i + 2; r < lines.size(); ++r) {
            auto row = detail::split_pipe_row(lines[r]);
            if (!row) break;
            std::vector<std::string> cells;
            for (auto& c : *row) cells.push_back(detail::unescape_cell(c));
            t.rows.push_back(std::move(cells));
        }
        return t;
    }
    throw TableParseError("no markdown table found", std::string(text));
}

/// Caption from a "Caption: ..." line anywhere in the response (markdown
/// emphasis around the keyword is tolerated). Empty when absent.
inline std::string extract_caption(std::string_view response) {
    for (const auto& line : text::split_lines(response)) {
        std::string_view s = text::trim_view(line);
        while (!s.empty() && (s.front() == '*' || s.front() == '_' || s.front() == '#')) s.remove_prefix(1);
        s = text::trim_view(s);
        if (s.size() < 8 || !text::iequals(s.substr(0, 7), "caption")) continue;
        s.remove_prefix(7);
        while (!s.empty() && (s.front() == '*' || s.front() == '_')) s.remove_prefix(1);
        if (s.empty() || s.front() != ':') continue;
        s.remove_prefix(1);
        while (!s.empty() && (s.front() == '*' || s.front() == '_')) s.remove_prefix(1);
        auto cap = text::trim(s);
        while (!cap.empty() && (cap.back() == '*' || cap.back() == '_')) cap.pop_back();
        return text::trim(cap);
    }
    return {};
}

// ---------------------------------------------------------------------------
// Segmentation
// ---------------------------------------------------------------------------

namespace detail {

// Whitespace-collapsed copy of `s` with, for every kept byte, its offset in `s`.
struct NormalizedText {
    std::string text;
    std::vector<std::size_t> origin;
};

inline NormalizedText normalize_with_offsets(std::string_view s) {
    NormalizedText n;
    bool pending = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (text::is_space(s[i])) {
            pending = !n.text.empty();
            continue;
        }
        if (pending) {
            n.text += ' ';
            n.origin.push_back(i - 1);
            pending = false;
        }
        n.text += s[i];
        n.origin.push_back(i);
    }
    return n;
}

inline std::vector<std::string> split_segments(std::string_view response) {
    std::vector<std::string> segments;
    std::string cur;
    auto flush = [&] {
        auto t = text::trim(cur);
        if (!t.empty()) segments.push_back(std::move(t));
        cur.clear();
    };
    for (const auto& line : text::split_lines(response)) {
        auto t = text::trim_view(line);
        if (t.size() >= 3 && t.find_first_not_of('-') == std::string_view::npos) {
            flush();
            continue;
        }
        cur += line;
        cur += '\n';
    }
    flush();
    return segments;
}

}  // namespace detail

/// Locates each proposed segment in the passage (whitespace-insensitive),
/// preferring the first occurrence after the previous match. Segments not
/// found verbatim are dropped with a warning; if none survive, the whole
/// passage becomes the only chunk.
inline Segmentation match_segments(const Passage& p, const std::vector<std::string>& segments) {
    Segmentation out;
    auto norm = detail::normalize_with_offsets(p.text);
    std::size_t cursor = 0;
    for (std::size_t i = 0; i < segments.size(); ++i) {
        auto needle = text::collapse_whitespace(segments[i]);
        if (needle.empty()) continue;
        auto pos = norm.text.find(needle, cursor);
        if (pos == std::string::npos) pos = norm.text.find(needle);
        if (pos == std::string::npos) {
            out.warnings.push_back("segment " + std::to_string(i + 1) +
                                   " not found in passage " + p.id + "; dropped");
            continue;
        }
        Chunk c;
        c.parent_passage_id = p.id;
        c.ordinal = out.chunks.size();
        c.begin = norm.origin[pos];
        c.end = norm.origin[pos + needle.size() - 1] + 1;
        c.text = p.text.substr(c.begin, c.end - c.begin);
        out.chunks.push_back(std::move(c));
        cursor = pos + needle.size();
    }
    if (out.chunks.empty()) {
        out.fell_back = true;
        auto t = text::trim_view(p.text);
        auto begin = static_cast<std::size_t>(t.data() - p.text.data());
        out.chunks.push_back({p.id, 0, std::string(t), begin, begin + t.size()});
        out.warnings.push_back("no segment of passage " + p.id + " matched; using the whole passage");
    }
    return out;
}

/// One-shot segmentation call ("table.segment") followed by verbatim matching.
inline Segmentation segment_passage(const Services& svc, const Passage& p) {
    if (p.empty()) throw std::invalid_argument("cannot segment an empty passage");
    auto prompt = svc.render("table.segment", {{"exemplar", svc.templates->asset("table.segment.exemplar")},
                                               {"passage", p.text}});
    auto response = svc.llm.ask_one("table.segment", std::move(prompt));
    return match_segments(p, detail::split_segments(response));
}

// ---------------------------------------------------------------------------
// Table generation
// ---------------------------------------------------------------------------

struct GeneratedTable {
    Table table;
    std::string raw_response;
};

inline std::string query_instruction(const std::optional<std::string>& query) {
    if (!query || text::trim_view(*query).empty()) return {};
    return "Focus the table on the information needed to answer this query: " + text::trim(*query);
}

/// Zero-shot table + caption for one piece of text ("table.generate").
inline GeneratedTable generate_table(const Services& svc, std::string_view chunk_text,
                                     const std::optional<std::string>& query = std::nullopt) {
    if (text::trim_view(chunk_text).empty()) throw std::invalid_argument("chunk text is empty");
    auto prompt = svc.render("table.generate", {{"passage", std::string(chunk_text)},
                                                {"query_instruction", query_instruction(query)}});
    auto raw = svc.llm.ask_one("table.generate", std::move(prompt));
    GeneratedTable out;
    out.table = parse_markdown_table(raw);
    out.table.caption = extract_caption(raw);
    out.raw_response = std::move(raw);
    return out;
}

struct MultiTableResult {
    StructSum structsum;
    std::vector<std::string> warnings;
};

/// Segments the passage, then generates one table per chunk. A chunk whose
/// output fails to parse is retried once and skipped if it fails again.
inline MultiTableResult divide_and_generate(const Services& svc, const Passage& p,
                                            const std::optional<std::string>& query = std::nullopt) {
    auto seg = segment_passage(svc, p);
    MultiTableResult result;
    result.warnings = seg.warnings;
    MultiTable multi;
    for (const auto& chunk : seg.chunks) {
        std::optional<GeneratedTable> gen;
        for (int attempt = 0; attempt < 2 && !gen; ++attempt) {
            try {
                gen = generate_table(svc, chunk.text, query);
            } catch (const TableParseError&) {
                result.warnings.push_back("chunk " + std::to_string(chunk.ordinal) + " of " + p.id +
                                          ": unparsable table (attempt " + std::to_string(attempt + 1) + ")");
            }
        }
        if (!gen) continue;
        multi.tables.push_back(std::move(gen->table));
        multi.chunks.push_back(chunk.text);
    }
    if (multi.tables.empty()) throw MultiTableEmpty("no table could be generated for passage " + p.id);
    result.structsum = StructSum{std::move(multi), p.id};
    return result;
}

inline StructSum generate_single_table(const Services& svc, const Passage& p,
                                       const std::optional<std::string>& query = std::nullopt) {
    auto gen = generate_table(svc, p.text, query);
    return StructSum{SingleTable{std::move(gen.table)}, p.id};
}

}  // namespace structsum::tablegen
