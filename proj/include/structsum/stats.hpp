#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "structsum/model.hpp"
#include "structsum/sentence_splitter.hpp"
#include "structsum/text_util.hpp"

namespace structsum::stats {

struct TableStats {
    double avg_words_per_chunk = 0;
    double avg_sentences_per_chunk = 0;
    double avg_words_per_input = 0;
    double avg_sentences_per_input = 0;
    double avg_rows = 0;
    double avg_cols = 0;
    double avg_tables = 0;
    std::size_t max_tables = 0;
    std::size_t records = 0;
    std::size_t tables = 0;
    std::size_t chunks = 0;
};

struct MindMapStats {
    double avg_words = 0;
    double avg_sentences = 0;
    double avg_nodes = 0;
    double avg_depth = 0;
    std::size_t records = 0;
};

struct StatsReport {
    TableStats tables;
    MindMapStats mindmaps;
    std::size_t n = 0;
    bool empty() const { return n == 0; }
};

namespace detail {

struct Mean {
    double sum = 0;
    std::size_t count = 0;
    void add(double v) {
        sum += v;
        ++count;
    }
    double value() const { return count == 0 ? 0.0 : sum / static_cast<double>(count); }
};

}  // namespace detail

/// Input-text and output-shape statistics. Words are whitespace tokens,
/// sentences come from the rule-based splitter, node counts include the
/// root and depth counts edges (a lone root has depth 0). Row/column means
/// are per table, table counts per table record. Input statistics need the
/// passage text; records whose passage is missing from `passages` skip them.
inline StatsReport corpus_stats(const std::vector<GenerationRecord>& records,
                                const std::map<std::string, std::string>& passages = {},
                                const textproc::SplitterRules& rules = textproc::SplitterRules::defaults()) {
    StatsReport rep;
    rep.n = records.size();
    detail::Mean chunk_words, chunk_sents, in_words, in_sents, rows, cols, tables;
    detail::Mean mm_words, mm_sents, nodes, depth;
    for (const auto& r : records) {
        auto it = passages.find(r.passage_id);
        const std::string* input = it == passages.end() ? nullptr : &it->second;
        if (const auto* mm = std::get_if<MindMap>(&r.structsum.content)) {
            ++rep.mindmaps.records;
            nodes.add(static_cast<double>(node_count(mm->root)));
            depth.add(static_cast<double>(tree_depth(mm->root)));
            if (input) {
                mm_words.add(static_cast<double>(text::word_count(*input)));
                mm_sents.add(static_cast<double>(textproc::split_sentences(*input, rules).size()));
            }
            continue;
        }
        ++rep.tables.records;
        auto ts = r.structsum.tables();
        tables.add(static_cast<double>(ts.size()));
        rep.tables.max_tables = std::max(rep.tables.max_tables, ts.size());
        for (const auto& t : ts) {
            rows.add(static_cast<double>(t.rows.size()));
            cols.add(static_cast<double>(t.header.size()));
        }
        if (const auto* multi = std::get_if<MultiTable>(&r.structsum.content)) {
            for (const auto& c : multi->chunks) {
                chunk_words.add(static_cast<double>(text::word_count(c)));
                chunk_sents.add(static_cast<double>(textproc::split_sentences(c, rules).size()));
            }
        }
        if (input) {
            in_words.add(static_cast<double>(text::word_count(*input)));
            in_sents.add(static_cast<double>(textproc::split_sentences(*input, rules).size()));
        }
    }
    auto& t = rep.tables;
    t.avg_words_per_chunk = chunk_words.value();
    t.avg_sentences_per_chunk = chunk_sents.value();
    t.avg_words_per_input = in_words.value();
    t.avg_sentences_per_input = in_sents.value();
    t.avg_rows = rows.value();
    t.avg_cols = cols.value();
    t.avg_tables = tables.value();
    t.tables = rows.count;
    t.chunks = chunk_words.count;
    auto& m = rep.mindmaps;
    m.avg_words = mm_words.value();
    m.avg_sentences = mm_sents.value();
    m.avg_nodes = nodes.value();
    m.avg_depth = depth.value();
    return rep;
}

inline json stats_to_json(const StatsReport& r) {
    const auto& t = r.tables;
    const auto& m = r.mindmaps;
    return json{{"n", r.n},
                {"tables",
                 {{"records", t.records},
                  {"avg_words_per_chunk", t.avg_words_per_chunk},
                  {"avg_sentences_per_chunk", t.avg_sentences_per_chunk},
                  {"avg_words_per_input", t.avg_words_per_input},
                  {"avg_sentences_per_input", t.avg_sentences_per_input},
                  {"avg_rows", t.avg_rows},
                  {"avg_cols", t.avg_cols},
                  {"avg_tables", t.avg_tables},
                  {"max_tables", t.max_tables}}},
                {"mindmaps",
                 {{"records", m.records},
                  {"avg_words", m.avg_words},
                  {"avg_sentences", m.avg_sentences},
                  {"avg_nodes", m.avg_nodes},
                  {"avg_depth", m.avg_depth}}}};
}

/// Two-column plain-text rendering.
inline std::string stats_to_table(const StatsReport& r) {
    std::ostringstream out;
    out.setf(std::ios::fixed);
    out.precision(1);
    auto row = [&](const char* name, double v) { out << "  " << name << std::string(28 - std::string(name).size(), ' ') << v << "\n"; };
    out << "Tables (" << r.tables.records << " records)\n";
    row("Avg #words per chunk", r.tables.avg_words_per_chunk);
    row("Avg #sentences per chunk", r.tables.avg_sentences_per_chunk);
    row("Avg #words per input", r.tables.avg_words_per_input);
    row("Avg #sentences per input", r.tables.avg_sentences_per_input);
    row("Avg #rows", r.tables.avg_rows);
    row("Avg #cols", r.tables.avg_cols);
    row("Avg #tables", r.tables.avg_tables);
    out << "  Max #tables" << std::string(28 - 11, ' ') << r.tables.max_tables << "\n";
    out << "Mind maps (" << r.mindmaps.records << " records)\n";
    row("Avg #words", r.mindmaps.avg_words);
    row("Avg #sentences", r.mindmaps.avg_sentences);
    row("Avg #nodes", r.mindmaps.avg_nodes);
    row("Avg depth", r.mindmaps.avg_depth);
    return out.str();
}

}  // namespace structsum::stats
