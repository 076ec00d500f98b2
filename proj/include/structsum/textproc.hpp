#pragma once

#include <cctype>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "structsum/model.hpp"
#include "structsum/sentence_splitter.hpp"

namespace structsum::textproc {

inline constexpr std::string_view kParagraphMarker = "_START_PARAGRAPH_";
inline constexpr std::string_view kNewlineMarker = "_NEWLINE_";

struct CorpusDocument {
    std::string doc_id;
    std::string raw_text;
};

inline std::string replace_all(std::string s, std::string_view from, std::string_view to) {
    if (from.empty()) return s;
    std::size_t pos = 0;
    while ((pos = s.find(from, pos)) != std::string::npos) {
        s.replace(pos, from.size(), to);
        pos += to.size();
    }
    return s;
}

/// One passage per non-blank segment between paragraph markers, ids
/// "<doc_id>#<n>" numbered from 0 over the kept segments. A document without
/// markers becomes a single passage.
inline std::vector<Passage> split_paragraphs(const CorpusDocument& doc,
                                             const SplitterRules& rules = SplitterRules::defaults()) {
    std::vector<Passage> out;
    std::string_view raw = doc.raw_text;
    std::size_t pos = 0;
    auto emit = [&](std::string_view segment) {
        auto text = text::trim(replace_all(std::string(segment), kNewlineMarker, "\n"));
        if (text.empty()) return;
        out.emplace_back(doc.doc_id + "#" + std::to_string(out.size()), std::move(text), rules);
    };
    while (true) {
        auto next = raw.find(kParagraphMarker, pos);
        if (next == std::string_view::npos) {
            emit(raw.substr(pos));
            break;
        }
        emit(raw.substr(pos, next - pos));
        pos = next + kParagraphMarker.size();
    }
    return out;
}

/// Counts maximal runs of digits joined by single separators from ",.:/-",
/// e.g. "4,050", "6.1", "10:30", "1919". A separator only joins when a digit
/// follows it, so "14-inch" counts once and "3." is just "3".
inline std::size_t count_numeric_tokens(std::string_view text) {
    auto digit = [&](std::size_t i) {
        return i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]));
    };
    auto separator = [](char c) {
        return c == ',' || c == '.' || c == ':' || c == '/' || c == '-';
    };
    std::size_t count = 0;
    std::size_t i = 0;
    while (i < text.size()) {
        if (!digit(i)) {
            ++i;
            continue;
        }
        ++count;
        while (true) {
            while (digit(i)) ++i;
            if (i < text.size() && separator(text[i]) && digit(i + 1)) {
                ++i;
                continue;
            }
            break;
        }
    }
    return count;
}

inline constexpr std::size_t kMinNumericTokens = 20;  // strictly more than this
inline constexpr std::size_t kMinSentences = 3;

/// Table-generation input filter: more than 20 numeric values and at least
/// three sentences.
inline bool passes_table_filter(const Passage& p) {
    return count_numeric_tokens(p.text) > kMinNumericTokens && p.sentences.size() >= kMinSentences;
}

// ---------------------------------------------------------------------------
// Corpus readers
// ---------------------------------------------------------------------------

/// JSONL, one {"doc_id": ..., "raw_text": ...} object per line.
inline std::vector<CorpusDocument> read_corpus_jsonl(std::istream& in) {
    std::vector<CorpusDocument> docs;
    std::size_t lineno = 0;
    for (std::string line; std::getline(in, line);) {
        ++lineno;
        if (text::trim_view(line).empty()) continue;
        auto j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object() || !j.contains("doc_id") || !j.contains("raw_text"))
            throw SchemaError("corpus line " + std::to_string(lineno) + ": expected {doc_id, raw_text}");
        CorpusDocument doc{j.at("doc_id").get<std::string>(), j.at("raw_text").get<std::string>()};
        if (doc.raw_text.empty())
            throw SchemaError("corpus line " + std::to_string(lineno) + ": raw_text is empty");
        docs.push_back(std::move(doc));
    }
    return docs;
}

/// A plain-text corpus: a single file or every regular file in a directory
/// (sorted by name); the doc id is the file stem.
inline std::vector<CorpusDocument> read_corpus_text(const std::filesystem::path& path) {
    namespace fs = std::filesystem;
    std::vector<fs::path> files;
    if (fs::is_directory(path)) {
        for (const auto& e : fs::directory_iterator(path))
            if (e.is_regular_file()) files.push_back(e.path());
        std::sort(files.begin(), files.end());
    } else {
        files.push_back(path);
    }
    std::vector<CorpusDocument> docs;
    for (const auto& f : files) {
        std::ifstream in(f, std::ios::binary);
        if (!in) throw ConfigError("cannot open corpus file: " + f.string());
        std::ostringstream buf;
        buf << in.rdbuf();
        if (buf.str().empty()) continue;
        docs.push_back({f.stem().string(), buf.str()});
    }
    return docs;
}

}  // namespace structsum::textproc
