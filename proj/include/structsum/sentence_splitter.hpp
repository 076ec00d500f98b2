#pragma once

#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "structsum/errors.hpp"
#include "structsum/text_util.hpp"

namespace structsum::textproc {

/// Abbreviations that end in a period but do not end a sentence.
/// data/abbreviations.txt ships the same list; a test keeps them in sync.
inline const std::vector<std::string>& default_abbreviation_list() {
    static const std::vector<std::string> list = {
        "Mr.",   "Mrs.",  "Ms.",   "Dr.",   "Prof.", "Sr.",   "Jr.",  "St.",   "Mt.",
        "Gen.",  "Col.",  "Lt.",   "Capt.", "Sgt.",  "Rev.",  "Hon.", "No.",   "Nos.",
        "Fig.",  "Figs.", "Vol.",  "vs.",   "e.g.",  "i.e.",  "cf.",  "approx.", "Jan.",
        "Feb.",  "Mar.",  "Apr.",  "Jun.",  "Jul.",  "Aug.",  "Sep.", "Sept.", "Oct.",
        "Nov.",  "Dec.",  "U.S.",  "U.K.",  "Ph.D.", "Ltd.",  "Co.",  "Corp.", "ca.",
    };
    return list;
}

struct SplitterRules {
    std::set<std::string, std::less<>> abbreviations;
    /// Treat a lone capital letter followed by a period ("J.") as an initial.
    bool initials = true;

    static const SplitterRules& defaults() {
        static const SplitterRules rules{
            {default_abbreviation_list().begin(), default_abbreviation_list().end()}, true};
        return rules;
    }

    /// No abbreviations and no initials rule: every qualifying boundary splits.
    static SplitterRules none() { return SplitterRules{{}, false}; }

    /// One abbreviation per line; blank lines and lines starting with '#' are skipped.
    static SplitterRules from_file(const std::filesystem::path& path, bool initials = true) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open abbreviation list: " + path.string());
        SplitterRules rules{{}, initials};
        for (std::string line; std::getline(in, line);) {
            auto t = text::trim(line);
            if (t.empty() || t.front() == '#') continue;
            rules.abbreviations.insert(std::move(t));
        }
        return rules;
    }
};

struct SentenceSpan {
    std::size_t begin = 0;
    std::size_t end = 0;  // exclusive
};

namespace detail {

inline bool is_terminal(char c) { return c == '.' || c == '!' || c == '?'; }

// Returns the byte length of a closing quote/bracket at s[i], 0 if none.
inline std::size_t closing_len(std::string_view s, std::size_t i) {
    char c = s[i];
    if (c == ')' || c == ']' || c == '"' || c == '\'') return 1;
    // U+201D and U+2019
    if (s.substr(i, 3) == "\xE2\x80\x9D") return 3;
    if (s.substr(i, 3) == "\xE2\x80\x99") return 3;
    return 0;
}

inline bool opens_sentence(std::string_view s, std::size_t k) {
    auto c = static_cast<unsigned char>(s[k]);
    if (std::isupper(c)) return true;
    if (c == '(' || c == '[' || c == '"' || c == '\'') return true;
    // U+201C and U+2018
    return s.substr(k, 3) == "\xE2\x80\x9C" || s.substr(k, 3) == "\xE2\x80\x98";
}

inline std::string_view token_ending_at(std::string_view s, std::size_t last) {
    std::size_t b = last;
    while (b > 0 && !text::is_space(s[b - 1])) --b;
    auto tok = s.substr(b, last - b + 1);
    while (!tok.empty() && std::string_view("(\"'[").find(tok.front()) != std::string_view::npos)
        tok.remove_prefix(1);
    return tok;
}

inline bool is_abbreviation(std::string_view token, const SplitterRules& rules) {
    if (rules.abbreviations.count(token) != 0) return true;
    return rules.initials && token.size() == 2 &&
           std::isupper(static_cast<unsigned char>(token[0])) && token[1] == '.';
}

}  // namespace detail

/// Rule-based segmentation. A boundary is terminal punctuation (. ! ?),
/// optionally followed by closing quotes or brackets, then whitespace, then
/// an uppercase letter or an opening quote/bracket. A single period closing
/// an allow-listed abbreviation or an initial is not a boundary. Returned
/// spans index into `text` and carry no surrounding whitespace.
inline std::vector<SentenceSpan> split_sentence_spans(std::string_view text,
                                                      const SplitterRules& rules =
                                                          SplitterRules::defaults()) {
    std::vector<SentenceSpan> spans;
    const std::size_t n = text.size();
    std::size_t start = 0;
    while (start < n && text::is_space(text[start])) ++start;

    for (std::size_t i = start; i < n; ++i) {
        if (!detail::is_terminal(text[i])) continue;
        std::size_t j = i + 1;
        while (j < n && detail::is_terminal(text[j])) ++j;
        const bool single_period = text[i] == '.' && j == i + 1;
        while (j < n) {
            auto len = detail::closing_len(text, j);
            if (len == 0) break;
            j += len;
        }
        if (j >= n || !text::is_space(text[j])) {
            i = j - 1;
            continue;
        }
        std::size_t k = j;
        while (k < n && text::is_space(text[k])) ++k;
        if (k >= n) break;
        if (!detail::opens_sentence(text, k)) {
            i = j - 1;
            continue;
        }
        if (single_period && detail::is_abbreviation(detail::token_ending_at(text, i), rules)) {
            i = j - 1;
            continue;
        }
        spans.push_back({start, j});
        start = k;
        i = k - 1;
    }

    std::size_t end = n;
    while (end > start && text::is_space(text[end - 1])) --end;
    if (start < end) spans.push_back({start, end});
    return spans;
}

inline std::vector<std::string> split_sentences(std::string_view text,
                                                const SplitterRules& rules =
                                                    SplitterRules::defaults()) {
    std::vector<std::string> out;
    for (auto span : split_sentence_spans(text, rules))
        out.emplace_back(text.substr(span.begin, span.end - span.begin));
    return out;
}

}  // namespace structsum::textproc
