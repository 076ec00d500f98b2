#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace structsum::text {

inline bool is_space(char c) {
    return std::isspace(static_cast<unsigned char>(c)) != 0;
}

inline std::string_view trim_view(std::string_view s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && is_space(s[b])) ++b;
    while (e > b && is_space(s[e - 1])) --e;
    return s.substr(b, e - b);
}

inline std::string trim(std::string_view s) { return std::string(trim_view(s)); }

inline std::string to_lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

/// Collapses every whitespace run to one space and trims the ends.
inline std::string collapse_whitespace(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    bool pending = false;
    for (char c : s) {
        if (is_space(c)) {
            pending = !out.empty();
            continue;
        }
        if (pending) out.push_back(' ');
        pending = false;
        out.push_back(c);
    }
    return out;
}

/// Case-folded, whitespace-collapsed form used for dedup and cheap equality.
inline std::string fold(std::string_view s) { return to_lower(collapse_whitespace(s)); }

inline bool iequals(std::string_view a, std::string_view b) {
    return a.size() == b.size() &&
           std::equal(a.begin(), a.end(), b.begin(), [](unsigned char x, unsigned char y) {
               return std::tolower(x) == std::tolower(y);
           });
}

inline std::vector<std::string> split_lines(std::string_view s) {
    std::vector<std::string> lines;
    std::size_t start = 0;
    while (start <= s.size()) {
        auto nl = s.find('\n', start);
        if (nl == std::string_view::npos) {
            lines.emplace_back(s.substr(start));
            break;
        }
        std::string_view line = s.substr(start, nl - start);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        lines.emplace_back(line);
        start = nl + 1;
    }
    return lines;
}

inline std::vector<std::string> split_whitespace(std::string_view s) {
    std::vector<std::string> words;
    std::istringstream in{std::string(s)};
    for (std::string w; in >> w;) words.push_back(std::move(w));
    return words;
}

inline std::size_t word_count(std::string_view s) { return split_whitespace(s).size(); }

/// Lower-cased alphanumeric word tokens; punctuation acts as a separator.
/// Bytes >= 0x80 are kept as word characters so UTF-8 letters survive.
inline std::vector<std::string> word_tokens(std::string_view s) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : s) {
        auto c = static_cast<unsigned char>(ch);
        if (std::isalnum(c) || c >= 0x80) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

inline bool starts_with_word(std::string_view s, std::string_view word) {
    if (s.size() < word.size() || !iequals(s.substr(0, word.size()), word)) return false;
    return s.size() == word.size() ||
           !std::isalnum(static_cast<unsigned char>(s[word.size()]));
}

/// Reads a model's yes/no reply. Leading quotes, asterisks and brackets are
/// skipped; the first word decides. Anything else is nullopt.
inline std::optional<bool> parse_yes_no(std::string_view reply) {
    auto s = trim_view(reply);
    while (!s.empty() && std::string_view("\"'*`([").find(s.front()) != std::string_view::npos)
        s.remove_prefix(1);
    if (starts_with_word(s, "yes")) return true;
    if (starts_with_word(s, "no")) return false;
    return std::nullopt;
}

inline std::string first_line(std::string_view s) {
    auto t = trim_view(s);
    auto nl = t.find('\n');
    return trim(nl == std::string_view::npos ? t : t.substr(0, nl));
}

inline std::string join(const std::vector<std::string>& parts, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out += sep;
        out += parts[i];
    }
    return out;
}

/// 64-bit FNV-1a; used for manifest config hashes, which must be stable
/// across platforms and runs.
inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i, v >>= 4) out[static_cast<std::size_t>(i)] = digits[v & 0xF];
    return out;
}

}  // namespace structsum::text
