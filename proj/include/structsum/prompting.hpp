#pragma once

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "structsum/errors.hpp"
#include "structsum/text_util.hpp"

namespace structsum::prompting {

/// Every template the pipeline renders. A registry missing any of these is
/// rejected by TemplateRegistry::require_catalog.
inline const std::vector<std::string>& catalog_names() {
    static const std::vector<std::string> names = {
        "table.segment",           "table.generate",           "mindmap.root",
        "mindmap.continue",        "mindmap.expand",           "mindmap.json_repair",
        "critic.factuality.table", "critic.factuality.mindmap", "critic.local.table",
        "critic.local.mindmap",    "critic.global.mindmap",    "autoqa.genqa",
        "autoqa.answer",           "autoqa.equivalence",
    };
    return names;
}

using Binding = std::variant<std::string, std::vector<std::string>>;
using Bindings = std::map<std::string, Binding, std::less<>>;

/// A parsed template.
///
/// Syntax: `{name}` substitutes a declared placeholder. A loop
///
///     {for item in list}[{index}] {item}{endfor}
///
/// renders its body once per element of the list binding, with `{item}`
/// bound to the element and `{index}` to its 1-based position; iterations
/// are joined with a newline. Braces that do not form one of these tags
/// (JSON examples, for instance) are literal text.
class PromptTemplate {
public:
    PromptTemplate(std::string name, std::vector<std::string> declared, std::string_view body)
        : name_(std::move(name)), declared_(declared.begin(), declared.end()) {
        parse(body);
    }

    /// Parses a template file: the first line declares placeholders as
    /// `#! placeholders: a, b, c`; the rest is the body.
    static PromptTemplate from_file_text(std::string name, std::string_view file_text) {
        auto nl = file_text.find('\n');
        std::string_view header = file_text.substr(0, nl);
        std::string_view body = nl == std::string_view::npos ? std::string_view{} : file_text.substr(nl + 1);
        if (!body.empty() && body.back() == '\n') body.remove_suffix(1);
        constexpr std::string_view prefix = "#! placeholders:";
        if (header.substr(0, prefix.size()) != prefix)
            throw TemplateSyntaxError(name + ": first line must start with '#! placeholders:'");
        std::vector<std::string> declared;
        std::string list(header.substr(prefix.size()));
        std::replace(list.begin(), list.end(), ',', ' ');
        for (auto& w : text::split_whitespace(list)) declared.push_back(w);
        return PromptTemplate(std::move(name), std::move(declared), body);
    }

    const std::string& name() const { return name_; }
    const std::set<std::string, std::less<>>& placeholders() const { return declared_; }

    std::string render(const Bindings& bindings) const {
        std::string out;
        for (const auto& node : nodes_) {
            switch (node.kind) {
                case Node::Literal: out += node.text; break;
                case Node::Slot: out += scalar(bindings, node.text); break;
                case Node::Loop: {
                    const auto& items = list(bindings, node.list);
                    for (std::size_t i = 0; i < items.size(); ++i) {
                        if (i) out += '\n';
                        for (const auto& inner : node.body) {
                            if (inner.kind == Node::Literal) out += inner.text;
                            else if (inner.text == node.var) out += items[i];
                            else if (inner.text == "index") out += std::to_string(i + 1);
                            else out += scalar(bindings, inner.text);
                        }
                    }
                    break;
                }
            }
        }
        return out;
    }

private:
    struct Node {
        enum Kind { Literal, Slot, Loop } kind = Literal;
        std::string text;  // literal text or slot name
        std::string var;
        std::string list;
        std::vector<Node> body;
    };

    static bool identifier(std::string_view s) {
        if (s.empty() || !(std::isalpha(static_cast<unsigned char>(s[0])) || s[0] == '_')) return false;
        return std::all_of(s.begin(), s.end(),
                           [](unsigned char c) { return std::isalnum(c) || c == '_'; });
    }

    void require_declared(const std::string& n) const {
        if (declared_.count(n) == 0)
            throw TemplateSyntaxError(name_ + ": placeholder '" + n + "' is not declared in the header");
    }

    void parse(std::string_view body) {
        std::vector<Node>* target = &nodes_;
        Node* loop = nullptr;
        std::string literal;
        auto flush = [&] {
            if (!literal.empty()) target->push_back({Node::Literal, std::move(literal), {}, {}, {}});
            literal.clear();
        };
        std::size_t i = 0;
        while (i < body.size()) {
            if (body[i] != '{') {
                literal += body[i++];
                continue;
            }
            auto close = body.find('}', i + 1);
            if (close == std::string_view::npos) {
                literal += body.substr(i);
                break;
            }
            std::string_view tag = body.substr(i + 1, close - i - 1);
            auto words = text::split_whitespace(tag);
            if (words.size() == 4 && words[0] == "for" && words[2] == "in" && identifier(words[1]) &&
                identifier(words[3])) {
                if (loop) throw TemplateSyntaxError(name_ + ": nested loops are not supported");
                require_declared(words[3]);
                flush();
                nodes_.push_back({Node::Loop, {}, words[1], words[3], {}});
                loop = &nodes_.back();
                target = &loop->body;
            } else if (tag == "endfor") {
                if (!loop) throw TemplateSyntaxError(name_ + ": {endfor} without {for}");
                flush();
                loop = nullptr;
                target = &nodes_;
            } else if (identifier(tag)) {
                std::string n(tag);
                if (!(loop && (n == loop->var || n == "index"))) require_declared(n);
                flush();
                target->push_back({Node::Slot, std::move(n), {}, {}, {}});
            } else {
                literal += body.substr(i, close - i + 1);
            }
            i = close + 1;
        }
        if (loop) throw TemplateSyntaxError(name_ + ": unterminated {for}");
        flush();
    }

    const Binding& lookup(const Bindings& b, const std::string& n) const {
        auto it = b.find(n);
        if (it == b.end()) throw MissingBinding(name_ + ": no binding for '" + n + "'");
        return it->second;
    }

    const std::string& scalar(const Bindings& b, const std::string& n) const {
        const auto* s = std::get_if<std::string>(&lookup(b, n));
        if (!s) throw MissingBinding(name_ + ": '" + n + "' must be bound to a string");
        return *s;
    }

    const std::vector<std::string>& list(const Bindings& b, const std::string& n) const {
        const auto* l = std::get_if<std::vector<std::string>>(&lookup(b, n));
        if (!l) throw MissingBinding(name_ + ": '" + n + "' must be bound to a list");
        return *l;
    }

    std::string name_;
    std::set<std::string, std::less<>> declared_;
    std::vector<Node> nodes_;
};

inline std::filesystem::path default_templates_dir() {
#ifdef STRUCTSUM_DEFAULT_TEMPLATES_DIR
    return STRUCTSUM_DEFAULT_TEMPLATES_DIR;
#else
    return "templates";
#endif
}

/// Templates (`<name>.tmpl`) and verbatim text assets (`<name>.txt`, such as
/// the segmentation exemplar) loaded from one directory. Immutable after load.
class TemplateRegistry {
public:
    TemplateRegistry() = default;

    static TemplateRegistry load(const std::filesystem::path& dir) {
        namespace fs = std::filesystem;
        if (!fs::is_directory(dir)) throw ConfigError("templates directory not found: " + dir.string());
        TemplateRegistry reg;
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(dir))
            if (e.is_regular_file()) files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            auto ext = f.extension().string();
            if (ext != ".tmpl" && ext != ".txt") continue;
            std::ifstream in(f, std::ios::binary);
            std::ostringstream buf;
            buf << in.rdbuf();
            auto name = f.stem().string();
            if (ext == ".tmpl") reg.add(PromptTemplate::from_file_text(name, buf.str()));
            else reg.assets_[name] = text::trim(buf.str());
        }
        return reg;
    }

    static TemplateRegistry load_default() { return load(default_templates_dir()); }

    void add(PromptTemplate t) {
        auto name = t.name();
        if (!templates_.emplace(name, std::move(t)).second)
            throw TemplateSyntaxError("duplicate template name: " + name);
    }

    bool contains(std::string_view name) const { return templates_.find(name) != templates_.end(); }

    const PromptTemplate& get(std::string_view name) const {
        auto it = templates_.find(name);
        if (it == templates_.end()) throw TemplateNotFound("unknown template: " + std::string(name));
        return it->second;
    }

    const std::string& asset(std::string_view name) const {
        auto it = assets_.find(name);
        if (it == assets_.end()) throw TemplateNotFound("unknown template asset: " + std::string(name));
        return it->second;
    }

    std::string render(std::string_view name, const Bindings& bindings) const {
        return get(name).render(bindings);
    }

    std::vector<std::string> missing_from_catalog() const {
        std::vector<std::string> missing;
        for (const auto& n : catalog_names())
            if (!contains(n)) missing.push_back(n);
        return missing;
    }

    void require_catalog() const {
        auto missing = missing_from_catalog();
        if (!missing.empty())
            throw TemplateNotFound("template catalog incomplete, missing: " + text::join(missing, ", "));
    }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        for (const auto& [n, _] : templates_) out.push_back(n);
        return out;
    }

private:
    std::map<std::string, PromptTemplate, std::less<>> templates_;
    std::map<std::string, std::string, std::less<>> assets_;
};

}  // namespace structsum::prompting
