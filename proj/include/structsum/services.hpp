#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <utility>

#include "structsum/llm.hpp"
#include "structsum/prompting.hpp"

namespace structsum {

/// What every model-driven stage needs: the template catalog and a gateway.
struct Services {
    std::shared_ptr<const prompting::TemplateRegistry> templates;
    llm::LlmGateway llm;

    Services(std::shared_ptr<const prompting::TemplateRegistry> t, llm::LlmGateway g)
        : templates(std::move(t)), llm(std::move(g)) {
        if (!templates) throw ConfigError("template registry not configured");
    }

    std::string render(std::string_view name, const prompting::Bindings& b) const {
        return templates->render(name, b);
    }

    Services traced(PromptTrace& trace) const { return Services(templates, llm.traced(trace)); }
};

}  // namespace structsum
