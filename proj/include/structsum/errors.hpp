#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace structsum {

/// Base of every error raised by the library. Pipeline stages catch this
/// type to isolate per-instance failures.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define STRUCTSUM_DEFINE_ERROR(Name, Base)      \
    class Name : public Base {                  \
    public:                                     \
        using Base::Base;                       \
    }

// llm gateway
STRUCTSUM_DEFINE_ERROR(BackendError, Error);
STRUCTSUM_DEFINE_ERROR(TransportError, BackendError);
STRUCTSUM_DEFINE_ERROR(BackendUnavailable, BackendError);
STRUCTSUM_DEFINE_ERROR(EmptyResponse, BackendError);
STRUCTSUM_DEFINE_ERROR(ScriptExhausted, BackendError);
STRUCTSUM_DEFINE_ERROR(ScriptMismatch, BackendError);

// prompting
STRUCTSUM_DEFINE_ERROR(TemplateNotFound, Error);
STRUCTSUM_DEFINE_ERROR(MissingBinding, Error);
STRUCTSUM_DEFINE_ERROR(TemplateSyntaxError, Error);

// parsing / generation
STRUCTSUM_DEFINE_ERROR(MindMapParseError, Error);
STRUCTSUM_DEFINE_ERROR(MultiTableEmpty, Error);
STRUCTSUM_DEFINE_ERROR(RootGenerationFailed, Error);
STRUCTSUM_DEFINE_ERROR(ExpansionRejected, Error);

// critics
STRUCTSUM_DEFINE_ERROR(IncompleteVerdictSet, Error);

// study
STRUCTSUM_DEFINE_ERROR(AssignmentInfeasible, Error);
STRUCTSUM_DEFINE_ERROR(NotAssigned, Error);
STRUCTSUM_DEFINE_ERROR(AlreadyAnswered, Error);
STRUCTSUM_DEFINE_ERROR(NotFound, Error);

// io / config
STRUCTSUM_DEFINE_ERROR(SchemaError, Error);
STRUCTSUM_DEFINE_ERROR(ConfigError, Error);

#undef STRUCTSUM_DEFINE_ERROR

/// Raised when model output holds no usable pipe table. Keeps the raw text
/// so a caller can log it or retry.
class TableParseError : public Error {
public:
    explicit TableParseError(const std::string& what, std::string raw = {})
        : Error(what), raw_(std::move(raw)) {}
    const std::string& raw() const noexcept { return raw_; }

private:
    std::string raw_;
};

}  // namespace structsum
