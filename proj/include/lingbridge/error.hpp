#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace lingbridge {

enum class ErrorCode {
    InvalidInput,
    UnknownLanguage,
    // backends
    Timeout,
    RateLimited,
    AuthFailure,
    MalformedResponse,
    ScriptMiss,
    AmbiguousScript,
    // detector
    UnmappedLanguage,
    DegenerateCorpus,
    EmptyCorpus,
    EmptyText,
    EmptyTestSet,
    // templates / pipeline
    TemplateError,
    MissingBinding,
    // evaluation
    AmbiguousVerdict,
    NoScoreFound,
    MismatchedQuerySets,
    // datasets
    SchemaViolation,
    UnparseableGeneration,
    // configuration
    InvalidConfig,
    Io,
};

std::string_view error_code_name(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(error_code_name(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

    /// Transient failures are eligible for retry with backoff.
    bool transient() const noexcept {
        return code_ == ErrorCode::Timeout || code_ == ErrorCode::RateLimited;
    }

private:
    ErrorCode code_;
};

}  // namespace lingbridge
