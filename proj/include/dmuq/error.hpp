#pragma once

#include <stdexcept>
#include <string>

namespace dmuq {

// Error categories used across the library. The CLI prints them as a
// one-line machine-parsable prefix, e.g. "error[config]: ...".
enum class ErrorCategory {
    InvalidParameter,
    NonPsd,
    SingularMatrix,
    Usage,
    Config,
    InsufficientData,
    Estimation,
    Training,
    UndefinedMetric,
    UndefinedGeometry,
    Io,
};

inline const char* to_string(ErrorCategory c) {
    switch (c) {
        case ErrorCategory::InvalidParameter: return "invalid-parameter";
        case ErrorCategory::NonPsd: return "non-psd";
        case ErrorCategory::SingularMatrix: return "singular-matrix";
        case ErrorCategory::Usage: return "usage";
        case ErrorCategory::Config: return "config";
        case ErrorCategory::InsufficientData: return "insufficient-data";
        case ErrorCategory::Estimation: return "estimation";
        case ErrorCategory::Training: return "training";
        case ErrorCategory::UndefinedMetric: return "undefined-metric";
        case ErrorCategory::UndefinedGeometry: return "undefined-geometry";
        case ErrorCategory::Io: return "io";
    }
    return "unknown";
}

class Error : public std::runtime_error {
  public:
    Error(ErrorCategory category, const std::string& message)
        : std::runtime_error(message), category_(category) {}

    ErrorCategory category() const { return category_; }

  private:
    ErrorCategory category_;
};

[[noreturn]] inline void raise(ErrorCategory c, const std::string& msg) {
    throw Error(c, msg);
}

}  // namespace dmuq
