#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace hierctl {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& what)
        : std::runtime_error(what), kind_(std::move(kind)) {}

    /// Stable machine-readable tag, used by the CLI error record.
    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

#define HIERCTL_DEFINE_ERROR(Name)                                               \
    class Name : public Error {                                                  \
    public:                                                                      \
        explicit Name(const std::string& what) : Error(#Name, what) {}           \
    };

HIERCTL_DEFINE_ERROR(InvalidGrid)
HIERCTL_DEFINE_ERROR(EmptyMask)
HIERCTL_DEFINE_ERROR(ShapeMismatch)
HIERCTL_DEFINE_ERROR(SingularMatrix)
HIERCTL_DEFINE_ERROR(NonFiniteBreakdown)
HIERCTL_DEFINE_ERROR(TooLarge)
HIERCTL_DEFINE_ERROR(InvalidSpec)
HIERCTL_DEFINE_ERROR(ZeroPointNonsmooth)
HIERCTL_DEFINE_ERROR(InvalidCenter)
HIERCTL_DEFINE_ERROR(CaseMismatch)
HIERCTL_DEFINE_ERROR(Unsupported)
HIERCTL_DEFINE_ERROR(ConfigError)

#undef HIERCTL_DEFINE_ERROR

/// Iteration budget exhausted; carries the best iterate seen.
class MaxIterations : public Error {
public:
    MaxIterations(const std::string& what, std::vector<double> best, double best_residual)
        : Error("MaxIterations", what), best_(std::move(best)), best_residual_(best_residual) {}
    const std::vector<double>& best() const noexcept { return best_; }
    double best_residual() const noexcept { return best_residual_; }

private:
    std::vector<double> best_;
    double best_residual_;
};

/// A fixed-point loop whose update norm kept growing.
class ContractionFailure : public Error {
public:
    ContractionFailure(const std::string& what, double ratio, int iterations)
        : Error("ContractionFailure", what), ratio_(ratio), iterations_(iterations) {}
    double ratio() const noexcept { return ratio_; }
    int iterations() const noexcept { return iterations_; }

private:
    double ratio_;
    int iterations_;
};

class OuterDivergence : public Error {
public:
    OuterDivergence(const std::string& what, double ratio, int iterations)
        : Error("OuterDivergence", what), ratio_(ratio), iterations_(iterations) {}
    double ratio() const noexcept { return ratio_; }
    int iterations() const noexcept { return iterations_; }

private:
    double ratio_;
    int iterations_;
};

class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t offset, std::vector<std::string> expected)
        : Error("ParseError", what), offset_(offset), expected_(std::move(expected)) {}
    std::size_t offset() const noexcept { return offset_; }
    const std::vector<std::string>& expected() const noexcept { return expected_; }

private:
    std::size_t offset_;
    std::vector<std::string> expected_;
};

} // namespace hierctl
