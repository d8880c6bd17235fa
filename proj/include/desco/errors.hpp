#pragma once

#include <stdexcept>
#include <string>

namespace desco {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    /// Short machine-readable category, used by the CLI error line.
    virtual const char* kind() const noexcept { return "error"; }
};

#define DESCO_ERROR_KIND(Name, tag)                                    \
    class Name : public Error {                                        \
    public:                                                            \
        using Error::Error;                                            \
        const char* kind() const noexcept override { return tag; }     \
    };

DESCO_ERROR_KIND(BoundsError, "bounds")
DESCO_ERROR_KIND(ShapeError, "shape")
DESCO_ERROR_KIND(FormatError, "format")
DESCO_ERROR_KIND(ConfigError, "config")
DESCO_ERROR_KIND(NoTargetError, "no_target")
DESCO_ERROR_KIND(DegenerateWeightError, "degenerate_weight")
DESCO_ERROR_KIND(MetricUndefinedError, "metric_undefined")
DESCO_ERROR_KIND(IoError, "io")

#undef DESCO_ERROR_KIND

/// Registration did not produce a finite field.
class RegistrationError : public Error {
public:
    RegistrationError(const std::string& what, int iteration, double last_mse)
        : Error(what), iteration_(iteration), last_mse_(last_mse) {}
    const char* kind() const noexcept override { return "registration"; }
    int iteration() const noexcept { return iteration_; }
    double last_mse() const noexcept { return last_mse_; }

private:
    int iteration_;
    double last_mse_;
};

/// Propagation aborted because the pair (slice_index -> next) failed to register.
class PropagationError : public Error {
public:
    PropagationError(const std::string& what, int slice_index)
        : Error(what), slice_index_(slice_index) {}
    const char* kind() const noexcept override { return "registration"; }
    int slice_index() const noexcept { return slice_index_; }

private:
    int slice_index_;
};

/// Non-finite loss during training. The message carries the diagnostic dump.
class TrainingAbort : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "nan_abort"; }
};

} // namespace desco
