#pragma once

#include <stdexcept>
#include <string>

namespace eidos {

// Base of every error the library throws. kind() is a stable, machine-parseable
// tag used by the CLI's single-line error output.
class Error : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
    virtual const char* kind() const noexcept { return "error"; }
};

#define EIDOS_DEFINE_ERROR(Name, tag)                              \
    class Name : public Error {                                    \
       public:                                                     \
        using Error::Error;                                        \
        const char* kind() const noexcept override { return tag; } \
    }

EIDOS_DEFINE_ERROR(DimensionError, "dimension");
EIDOS_DEFINE_ERROR(WindowError, "window");
EIDOS_DEFINE_ERROR(ContractError, "contract");
EIDOS_DEFINE_ERROR(ConfigError, "config");
EIDOS_DEFINE_ERROR(GraphError, "graph");
EIDOS_DEFINE_ERROR(ParseError, "parse");
EIDOS_DEFINE_ERROR(InputError, "input");
EIDOS_DEFINE_ERROR(UndefinedMetricError, "undefined_metric");
EIDOS_DEFINE_ERROR(TrainingGuardError, "training_guard");
EIDOS_DEFINE_ERROR(DegenerateDirectionError, "degenerate_direction");
EIDOS_DEFINE_ERROR(HashMismatchError, "hash_mismatch");
EIDOS_DEFINE_ERROR(EmptyReportError, "empty_report");
EIDOS_DEFINE_ERROR(IoError, "io");

#undef EIDOS_DEFINE_ERROR

}  // namespace eidos
