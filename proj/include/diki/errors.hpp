#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace diki {

/// Matrix or sequence dimensions do not line up.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// A documented precondition was violated by the caller.
struct ContractError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Label, token or task index outside its valid range.
struct IndexError : std::out_of_range {
    using std::out_of_range::out_of_range;
};

/// Cholesky factorization met a non-positive pivot.
struct SingularityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss.
struct DivergenceError : std::runtime_error {
    DivergenceError(std::size_t step, const std::string& what)
        : std::runtime_error(what), step(step) {}
    std::size_t step;
};

/// Bad configuration file, stream spec or CLI value.
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace diki
