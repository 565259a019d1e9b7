#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace sdr {

/// Bad user input: out-of-domain parameters, malformed files, bad configs.
class InvalidInput : public std::invalid_argument
{
public:
    using std::invalid_argument::invalid_argument;
};

/// Numerical failure: non-finite likelihood, non-convergence.
///
/// Carries the iteration (or row) index at which the failure was detected and,
/// where meaningful, the last iterate the solver reached.
class NumericError : public std::runtime_error
{
public:
    explicit NumericError(const std::string& what,
                          std::optional<std::size_t> index = std::nullopt,
                          std::vector<double> last_iterate = {})
        : std::runtime_error(what), index_(index), last_iterate_(std::move(last_iterate))
    {}

    std::optional<std::size_t> index() const noexcept { return index_; }
    const std::vector<double>& last_iterate() const noexcept { return last_iterate_; }

private:
    std::optional<std::size_t> index_;
    std::vector<double> last_iterate_;
};

} // namespace sdr
