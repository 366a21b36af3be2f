#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace csmf {

// Malformed input: wrong dimensions, invalid parameters, bad config.
class InputError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Requested operation has no implementation for this input (e.g. no closed form and no sampling budget).
class UnsupportedError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Problem exceeds the exact-solver size cap; use the sliced estimator instead.
class SizeCapError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Integrator produced a non-finite state.
class DivergenceError : public std::runtime_error {
public:
    DivergenceError(const std::string& what, std::size_t step, std::size_t run = npos)
        : std::runtime_error(what), step_(step), run_(run) {}

    static constexpr std::size_t npos = static_cast<std::size_t>(-1);

    std::size_t step() const noexcept { return step_; }
    std::size_t run() const noexcept { return run_; }

private:
    std::size_t step_;
    std::size_t run_;
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw InputError(msg);
}

} // namespace csmf
