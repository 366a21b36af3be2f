#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "errors.hpp"

namespace csmf {

/// N points (x_i, v_i) in R^{2d}, row-major N x d arrays.
struct ParticleEnsemble {
    std::size_t count = 0;
    std::size_t dim = 0;
    std::vector<double> positions;
    std::vector<double> velocities;

    ParticleEnsemble() = default;
    ParticleEnsemble(std::size_t n, std::size_t d)
        : count(n), dim(d), positions(n * d, 0.0), velocities(n * d, 0.0) {}

    std::span<double> x(std::size_t i) { return {positions.data() + i * dim, dim}; }
    std::span<double> v(std::size_t i) { return {velocities.data() + i * dim, dim}; }
    std::span<const double> x(std::size_t i) const { return {positions.data() + i * dim, dim}; }
    std::span<const double> v(std::size_t i) const { return {velocities.data() + i * dim, dim}; }

    bool finite() const {
        for (double a : positions)
            if (!std::isfinite(a)) return false;
        for (double a : velocities)
            if (!std::isfinite(a)) return false;
        return true;
    }

    void validate() const {
        require(count >= 1 && dim >= 1, "ensemble needs N >= 1 and d >= 1");
        require(positions.size() == count * dim && velocities.size() == count * dim, "ensemble arrays must be N x d");
        require(finite(), "ensemble contains non-finite entries");
    }

    bool operator==(const ParticleEnsemble&) const = default;
};

inline double norm(std::span<const double> a) {
    double s = 0;
    for (double c : a) s += c * c;
    return std::sqrt(s);
}

inline double distance(std::span<const double> a, std::span<const double> b) {
    double s = 0;
    for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
    return std::sqrt(s);
}

} // namespace csmf
