#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "util.hpp"

namespace csmf {

/// Support parameters of a flocking cloud: supp rho^t inside
/// B(xbar + t vbar, X) x B(vbar, V e^{-alpha t}).
struct FlockingSupportFit {
    std::vector<double> xbar, vbar;
    double X = 0;
    double V = 0;
    double alpha = 0;
    /// max over frames of observed velocity radius / (V e^{-alpha t}) - 1, clipped at 0
    double residual = 0;

    /// Velocity radius at time t, inflated by the fit residual so that it covers every fitted frame.
    double covering_velocity_radius(double t) const;

    json to_json() const {
        return {{"xbar", xbar}, {"vbar", vbar}, {"X", X}, {"V", V}, {"alpha", alpha}, {"residual", residual}};
    }
};

inline double FlockingSupportFit::covering_velocity_radius(double t) const {
    return V * (1 + residual) * std::exp(-alpha * t);
}

/// Closed-form data of the initial density that the bound evaluators consume.
struct SupportData {
    double v_sup = 0;       // sup |v| over supp rho_in
    double v_l1 = 0;        // int |v| rho_in (closed form, or a closed-form upper bound)
    std::vector<double> vbar;
    double supp_size = 0;   // phase-space diameter of supp rho_in
    std::optional<FlockingSupportFit> flock;

    double vbar_norm() const {
        double s = 0;
        for (double c : vbar) s += c * c;
        return std::sqrt(s);
    }

    json to_json() const {
        json j = {{"v_sup", v_sup}, {"v_l1", v_l1}, {"vbar", vbar}, {"supp_size", supp_size}};
        if (flock) j["flock"] = flock->to_json();
        return j;
    }
};

} // namespace csmf
