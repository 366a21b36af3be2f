#pragma once

// Explicit convergence constants C(t) for W_2(rho^t_{N;1}, rho^t) <= C(t) N^{-1/2}.
// Each evaluator has two algebraically distinct evaluation orders (direct and
// log-space) that are compared in the tests. Formulas whose printed form looks
// inconsistent are evaluated as printed, with the self-consistent variant
// returned alongside as a labeled alternate.

#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "errors.hpp"
#include "support.hpp"
#include "util.hpp"

namespace csmf {

enum class Theorem { Main, MainSublinear, GeneralLipschitz, SublinearExplicit, FlockingCdet };

inline std::string to_string(Theorem t) {
    switch (t) {
    case Theorem::Main: return "main";
    case Theorem::MainSublinear: return "main_sublinear";
    case Theorem::GeneralLipschitz: return "general_lipschitz";
    case Theorem::SublinearExplicit: return "sublinear_explicit";
    case Theorem::FlockingCdet: return "flocking_cdet";
    }
    return "unknown";
}

struct BoundEvaluation {
    Theorem theorem = Theorem::Main;
    double t = 0;
    double C_t = 0;
    double rate_exponent = -0.5;
    std::map<std::string, double> auxiliary;
    std::optional<double> alternate_C_t;
    std::string alternate_label;
    /// C_t overflowed double range and was saturated to +inf.
    bool saturated = false;
    /// Smallest t at which the evaluator overflows (set when saturated).
    std::optional<double> saturation_t;

    double bound(double n) const { return C_t * std::pow(n, rate_exponent); }

    json to_json() const {
        json j = {{"theorem", to_string(theorem)}, {"t", t}, {"rate_exponent", rate_exponent},
                  {"auxiliary", auxiliary},         {"saturated", saturated}};
        j["C_t"] = std::isfinite(C_t) ? json(C_t) : json("inf");
        if (alternate_C_t) {
            j["alternate_C_t"] = std::isfinite(*alternate_C_t) ? json(*alternate_C_t) : json("inf");
            j["alternate_label"] = alternate_label;
        }
        if (saturation_t) j["saturation_t"] = *saturation_t;
        return j;
    }
};

namespace detail {

inline constexpr double kLogMax = 709.782712893384;  // log(DBL_MAX)

inline double exp_or_inf(double log_value) {
    return log_value >= kLogMax ? std::numeric_limits<double>::infinity() : std::exp(log_value);
}

// --- Cucker-Smale constant: 4 psi^2 (2|vbar| + |supp|) ((e^{Lt} - 1)/L)^{1/2}, L = 2(1 + 8 psi^2 v_sup^2)

inline double cs_rate(double psi_sup, double v_sup) { return 2 * (1 + 8 * psi_sup * psi_sup * v_sup * v_sup); }

inline double cs_direct(double psi_sup, double vbar, double supp, double v_sup, double t) {
    const double L = cs_rate(psi_sup, v_sup);
    return 4 * psi_sup * psi_sup * (2 * vbar + supp) * std::sqrt(std::expm1(L * t) / L);
}

inline double cs_logspace(double psi_sup, double vbar, double supp, double v_sup, double t) {
    const double L = cs_rate(psi_sup, v_sup);
    const double spread = 2 * vbar + supp;
    if (t <= 0 || spread <= 0) return 0;
    return exp_or_inf(std::log(4.0) + 2 * std::log(psi_sup) + std::log(spread) +
                      0.5 * (std::log(std::expm1(L * t)) - std::log(L)));
}

// --- Bounded globally Lipschitz force: (4 g (e^{Lambda t} - 1)/Lambda)^{1/2}, Lambda = 2(1 + 2 Lip^2)

inline double lip_rate(double lip) { return 2 * (1 + 2 * lip * lip); }

inline double lip_direct(double g, double lip, double t) {
    const double lam = lip_rate(lip);
    return std::sqrt(4 * g * std::expm1(lam * t) / lam);
}

inline double lip_logspace(double g, double lip, double t) {
    if (t <= 0 || g <= 0) return 0;
    const double lam = lip_rate(lip);
    return 2 * std::sqrt(g) * exp_or_inf(0.5 * (std::log(std::expm1(lam * t)) - std::log(lam)));
}

// --- Sublinear explicit: 2 g0 A (2 exp(e^{4 g0 t} 4 g0 A^2) e^{4t} (e^{4 g0 t} - 1))^{1/2}, A = v_sup + v_l1

inline double sublinear_log(double g0, double a, double t) {
    if (t <= 0 || a <= 0 || g0 <= 0) return -std::numeric_limits<double>::infinity();
    const double inner = std::exp(4 * g0 * t) * 4 * g0 * a * a;  // may be +inf
    return std::log(2.0) + std::log(g0) + std::log(a) +
           0.5 * (std::log(2.0) + inner + 4 * t + std::log(std::expm1(4 * g0 * t)));
}

inline double sublinear_direct(double g0, double a, double t) {
    // square root taken factor by factor so the radicand cannot overflow before the result does
    return 2 * g0 * a * std::sqrt(2.0) * std::exp(0.5 * std::exp(4 * g0 * t) * 4 * g0 * a * a) * std::exp(2 * t) *
           std::sqrt(std::expm1(4 * g0 * t));
}

inline double sublinear_logspace(double g0, double a, double t) {
    const double l = sublinear_log(g0, a, t);
    return std::isinf(l) && l < 0 ? 0.0 : exp_or_inf(l);
}

// --- Flocking support bound as printed: 4 g0 A (e^{R t} - 1)/R, A = vbar^2 + V^2, R = 2(1 + 8 A).
//     The alternate uses R = 2(1 + 8 g0^2 A), matching the L(u) estimate it is derived from.

inline double flock_direct(double g0, double a, double rate, double t) {
    return 4 * g0 * a * std::expm1(rate * t) / rate;
}

inline double flock_logspace(double g0, double a, double rate, double t) {
    if (t <= 0 || a <= 0 || g0 <= 0) return 0;
    const double e = rate * t > 1 ? rate * t + std::log(-std::expm1(-rate * t)) : std::log(std::expm1(rate * t));
    return exp_or_inf(std::log(4.0) + std::log(g0) + std::log(a) + e - std::log(rate));
}

template <class LogFn>
std::optional<double> saturation_time(LogFn&& log_value, double t_hi) {
    if (!(log_value(t_hi) >= kLogMax)) return std::nullopt;
    double lo = 0, hi = t_hi;
    for (int it = 0; it < 200 && hi - lo > 1e-15 * std::max(1.0, hi); ++it) {
        const double mid = 0.5 * (lo + hi);
        (log_value(mid) >= kLogMax ? hi : lo) = mid;
    }
    return hi;
}

} // namespace detail

/// Strict Cucker-Smale constant.
inline BoundEvaluation cs_bound(double psi_sup, const SupportData& support, double t) {
    require(psi_sup > 0, "cs_bound: psi_sup must be positive");
    require(t >= 0, "cs_bound: t must be nonnegative");
    BoundEvaluation e;
    e.theorem = Theorem::Main;
    e.t = t;
    const double vbar = support.vbar_norm();
    e.C_t = detail::cs_direct(psi_sup, vbar, support.supp_size, support.v_sup, t);
    if (!std::isfinite(e.C_t)) {
        e.C_t = std::numeric_limits<double>::infinity();
        e.saturated = true;
        const double spread = 2 * vbar + support.supp_size;
        e.saturation_t = detail::saturation_time(
            [&](double s) {
                const double L = detail::cs_rate(psi_sup, support.v_sup);
                return std::log(4.0) + 2 * std::log(psi_sup) + std::log(spread) + 0.5 * (L * s - std::log(L));
            },
            t);
    }
    e.auxiliary = {{"L", detail::cs_rate(psi_sup, support.v_sup)},
                   {"psi_sup", psi_sup},
                   {"v_sup", support.v_sup},
                   {"vbar_norm", vbar},
                   {"supp_size", support.supp_size}};
    return e;
}

/// Bounded, globally Lipschitz gamma. Primary is the printed form with ||gamma||_inf to the first
/// power; the alternate uses ||gamma||_inf^2.
inline BoundEvaluation lipschitz_bound(double gamma_sup, double lip, double t) {
    require(gamma_sup >= 0 && lip >= 0, "lipschitz_bound: gamma_sup and lip must be nonnegative");
    require(t >= 0, "lipschitz_bound: t must be nonnegative");
    BoundEvaluation e;
    e.theorem = Theorem::GeneralLipschitz;
    e.t = t;
    e.C_t = detail::lip_direct(gamma_sup, lip, t);
    e.alternate_C_t = detail::lip_direct(gamma_sup * gamma_sup, lip, t);
    e.alternate_label = "gamma_sup_squared";
    e.saturated = !std::isfinite(e.C_t);
    e.auxiliary = {{"Lambda", detail::lip_rate(lip)}, {"gamma_sup", gamma_sup}, {"lip", lip}};
    return e;
}

/// Sublinear gamma from the a priori growth estimates; double-exponential in t and saturates to +inf.
inline BoundEvaluation sublinear_bound(double gamma0, const SupportData& support, double t) {
    require(gamma0 > 0, "sublinear_bound: gamma0 must be positive");
    require(t >= 0, "sublinear_bound: t must be nonnegative");
    BoundEvaluation e;
    e.theorem = Theorem::SublinearExplicit;
    e.t = t;
    const double a = support.v_sup + support.v_l1;
    const double l = detail::sublinear_log(gamma0, a, t);
    if (l >= detail::kLogMax) {
        e.C_t = std::numeric_limits<double>::infinity();
        e.saturated = true;
        e.saturation_t = detail::saturation_time([&](double s) { return detail::sublinear_log(gamma0, a, s); }, t);
    } else {
        e.C_t = (t <= 0 || a <= 0) ? 0.0 : detail::sublinear_direct(gamma0, a, t);
    }
    e.auxiliary = {{"gamma0", gamma0}, {"v_sup", support.v_sup}, {"v_l1", support.v_l1}};
    return e;
}

/// Flocking-support constant as printed (rate 2(1 + 8(vbar^2 + V^2))); the alternate carries
/// the gamma0^2 factor in the rate.
inline BoundEvaluation flocking_bound(double gamma0, const FlockingSupportFit& fit, double t) {
    require(gamma0 >= 0, "flocking_bound: gamma0 must be nonnegative");
    require(t >= 0, "flocking_bound: t must be nonnegative");
    require(std::isfinite(fit.V) && fit.V >= 0, "flocking_bound: invalid fit");
    double vb2 = 0;
    for (double c : fit.vbar) vb2 += c * c;
    const double a = vb2 + fit.V * fit.V;
    const double printed = 2 * (1 + 8 * a);
    const double consistent = 2 * (1 + 8 * gamma0 * gamma0 * a);
    BoundEvaluation e;
    e.theorem = Theorem::FlockingCdet;
    e.t = t;
    e.C_t = detail::flock_direct(gamma0, a, printed, t);
    e.alternate_C_t = detail::flock_direct(gamma0, a, consistent, t);
    e.alternate_label = "rate_with_gamma0_squared";
    if (!std::isfinite(e.C_t)) {
        e.C_t = std::numeric_limits<double>::infinity();
        e.saturated = true;
        e.saturation_t = detail::saturation_time(
            [&](double s) { return std::log(4 * gamma0 * a) + printed * s - std::log(printed); }, t);
    }
    e.auxiliary = {{"gamma0", gamma0}, {"vbar_sq", vb2}, {"V", fit.V}, {"rate_printed", printed},
                   {"rate_consistent", consistent}};
    return e;
}

/// General sublinear constant from measured support profiles on a time grid:
///   C(t)^2 = 4 int_0^t S(s) exp(int_s^t L(u) du) ds
/// with S(s) = sup |gamma|^2 over pairs of the support and L(u) = 2(1 + 2 Lip(u)^2).
/// Trapezoid rule on the given grid; returns one evaluation per grid time.
inline std::vector<BoundEvaluation> profile_bound(const std::vector<double>& times, const std::vector<double>& sup_force_sq,
                                                  const std::vector<double>& lip_sq) {
    require(!times.empty() && times.size() == sup_force_sq.size() && times.size() == lip_sq.size(),
            "profile_bound: profiles must match the time grid");
    require(times.front() == 0, "profile_bound: time grid must start at 0");
    for (std::size_t k = 1; k < times.size(); ++k) require(times[k] > times[k - 1], "profile_bound: times must increase");
    const std::size_t n = times.size();
    // I[k] = int_0^{t_k} L
    std::vector<double> I(n, 0.0);
    for (std::size_t k = 1; k < n; ++k) {
        const double l0 = 2 * (1 + 2 * lip_sq[k - 1]), l1 = 2 * (1 + 2 * lip_sq[k]);
        I[k] = I[k - 1] + 0.5 * (times[k] - times[k - 1]) * (l0 + l1);
    }
    std::vector<BoundEvaluation> out;
    for (std::size_t q = 0; q < n; ++q) {
        double acc = 0;
        for (std::size_t k = 1; k <= q; ++k) {
            const double h = times[k] - times[k - 1];
            acc += 0.5 * h * (sup_force_sq[k - 1] * std::exp(I[q] - I[k - 1]) + sup_force_sq[k] * std::exp(I[q] - I[k]));
        }
        BoundEvaluation e;
        e.theorem = Theorem::MainSublinear;
        e.t = times[q];
        e.C_t = std::sqrt(4 * acc);
        e.saturated = !std::isfinite(e.C_t);
        e.auxiliary = {{"int_L", I[q]}};
        out.push_back(std::move(e));
    }
    return out;
}

namespace detail {

/// profile_bound with exp(I[q]) factored out of the sum.
inline std::vector<double> profile_factored(const std::vector<double>& times, const std::vector<double>& s,
                                            const std::vector<double>& lip_sq) {
    const std::size_t n = times.size();
    std::vector<double> I(n, 0.0), out(n, 0.0);
    for (std::size_t k = 1; k < n; ++k)
        I[k] = I[k - 1] + 0.5 * (times[k] - times[k - 1]) * (2 * (1 + 2 * lip_sq[k - 1]) + 2 * (1 + 2 * lip_sq[k]));
    double partial = 0;
    for (std::size_t q = 1; q < n; ++q) {
        const double h = times[q] - times[q - 1];
        partial += 0.5 * h * (s[q - 1] * std::exp(-I[q - 1]) + s[q] * std::exp(-I[q]));
        out[q] = 2 * std::sqrt(partial) * std::exp(0.5 * I[q]);
    }
    return out;
}

} // namespace detail

/// N_{t,eps} = (C(t)/eps)^2; callers round up to a particle count.
inline double n_threshold(double c_t, double epsilon) {
    require(epsilon > 0, "n_threshold: epsilon must be positive");
    require(c_t >= 0, "n_threshold: C(t) must be nonnegative");
    const double r = c_t / epsilon;
    return r * r;
}

} // namespace csmf
