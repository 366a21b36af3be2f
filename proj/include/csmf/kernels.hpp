#pragma once

// Interaction force laws for generalized Cucker-Smale systems.
//
// Sign convention: the force on particle i from particle j is
// gamma(x_j - x_i, v_j - v_i), i.e. arguments are "other minus self". With
// gamma(x, v) = psi(x) v this reproduces the alignment law
// dv_i/dt = (1/N) sum_j psi(x_i - x_j)(v_j - v_i) for radial psi. The
// "self minus other" convention corresponds to the reflected kernel
// gamma(-x, -v), which has the same gamma0, sup norm and Lipschitz data.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"
#include "util.hpp"

namespace csmf {

/// Radial, positive, nonincreasing communication rate psi(x) = f(|x|).
class CommunicationRate {
public:
    enum class Family { Constant, InversePower, Tabulated };

    static CommunicationRate constant(double c) {
        require(c > 0 && std::isfinite(c), "constant rate must be positive and finite");
        CommunicationRate r;
        r.family_ = Family::Constant;
        r.k_ = c;
        r.finish();
        return r;
    }

    /// psi(x) = K / (1 + |x|^2)^beta
    static CommunicationRate inverse_power(double k, double beta) {
        require(k > 0 && std::isfinite(k), "inverse_power K must be positive");
        require(beta >= 0 && std::isfinite(beta), "inverse_power beta must be >= 0");
        CommunicationRate r;
        r.family_ = Family::InversePower;
        r.k_ = k;
        r.beta_ = beta;
        r.finish();
        return r;
    }

    /// Piecewise-linear in |x| through (radii[k], values[k]); constant past the last radius.
    /// radii must start at 0 and increase strictly. Non-monotone tables are accepted and flagged.
    static CommunicationRate tabulated(std::vector<double> radii, std::vector<double> values) {
        require(radii.size() == values.size() && !radii.empty(), "tabulated rate needs matching non-empty tables");
        require(radii.front() == 0.0, "tabulated rate radii must start at 0");
        for (std::size_t k = 1; k < radii.size(); ++k)
            require(radii[k] > radii[k - 1], "tabulated rate radii must increase strictly");
        for (double v : values) require(v > 0 && std::isfinite(v), "tabulated rate values must be positive");
        CommunicationRate r;
        r.family_ = Family::Tabulated;
        r.radii_ = std::move(radii);
        r.values_ = std::move(values);
        r.finish();
        return r;
    }

    Family family() const noexcept { return family_; }

    /// Closed forms with a dedicated vectorized path: K, K(1+r^2)^{-1/4}, K(1+r^2)^{-1/2}, K(1+r^2)^{-1}.
    enum class Shape { Constant, Quarter, Half, One, Other };
    struct FastForm {
        Shape shape;
        double k;
    };
    FastForm fast_form() const noexcept {
        if (family_ == Family::Constant || (family_ == Family::InversePower && beta_ == 0.0)) return {Shape::Constant, k_};
        if (family_ == Family::InversePower) {
            if (beta_ == 0.25) return {Shape::Quarter, k_};
            if (beta_ == 0.5) return {Shape::Half, k_};
            if (beta_ == 1.0) return {Shape::One, k_};
        }
        return {Shape::Other, k_};
    }
    double sup_norm() const noexcept { return sup_; }
    double lip_const() const noexcept { return lip_; }
    bool monotone() const noexcept { return monotone_; }

    /// psi evaluated from the squared distance |x|^2.
    double at_sq(double r2) const {
        switch (family_) {
        case Family::Constant: return k_;
        case Family::InversePower: return power_sq(r2);
        case Family::Tabulated: break;
        }
        return table(std::sqrt(r2));
    }

    double operator()(std::span<const double> x) const {
        double r2 = 0;
        for (double c : x) r2 += c * c;
        return at_sq(r2);
    }

    /// out[j] = psi from r2[j]; the loops are written to vectorize.
    void eval_sq(std::span<const double> r2, std::span<double> out) const {
        const std::size_t n = r2.size();
        switch (family_) {
        case Family::Constant:
            std::fill(out.begin(), out.begin() + n, k_);
            return;
        case Family::InversePower:
            if (beta_ == 0.25) {
                for (std::size_t j = 0; j < n; ++j) out[j] = k_ / std::sqrt(std::sqrt(1.0 + r2[j]));
            } else if (beta_ == 0.5) {
                for (std::size_t j = 0; j < n; ++j) out[j] = k_ / std::sqrt(1.0 + r2[j]);
            } else if (beta_ == 1.0) {
                for (std::size_t j = 0; j < n; ++j) out[j] = k_ / (1.0 + r2[j]);
            } else {
                for (std::size_t j = 0; j < n; ++j) out[j] = power_sq(r2[j]);
            }
            return;
        case Family::Tabulated:
            for (std::size_t j = 0; j < n; ++j) out[j] = table(std::sqrt(r2[j]));
            return;
        }
    }

    json to_json() const {
        switch (family_) {
        case Family::Constant: return {{"family", "constant"}, {"c", k_}};
        case Family::InversePower: return {{"family", "inverse_power"}, {"K", k_}, {"beta", beta_}};
        case Family::Tabulated: break;
        }
        return {{"family", "tabulated"}, {"radii", radii_}, {"values", values_}};
    }

    static CommunicationRate from_json(const json& j) {
        require(j.is_object() && j.contains("family"), "rate descriptor needs a 'family'");
        const auto fam = j.at("family").get<std::string>();
        if (fam == "constant") return constant(j.at("c").get<double>());
        if (fam == "inverse_power") return inverse_power(j.value("K", 1.0), j.at("beta").get<double>());
        if (fam == "tabulated")
            return tabulated(j.at("radii").get<std::vector<double>>(), j.at("values").get<std::vector<double>>());
        throw InputError("unknown rate family '" + fam + "'");
    }

private:
    CommunicationRate() = default;

    double power_sq(double r2) const {
        if (beta_ == 0.0) return k_;
        if (beta_ == 0.25) return k_ / std::sqrt(std::sqrt(1.0 + r2));
        if (beta_ == 0.5) return k_ / std::sqrt(1.0 + r2);
        if (beta_ == 1.0) return k_ / (1.0 + r2);
        return k_ * std::pow(1.0 + r2, -beta_);
    }

    double table(double r) const {
        if (r >= radii_.back()) return values_.back();
        const auto it = std::upper_bound(radii_.begin(), radii_.end(), r);
        const std::size_t k = static_cast<std::size_t>(it - radii_.begin());
        const double s = (r - radii_[k - 1]) / (radii_[k] - radii_[k - 1]);
        return values_[k - 1] + s * (values_[k] - values_[k - 1]);
    }

    void finish() {
        switch (family_) {
        case Family::Constant:
            sup_ = k_;
            lip_ = 0;
            break;
        case Family::InversePower: {
            sup_ = k_;
            // |d/dr K(1+r^2)^-beta| peaks at r^2 = 1/(2 beta + 1)
            const double r2 = 1.0 / (2 * beta_ + 1);
            lip_ = 2 * beta_ * k_ * std::sqrt(r2) * std::pow(1 + r2, -beta_ - 1);
            break;
        }
        case Family::Tabulated:
            sup_ = *std::max_element(values_.begin(), values_.end());
            lip_ = 0;
            for (std::size_t k = 1; k < radii_.size(); ++k) {
                lip_ = std::max(lip_, std::abs(values_[k] - values_[k - 1]) / (radii_[k] - radii_[k - 1]));
                if (values_[k] > values_[k - 1]) monotone_ = false;
            }
            break;
        }
    }

    Family family_ = Family::Constant;
    double k_ = 1;
    double beta_ = 0;
    std::vector<double> radii_, values_;
    double sup_ = 0;
    double lip_ = 0;
    bool monotone_ = true;
};

/// gamma(x, v) = psi(x) v
struct CuckerSmaleForm {
    CommunicationRate psi;
};
/// gamma(x, v) = psi(x) A v, A row-major d x d
struct LinearForm {
    CommunicationRate psi;
    std::vector<double> matrix;
};
/// gamma(x, v) = gain v / (1 + |v|)
struct SaturatingForm {
    double gain;
};
/// gamma(x, v) = psi(x) g(|v|) v/|v|, g piecewise linear through (speeds, response) with g(0) = 0
struct TabulatedResponseForm {
    CommunicationRate psi;
    std::vector<double> speeds, response;
};
/// gamma = 0
struct NullForm {};

class InteractionKernel {
public:
    using Form = std::variant<CuckerSmaleForm, LinearForm, SaturatingForm, TabulatedResponseForm, NullForm>;
    enum class Kind { CuckerSmale, General };

    InteractionKernel(Form form, std::size_t dim, std::optional<double> declared_gamma0 = std::nullopt)
        : form_(std::move(form)), dim_(dim), declared_gamma0_(declared_gamma0) {
        require(dim_ >= 1, "kernel dimension must be positive");
        if (declared_gamma0_) require(*declared_gamma0_ >= 0, "declared gamma0 must be nonnegative");
        validate();
        derived_gamma0_ = derive_gamma0();
    }

    static InteractionKernel cucker_smale(CommunicationRate psi, std::size_t dim) {
        return InteractionKernel(CuckerSmaleForm{std::move(psi)}, dim);
    }

    /// Linear form with A a rotation by `angle` in the first two coordinates (identity elsewhere).
    static InteractionKernel rotation(CommunicationRate psi, std::size_t dim, double angle,
                                      std::optional<double> declared_gamma0 = std::nullopt) {
        require(dim >= 2, "rotation kernel needs d >= 2");
        std::vector<double> a(dim * dim, 0.0);
        for (std::size_t k = 0; k < dim; ++k) a[k * dim + k] = 1.0;
        a[0] = std::cos(angle);
        a[1] = -std::sin(angle);
        a[dim] = std::sin(angle);
        a[dim + 1] = std::cos(angle);
        return InteractionKernel(LinearForm{std::move(psi), std::move(a)}, dim, declared_gamma0);
    }

    std::size_t dim() const noexcept { return dim_; }
    const Form& form() const noexcept { return form_; }
    Kind kind() const noexcept {
        return std::holds_alternative<CuckerSmaleForm>(form_) ? Kind::CuckerSmale : Kind::General;
    }
    bool is_cucker_smale() const noexcept { return kind() == Kind::CuckerSmale; }
    const CommunicationRate* rate() const noexcept {
        if (auto* cs = std::get_if<CuckerSmaleForm>(&form_)) return &cs->psi;
        if (auto* lin = std::get_if<LinearForm>(&form_)) return &lin->psi;
        if (auto* tab = std::get_if<TabulatedResponseForm>(&form_)) return &tab->psi;
        return nullptr;
    }

    /// Constant with |gamma(x,v)| <= gamma0 |v|: the declared value when given, else derived.
    double gamma0() const noexcept { return declared_gamma0_ ? *declared_gamma0_ : derived_gamma0_; }
    double derived_gamma0() const noexcept { return derived_gamma0_; }
    std::optional<double> declared_gamma0() const noexcept { return declared_gamma0_; }

    /// sup over R^{2d} of |gamma|; +inf for forms linear in v.
    double sup_norm() const {
        return std::visit(
            [&](const auto& f) -> double {
                using F = std::decay_t<decltype(f)>;
                if constexpr (std::is_same_v<F, SaturatingForm>) return std::abs(f.gain);
                else if constexpr (std::is_same_v<F, NullForm>) return 0.0;
                else if constexpr (std::is_same_v<F, TabulatedResponseForm>)
                    return f.psi.sup_norm() * max_abs(f.response);
                else return std::numeric_limits<double>::infinity();
            },
            form_);
    }

    /// out = gamma(dx, dv). No dimension checks; see eval_force for the checked entry point.
    void eval(const double* dx, const double* dv, double* out) const {
        std::visit(
            [&](const auto& f) {
                using F = std::decay_t<decltype(f)>;
                if constexpr (std::is_same_v<F, CuckerSmaleForm>) {
                    const double w = f.psi.at_sq(sq_norm(dx));
                    for (std::size_t k = 0; k < dim_; ++k) out[k] = w * dv[k];
                } else if constexpr (std::is_same_v<F, LinearForm>) {
                    const double w = f.psi.at_sq(sq_norm(dx));
                    for (std::size_t r = 0; r < dim_; ++r) {
                        double s = 0;
                        for (std::size_t c = 0; c < dim_; ++c) s += f.matrix[r * dim_ + c] * dv[c];
                        out[r] = w * s;
                    }
                } else if constexpr (std::is_same_v<F, SaturatingForm>) {
                    const double scale = f.gain / (1.0 + std::sqrt(sq_norm(dv)));
                    for (std::size_t k = 0; k < dim_; ++k) out[k] = scale * dv[k];
                } else if constexpr (std::is_same_v<F, TabulatedResponseForm>) {
                    const double speed = std::sqrt(sq_norm(dv));
                    if (speed == 0.0) {
                        std::fill(out, out + dim_, 0.0);
                        return;
                    }
                    const double scale = f.psi.at_sq(sq_norm(dx)) * response(f, speed) / speed;
                    for (std::size_t k = 0; k < dim_; ++k) out[k] = scale * dv[k];
                } else {
                    std::fill(out, out + dim_, 0.0);
                }
            },
            form_);
    }

    json to_json() const {
        json j = std::visit(
            [&](const auto& f) -> json {
                using F = std::decay_t<decltype(f)>;
                if constexpr (std::is_same_v<F, CuckerSmaleForm>)
                    return {{"type", "cucker_smale"}, {"psi", f.psi.to_json()}};
                else if constexpr (std::is_same_v<F, LinearForm>)
                    return {{"type", "linear"}, {"psi", f.psi.to_json()}, {"matrix", f.matrix}};
                else if constexpr (std::is_same_v<F, SaturatingForm>)
                    return {{"type", "saturating"}, {"gain", f.gain}};
                else if constexpr (std::is_same_v<F, TabulatedResponseForm>)
                    return {{"type", "tabulated_response"},
                            {"psi", f.psi.to_json()},
                            {"speeds", f.speeds},
                            {"response", f.response}};
                else return {{"type", "null"}};
            },
            form_);
        j["d"] = dim_;
        if (declared_gamma0_) j["gamma0"] = *declared_gamma0_;
        return j;
    }

    /// Stable digest of the descriptor, for provenance headers.
    std::string hash() const { return digest(to_json()); }

    static InteractionKernel from_json(const json& j) {
        require(j.is_object() && j.contains("type"), "kernel descriptor needs a 'type'");
        const auto type = j.at("type").get<std::string>();
        const auto dim = j.value("d", std::size_t{1});
        std::optional<double> g0;
        if (j.contains("gamma0")) g0 = j.at("gamma0").get<double>();
        auto rate = [&] { return CommunicationRate::from_json(j.at("psi")); };
        if (type == "cucker_smale") {
            require(!g0, "cucker_smale kernels derive gamma0 from psi; do not declare it");
            return InteractionKernel(CuckerSmaleForm{rate()}, dim);
        }
        if (type == "linear") {
            std::vector<double> a;
            for (const auto& row : j.at("matrix")) {
                if (!row.is_array()) a.push_back(row.get<double>());
                else
                    for (const auto& x : row) a.push_back(x.get<double>());
            }
            return InteractionKernel(LinearForm{rate(), std::move(a)}, dim, g0);
        }
        if (type == "rotation") return rotation(rate(), dim, j.at("angle").get<double>(), g0);
        if (type == "saturating") return InteractionKernel(SaturatingForm{j.at("gain").get<double>()}, dim, g0);
        if (type == "tabulated_response")
            return InteractionKernel(TabulatedResponseForm{rate(), j.at("speeds").get<std::vector<double>>(),
                                                           j.at("response").get<std::vector<double>>()},
                                     dim, g0);
        if (type == "null") return InteractionKernel(NullForm{}, dim, g0);
        throw InputError("unknown kernel type '" + type + "'");
    }

private:
    double sq_norm(const double* a) const {
        double s = 0;
        for (std::size_t k = 0; k < dim_; ++k) s += a[k] * a[k];
        return s;
    }

    static double max_abs(const std::vector<double>& v) {
        double m = 0;
        for (double x : v) m = std::max(m, std::abs(x));
        return m;
    }

    static double response(const TabulatedResponseForm& f, double s) {
        if (s >= f.speeds.back()) return f.response.back();
        const auto it = std::upper_bound(f.speeds.begin(), f.speeds.end(), s);
        const std::size_t k = static_cast<std::size_t>(it - f.speeds.begin());
        const double u = (s - f.speeds[k - 1]) / (f.speeds[k] - f.speeds[k - 1]);
        return f.response[k - 1] + u * (f.response[k] - f.response[k - 1]);
    }

    void validate() const {
        if (auto* lin = std::get_if<LinearForm>(&form_)) {
            require(lin->matrix.size() == dim_ * dim_, "linear kernel matrix must be d x d");
            for (double a : lin->matrix) require(std::isfinite(a), "linear kernel matrix must be finite");
        } else if (auto* sat = std::get_if<SaturatingForm>(&form_)) {
            require(std::isfinite(sat->gain), "saturating gain must be finite");
        } else if (auto* tab = std::get_if<TabulatedResponseForm>(&form_)) {
            require(tab->speeds.size() == tab->response.size() && tab->speeds.size() >= 2,
                    "tabulated response needs at least two matching knots");
            require(tab->speeds.front() == 0.0 && tab->response.front() == 0.0,
                    "tabulated response must pass through (0, 0)");
            for (std::size_t k = 1; k < tab->speeds.size(); ++k)
                require(tab->speeds[k] > tab->speeds[k - 1], "tabulated response speeds must increase strictly");
        }
    }

    double derive_gamma0() const {
        return std::visit(
            [&](const auto& f) -> double {
                using F = std::decay_t<decltype(f)>;
                if constexpr (std::is_same_v<F, CuckerSmaleForm>) return f.psi.sup_norm();
                else if constexpr (std::is_same_v<F, LinearForm>) return f.psi.sup_norm() * spectral_norm(f.matrix);
                else if constexpr (std::is_same_v<F, SaturatingForm>) return std::abs(f.gain);
                else if constexpr (std::is_same_v<F, TabulatedResponseForm>) {
                    // g(s)/s is monotone on each linear piece, so its sup sits at a knot
                    double slope = 0;
                    for (std::size_t k = 1; k < f.speeds.size(); ++k)
                        slope = std::max(slope, std::abs(f.response[k]) / f.speeds[k]);
                    return f.psi.sup_norm() * slope;
                } else return 0.0;
            },
            form_);
    }

    double spectral_norm(const std::vector<double>& a) const {
        const auto n = static_cast<Eigen::Index>(dim_);
        Eigen::MatrixXd m(n, n);
        for (Eigen::Index r = 0; r < n; ++r)
            for (Eigen::Index c = 0; c < n; ++c) m(r, c) = a[static_cast<std::size_t>(r * n + c)];
        return Eigen::JacobiSVD<Eigen::MatrixXd>(m).singularValues()(0);
    }

    Form form_;
    std::size_t dim_;
    std::optional<double> declared_gamma0_;
    double derived_gamma0_ = 0;
};

/// gamma(dx, dv) with dimension checks.
inline std::vector<double> eval_force(const InteractionKernel& kernel, std::span<const double> dx,
                                      std::span<const double> dv) {
    require(dx.size() == kernel.dim() && dv.size() == kernel.dim(), "eval_force: dimension mismatch");
    std::vector<double> out(kernel.dim());
    kernel.eval(dx.data(), dv.data(), out.data());
    return out;
}

inline double gamma0_of(const InteractionKernel& kernel) { return kernel.gamma0(); }

/// Upper estimate of sup Lip(gamma) over pairs with |v - v'| <= 2 velocity_radius.
/// Closed forms for the linear-in-v families; otherwise central finite differences
/// (step 1e-4 of the region scale) at seeded sample points.
inline double lipschitz_on_region(const InteractionKernel& kernel, double velocity_radius,
                                  std::size_t sample_budget, std::uint64_t seed) {
    require(velocity_radius >= 0, "velocity_radius must be nonnegative");
    const double vr = 2 * velocity_radius;
    if (auto* cs = std::get_if<CuckerSmaleForm>(&kernel.form()))
        return cs->psi.sup_norm() + vr * cs->psi.lip_const();
    if (auto* lin = std::get_if<LinearForm>(&kernel.form())) {
        const double anorm = kernel.derived_gamma0() / lin->psi.sup_norm();
        return anorm * (lin->psi.sup_norm() + vr * lin->psi.lip_const());
    }
    if (std::holds_alternative<NullForm>(kernel.form())) return 0.0;
    if (sample_budget == 0)
        throw UnsupportedError("lipschitz_on_region: no closed form for this kernel and sample_budget = 0");

    const std::size_t d = kernel.dim();
    const double scale = std::max(1.0, vr);
    const double h = 1e-4 * scale;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    auto sample_ball = [&](double radius, std::vector<double>& out) {
        // uniform in the cube, rejected to the ball
        for (;;) {
            double s = 0;
            for (auto& c : out) {
                c = unit(rng);
                s += c * c;
            }
            if (s <= 1.0) break;
        }
        for (auto& c : out) c *= radius;
    };

    std::vector<double> x(d), v(d), xp(d), vp(d), fp(d), fm(d);
    Eigen::MatrixXd jac(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(2 * d));
    double best = 0;
    for (std::size_t s = 0; s < sample_budget; ++s) {
        sample_ball(scale, x);
        sample_ball(vr, v);
        for (std::size_t c = 0; c < 2 * d; ++c) {
            xp = x;
            vp = v;
            auto& coord = c < d ? xp[c] : vp[c - d];
            coord += h;
            kernel.eval(xp.data(), vp.data(), fp.data());
            coord -= 2 * h;
            kernel.eval(xp.data(), vp.data(), fm.data());
            for (std::size_t r = 0; r < d; ++r)
                jac(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = (fp[r] - fm[r]) / (2 * h);
        }
        best = std::max(best, Eigen::JacobiSVD<Eigen::MatrixXd>(jac).singularValues()(0));

        // plain difference quotient against a nearby second point
        sample_ball(scale, xp);
        sample_ball(vr, vp);
        double dist2 = 0;
        for (std::size_t k = 0; k < d; ++k) {
            xp[k] = x[k] + 0.1 * xp[k];
            vp[k] = v[k] + 0.1 * vp[k];
            dist2 += (xp[k] - x[k]) * (xp[k] - x[k]) + (vp[k] - v[k]) * (vp[k] - v[k]);
        }
        if (dist2 > 0) {
            kernel.eval(x.data(), v.data(), fp.data());
            kernel.eval(xp.data(), vp.data(), fm.data());
            double df2 = 0;
            for (std::size_t k = 0; k < d; ++k) df2 += (fp[k] - fm[k]) * (fp[k] - fm[k]);
            best = std::max(best, std::sqrt(df2 / dist2));
        }
    }
    return best;
}

} // namespace csmf
