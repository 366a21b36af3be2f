#pragma once

// Mean-field (Vlasov) solutions by the sample-characteristics method, and
// sampling of the N-body marginals by independent runs.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "dynamics.hpp"
#include "ensemble.hpp"
#include "errors.hpp"
#include "kernels.hpp"
#include "support.hpp"
#include "util.hpp"

namespace csmf {

/// Independent uniform laws on the x-box and the v-box.
struct UniformBox {
    std::vector<double> x_lo, x_hi, v_lo, v_hi;
};

/// Independent Gaussians in x and v, each truncated to the ball of the given radius about its mean.
struct GaussianTruncated {
    std::vector<double> x_mean, v_mean;
    std::vector<double> x_cov, v_cov;  // d x d row-major
    double x_radius = 1;
    double v_radius = 1;
};

using DensityComponent = std::variant<UniformBox, GaussianTruncated>;

struct Mixture {
    std::vector<double> weights;
    std::vector<DensityComponent> components;
};

class InitialDensitySpec {
public:
    using Family = std::variant<UniformBox, GaussianTruncated, Mixture>;

    InitialDensitySpec(Family family, std::size_t dim) : family_(std::move(family)), dim_(dim) {
        require(dim_ >= 1, "density dimension must be positive");
        std::visit([&](const auto& f) { validate(f); }, family_);
        prepare();
    }

    static InitialDensitySpec uniform_box(std::vector<double> x_lo, std::vector<double> x_hi, std::vector<double> v_lo,
                                          std::vector<double> v_hi) {
        const std::size_t d = x_lo.size();
        return {UniformBox{std::move(x_lo), std::move(x_hi), std::move(v_lo), std::move(v_hi)}, d};
    }

    std::size_t dim() const noexcept { return dim_; }
    const Family& family() const noexcept { return family_; }

    /// One draw (x, v) into the given spans.
    template <class Rng>
    void draw(Rng& rng, std::span<double> x, std::span<double> v) const {
        if (auto* mix = std::get_if<Mixture>(&family_)) {
            std::uniform_real_distribution<double> u(0.0, 1.0);
            const double r = u(rng);
            std::size_t c = 0;
            while (c + 1 < cumulative_.size() && r >= cumulative_[c]) ++c;
            std::visit([&](const auto& comp) { draw_component(comp, c, rng, x, v); }, mix->components[c]);
            return;
        }
        std::visit(
            [&](const auto& f) {
                using F = std::decay_t<decltype(f)>;
                if constexpr (!std::is_same_v<F, Mixture>) draw_component(f, 0, rng, x, v);
            },
            family_);
    }

    bool contains(std::span<const double> x, std::span<const double> v, double slack = 1e-12) const {
        if (auto* mix = std::get_if<Mixture>(&family_)) {
            for (const auto& c : mix->components)
                if (std::visit([&](const auto& comp) { return inside(comp, x, v, slack); }, c)) return true;
            return false;
        }
        return std::visit(
            [&](const auto& f) {
                using F = std::decay_t<decltype(f)>;
                if constexpr (std::is_same_v<F, Mixture>) return false;
                else return inside(f, x, v, slack);
            },
            family_);
    }

    /// int v rho_in
    std::vector<double> velocity_mean() const {
        std::vector<double> m(dim_, 0.0);
        for_each_component([&](const auto& c, double w) {
            const auto cm = mean_v(c);
            for (std::size_t k = 0; k < dim_; ++k) m[k] += w * cm[k];
        });
        return m;
    }

    /// int x rho_in
    std::vector<double> position_mean() const {
        std::vector<double> m(dim_, 0.0);
        for_each_component([&](const auto& c, double w) {
            const auto cm = mean_x(c);
            for (std::size_t k = 0; k < dim_; ++k) m[k] += w * cm[k];
        });
        return m;
    }

    /// Per-coordinate variance of v (exact for boxes and untruncated-covariance upper bound for Gaussians).
    std::vector<double> velocity_variance() const {
        std::vector<double> second(dim_, 0.0);
        const auto mean = velocity_mean();
        for_each_component([&](const auto& c, double w) {
            using C = std::decay_t<decltype(c)>;
            const auto cm = mean_v(c);
            for (std::size_t k = 0; k < dim_; ++k) {
                double var;
                if constexpr (std::is_same_v<C, UniformBox>) var = (c.v_hi[k] - c.v_lo[k]) * (c.v_hi[k] - c.v_lo[k]) / 12.0;
                else var = c.v_cov[k * dim_ + k];
                second[k] += w * (var + cm[k] * cm[k]);
            }
        });
        for (std::size_t k = 0; k < dim_; ++k) second[k] -= mean[k] * mean[k];
        return second;
    }

    /// Closed-form support constants (sample-free).
    SupportData support_data() const {
        SupportData s;
        s.vbar = velocity_mean();
        std::vector<double> lo(2 * dim_, std::numeric_limits<double>::infinity());
        std::vector<double> hi(2 * dim_, -std::numeric_limits<double>::infinity());
        for_each_component([&](const auto& c, double w) {
            s.v_sup = std::max(s.v_sup, sup_speed(c));
            s.v_l1 += w * mean_speed(c);
            const auto [clo, chi] = bounding_box(c);
            for (std::size_t k = 0; k < 2 * dim_; ++k) {
                lo[k] = std::min(lo[k], clo[k]);
                hi[k] = std::max(hi[k], chi[k]);
            }
        });
        if (std::holds_alternative<GaussianTruncated>(family_)) {
            const auto& g = std::get<GaussianTruncated>(family_);
            s.supp_size = 2 * std::hypot(g.x_radius, g.v_radius);
        } else {
            double diag = 0;
            for (std::size_t k = 0; k < 2 * dim_; ++k) diag += (hi[k] - lo[k]) * (hi[k] - lo[k]);
            s.supp_size = std::sqrt(diag);
        }
        return s;
    }

    json to_json() const {
        auto comp = [&](const DensityComponent& c) -> json {
            return std::visit(
                [](const auto& f) -> json {
                    using F = std::decay_t<decltype(f)>;
                    if constexpr (std::is_same_v<F, UniformBox>)
                        return {{"family", "uniform_box"}, {"x_lo", f.x_lo}, {"x_hi", f.x_hi},
                                {"v_lo", f.v_lo},          {"v_hi", f.v_hi}};
                    else
                        return {{"family", "gaussian"}, {"x_mean", f.x_mean}, {"v_mean", f.v_mean},
                                {"x_cov", f.x_cov},     {"v_cov", f.v_cov},   {"x_radius", f.x_radius},
                                {"v_radius", f.v_radius}};
                },
                c);
        };
        json j;
        if (auto* mix = std::get_if<Mixture>(&family_)) {
            j = {{"family", "mixture"}, {"components", json::array()}};
            for (std::size_t c = 0; c < mix->components.size(); ++c) {
                auto cj = comp(mix->components[c]);
                cj["weight"] = mix->weights[c];
                j["components"].push_back(cj);
            }
        } else if (auto* box = std::get_if<UniformBox>(&family_)) {
            j = comp(*box);
        } else {
            j = comp(std::get<GaussianTruncated>(family_));
        }
        j["d"] = dim_;
        return j;
    }

    static InitialDensitySpec from_json(const json& j) {
        require(j.is_object() && j.contains("family"), "initial density needs a 'family'");
        const std::size_t d = j.value("d", std::size_t{0});
        auto fam = j.at("family").get<std::string>();
        if (fam == "mixture") {
            Mixture m;
            std::size_t dim = d;
            for (const auto& c : j.at("components")) {
                m.weights.push_back(c.value("weight", 1.0));
                m.components.push_back(component_from_json(c, dim));
            }
            require(!m.components.empty(), "mixture needs components");
            return {std::move(m), dim};
        }
        std::size_t dim = d;
        auto c = component_from_json(j, dim);
        return std::visit([&](auto&& f) { return InitialDensitySpec(Family{std::move(f)}, dim); }, std::move(c));
    }

private:
    static std::vector<double> vec_of(const json& j, std::size_t& dim) {
        std::vector<double> out;
        if (j.is_number()) {
            out.assign(dim == 0 ? 1 : dim, j.get<double>());
        } else {
            out = j.get<std::vector<double>>();
        }
        if (dim == 0) dim = out.size();
        require(out.size() == dim, "density vector has the wrong dimension");
        return out;
    }

    static std::vector<double> mat_of(const json& j, std::size_t dim) {
        if (j.is_number()) {
            std::vector<double> m(dim * dim, 0.0);
            for (std::size_t k = 0; k < dim; ++k) m[k * dim + k] = j.get<double>();
            return m;
        }
        std::vector<double> m;
        for (const auto& row : j) {
            if (row.is_array())
                for (const auto& x : row) m.push_back(x.get<double>());
            else m.push_back(row.get<double>());
        }
        require(m.size() == dim * dim, "covariance must be d x d");
        return m;
    }

    static DensityComponent component_from_json(const json& j, std::size_t& dim) {
        const auto fam = j.at("family").get<std::string>();
        if (fam == "uniform_box") {
            UniformBox b;
            b.x_lo = vec_of(j.at("x_lo"), dim);
            b.x_hi = vec_of(j.at("x_hi"), dim);
            b.v_lo = vec_of(j.at("v_lo"), dim);
            b.v_hi = vec_of(j.at("v_hi"), dim);
            return b;
        }
        if (fam == "gaussian") {
            GaussianTruncated g;
            g.x_mean = vec_of(j.at("x_mean"), dim);
            g.v_mean = vec_of(j.at("v_mean"), dim);
            g.x_cov = mat_of(j.at("x_cov"), dim);
            g.v_cov = mat_of(j.at("v_cov"), dim);
            g.x_radius = j.at("x_radius").get<double>();
            g.v_radius = j.at("v_radius").get<double>();
            return g;
        }
        throw InputError("unknown density family '" + fam + "'");
    }

    void validate(const UniformBox& b) const {
        for (const auto* v : {&b.x_lo, &b.x_hi, &b.v_lo, &b.v_hi})
            require(v->size() == dim_, "uniform box bounds must have d entries");
        for (std::size_t k = 0; k < dim_; ++k) {
            require(std::isfinite(b.x_lo[k]) && std::isfinite(b.x_hi[k]) && b.x_lo[k] <= b.x_hi[k],
                    "uniform box x bounds must be finite with lo <= hi");
            require(std::isfinite(b.v_lo[k]) && std::isfinite(b.v_hi[k]) && b.v_lo[k] <= b.v_hi[k],
                    "uniform box v bounds must be finite with lo <= hi");
        }
    }
    void validate(const GaussianTruncated& g) const {
        require(g.x_mean.size() == dim_ && g.v_mean.size() == dim_, "gaussian means must have d entries");
        require(g.x_cov.size() == dim_ * dim_ && g.v_cov.size() == dim_ * dim_, "gaussian covariances must be d x d");
        require(std::isfinite(g.x_radius) && g.x_radius >= 0 && std::isfinite(g.v_radius) && g.v_radius >= 0,
                "gaussian truncation radii are mandatory and must be finite and >= 0");
    }
    void validate(const Mixture& m) const {
        require(!m.components.empty() && m.weights.size() == m.components.size(), "mixture weights/components mismatch");
        for (double w : m.weights) require(w > 0 && std::isfinite(w), "mixture weights must be positive");
        for (const auto& c : m.components) std::visit([&](const auto& f) { validate(f); }, c);
    }

    struct GaussFactor {
        Eigen::MatrixXd x_root, v_root;
    };

    static Eigen::MatrixXd sqrt_psd(const std::vector<double>& cov, std::size_t d) {
        Eigen::MatrixXd m(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
        for (std::size_t r = 0; r < d; ++r)
            for (std::size_t c = 0; c < d; ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = cov[r * d + c];
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
        require(es.eigenvalues().minCoeff() >= -1e-12 * std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff()),
                "gaussian covariance must be positive semidefinite");
        const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
        return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
    }

    void prepare() {
        auto prep = [&](const DensityComponent& c) {
            GaussFactor g;
            if (auto* gt = std::get_if<GaussianTruncated>(&c)) {
                g.x_root = sqrt_psd(gt->x_cov, dim_);
                g.v_root = sqrt_psd(gt->v_cov, dim_);
            }
            factors_.push_back(std::move(g));
        };
        if (auto* mix = std::get_if<Mixture>(&family_)) {
            double total = 0;
            for (double w : mix->weights) total += w;
            double acc = 0;
            for (std::size_t c = 0; c < mix->components.size(); ++c) {
                acc += mix->weights[c] / total;
                cumulative_.push_back(acc);
                weights_.push_back(mix->weights[c] / total);
                prep(mix->components[c]);
            }
        } else {
            weights_.push_back(1.0);
            cumulative_.push_back(1.0);
            std::visit(
                [&](const auto& f) {
                    using F = std::decay_t<decltype(f)>;
                    if constexpr (!std::is_same_v<F, Mixture>) prep(DensityComponent{f});
                },
                family_);
        }
    }

    template <class Fn>
    void for_each_component(Fn&& fn) const {
        if (auto* mix = std::get_if<Mixture>(&family_)) {
            for (std::size_t c = 0; c < mix->components.size(); ++c)
                std::visit([&](const auto& comp) { fn(comp, weights_[c]); }, mix->components[c]);
            return;
        }
        std::visit(
            [&](const auto& f) {
                using F = std::decay_t<decltype(f)>;
                if constexpr (!std::is_same_v<F, Mixture>) fn(f, 1.0);
            },
            family_);
    }

    template <class Rng>
    void draw_component(const UniformBox& b, std::size_t, Rng& rng, std::span<double> x, std::span<double> v) const {
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (std::size_t k = 0; k < dim_; ++k) x[k] = b.x_lo[k] + (b.x_hi[k] - b.x_lo[k]) * u(rng);
        for (std::size_t k = 0; k < dim_; ++k) v[k] = b.v_lo[k] + (b.v_hi[k] - b.v_lo[k]) * u(rng);
    }

    template <class Rng>
    void draw_component(const GaussianTruncated& g, std::size_t c, Rng& rng, std::span<double> x,
                        std::span<double> v) const {
        draw_truncated(factors_[c].x_root, g.x_mean, g.x_radius, rng, x);
        draw_truncated(factors_[c].v_root, g.v_mean, g.v_radius, rng, v);
    }

    template <class Rng>
    void draw_truncated(const Eigen::MatrixXd& root, const std::vector<double>& mean, double radius, Rng& rng,
                        std::span<double> out) const {
        std::normal_distribution<double> gauss(0.0, 1.0);
        Eigen::VectorXd z(static_cast<Eigen::Index>(dim_));
        for (std::size_t attempt = 0; attempt < 1000000; ++attempt) {
            for (Eigen::Index k = 0; k < z.size(); ++k) z(k) = gauss(rng);
            const Eigen::VectorXd y = root * z;
            if (y.norm() <= radius) {
                for (std::size_t k = 0; k < dim_; ++k) out[k] = mean[k] + y(static_cast<Eigen::Index>(k));
                return;
            }
        }
        throw InputError("gaussian truncation radius too small relative to the covariance");
    }

    static bool inside(const UniformBox& b, std::span<const double> x, std::span<const double> v, double slack) {
        for (std::size_t k = 0; k < x.size(); ++k) {
            if (x[k] < b.x_lo[k] - slack || x[k] > b.x_hi[k] + slack) return false;
            if (v[k] < b.v_lo[k] - slack || v[k] > b.v_hi[k] + slack) return false;
        }
        return true;
    }
    static bool inside(const GaussianTruncated& g, std::span<const double> x, std::span<const double> v, double slack) {
        double dx = 0, dv = 0;
        for (std::size_t k = 0; k < x.size(); ++k) {
            dx += (x[k] - g.x_mean[k]) * (x[k] - g.x_mean[k]);
            dv += (v[k] - g.v_mean[k]) * (v[k] - g.v_mean[k]);
        }
        return std::sqrt(dx) <= g.x_radius + slack && std::sqrt(dv) <= g.v_radius + slack;
    }

    static std::vector<double> mean_v(const UniformBox& b) {
        std::vector<double> m(b.v_lo.size());
        for (std::size_t k = 0; k < m.size(); ++k) m[k] = 0.5 * (b.v_lo[k] + b.v_hi[k]);
        return m;
    }
    static std::vector<double> mean_v(const GaussianTruncated& g) { return g.v_mean; }
    static std::vector<double> mean_x(const UniformBox& b) {
        std::vector<double> m(b.x_lo.size());
        for (std::size_t k = 0; k < m.size(); ++k) m[k] = 0.5 * (b.x_lo[k] + b.x_hi[k]);
        return m;
    }
    static std::vector<double> mean_x(const GaussianTruncated& g) { return g.x_mean; }

    static double sup_speed(const UniformBox& b) {
        double s = 0;
        for (std::size_t k = 0; k < b.v_lo.size(); ++k) s += std::max(b.v_lo[k] * b.v_lo[k], b.v_hi[k] * b.v_hi[k]);
        return std::sqrt(s);
    }
    static double sup_speed(const GaussianTruncated& g) {
        double s = 0;
        for (double c : g.v_mean) s += c * c;
        return std::sqrt(s) + g.v_radius;
    }

    // E|v|: exact in d = 1, otherwise the Jensen bound sqrt(E|v|^2).
    static double mean_speed(const UniformBox& b) {
        if (b.v_lo.size() == 1) {
            const double a = b.v_lo[0], c = b.v_hi[0];
            if (a >= 0) return 0.5 * (a + c);
            if (c <= 0) return -0.5 * (a + c);
            return (a * a + c * c) / (2 * (c - a));
        }
        double s = 0;
        for (std::size_t k = 0; k < b.v_lo.size(); ++k)
            s += (b.v_lo[k] * b.v_lo[k] + b.v_lo[k] * b.v_hi[k] + b.v_hi[k] * b.v_hi[k]) / 3.0;
        return std::sqrt(s);
    }
    // Truncation to a centered ball can only lower E|v - m|^2, so tr(cov) and radius^2 both bound it.
    static double mean_speed(const GaussianTruncated& g) {
        double m2 = 0, tr = 0;
        const std::size_t d = g.v_mean.size();
        for (std::size_t k = 0; k < d; ++k) {
            m2 += g.v_mean[k] * g.v_mean[k];
            tr += g.v_cov[k * d + k];
        }
        return std::sqrt(m2 + std::min(tr, g.v_radius * g.v_radius));
    }

    static std::pair<std::vector<double>, std::vector<double>> bounding_box(const UniformBox& b) {
        std::vector<double> lo = b.x_lo, hi = b.x_hi;
        lo.insert(lo.end(), b.v_lo.begin(), b.v_lo.end());
        hi.insert(hi.end(), b.v_hi.begin(), b.v_hi.end());
        return {lo, hi};
    }
    static std::pair<std::vector<double>, std::vector<double>> bounding_box(const GaussianTruncated& g) {
        std::vector<double> lo, hi;
        for (double m : g.x_mean) {
            lo.push_back(m - g.x_radius);
            hi.push_back(m + g.x_radius);
        }
        for (double m : g.v_mean) {
            lo.push_back(m - g.v_radius);
            hi.push_back(m + g.v_radius);
        }
        return {lo, hi};
    }

    Family family_;
    std::size_t dim_;
    std::vector<double> weights_, cumulative_;
    std::vector<GaussFactor> factors_;
};

/// M i.i.d. draws from rho_in, deterministic per (spec, M, seed).
inline ParticleEnsemble sample_initial(const InitialDensitySpec& spec, std::size_t m, std::uint64_t seed) {
    require(m >= 1, "sample_initial: M must be >= 1");
    ParticleEnsemble e(m, spec.dim());
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < m; ++i) spec.draw(rng, e.x(i), e.v(i));
    return e;
}

/// Mean-field characteristics on an M-sample cloud. The self-consistent field is
/// the cloud average of gamma, which is exactly the M-body drift, so this is
/// integrate() on the sampled ensemble.
inline Trajectory solve_vlasov(const InitialDensitySpec& spec, const InteractionKernel& kernel, std::size_t m,
                               double t_end, double dt, std::uint64_t seed, const IntegratorOptions& opts = {}) {
    require(m >= 2, "solve_vlasov: M must be >= 2");
    require(spec.dim() == kernel.dim(), "solve_vlasov: kernel and density dimensions differ");
    return integrate(sample_initial(spec, m, seed), kernel, t_end, dt, opts);
}

/// K draws of the first n particles of independent N-body runs at time t.
/// Row layout: (x_1, v_1, ..., x_n, v_n), each block d wide.
struct MarginalSampleSet {
    std::size_t n = 1;
    double t = 0;
    std::size_t N = 1;
    std::size_t dim = 1;
    std::vector<std::uint64_t> seeds;
    std::vector<double> samples;  // K x (2 d n)
    bool pooled = false;
    std::string kernel_hash;

    std::size_t rows() const { return samples.size() / width(); }
    std::size_t width() const { return 2 * dim * n; }
    std::span<const double> row(std::size_t k) const { return {samples.data() + k * width(), width()}; }
};

/// One set per requested time, from a single batch of runs with the given seeds.
inline std::vector<MarginalSampleSet> marginal_samples_for_seeds(const InitialDensitySpec& spec,
                                                                 const InteractionKernel& kernel, std::size_t N,
                                                                 std::size_t n, std::vector<double> times, double dt,
                                                                 const std::vector<std::uint64_t>& seeds,
                                                                 unsigned threads = 1) {
    require(n >= 1 && n <= N, "marginal_samples: need 1 <= n <= N");
    require(seeds.size() >= 2, "marginal_samples: need K >= 2 runs");
    require(!times.empty(), "marginal_samples: no times requested");
    require(spec.dim() == kernel.dim(), "marginal_samples: kernel and density dimensions differ");
    const std::size_t d = spec.dim();
    const std::size_t width = 2 * d * n;
    const double t_end = *std::max_element(times.begin(), times.end());

    std::vector<MarginalSampleSet> out(times.size());
    for (std::size_t q = 0; q < times.size(); ++q) {
        out[q] = {n, times[q], N, d, seeds, std::vector<double>(seeds.size() * width), false, kernel.hash()};
    }
    IntegratorOptions opts;
    opts.frame_stride = std::numeric_limits<std::size_t>::max() / 2;
    opts.record_times = times;
    parallel_for(seeds.size(), threads, [&](std::size_t k) {
        Trajectory traj;
        try {
            traj = integrate(sample_initial(spec, N, seeds[k]), kernel, t_end, dt, opts);
        } catch (const DivergenceError& e) {
            throw DivergenceError(std::string(e.what()) + " (run " + std::to_string(k) + ")", e.step(), k);
        }
        for (std::size_t q = 0; q < times.size(); ++q) {
            const auto& s = traj.at(times[q]);
            double* row = out[q].samples.data() + k * width;
            for (std::size_t p = 0; p < n; ++p) {
                std::copy_n(s.x(p).data(), d, row + 2 * d * p);
                std::copy_n(s.v(p).data(), d, row + 2 * d * p + d);
            }
        }
    });
    return out;
}

/// Runs K independent N-body systems (seeds seed_base + k) and records particles 1..n at time t.
inline MarginalSampleSet marginal_samples(const InitialDensitySpec& spec, const InteractionKernel& kernel,
                                          std::size_t N, std::size_t n, double t, std::size_t K, double dt,
                                          std::uint64_t seed_base, unsigned threads = 1) {
    require(K >= 2, "marginal_samples: need K >= 2");
    std::vector<std::uint64_t> seeds(K);
    for (std::size_t k = 0; k < K; ++k) seeds[k] = seed_base + k;
    return marginal_samples_for_seeds(spec, kernel, N, n, {t}, dt, seeds, threads).front();
}

/// Cheap mode: every consecutive n-block of particles from `runs` runs becomes a row.
/// Rows from the same run are correlated, so these are not i.i.d. draws of the marginal.
inline MarginalSampleSet marginal_samples_pooled(const InitialDensitySpec& spec, const InteractionKernel& kernel,
                                                 std::size_t N, std::size_t n, double t, std::size_t runs, double dt,
                                                 std::uint64_t seed_base) {
    require(n >= 1 && n <= N, "marginal_samples_pooled: need 1 <= n <= N");
    require(runs >= 1, "marginal_samples_pooled: need at least one run");
    const std::size_t d = spec.dim();
    MarginalSampleSet out{n, t, N, d, {}, {}, true, kernel.hash()};
    for (std::size_t r = 0; r < runs; ++r) {
        out.seeds.push_back(seed_base + r);
        const auto traj = integrate(sample_initial(spec, N, seed_base + r), kernel, t, dt);
        const auto& s = traj.final();
        for (std::size_t g = 0; g + n <= N; g += n)
            for (std::size_t p = g; p < g + n; ++p) {
                out.samples.insert(out.samples.end(), s.x(p).begin(), s.x(p).end());
                out.samples.insert(out.samples.end(), s.v(p).begin(), s.v(p).end());
            }
    }
    require(out.rows() >= 2, "marginal_samples_pooled: fewer than two rows");
    return out;
}

/// Kinetic Gronwall envelopes on a Vlasov cloud, per stored frame:
///   mean_speed: mean |v|(t) <= e^{2 g t} mean |v|(0) (1 + 5/sqrt(M))
///   speed:      max |Phi_v(t)| <= e^{2 g t} (||v||_inf + ||v||_1) over supp rho_in
inline BoundCheckReport check_kinetic_bounds(const Trajectory& traj, double gamma0, const InitialDensitySpec& spec) {
    require(traj.frames() >= 1, "check_kinetic_bounds: empty trajectory");
    require(gamma0 >= 0 && std::isfinite(gamma0), "check_kinetic_bounds: gamma0 must be nonnegative");
    require(traj.initial().dim == spec.dim(), "check_kinetic_bounds: trajectory and density dimensions differ");
    const auto sd = spec.support_data();
    const auto& s0 = traj.initial();
    const double m = static_cast<double>(s0.count);
    const double eps_mc = 5.0 / std::sqrt(m);

    auto mean_speed = [&](const ParticleEnsemble& s) {
        double acc = 0;
        for (std::size_t i = 0; i < s.count; ++i) acc += norm(s.v(i));
        return acc / static_cast<double>(s.count);
    };
    const double mean0 = mean_speed(s0);
    BoundCheck mean, speed;
    mean.name = "mean_speed";
    speed.name = "speed";
    for (std::size_t f = 0; f < traj.frames(); ++f) {
        const double t = traj.times[f];
        const auto& s = traj.states[f];
        require(s.count == s0.count && s.dim == s0.dim, "check_kinetic_bounds: inconsistent frame shapes");
        const double grow = std::exp(2 * gamma0 * t);
        double vmax = 0;
        for (std::size_t i = 0; i < s.count; ++i) vmax = std::max(vmax, norm(s.v(i)));
        mean.times.push_back(t);
        mean.bound.push_back(grow * mean0 * (1 + eps_mc));
        mean.observed.push_back(mean_speed(s));
        speed.times.push_back(t);
        speed.bound.push_back(grow * (sd.v_sup + sd.v_l1));
        speed.observed.push_back(vmax);
    }
    detail::finish_check(mean, mean0);
    detail::finish_check(speed, sd.v_sup + sd.v_l1);
    return {{mean, speed}};
}

inline BoundCheckReport check_kinetic_bounds(const Trajectory& traj, const InteractionKernel& kernel,
                                             const InitialDensitySpec& spec) {
    require(traj.kernel_id == kernel.hash(), "check_kinetic_bounds: trajectory was produced by a different kernel");
    return check_kinetic_bounds(traj, kernel.gamma0(), spec);
}

namespace detail {

inline std::vector<double> mean_rows(const std::vector<double>& rows, std::size_t n, std::size_t d) {
    std::vector<double> m(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < d; ++k) m[k] += rows[i * d + k];
    for (auto& c : m) c /= static_cast<double>(n);
    return m;
}

inline double max_radius(const std::vector<double>& rows, std::size_t n, std::size_t d, const std::vector<double>& c) {
    double best = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0;
        for (std::size_t k = 0; k < d; ++k) s += (rows[i * d + k] - c[k]) * (rows[i * d + k] - c[k]);
        best = std::max(best, s);
    }
    return std::sqrt(best);
}

/// Least-squares line through (t, log r) over points with r above the floor: log r = a - b t.
struct LogLinearFit {
    double log_amplitude = 0;
    double rate = 0;
    std::size_t used = 0;
};

inline LogLinearFit fit_log_linear(const std::vector<double>& t, const std::vector<double>& r, double floor = 1e-10) {
    std::vector<double> ts, ys;
    for (std::size_t k = 0; k < t.size(); ++k)
        if (r[k] > floor) {
            ts.push_back(t[k]);
            ys.push_back(std::log(r[k]));
        }
    LogLinearFit fit;
    fit.used = ts.size();
    if (ts.empty()) return fit;
    double tm = 0, ym = 0;
    for (std::size_t k = 0; k < ts.size(); ++k) {
        tm += ts[k];
        ym += ys[k];
    }
    tm /= static_cast<double>(ts.size());
    ym /= static_cast<double>(ts.size());
    double stt = 0, sty = 0;
    for (std::size_t k = 0; k < ts.size(); ++k) {
        stt += (ts[k] - tm) * (ts[k] - tm);
        sty += (ts[k] - tm) * (ys[k] - ym);
    }
    const double slope = stt > 0 ? sty / stt : 0.0;
    fit.rate = -slope;
    fit.log_amplitude = ym - slope * tm;
    return fit;
}

} // namespace detail

/// Fits supp rho^t inside B(xbar + t vbar, X) x B(vbar, V e^{-alpha t}) to a stored trajectory.
inline FlockingSupportFit fit_flocking_support(const Trajectory& traj) {
    require(traj.frames() >= 3, "fit_flocking_support: need at least 3 stored frames");
    const auto& last = traj.final();
    const std::size_t n = last.count, d = last.dim;
    FlockingSupportFit fit;
    fit.vbar = detail::mean_rows(last.velocities, n, d);
    fit.xbar = detail::mean_rows(traj.initial().positions, n, d);

    std::vector<double> radii;
    for (std::size_t f = 0; f < traj.frames(); ++f) {
        const double t = traj.times[f];
        const auto& s = traj.states[f];
        std::vector<double> centre(d);
        for (std::size_t k = 0; k < d; ++k) centre[k] = fit.xbar[k] + t * fit.vbar[k];
        fit.X = std::max(fit.X, detail::max_radius(s.positions, n, d, centre));
        radii.push_back(detail::max_radius(s.velocities, n, d, fit.vbar));
    }
    const auto ll = detail::fit_log_linear(traj.times, radii);
    if (ll.used >= 2) {
        fit.V = std::exp(ll.log_amplitude);
        fit.alpha = ll.rate;
    } else {
        fit.V = *std::max_element(radii.begin(), radii.end());
        fit.alpha = 0;
    }
    if (fit.V > 0) {
        for (std::size_t f = 0; f < traj.frames(); ++f) {
            const double model = fit.V * std::exp(-fit.alpha * traj.times[f]);
            fit.residual = std::max(fit.residual, radii[f] / model - 1.0);
        }
    }
    return fit;
}

} // namespace csmf
