#pragma once

// Wasserstein distances and couplings between discrete probability measures.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"
#include "util.hpp"

namespace csmf {

/// Weighted point cloud in R^m; points are n x m row-major.
struct DiscreteMeasure {
    std::size_t dim = 1;
    std::vector<double> points;
    std::vector<double> weights;

    std::size_t size() const noexcept { return weights.size(); }
    std::span<const double> point(std::size_t i) const { return {points.data() + i * dim, dim}; }

    static DiscreteMeasure uniform(std::vector<double> points, std::size_t dim) {
        require(dim >= 1 && !points.empty() && points.size() % dim == 0, "uniform measure: points must be n x m");
        const std::size_t n = points.size() / dim;
        DiscreteMeasure mu{dim, std::move(points), std::vector<double>(n, 1.0 / static_cast<double>(n))};
        mu.validate();
        return mu;
    }

    static DiscreteMeasure weighted(std::vector<double> points, std::vector<double> weights, std::size_t dim) {
        DiscreteMeasure mu{dim, std::move(points), std::move(weights)};
        mu.validate();
        return mu;
    }

    /// Equal weights (exactly, not merely within tolerance).
    bool is_uniform() const {
        for (double w : weights)
            if (w != weights.front()) return false;
        return true;
    }

    void validate() const {
        require(dim >= 1 && !weights.empty(), "measure must be non-empty");
        require(points.size() == weights.size() * dim, "measure points must be n x m");
        double total = 0;
        for (double w : weights) {
            require(w > 0 && std::isfinite(w), "measure weights must be positive");
            total += w;
        }
        require(std::abs(total - 1.0) <= 1e-12, "measure weights must sum to 1");
        for (double x : points) require(std::isfinite(x), "measure points must be finite");
    }
};

struct CouplingEntry {
    std::size_t i = 0;
    std::size_t j = 0;
    double mass = 0;
};

/// Transport plan between two measures; cost_p = sum mass |x_i - y_j|^p.
struct Coupling {
    std::vector<CouplingEntry> plan;
    double cost_p = 0;
    double p = 2;
};

struct WassersteinResult {
    double distance = 0;
    Coupling coupling;
    enum class Mode { Assignment, MinCostFlow } mode = Mode::Assignment;
    /// Complementary-slackness residual of the returned dual potentials (scaled costs).
    double slackness_residual = 0;
};

struct CouplingReport {
    double row_violation = 0;
    double col_violation = 0;
    double negative_mass = 0;
    double cost = 0;
    double cost_mismatch = 0;
    bool index_error = false;

    double marginal_violation() const { return std::max(row_violation, col_violation); }
    bool ok(double tol = 1e-10) const {
        return !index_error && marginal_violation() <= tol && negative_mass <= 0 &&
               cost_mismatch <= tol * std::max(1.0, std::abs(cost));
    }
};

/// Exact-mode caps: equal-size uniform clouds up to this many points each,
/// general measures up to this many combined support points.
inline constexpr std::size_t kExactCap = 4096;

namespace detail {

// |a - b| via the scaled two-pass norm.
inline double stable_distance(std::span<const double> a, std::span<const double> b) {
    double scale = 0;
    for (std::size_t k = 0; k < a.size(); ++k) scale = std::max(scale, std::abs(a[k] - b[k]));
    if (scale == 0) return 0;
    double s = 0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        const double c = (a[k] - b[k]) / scale;
        s += c * c;
    }
    return scale * std::sqrt(s);
}

inline double pow_p(double r, double p) { return p == 2 ? r * r : (p == 1 ? r : std::pow(r, p)); }

inline std::vector<double> cost_matrix(const DiscreteMeasure& mu, const DiscreteMeasure& nu, double p) {
    const std::size_t n = mu.size(), m = nu.size();
    std::vector<double> c(n * m);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) c[i * m + j] = pow_p(stable_distance(mu.point(i), nu.point(j)), p);
    return c;
}

/// Square assignment with potentials (O(n^3) shortest augmenting paths).
/// Ties go to the lowest column index. Returns col_of_row; fills duals.
inline std::vector<std::size_t> solve_assignment(const std::vector<double>& c, std::size_t n, std::vector<double>& u,
                                                 std::vector<double>& v) {
    const double inf = std::numeric_limits<double>::infinity();
    // 1-based internally; index 0 is the virtual root
    u.assign(n + 1, 0.0);
    v.assign(n + 1, 0.0);
    std::vector<std::size_t> row_of(n + 1, 0), way(n + 1, 0);
    std::vector<double> minv(n + 1);
    std::vector<char> used(n + 1);
    for (std::size_t i = 1; i <= n; ++i) {
        row_of[0] = i;
        std::size_t j0 = 0;
        std::fill(minv.begin(), minv.end(), inf);
        std::fill(used.begin(), used.end(), 0);
        do {
            used[j0] = 1;
            const std::size_t i0 = row_of[j0];
            const double* crow = c.data() + (i0 - 1) * n;
            const double ui = u[i0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = crow[j - 1] - ui - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (row_of[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<std::size_t> col_of(n);
    for (std::size_t j = 1; j <= n; ++j) col_of[row_of[j] - 1] = j - 1;
    u.erase(u.begin());
    v.erase(v.begin());
    return col_of;
}

/// Transportation problem by successive shortest paths (dense Dijkstra with potentials).
/// flow is n x m; pot holds n source then m sink potentials.
inline void solve_transport(const std::vector<double>& c, const std::vector<double>& a, const std::vector<double>& b,
                            std::vector<double>& flow, std::vector<double>& pot) {
    const std::size_t n = a.size(), m = b.size(), V = n + m;
    const double inf = std::numeric_limits<double>::infinity();
    const double eps = 1e-15;
    flow.assign(n * m, 0.0);
    pot.assign(V, 0.0);
    std::vector<double> supply = a, demand = b, dist(V);
    std::vector<std::size_t> prev(V);
    std::vector<char> done(V);
    const std::size_t none = V;

    for (std::size_t iter = 0; iter < 4 * (n + 1) * (m + 1) + 16; ++iter) {
        bool any = false;
        for (double s : supply) any = any || s > eps;
        if (!any) break;

        std::fill(dist.begin(), dist.end(), inf);
        std::fill(prev.begin(), prev.end(), none);
        std::fill(done.begin(), done.end(), 0);
        for (std::size_t i = 0; i < n; ++i)
            if (supply[i] > eps) dist[i] = 0;
        std::size_t target = none;
        for (;;) {
            std::size_t u = none;
            double best = inf;
            for (std::size_t x = 0; x < V; ++x)
                if (!done[x] && dist[x] < best) {
                    best = dist[x];
                    u = x;
                }
            if (u == none) break;
            done[u] = 1;
            if (u >= n && demand[u - n] > eps) {
                target = u;
                break;
            }
            if (u < n) {
                for (std::size_t j = 0; j < m; ++j) {
                    const std::size_t w = n + j;
                    if (done[w]) continue;
                    const double rc = std::max(0.0, c[u * m + j] + pot[u] - pot[w]);
                    if (dist[u] + rc < dist[w]) {
                        dist[w] = dist[u] + rc;
                        prev[w] = u;
                    }
                }
            } else {
                const std::size_t j = u - n;
                for (std::size_t i = 0; i < n; ++i) {
                    if (done[i] || flow[i * m + j] <= eps) continue;
                    const double rc = std::max(0.0, -c[i * m + j] + pot[u] - pot[i]);
                    if (dist[u] + rc < dist[i]) {
                        dist[i] = dist[u] + rc;
                        prev[i] = u;
                    }
                }
            }
        }
        if (target == none) throw std::logic_error("solve_transport: no augmenting path");
        const double dt = dist[target];
        for (std::size_t x = 0; x < V; ++x) pot[x] += std::min(dist[x], dt);

        // bottleneck along the path
        double delta = demand[target - n];
        std::size_t x = target;
        while (prev[x] != none) {
            const std::size_t y = prev[x];
            if (y >= n) delta = std::min(delta, flow[x * m + (y - n)]);  // backward edge sink y -> source x
            x = y;
        }
        delta = std::min(delta, supply[x]);
        supply[x] -= delta;
        demand[target - n] -= delta;
        x = target;
        while (prev[x] != none) {
            const std::size_t y = prev[x];
            if (y < n) flow[y * m + (x - n)] += delta;
            else flow[x * m + (y - n)] -= delta;
            x = y;
        }
    }
}

} // namespace detail

/// Exact W_p: assignment for equal-size uniform measures, min-cost flow otherwise.
inline WassersteinResult wp_exact(const DiscreteMeasure& mu, const DiscreteMeasure& nu, double p = 2) {
    mu.validate();
    nu.validate();
    require(mu.dim == nu.dim, "wp_exact: measures live in different dimensions");
    require(p >= 1 && std::isfinite(p), "wp_exact: p must be >= 1");
    const std::size_t n = mu.size(), m = nu.size();
    const bool assignment = n == m && mu.is_uniform() && nu.is_uniform();
    if ((assignment && n > kExactCap) || (!assignment && n + m > kExactCap))
        throw SizeCapError("wp_exact: support too large for the exact solver; use wp_sliced");

    const auto cost = detail::cost_matrix(mu, nu, p);
    const double cmax = *std::max_element(cost.begin(), cost.end());
    const double scale = cmax > 0 ? 1.0 / cmax : 1.0;
    std::vector<double> scaled(cost.size());
    for (std::size_t q = 0; q < cost.size(); ++q) scaled[q] = cost[q] * scale;

    WassersteinResult out;
    out.coupling.p = p;
    if (assignment) {
        out.mode = WassersteinResult::Mode::Assignment;
        std::vector<double> u, v;
        const auto col = detail::solve_assignment(scaled, n, u, v);
        const double mass = 1.0 / static_cast<double>(n);
        double total = 0;
        for (std::size_t i = 0; i < n; ++i) {
            out.coupling.plan.push_back({i, col[i], mass});
            total += cost[i * n + col[i]];
        }
        out.coupling.cost_p = total / static_cast<double>(n);
        double res = 0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                const double rc = scaled[i * n + j] - u[i] - v[j];
                res = std::max(res, j == col[i] ? std::abs(rc) : -rc);
            }
        out.slackness_residual = res;
    } else {
        out.mode = WassersteinResult::Mode::MinCostFlow;
        std::vector<double> flow, pot;
        detail::solve_transport(scaled, mu.weights, nu.weights, flow, pot);
        double total = 0, res = 0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) {
                const double f = flow[i * m + j];
                const double rc = scaled[i * m + j] + pot[i] - pot[n + j];
                if (f > 1e-15) {
                    out.coupling.plan.push_back({i, j, f});
                    total += f * cost[i * m + j];
                    res = std::max(res, std::abs(rc));
                } else {
                    res = std::max(res, -rc);
                }
            }
        out.coupling.cost_p = total;
        out.slackness_residual = res;
    }
    out.distance = std::pow(std::max(out.coupling.cost_p, 0.0), 1.0 / p);
    return out;
}

/// 1-d W_p^p between equal-size uniform samples (sorted matching).
inline double wp_1d_pow(std::vector<double> a, std::vector<double> b, double p) {
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    double s = 0;
    for (std::size_t k = 0; k < a.size(); ++k) s += detail::pow_p(std::abs(a[k] - b[k]), p);
    return s / static_cast<double>(a.size());
}

/// Sliced W_p: (mean over random unit directions of 1-d W_p^p)^{1/p}.
/// Direction k is drawn from its own stream seeded with seed + k; in one dimension the direction is +1.
inline double wp_sliced(const DiscreteMeasure& mu, const DiscreteMeasure& nu, double p, std::size_t n_proj,
                        std::uint64_t seed, unsigned threads = 1) {
    mu.validate();
    nu.validate();
    require(mu.dim == nu.dim, "wp_sliced: measures live in different dimensions");
    require(mu.size() == nu.size() && mu.is_uniform() && nu.is_uniform(),
            "wp_sliced: needs equal-size uniform measures (resample first)");
    require(n_proj >= 1, "wp_sliced: n_proj must be >= 1");
    require(p >= 1 && std::isfinite(p), "wp_sliced: p must be >= 1");
    const std::size_t n = mu.size(), m = mu.dim;
    std::vector<double> per_dir(n_proj);
    parallel_for(n_proj, threads, [&](std::size_t k) {
        std::vector<double> theta(m, 1.0);
        if (m > 1) {
            std::mt19937_64 rng(seed + k);
            std::normal_distribution<double> g(0.0, 1.0);
            double s = 0;
            do {
                s = 0;
                for (auto& c : theta) {
                    c = g(rng);
                    s += c * c;
                }
            } while (s == 0);
            for (auto& c : theta) c /= std::sqrt(s);
        }
        std::vector<double> a(n), b(n);
        for (std::size_t i = 0; i < n; ++i) {
            double sa = 0, sb = 0;
            for (std::size_t c = 0; c < m; ++c) {
                sa += theta[c] * mu.points[i * m + c];
                sb += theta[c] * nu.points[i * m + c];
            }
            a[i] = sa;
            b[i] = sb;
        }
        per_dir[k] = wp_1d_pow(std::move(a), std::move(b), p);
    });
    const double mean = std::accumulate(per_dir.begin(), per_dir.end(), 0.0) / static_cast<double>(n_proj);
    return std::pow(mean, 1.0 / p);
}

/// Recomputes marginals and cost of a plan.
inline CouplingReport verify_coupling(const Coupling& plan, const DiscreteMeasure& mu, const DiscreteMeasure& nu) {
    CouplingReport r;
    std::vector<double> rows(mu.size(), 0.0), cols(nu.size(), 0.0);
    double cost = 0;
    for (const auto& e : plan.plan) {
        if (e.i >= mu.size() || e.j >= nu.size() || mu.dim != nu.dim) {
            r.index_error = true;
            continue;
        }
        if (e.mass < 0) r.negative_mass = std::max(r.negative_mass, -e.mass);
        rows[e.i] += e.mass;
        cols[e.j] += e.mass;
        cost += e.mass * detail::pow_p(detail::stable_distance(mu.point(e.i), nu.point(e.j)), plan.p);
    }
    for (std::size_t i = 0; i < mu.size(); ++i) r.row_violation = std::max(r.row_violation, std::abs(rows[i] - mu.weights[i]));
    for (std::size_t j = 0; j < nu.size(); ++j) r.col_violation = std::max(r.col_violation, std::abs(cols[j] - nu.weights[j]));
    r.cost = cost;
    r.cost_mismatch = std::abs(cost - plan.cost_p);
    return r;
}

} // namespace csmf
