#pragma once

// N-particle generalized Cucker-Smale flow:
//   dx_i/dt = v_i,   dv_i/dt = (1/N) sum_j gamma(x_j - x_i, v_j - v_i)
// integrated with fixed-step classical RK4.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "ensemble.hpp"
#include "errors.hpp"
#include "kernels.hpp"
#include "util.hpp"

namespace csmf {

struct IntegratorScheme {
    std::string name = "rk4";
    double dt = 1e-2;
    std::size_t frame_stride = 1;
};

struct Trajectory {
    std::vector<double> times;
    std::vector<ParticleEnsemble> states;
    IntegratorScheme scheme;
    std::string kernel_id;

    std::size_t frames() const noexcept { return times.size(); }
    const ParticleEnsemble& initial() const { return states.front(); }
    const ParticleEnsemble& final() const { return states.back(); }

    /// Frame whose time equals t within 1e-9 * dt; throws if absent.
    const ParticleEnsemble& at(double t) const {
        for (std::size_t k = 0; k < times.size(); ++k)
            if (std::abs(times[k] - t) <= 1e-9 * std::max(scheme.dt, 1e-300) + 1e-15) return states[k];
        throw InputError("trajectory has no frame at t = " + std::to_string(t));
    }
};

struct IntegratorOptions {
    std::size_t frame_stride = 1;
    /// Extra frame times hit exactly (partial step from the nearest grid point).
    std::vector<double> record_times;
    /// Workers for the force evaluation. Results do not depend on this value.
    unsigned threads = 1;
};

inline double stability_cap(double gamma0) { return 0.1 / std::max(gamma0, 1e-6); }

namespace detail {

// Row blocks for the symmetric pair sweep. The block layout depends only on N,
// so the summation order (and the result) is independent of the worker count.
inline std::vector<std::size_t> pair_blocks(std::size_t n) {
    const std::size_t blocks = n < 1024 ? 1 : 8;
    std::vector<std::size_t> edges{0};
    const double total = 0.5 * static_cast<double>(n) * static_cast<double>(n - 1);
    std::size_t i = 0;
    double acc = 0;
    for (std::size_t b = 1; b < blocks; ++b) {
        const double target = total * static_cast<double>(b) / static_cast<double>(blocks);
        while (i < n && acc < target) {
            acc += static_cast<double>(n - i - 1);
            ++i;
        }
        edges.push_back(i);
    }
    edges.push_back(n);
    return edges;
}

/// Force evaluation on structure-of-arrays state (xs[k*N + i], vs[k*N + i]).
class ForceEvaluator {
public:
    ForceEvaluator(const InteractionKernel& kernel, std::size_t n, unsigned threads)
        : kernel_(kernel), n_(n), d_(kernel.dim()), threads_(std::max(1u, threads)), edges_(pair_blocks(n)) {
        if (kernel_.is_cucker_smale()) {
            const std::size_t nb = edges_.size() - 1;
            block_acc_.assign(nb, std::vector<double>(n_ * d_));
            scratch_r2_.assign(nb, std::vector<double>(n_));
            scratch_w_.assign(nb, std::vector<double>((d_ + 1) * n_));
        }
    }

    /// acc[k*N + i] = dv_i/dt component k.
    void operator()(const std::vector<double>& xs, const std::vector<double>& vs, std::vector<double>& acc) {
        if (std::holds_alternative<NullForm>(kernel_.form())) std::fill(acc.begin(), acc.end(), 0.0);
        else if (kernel_.is_cucker_smale()) alignment(xs, vs, acc);
        else general(xs, vs, acc);
    }

private:
    // psi(x) v forms: each pair weight is computed once and applied to both ends.
    void alignment(const std::vector<double>& xs, const std::vector<double>& vs, std::vector<double>& acc) {
        const CommunicationRate& psi = *kernel_.rate();
        const std::size_t nb = edges_.size() - 1;
        parallel_for(nb, threads_, [&](std::size_t b) {
            auto& a = block_acc_[b];
            std::fill(a.begin(), a.end(), 0.0);
            dispatch_sweep(psi, xs.data(), vs.data(), a.data(), edges_[b], edges_[b + 1], b);
        });
        const double inv_n = 1.0 / static_cast<double>(n_);
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t b = 0; b < nb; ++b)
            for (std::size_t q = 0; q < acc.size(); ++q) acc[q] += block_acc_[b][q];
        for (auto& q : acc) q *= inv_n;
    }

    struct PsiConst {
        double k;
        double operator()(double) const { return k; }
    };
    struct PsiQuarter {
        double k;
        double operator()(double r2) const { return k / std::sqrt(std::sqrt(1.0 + r2)); }
    };
    struct PsiHalf {
        double k;
        double operator()(double r2) const { return k / std::sqrt(1.0 + r2); }
    };
    struct PsiOne {
        double k;
        double operator()(double r2) const { return k / (1.0 + r2); }
    };

    void dispatch_sweep(const CommunicationRate& psi, const double* xs, const double* vs, double* a, std::size_t lo,
                        std::size_t hi, std::size_t b) {
        const auto fast = psi.fast_form();
        if (d_ <= kMaxDim) switch (fast.shape) {
        case CommunicationRate::Shape::Constant: return by_dim(PsiConst{fast.k}, xs, vs, a, lo, hi, scratch_w_[b].data());
        case CommunicationRate::Shape::Quarter: return by_dim(PsiQuarter{fast.k}, xs, vs, a, lo, hi, scratch_w_[b].data());
        case CommunicationRate::Shape::Half: return by_dim(PsiHalf{fast.k}, xs, vs, a, lo, hi, scratch_w_[b].data());
        case CommunicationRate::Shape::One: return by_dim(PsiOne{fast.k}, xs, vs, a, lo, hi, scratch_w_[b].data());
        case CommunicationRate::Shape::Other: break;
        }
        generic_sweep(psi, xs, vs, a, lo, hi, b);
    }

    template <class Psi>
    void by_dim(Psi f, const double* xs, const double* vs, double* a, std::size_t lo, std::size_t hi, double* buf) {
        switch (d_) {
        case 1: return sweep<1>(f, xs, vs, a, lo, hi, buf);
        case 2: return sweep<2>(f, xs, vs, a, lo, hi, buf);
        case 3: return sweep<3>(f, xs, vs, a, lo, hi, buf);
        default: return sweep<0>(f, xs, vs, a, lo, hi, buf);
        }
    }

    // Fused sweep over pairs (i, j > i). D = 0 means runtime dimension (d_ <= kMaxDim).
    // Pair forces go to a row buffer so the main loop has no reduction and vectorizes;
    // the row sums then use fixed 8-lane partial sums.
    template <std::size_t D, class Psi>
    void sweep(Psi psi, const double* xs, const double* vs, double* a, std::size_t lo, std::size_t hi, double* buf) {
        const std::size_t d = D ? D : d_;
        const std::size_t n = n_;
        for (std::size_t i = lo; i < hi; ++i) {
            const std::size_t j0 = i + 1;
            const std::size_t m = n - j0;
            if (m == 0) continue;
            double xi[kMaxDim], vi[kMaxDim];
            const double* xk[kMaxDim];
            const double* vk[kMaxDim];
            double* ak[kMaxDim];
            double* fk[kMaxDim];
            for (std::size_t k = 0; k < d; ++k) {
                xi[k] = xs[k * n + i];
                vi[k] = vs[k * n + i];
                xk[k] = xs + k * n + j0;
                vk[k] = vs + k * n + j0;
                ak[k] = a + k * n + j0;
                fk[k] = buf + k * n;
            }
            if constexpr (D == 1) {
                row1(psi, xk[0], vk[0], ak[0], fk[0], m, xi[0], vi[0]);
            } else if constexpr (D == 2) {
                row2(psi, xk[0], xk[1], vk[0], vk[1], ak[0], ak[1], fk[0], fk[1], m, xi, vi);
            } else if constexpr (D == 3) {
                row3(psi, xk[0], xk[1], xk[2], vk[0], vk[1], vk[2], ak[0], ak[1], ak[2], fk[0], fk[1], fk[2], m, xi, vi);
            } else {
                double* __restrict r2 = fk[d - 1] + n;  // spare row past the last force row
                for (std::size_t t = 0; t < m; ++t) r2[t] = 0;
                for (std::size_t k = 0; k < d; ++k) {
                    const double* __restrict xq = xk[k];
                    const double c = xi[k];
                    for (std::size_t t = 0; t < m; ++t) {
                        const double dx = xq[t] - c;
                        r2[t] += dx * dx;
                    }
                }
                for (std::size_t t = 0; t < m; ++t) r2[t] = psi(r2[t]);
                for (std::size_t k = 0; k < d; ++k) {
                    const double* __restrict vq = vk[k];
                    double* __restrict aq = ak[k];
                    double* __restrict fq = fk[k];
                    const double c = vi[k];
                    for (std::size_t t = 0; t < m; ++t) {
                        const double f = r2[t] * (vq[t] - c);
                        fq[t] = f;
                        aq[t] -= f;
                    }
                }
            }
            for (std::size_t k = 0; k < d; ++k) a[k * n + i] += lane_sum(fk[k], m);
        }
    }

    // One row of the sweep per dimension; restrict-qualified parameters let GCC vectorize.
    template <class Psi>
    static void row1(Psi psi, const double* __restrict x0, const double* __restrict v0, double* __restrict a0,
                     double* __restrict f0, std::size_t m, double xi0, double vi0) {
        for (std::size_t t = 0; t < m; ++t) {
            const double dx = x0[t] - xi0;
            const double f = psi(dx * dx) * (v0[t] - vi0);
            f0[t] = f;
            a0[t] -= f;
        }
    }

    template <class Psi>
    static void row2(Psi psi, const double* __restrict x0, const double* __restrict x1, const double* __restrict v0,
                     const double* __restrict v1, double* __restrict a0, double* __restrict a1, double* __restrict f0,
                     double* __restrict f1, std::size_t m, const double* xi, const double* vi) {
        const double xi0 = xi[0], xi1 = xi[1], vi0 = vi[0], vi1 = vi[1];
        for (std::size_t t = 0; t < m; ++t) {
            const double dx0 = x0[t] - xi0, dx1 = x1[t] - xi1;
            const double w = psi(dx0 * dx0 + dx1 * dx1);
            const double g0 = w * (v0[t] - vi0), g1 = w * (v1[t] - vi1);
            f0[t] = g0;
            f1[t] = g1;
            a0[t] -= g0;
            a1[t] -= g1;
        }
    }

    template <class Psi>
    static void row3(Psi psi, const double* __restrict x0, const double* __restrict x1, const double* __restrict x2,
                     const double* __restrict v0, const double* __restrict v1, const double* __restrict v2,
                     double* __restrict a0, double* __restrict a1, double* __restrict a2, double* __restrict f0,
                     double* __restrict f1, double* __restrict f2, std::size_t m, const double* xi, const double* vi) {
        const double xi0 = xi[0], xi1 = xi[1], xi2 = xi[2], vi0 = vi[0], vi1 = vi[1], vi2 = vi[2];
        for (std::size_t t = 0; t < m; ++t) {
            const double dx0 = x0[t] - xi0, dx1 = x1[t] - xi1, dx2 = x2[t] - xi2;
            const double w = psi(dx0 * dx0 + dx1 * dx1 + dx2 * dx2);
            const double g0 = w * (v0[t] - vi0), g1 = w * (v1[t] - vi1), g2 = w * (v2[t] - vi2);
            f0[t] = g0;
            f1[t] = g1;
            f2[t] = g2;
            a0[t] -= g0;
            a1[t] -= g1;
            a2[t] -= g2;
        }
    }

    static double lane_sum(const double* f, std::size_t m) {
        double lane[8] = {0, 0, 0, 0, 0, 0, 0, 0};
        std::size_t t = 0;
        for (; t + 8 <= m; t += 8)
            for (std::size_t l = 0; l < 8; ++l) lane[l] += f[t + l];
        double s = ((lane[0] + lane[1]) + (lane[2] + lane[3])) + ((lane[4] + lane[5]) + (lane[6] + lane[7]));
        for (; t < m; ++t) s += f[t];
        return s;
    }

    // Any rate and dimension: distances first, then psi over the row, then the update.
    void generic_sweep(const CommunicationRate& psi, const double* xs, const double* vs, double* a, std::size_t lo,
                       std::size_t hi, std::size_t b) {
        auto& r2 = scratch_r2_[b];
        auto& w = scratch_w_[b];
        const std::size_t n = n_;
        for (std::size_t i = lo; i < hi; ++i) {
            const std::size_t m = n - i - 1;
            if (m == 0) continue;
            std::fill(r2.begin(), r2.begin() + m, 0.0);
            for (std::size_t k = 0; k < d_; ++k) {
                const double* xk = xs + k * n + i + 1;
                const double xi = xs[k * n + i];
                for (std::size_t t = 0; t < m; ++t) {
                    const double dx = xk[t] - xi;
                    r2[t] += dx * dx;
                }
            }
            psi.eval_sq({r2.data(), m}, {w.data(), m});
            for (std::size_t k = 0; k < d_; ++k) {
                const double* vk = vs + k * n + i + 1;
                double* ak = a + k * n + i + 1;
                const double vi = vs[k * n + i];
                double s = 0;
                for (std::size_t t = 0; t < m; ++t) {
                    const double f = w[t] * (vk[t] - vi);
                    s += f;
                    ak[t] -= f;
                }
                a[k * n + i] += s;
            }
        }
    }

    static constexpr std::size_t kMaxDim = 8;

    void general(const std::vector<double>& xs, const std::vector<double>& vs, std::vector<double>& acc) {
        const double inv_n = 1.0 / static_cast<double>(n_);
        parallel_for(n_, threads_, [&](std::size_t i) {
            std::vector<double> dx(d_), dv(d_), f(d_), s(d_, 0.0);
            for (std::size_t j = 0; j < n_; ++j) {
                for (std::size_t k = 0; k < d_; ++k) {
                    dx[k] = xs[k * n_ + j] - xs[k * n_ + i];
                    dv[k] = vs[k * n_ + j] - vs[k * n_ + i];
                }
                kernel_.eval(dx.data(), dv.data(), f.data());
                for (std::size_t k = 0; k < d_; ++k) s[k] += f[k];
            }
            for (std::size_t k = 0; k < d_; ++k) acc[k * n_ + i] = s[k] * inv_n;
        });
    }

    const InteractionKernel& kernel_;
    std::size_t n_, d_;
    unsigned threads_;
    std::vector<std::size_t> edges_;
    std::vector<std::vector<double>> block_acc_, scratch_r2_, scratch_w_;
};

inline void to_soa(const std::vector<double>& rows, std::size_t n, std::size_t d, std::vector<double>& soa) {
    soa.resize(n * d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < d; ++k) soa[k * n + i] = rows[i * d + k];
}

inline void from_soa(const std::vector<double>& soa, std::size_t n, std::size_t d, std::vector<double>& rows) {
    rows.resize(n * d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < d; ++k) rows[i * d + k] = soa[k * n + i];
}

inline bool all_finite(const std::vector<double>& a) {
    for (double x : a)
        if (!std::isfinite(x)) return false;
    return true;
}

class Rk4Stepper {
public:
    Rk4Stepper(const InteractionKernel& kernel, std::size_t n, unsigned threads)
        : force_(kernel, n, threads), n_(n), d_(kernel.dim()) {
        const std::size_t sz = n * kernel.dim();
        for (auto* b : {&k1v_, &k2v_, &k3v_, &k4v_, &xt_, &vt_}) b->resize(sz);
    }

    void step(std::vector<double>& x, std::vector<double>& v, double h) {
        const std::size_t sz = x.size();
        // k_x for each stage is the stage velocity, so only velocities need storing.
        force_(x, v, k1v_);
        for (std::size_t q = 0; q < sz; ++q) {
            xt_[q] = x[q] + 0.5 * h * v[q];
            vt_[q] = v[q] + 0.5 * h * k1v_[q];
        }
        k2x_ = vt_;
        force_(xt_, vt_, k2v_);
        for (std::size_t q = 0; q < sz; ++q) {
            xt_[q] = x[q] + 0.5 * h * k2x_[q];
            vt_[q] = v[q] + 0.5 * h * k2v_[q];
        }
        k3x_ = vt_;
        force_(xt_, vt_, k3v_);
        for (std::size_t q = 0; q < sz; ++q) {
            xt_[q] = x[q] + h * k3x_[q];
            vt_[q] = v[q] + h * k3v_[q];
        }
        force_(xt_, vt_, k4v_);
        const double h6 = h / 6.0;
        for (std::size_t q = 0; q < sz; ++q) {
            x[q] += h6 * (v[q] + 2.0 * k2x_[q] + 2.0 * k3x_[q] + vt_[q]);
            v[q] += h6 * (k1v_[q] + 2.0 * k2v_[q] + 2.0 * k3v_[q] + k4v_[q]);
        }
    }

private:
    ForceEvaluator force_;
    std::size_t n_, d_;
    std::vector<double> k1v_, k2v_, k3v_, k4v_, k2x_, k3x_, xt_, vt_;
};

} // namespace detail

/// (dx/dt, dv/dt) packed as an ensemble: positions hold v_i, velocities hold G_i(X, V).
inline ParticleEnsemble drift(const ParticleEnsemble& state, const InteractionKernel& kernel) {
    state.validate();
    require(state.dim == kernel.dim(), "drift: kernel dimension does not match state");
    std::vector<double> xs, vs, acc(state.count * state.dim);
    detail::to_soa(state.positions, state.count, state.dim, xs);
    detail::to_soa(state.velocities, state.count, state.dim, vs);
    detail::ForceEvaluator force(kernel, state.count, 1);
    force(xs, vs, acc);
    ParticleEnsemble out(state.count, state.dim);
    out.positions = state.velocities;
    detail::from_soa(acc, state.count, state.dim, out.velocities);
    return out;
}

/// Fixed-step RK4 on [0, t_end]; the last step is shortened if t_end is off-grid.
/// Frames: t = 0, every frame_stride steps, each record time, and t_end.
inline Trajectory integrate(const ParticleEnsemble& initial, const InteractionKernel& kernel, double t_end, double dt,
                            const IntegratorOptions& opts = {}) {
    initial.validate();
    require(initial.dim == kernel.dim(), "integrate: kernel dimension does not match state");
    require(dt > 0 && std::isfinite(dt), "integrate: dt must be positive");
    require(t_end >= 0 && std::isfinite(t_end), "integrate: t_end must be nonnegative");
    require(dt <= stability_cap(kernel.gamma0()) * (1 + 1e-12),
            "integrate: dt exceeds the stability cap 0.1 / gamma0 = " + std::to_string(stability_cap(kernel.gamma0())));
    require(opts.frame_stride >= 1, "integrate: frame_stride must be >= 1");

    const std::size_t n = initial.count, d = initial.dim;
    Trajectory traj;
    traj.scheme = {"rk4", dt, opts.frame_stride};
    traj.kernel_id = kernel.hash();
    traj.times.push_back(0.0);
    traj.states.push_back(initial);

    std::vector<double> records;
    for (double t : opts.record_times) {
        require(t >= 0 && t <= t_end * (1 + 1e-12), "integrate: record time outside [0, t_end]");
        if (t > 0 && t < t_end) records.push_back(t);
    }
    std::sort(records.begin(), records.end());
    records.erase(std::unique(records.begin(), records.end()), records.end());
    if (t_end > 0) records.push_back(t_end);

    std::vector<double> x, v;
    detail::to_soa(initial.positions, n, d, x);
    detail::to_soa(initial.velocities, n, d, v);
    detail::Rk4Stepper stepper(kernel, n, opts.threads);

    const double tol = 1e-9 * dt;
    auto store = [&](double t, const std::vector<double>& xs, const std::vector<double>& vs) {
        if (t - traj.times.back() <= tol) return;
        ParticleEnsemble e(n, d);
        detail::from_soa(xs, n, d, e.positions);
        detail::from_soa(vs, n, d, e.velocities);
        traj.times.push_back(t);
        traj.states.push_back(std::move(e));
    };

    std::size_t step = 0;
    std::size_t next = 0;
    while (next < records.size()) {
        const double t_now = static_cast<double>(step) * dt;
        const double t_next = static_cast<double>(step + 1) * dt;
        // record times that fall strictly inside (t_now, t_next)
        while (next < records.size() && records[next] < t_next - tol) {
            const double h = records[next] - t_now;
            if (h > tol) {
                const bool last = next + 1 == records.size();
                if (last) {
                    stepper.step(x, v, h);
                    if (!detail::all_finite(x) || !detail::all_finite(v))
                        throw DivergenceError("integrate: non-finite state at step " + std::to_string(step + 1), step + 1);
                    store(records[next], x, v);
                } else {
                    auto xc = x, vc = v;
                    stepper.step(xc, vc, h);
                    if (!detail::all_finite(xc) || !detail::all_finite(vc))
                        throw DivergenceError("integrate: non-finite state at step " + std::to_string(step + 1), step + 1);
                    store(records[next], xc, vc);
                }
            }
            ++next;
        }
        if (next >= records.size()) break;
        stepper.step(x, v, dt);
        ++step;
        if (!detail::all_finite(x) || !detail::all_finite(v))
            throw DivergenceError("integrate: non-finite state at step " + std::to_string(step), step);
        const double t = static_cast<double>(step) * dt;
        bool on_record = false;
        while (next < records.size() && std::abs(records[next] - t) <= tol) {
            on_record = true;
            ++next;
        }
        if (on_record || step % opts.frame_stride == 0) store(t, x, v);
    }
    return traj;
}

struct DynamicsDiagnostics {
    double position_diameter = 0;
    double velocity_diameter = 0;
    std::vector<double> total_momentum;
    double abs_velocity_sum = 0;
    double max_speed = 0;
    /// Diameters estimated from random pairs (N above the exact cap, d > 1).
    bool sampled = false;

    json to_json() const {
        return {{"D_X", position_diameter},   {"D_V", velocity_diameter}, {"momentum", total_momentum},
                {"abs_v_sum", abs_velocity_sum}, {"max_speed", max_speed}, {"sampled", sampled}};
    }
};

namespace detail {

inline double diameter(const std::vector<double>& rows, std::size_t n, std::size_t d, bool& sampled) {
    if (n < 2) return 0;
    if (d == 1) {
        const auto [lo, hi] = std::minmax_element(rows.begin(), rows.end());
        return *hi - *lo;
    }
    auto dist = [&](std::size_t i, std::size_t j) {
        double s = 0;
        for (std::size_t k = 0; k < d; ++k) {
            const double c = rows[i * d + k] - rows[j * d + k];
            s += c * c;
        }
        return s;
    };
    double best = 0;
    if (n <= 4096) {
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) best = std::max(best, dist(i, j));
        return std::sqrt(best);
    }
    sampled = true;
    std::mt19937_64 rng(0x5eed);
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    for (std::size_t s = 0; s < 1000000; ++s) best = std::max(best, dist(pick(rng), pick(rng)));
    return std::sqrt(best);
}

} // namespace detail

inline DynamicsDiagnostics diagnostics(const ParticleEnsemble& state) {
    DynamicsDiagnostics out;
    const std::size_t n = state.count, d = state.dim;
    out.total_momentum.assign(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double s = norm(state.v(i));
        out.abs_velocity_sum += s;
        out.max_speed = std::max(out.max_speed, s);
        for (std::size_t k = 0; k < d; ++k) out.total_momentum[k] += state.velocities[i * d + k];
    }
    out.position_diameter = detail::diameter(state.positions, n, d, out.sampled);
    out.velocity_diameter = detail::diameter(state.velocities, n, d, out.sampled);
    return out;
}

/// One envelope checked along a trajectory: margin = bound - observed per frame.
struct BoundCheck {
    std::string name;
    std::vector<double> times, bound, observed, margin;
    double tolerance = 0;
    std::size_t flags = 0;

    json to_json() const {
        return {{"name", name},       {"times", times},         {"bound", bound}, {"observed", observed},
                {"margin", margin},   {"tolerance", tolerance}, {"flags", flags}};
    }
};

struct BoundCheckReport {
    std::vector<BoundCheck> checks;

    std::size_t total_flags() const {
        std::size_t f = 0;
        for (const auto& c : checks) f += c.flags;
        return f;
    }
    bool ok() const { return total_flags() == 0; }
    const BoundCheck& check(const std::string& name) const {
        for (const auto& c : checks)
            if (c.name == name) return c;
        throw InputError("no bound check named " + name);
    }
    json to_json() const {
        json j = json::array();
        for (const auto& c : checks) j.push_back(c.to_json());
        return {{"checks", j}, {"flags", total_flags()}};
    }
};

namespace detail {

// (e^{2 g t} - 1) / (2 g), continuous at g = 0
inline double growth_integral(double gamma0, double t) {
    return gamma0 > 0 ? std::expm1(2 * gamma0 * t) / (2 * gamma0) : t;
}

inline void finish_check(BoundCheck& c, double scale) {
    c.tolerance = 1e-8 * scale;
    for (std::size_t k = 0; k < c.times.size(); ++k) {
        c.margin.push_back(c.bound[k] - c.observed[k]);
        if (c.margin.back() < -c.tolerance) ++c.flags;
    }
}

} // namespace detail

/// Gronwall envelopes for the particle flow, per stored frame:
///   speed_sum:   sum_i |v_i(t)| <= e^{2 g t} sum_i |v_i(0)|
///   max_speed:   max_i |v_i(t)| <= e^{2 g t} max_j |v_j(0)|
///   displacement: |x_i(t) - x_i(0)| <= max_j |v_j(0)| (e^{2 g t} - 1) / (2 g)
inline BoundCheckReport check_apriori_bounds(const Trajectory& traj, double gamma0) {
    require(traj.frames() >= 1, "check_apriori_bounds: empty trajectory");
    require(gamma0 >= 0 && std::isfinite(gamma0), "check_apriori_bounds: gamma0 must be nonnegative");
    const auto& s0 = traj.initial();
    for (const auto& s : traj.states)
        require(s.count == s0.count && s.dim == s0.dim, "check_apriori_bounds: inconsistent frame shapes");
    const auto d0 = diagnostics(s0);
    double max_x0 = 0;
    for (std::size_t i = 0; i < s0.count; ++i) max_x0 = std::max(max_x0, norm(s0.x(i)));

    BoundCheck sum, speed, disp;
    sum.name = "speed_sum";
    speed.name = "max_speed";
    disp.name = "displacement";
    for (std::size_t f = 0; f < traj.frames(); ++f) {
        const double t = traj.times[f];
        const auto& s = traj.states[f];
        const auto dg = diagnostics(s);
        const double grow = std::exp(2 * gamma0 * t);
        double moved = 0;
        for (std::size_t i = 0; i < s.count; ++i) moved = std::max(moved, distance(s.x(i), s0.x(i)));
        for (auto* c : {&sum, &speed, &disp}) c->times.push_back(t);
        sum.bound.push_back(grow * d0.abs_velocity_sum);
        sum.observed.push_back(dg.abs_velocity_sum);
        speed.bound.push_back(grow * d0.max_speed);
        speed.observed.push_back(dg.max_speed);
        disp.bound.push_back(d0.max_speed * detail::growth_integral(gamma0, t));
        disp.observed.push_back(moved);
    }
    detail::finish_check(sum, d0.abs_velocity_sum);
    detail::finish_check(speed, d0.max_speed);
    detail::finish_check(disp, std::max(d0.max_speed, max_x0));
    return {{sum, speed, disp}};
}

/// As above with gamma0 taken from the kernel; the kernel must be the one that produced the trajectory.
inline BoundCheckReport check_apriori_bounds(const Trajectory& traj, const InteractionKernel& kernel) {
    require(traj.kernel_id == kernel.hash(), "check_apriori_bounds: trajectory was produced by a different kernel");
    return check_apriori_bounds(traj, kernel.gamma0());
}

} // namespace csmf
