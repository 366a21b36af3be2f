// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.
// Criteria 6 and 7 audit the Cucker-Smale trajectories produced while running 3, 4, 5 and 9,
// plus a seeded sweep over the convergence grid of criterion 1.

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <random>
#include <set>

#include "csmf/csmf.hpp"

namespace fs = std::filesystem;
using namespace csmf;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double x) {
    std::ostringstream os;
    os.precision(4);
    os << x;
    return os.str();
}

void log(const std::string& s) { std::cerr << "[acceptance] " << s << std::endl; }

double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

InitialDensitySpec acceptance_box() { return InitialDensitySpec::uniform_box({0.0}, {1.0}, {-1.0}, {1.0}); }

InteractionKernel quarter_kernel() {
    return InteractionKernel::cucker_smale(CommunicationRate::inverse_power(1.0, 0.25), 1);
}

ExperimentConfig convergence_config(unsigned threads) {
    ExperimentConfig c;
    c.kernel = quarter_kernel();
    c.initial = acceptance_box();
    c.N_grid = {16, 32, 64, 128, 256};
    c.times = {0.5, 1.0};
    c.K = 2000;
    c.M_ref = 20000;
    c.dt = 0.01;
    c.seed = 1;
    c.threads = threads;
    return c;
}

ExperimentConfig flocking_config(unsigned threads) {
    ExperimentConfig c;
    c.kernel = quarter_kernel();
    c.initial = acceptance_box();
    c.N_grid = {16, 32, 64, 128};
    c.dt = 0.01;
    c.seed = 1;
    c.threads = threads;
    c.flocking.M = 5000;
    c.flocking.t_end = 4.0;
    c.flocking.frames = 41;
    c.inverse.t = 2.0;
    c.inverse.epsilon = 0.2;
    c.inverse.K = 1000;
    c.inverse.N_grid = {16, 32, 64, 128};
    return c;
}

// ---------------------------------------------------------------------------
// audit of Cucker-Smale runs for criteria 6 and 7

double exact_velocity_diameter(const ParticleEnsemble& s) {
    if (s.dim == 1 || s.count <= 4096) {
        bool sampled = false;
        return detail::diameter(s.velocities, s.count, s.dim, sampled);
    }
    double best = 0;
    for (std::size_t i = 0; i < s.count; ++i)
        for (std::size_t j = i + 1; j < s.count; ++j) best = std::max(best, distance(s.v(i), s.v(j)));
    return best;
}

struct CsAudit {
    std::size_t runs = 0, dv_violations = 0, momentum_violations = 0;
    std::size_t runs_at_dt_001 = 0;
    double worst_dv_excess = 0;  // max over runs of (D_V(t_k) - D_V(t_{k-1})) / scale
    double worst_momentum = 0;   // max over runs of |sum v(t) - sum v(0)| / |V(0)|

    void add_dv(const std::vector<double>& dv) {
        if (dv.empty()) return;
        const double scale = std::max(dv.front(), 1e-300);
        for (std::size_t k = 1; k < dv.size(); ++k) {
            const double excess = (dv[k] - dv[k - 1]) / scale;
            worst_dv_excess = std::max(worst_dv_excess, excess);
            if (excess > 1e-8) ++dv_violations;
        }
    }

    void add(const Trajectory& traj, double dt) {
        ++runs;
        if (dt == 0.01) ++runs_at_dt_001;
        std::vector<double> dv;
        for (const auto& s : traj.states) dv.push_back(exact_velocity_diameter(s));
        add_dv(dv);
        const auto& s0 = traj.initial();
        const std::size_t d = s0.dim;
        std::vector<double> p0(d, 0.0);
        double v0 = 0;
        for (std::size_t i = 0; i < s0.count; ++i)
            for (std::size_t k = 0; k < d; ++k) {
                p0[k] += s0.velocities[i * d + k];
                v0 += s0.velocities[i * d + k] * s0.velocities[i * d + k];
            }
        v0 = std::sqrt(v0);
        for (const auto& s : traj.states) {
            std::vector<double> p(d, 0.0);
            for (std::size_t i = 0; i < s.count; ++i)
                for (std::size_t k = 0; k < d; ++k) p[k] += s.velocities[i * d + k];
            double diff = 0;
            for (std::size_t k = 0; k < d; ++k) diff += (p[k] - p0[k]) * (p[k] - p0[k]);
            const double r = v0 > 0 ? std::sqrt(diff) / v0 : std::sqrt(diff);
            worst_momentum = std::max(worst_momentum, r);
            if (r > 1e-6) ++momentum_violations;
        }
    }
};

IntegratorOptions stride(std::size_t n, unsigned threads) {
    IntegratorOptions o;
    o.frame_stride = n;
    o.threads = threads;
    return o;
}

// ---------------------------------------------------------------------------
// criteria

Outcome criterion_convergence(const ConvergenceStudy& s) {
    double min_slack = std::numeric_limits<double>::infinity();
    for (const auto& r : s.records)
        if (r.corrected > 0) min_slack = std::min(min_slack, r.bound / r.corrected);
    const auto br = s.breaches();
    return {s.records.size() == 10 && br.empty(),
            std::to_string(s.records.size()) + " grid points, " + std::to_string(br.size()) +
                " breaches, min slack C(t)/sqrt(N)/W = " + fmt(min_slack) + " (" + s.method + ")"};
}

Outcome criterion_rate(const ConvergenceStudy& s) {
    bool pass = true;
    std::string detail;
    for (double t : {0.5, 1.0}) {
        const auto f = fit_rate(s.records, t);
        const bool ok = !f.inconclusive && f.slope >= -0.75 && f.slope <= -0.30 && f.r2 >= 0.8;
        pass = pass && ok;
        if (!detail.empty()) detail += "; ";
        detail += "t=" + fmt(t) + ": " + (f.inconclusive ? std::string("inconclusive") : "slope " + fmt(f.slope)) +
                  ", r2 " + fmt(f.r2) + ", " + std::to_string(f.used_N.size()) + " of " +
                  std::to_string(f.used_N.size() + f.excluded_N.size()) + " N above 2x floor";
    }
    return {pass, detail};
}

Outcome criterion_two_body(CsAudit& audit) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    double worst = 0;
    for (std::size_t d = 1; d <= 3; ++d) {
        const auto kd = InteractionKernel::cucker_smale(CommunicationRate::constant(1.0), d);
        for (int rep = 0; rep < 3; ++rep) {
            ParticleEnsemble e(2, d);
            for (auto& x : e.positions) x = u(rng);
            for (auto& v : e.velocities) v = u(rng);
            if (d == 1 && rep == 0) e.velocities = {1.0, -1.0};
            const auto traj = integrate(e, kd, 1.0, 1e-3, stride(100, 1));
            const double gap0 = distance(traj.initial().v(0), traj.initial().v(1));
            const double gap1 = distance(traj.final().v(0), traj.final().v(1));
            worst = std::max(worst, rel(gap1, gap0 * std::exp(-1.0)));
            audit.add(traj, 1e-3);
        }
    }
    return {worst <= 1e-6, "9 initial states, d = 1..3, worst relative error " + fmt(worst)};
}

CommunicationRate random_rate(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.5, 2.0);
    switch (std::uniform_int_distribution<int>(0, 3)(rng)) {
        case 0: return CommunicationRate::constant(u(rng));
        case 1: {
            const double betas[] = {0.25, 0.5, 1.0, 0.35, 0.8};
            return CommunicationRate::inverse_power(u(rng), betas[std::uniform_int_distribution<int>(0, 4)(rng)]);
        }
        case 2: return CommunicationRate::tabulated({0.0, 0.5, 1.5, 3.0}, {u(rng), u(rng), u(rng), u(rng)});
        default: return CommunicationRate::inverse_power(u(rng), 0.25);
    }
}

InteractionKernel random_kernel(std::mt19937_64& rng, std::size_t d) {
    std::uniform_real_distribution<double> u(0.3, 1.5);
    std::normal_distribution<double> g(0.0, 0.7);
    const int pick = std::uniform_int_distribution<int>(0, 6)(rng);
    switch (pick) {
        case 0:
        case 1: return InteractionKernel::cucker_smale(random_rate(rng), d);
        case 2: {
            std::vector<double> a(d * d);
            for (auto& x : a) x = g(rng);
            return InteractionKernel(LinearForm{random_rate(rng), std::move(a)}, d);
        }
        case 3:
            if (d >= 2) return InteractionKernel::rotation(random_rate(rng), d, std::uniform_real_distribution<double>(0, 3.14)(rng));
            return InteractionKernel::cucker_smale(random_rate(rng), d);
        case 4: return InteractionKernel(SaturatingForm{u(rng) * (g(rng) < 0 ? -1 : 1)}, d);
        case 5: {
            const double s1 = u(rng), s2 = s1 + u(rng);
            return InteractionKernel(TabulatedResponseForm{random_rate(rng), {0.0, s1, s2}, {0.0, s1 * u(rng), s1 * u(rng)}}, d);
        }
        default: return InteractionKernel(NullForm{}, d);
    }
}

InitialDensitySpec random_density(std::mt19937_64& rng, std::size_t d) {
    std::uniform_real_distribution<double> c(-1.0, 1.0), w(0.1, 1.5);
    if (std::uniform_int_distribution<int>(0, 2)(rng) == 0) {
        std::vector<double> xm(d), vm(d);
        for (std::size_t k = 0; k < d; ++k) {
            xm[k] = c(rng);
            vm[k] = c(rng);
        }
        return InitialDensitySpec::from_json({{"family", "gaussian"},
                                              {"x_mean", xm},
                                              {"v_mean", vm},
                                              {"x_cov", w(rng) * 0.3},
                                              {"v_cov", w(rng) * 0.3},
                                              {"x_radius", 2.0},
                                              {"v_radius", 1.5}});
    }
    std::vector<double> xl(d), xh(d), vl(d), vh(d);
    for (std::size_t k = 0; k < d; ++k) {
        xl[k] = c(rng);
        xh[k] = xl[k] + w(rng);
        vl[k] = c(rng);
        vh[k] = vl[k] + w(rng);
    }
    return InitialDensitySpec::uniform_box(xl, xh, vl, vh);
}

Outcome criterion_apriori(CsAudit& audit, unsigned threads) {
    std::mt19937_64 rng(4);
    std::size_t flags = 0, cs = 0;
    std::set<std::string> types;
    double worst_margin = std::numeric_limits<double>::infinity();
    for (int run = 0; run < 50; ++run) {
        const std::size_t d = std::uniform_int_distribution<std::size_t>(1, 3)(rng);
        const auto kernel = random_kernel(rng, d);
        const auto spec = random_density(rng, d);
        const std::size_t N = std::uniform_int_distribution<std::size_t>(4, 64)(rng);
        const double t_end = std::uniform_real_distribution<double>(0.5, 2.0)(rng);
        const auto traj = integrate(sample_initial(spec, N, derive_seed(4, 0, run)), kernel, t_end, 0.01, stride(10, threads));
        const auto rep = check_apriori_bounds(traj, gamma0_of(kernel));
        flags += rep.total_flags();
        for (const auto& c : rep.checks)
            for (std::size_t f = 0; f < c.margin.size(); ++f)
                worst_margin = std::min(worst_margin, c.margin[f] / std::max(c.tolerance / 1e-8, 1e-300));
        types.insert(kernel.to_json().at("type").get<std::string>());
        if (kernel.is_cucker_smale()) {
            ++cs;
            audit.add(traj, 0.01);
        }
    }
    std::string t;
    for (const auto& s : types) t += (t.empty() ? "" : ",") + s;
    return {flags == 0, "50 configs (" + t + "; " + std::to_string(cs) + " Cucker-Smale), " + std::to_string(flags) +
                            " flags, smallest margin / scale " + fmt(worst_margin)};
}

Outcome criterion_kinetic(CsAudit& audit, unsigned threads) {
    // 14 Cucker-Smale clouds on the vectorized rate shapes to t = 1, 6 general kernels to t = 0.25
    struct Case {
        InteractionKernel kernel;
        InitialDensitySpec spec;
        double t_end, dt;
    };
    std::vector<Case> cases;
    const double betas[] = {0.0, 0.25, 0.5, 1.0};
    std::mt19937_64 rng(5);
    for (int k = 0; k < 14; ++k) {
        const std::size_t d = k < 10 ? 1 : 2;
        const double beta = betas[k % 4];
        const double K = std::uniform_real_distribution<double>(0.5, 1.5)(rng);
        auto rate = beta == 0 ? CommunicationRate::constant(K) : CommunicationRate::inverse_power(K, beta);
        auto spec = k == 0 ? acceptance_box() : random_density(rng, d);
        cases.push_back({InteractionKernel::cucker_smale(rate, d), spec, 1.0, 0.05});
    }
    cases[0].kernel = quarter_kernel();
    for (int k = 0; k < 6; ++k) {
        const std::size_t d = 1 + k % 2;
        InteractionKernel kernel = random_kernel(rng, d);
        while (kernel.is_cucker_smale()) kernel = random_kernel(rng, d);
        cases.push_back({kernel, random_density(rng, d), 0.25, 0.05});
    }
    std::size_t flags = 0, cs = 0;
    double worst_ratio = 0;
    for (std::size_t k = 0; k < cases.size(); ++k) {
        const auto& c = cases[k];
        log("kinetic cloud " + std::to_string(k + 1) + "/20");
        const double dt = std::min(c.dt, stability_cap(c.kernel.gamma0()));
        const auto traj = solve_vlasov(c.spec, c.kernel, 10000, c.t_end, dt, derive_seed(5, 0, k), stride(5, threads));
        const auto rep = check_kinetic_bounds(traj, c.kernel, c.spec);
        flags += rep.total_flags();
        for (const auto& ch : rep.checks)
            for (std::size_t f = 0; f < ch.observed.size(); ++f)
                if (ch.bound[f] > 0) worst_ratio = std::max(worst_ratio, ch.observed[f] / ch.bound[f]);
        if (c.kernel.is_cucker_smale()) {
            ++cs;
            audit.add(traj, dt);
        }
    }
    return {flags == 0, "20 clouds at M = 10^4 (" + std::to_string(cs) + " Cucker-Smale), " + std::to_string(flags) +
                            " flags, max observed/bound " + fmt(worst_ratio)};
}

void audit_convergence_grid(CsAudit& audit, unsigned threads) {
    const auto cfg = convergence_config(threads);
    for (std::size_t N : cfg.N_grid)
        for (std::uint64_t r = 0; r < 20; ++r) {
            const auto e = sample_initial(cfg.initial, N, derive_seed(6, N, r));
            audit.add(integrate(e, cfg.kernel, 1.0, cfg.dt, stride(10, threads)), cfg.dt);
        }
}

double brute_force(const DiscreteMeasure& mu, const DiscreteMeasure& nu, double p) {
    const auto c = detail::cost_matrix(mu, nu, p);
    const std::size_t n = mu.size();
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    do {
        double s = 0;
        for (std::size_t i = 0; i < n; ++i) s += c[i * n + perm[i]];
        best = std::min(best, s);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best / static_cast<double>(n);
}

DiscreteMeasure cloud(std::mt19937_64& rng, std::size_t n, std::size_t m, double shift = 0) {
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> pts(n * m);
    for (auto& x : pts) x = g(rng) + shift;
    return DiscreteMeasure::uniform(std::move(pts), m);
}

Outcome criterion_transport() {
    std::size_t mismatches = 0, couplings = 0, marginal_fail = 0, metric_fail = 0;
    double worst_marginal = 0;
    auto audit = [&](const WassersteinResult& r, const DiscreteMeasure& a, const DiscreteMeasure& b) {
        ++couplings;
        const auto rep = verify_coupling(r.coupling, a, b);
        worst_marginal = std::max(worst_marginal, rep.marginal_violation());
        if (rep.marginal_violation() > 1e-10 || rep.index_error || rep.negative_mass > 0) ++marginal_fail;
    };
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<std::size_t> size(1, 8), dim(1, 3);
    for (int inst = 0; inst < 200; ++inst) {
        const double p = inst % 3 == 0 ? 1.0 : 2.0;
        const std::size_t n = size(rng), m = p == 1.0 ? 2 + dim(rng) % 2 : dim(rng);
        const auto mu = cloud(rng, n, m), nu = cloud(rng, n, m, 0.5);
        const auto r = wp_exact(mu, nu, p);
        if (r.coupling.cost_p != brute_force(mu, nu, p)) ++mismatches;
        audit(r, mu, nu);
    }
    std::mt19937_64 rng2(99);
    std::uniform_int_distribution<std::size_t> tsize(2, 64);
    for (int trip = 0; trip < 100; ++trip) {
        const std::size_t n = tsize(rng2);
        const auto a = cloud(rng2, n, 2), b = cloud(rng2, n, 2, 0.3), c = cloud(rng2, n, 2, -0.2);
        const auto ab = wp_exact(a, b), ba = wp_exact(b, a), bc = wp_exact(b, c), ac = wp_exact(a, c), aa = wp_exact(a, a);
        audit(ab, a, b);
        audit(ba, b, a);
        audit(bc, b, c);
        audit(ac, a, c);
        audit(aa, a, a);
        if (std::abs(ab.distance - ba.distance) > 1e-9 || aa.distance != 0 || ac.distance > ab.distance + bc.distance + 1e-9)
            ++metric_fail;
    }
    // weighted measures go through min-cost flow
    std::uniform_real_distribution<double> wu(0.1, 1.0);
    for (int inst = 0; inst < 50; ++inst) {
        auto weighted = [&](std::size_t n) {
            auto base = cloud(rng, n, 2);
            std::vector<double> w(n);
            for (auto& x : w) x = wu(rng);
            const double s = std::accumulate(w.begin(), w.end(), 0.0);
            for (auto& x : w) x /= s;
            w.back() = 1.0 - std::accumulate(w.begin(), w.end() - 1, 0.0);
            return DiscreteMeasure::weighted(base.points, w, 2);
        };
        const auto a = weighted(3 + inst % 9), b = weighted(2 + inst % 7);
        audit(wp_exact(a, b), a, b);
    }
    return {mismatches == 0 && metric_fail == 0 && marginal_fail == 0,
            "200 oracle instances (" + std::to_string(mismatches) + " mismatches), 100 triples (" +
                std::to_string(metric_fail) + " axiom failures), " + std::to_string(couplings) +
                " couplings, worst marginal violation " + fmt(worst_marginal)};
}

Outcome criterion_flocking(const FlockingReport& rep, const FlockingReport& null_rep) {
    const bool ok = rep.fit.alpha > 0 && rep.fit.residual <= 0.1 && null_rep.fit.alpha <= 0.01 && !null_rep.flocking_detected &&
                    null_rep.label == "no flocking detected";
    return {ok, "psi quarter: alpha " + fmt(rep.fit.alpha) + ", residual " + fmt(rep.fit.residual) + " (M = " +
                    std::to_string(rep.M) + "); gamma = 0: alpha " + fmt(null_rep.fit.alpha) + ", \"" + null_rep.label + "\""};
}

Outcome criterion_inverse(const InverseReport& rep) {
    bool nonincreasing = true;
    for (std::size_t k = 1; k < rep.rows.size(); ++k)
        if (rep.rows[k].max_estimate > rep.rows[k - 1].max_estimate) nonincreasing = false;
    const bool has_control =
        std::any_of(rep.rows.begin(), rep.rows.end(), [](const auto& r) { return r.control; });
    std::string masses;
    for (const auto& r : rep.rows) masses += (masses.empty() ? "" : ", ") + fmt(r.max_estimate);
    bool ok = rep.ok && has_control;
    if (rep.mode == "trend") ok = ok && nonincreasing;
    return {ok, "mode " + rep.mode + ", N_threshold " + fmt(rep.N_threshold) + ", outside mass by N [" + masses +
                    "], band " + fmt(rep.rows.empty() ? 0.0 : rep.rows[0].band) +
                    (has_control ? ", control row present" : ", no control row")};
}

Outcome criterion_bounds(const FlockingSupportFit& fit) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.01, 2.0), tt(0.0, 1.5);
    std::size_t fails = 0;
    double worst = 0;
    auto agree = [&](double a, double b) {
        const double r = rel(a, b);
        worst = std::max(worst, r);
        if (!(r <= 1e-12)) ++fails;
    };
    std::size_t n[5] = {0, 0, 0, 0, 0};
    for (std::size_t attempts = 0; attempts < 1000000 && (n[0] < 1000 || n[2] < 1000); ++attempts) {
        const double psi = u(rng), vb = u(rng), supp = u(rng), vs = u(rng), t = tt(rng);
        const double a = detail::cs_direct(psi, vb, supp, vs, t);
        if (n[0] < 1000 && std::isfinite(a)) {
            agree(detail::cs_logspace(psi, vb, supp, vs, t), a);
            ++n[0];
        }
        const double g0 = u(rng), A = u(rng), ts = 0.2 * tt(rng);
        const double sd = detail::sublinear_direct(g0, A, ts);
        if (n[2] < 1000 && std::isfinite(sd) && ts > 0) {
            agree(detail::sublinear_logspace(g0, A, ts), sd);
            ++n[2];
        }
    }
    for (; n[1] < 1000; ++n[1]) {
        const double g = u(rng), l = u(rng), t = tt(rng);
        agree(detail::lip_logspace(g, l, t), detail::lip_direct(g, l, t));
    }
    for (; n[3] < 1000; ++n[3]) {
        const double g0 = u(rng), A = u(rng), t = tt(rng), rate = 2 * (1 + 8 * A);
        agree(detail::flock_logspace(g0, A, rate, t), detail::flock_direct(g0, A, rate, t));
    }
    for (; n[4] < 1000; ++n[4]) {
        const std::size_t m = 2 + std::uniform_int_distribution<std::size_t>(0, 30)(rng);
        std::vector<double> times(m), s(m), l(m);
        double t = 0;
        for (std::size_t k = 0; k < m; ++k) {
            times[k] = t;
            t += std::uniform_real_distribution<double>(0.005, 0.1)(rng);
            s[k] = u(rng);
            l[k] = u(rng);
        }
        const auto ev = profile_bound(times, s, l);
        const auto fac = detail::profile_factored(times, s, l);
        agree(ev.back().C_t, fac.back());
    }

    // zero at t = 0 and nondecreasing over 100 t-values on the acceptance inputs
    const auto box = acceptance_box().support_data();
    const double g0 = quarter_kernel().gamma0();
    std::size_t mono_fail = 0, zero_fail = 0;
    std::vector<double> grid(100), sf(100), lq(100);
    for (std::size_t k = 0; k < 100; ++k) {
        grid[k] = 4.0 * static_cast<double>(k) / 99.0;
        sf[k] = 1.0 + 0.5 * std::sin(static_cast<double>(k));
        lq[k] = 0.3 + 0.2 * std::cos(static_cast<double>(k));
    }
    const auto prof = profile_bound(grid, sf, lq);
    std::vector<std::vector<double>> curves(5);
    for (std::size_t k = 0; k < 100; ++k) {
        const double t = grid[k];
        curves[0].push_back(cs_bound(g0, box, t).C_t);
        curves[1].push_back(lipschitz_bound(1.0, 0.5, t).C_t);
        curves[2].push_back(sublinear_bound(g0, box, t).C_t);
        curves[3].push_back(flocking_bound(g0, fit, t).C_t);
        curves[4].push_back(prof[k].C_t);
    }
    for (const auto& c : curves) {
        if (c.front() != 0.0) ++zero_fail;
        for (std::size_t k = 1; k < c.size(); ++k)
            if (!(c[k] >= c[k - 1])) ++mono_fail;
    }
    return {fails == 0 && mono_fail == 0 && zero_fail == 0,
            "5 x 1000 dual-path draws, worst relative gap " + fmt(worst) + "; " + std::to_string(zero_fail) +
                " nonzero at t=0, " + std::to_string(mono_fail) + " decreases over 100-point sweeps"};
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance suite"};
    std::vector<int> only;
    unsigned threads = 1;
    std::string out_dir = "acceptance_reports";
    app.add_option("--only", only, "run only these criteria (1-11)")->delimiter(',');
    app.add_option("--threads", threads, "worker threads");
    app.add_option("--out-dir", out_dir, "where to write the study reports");
    CLI11_PARSE(app, argc, argv);
    auto want = [&](std::initializer_list<int> ids) {
        if (only.empty()) return true;
        for (int i : ids)
            if (std::find(only.begin(), only.end(), i) != only.end()) return true;
        return false;
    };
    fs::create_directories(out_dir);
    const auto progress = [](const std::string& s) { log(s); };

    std::map<int, Outcome> results;
    const char* names[] = {"",
                           "convergence envelope",
                           "rate exponent",
                           "two-body analytic decay",
                           "a priori envelopes",
                           "kinetic envelopes",
                           "velocity diameter monotone",
                           "momentum conservation",
                           "transport oracle",
                           "flocking decay",
                           "outside-mass check",
                           "bound evaluators"};
    auto report = [&](int id, Outcome o) {
        log("criterion " + std::to_string(id) + (o.pass ? " passed" : " failed"));
        results[id] = std::move(o);
    };
    const auto clock0 = std::chrono::steady_clock::now();

    CsAudit audit;
    if (want({1, 2})) {
        const auto cfg = convergence_config(threads);
        const auto study = run_convergence_study(cfg, progress);
        std::vector<RateFit> fits;
        for (double t : cfg.times) fits.push_back(fit_rate(study.records, t));
        io::write_file((fs::path(out_dir) / "convergence.csv").string(), report::convergence_csv(study));
        io::write_file((fs::path(out_dir) / "rate.json").string(), report::rate_json(study, fits, cfg.K).dump(2) + "\n");
        if (want({1})) report(1, criterion_convergence(study));
        if (want({2})) report(2, criterion_rate(study));
    }
    if (want({3, 6, 7})) report(3, criterion_two_body(audit));
    if (want({4, 6, 7})) report(4, criterion_apriori(audit, threads));
    if (want({5, 6, 7})) report(5, criterion_kinetic(audit, threads));
    std::optional<FlockingReport> flock;
    if (want({6, 7, 9, 10, 11})) {
        const auto cfg = flocking_config(threads);
        flock = run_flocking_study(cfg, progress);
        audit.add_dv(flock->nbody_D_V);
        ++audit.runs;
        io::write_file((fs::path(out_dir) / "flocking.csv").string(), report::flocking_csv(*flock));
        if (want({9})) {
            auto null_cfg = cfg;
            null_cfg.kernel = InteractionKernel(NullForm{}, 1);
            report(9, criterion_flocking(*flock, run_flocking_study(null_cfg, progress)));
        }
        if (want({10})) {
            const auto inv = run_inverse_check(cfg, flock->fit, cfg.inverse.epsilon, progress);
            io::write_file((fs::path(out_dir) / "inverse.csv").string(), report::inverse_csv(inv));
            report(10, criterion_inverse(inv));
        }
    }
    if (want({6, 7})) {
        log("auditing the convergence grid");
        audit_convergence_grid(audit, threads);
        const std::string runs = std::to_string(audit.runs) + " Cucker-Smale runs";
        report(6, {audit.dv_violations == 0, runs + ", " + std::to_string(audit.dv_violations) +
                                                 " increases, worst (D_V(t_k) - D_V(t_k-1)) / D_V(0) " +
                                                 fmt(audit.worst_dv_excess)});
        report(7, {audit.momentum_violations == 0,
                   runs + " (" + std::to_string(audit.runs_at_dt_001) + " at dt = 0.01), worst drift / |V(0)| " +
                       fmt(audit.worst_momentum)});
    }
    if (want({8})) report(8, criterion_transport());
    if (want({11})) {
        FlockingSupportFit fit;
        if (flock) fit = flock->fit;
        else {
            fit.vbar = {0.0};
            fit.xbar = {0.5};
            fit.V = 1.0;
            fit.X = 1.0;
            fit.alpha = 0.7;
        }
        report(11, criterion_bounds(fit));
    }

    std::size_t failed = 0;
    for (const auto& [id, o] : results) {
        std::cout << "criterion " << id << ": " << (o.pass ? "PASS" : "FAIL") << "  " << names[id] << ": " << o.detail
                  << '\n';
        failed += !o.pass;
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - clock0).count();
    std::cout << "summary: " << results.size() - failed << " of " << results.size() << " criteria passed in "
              << fmt(secs) << " s" << std::endl;
    return failed ? 1 : 0;
}
