#pragma once

// Experiment drivers: convergence study, rate fit, flocking study, inverse
// (outside-mass) check, and the report files they emit.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "bounds.hpp"
#include "dynamics.hpp"
#include "io.hpp"
#include "kernels.hpp"
#include "meanfield.hpp"
#include "transport.hpp"

namespace csmf {

inline std::uint64_t splitmix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Independent stream seed for (base seed, purpose, index).
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream, std::uint64_t index = 0) {
    return splitmix64(base ^ splitmix64(stream * 0x100000001b3ULL + index));
}

using ProgressFn = std::function<void(const std::string&)>;

struct FlockingOptions {
    std::size_t M = 2000;       // cloud size for the mean-field run
    std::size_t N = 0;          // N-body run for D_V; 0 = largest N in the grid
    double t_end = 4.0;
    std::size_t frames = 41;    // equally spaced stored frames on [0, t_end]
};

struct InverseOptions {
    double t = 2.0;
    double epsilon = 0.2;
    std::vector<std::size_t> N_grid;  // empty = main grid
    std::size_t K = 0;                // 0 = main K
    std::size_t functions = 20;       // random Lipschitz functions besides the clipped distance
    double confidence = 0.95;
};

struct SimulateOptions {
    std::size_t N = 64;
    double t_end = 1.0;
    std::size_t frame_stride = 10;
};

struct ExperimentConfig {
    InteractionKernel kernel = InteractionKernel::cucker_smale(CommunicationRate::constant(1.0), 1);
    InitialDensitySpec initial = InitialDensitySpec::uniform_box({0.0}, {1.0}, {-1.0}, {1.0});
    std::vector<std::size_t> N_grid{16, 32, 64};
    std::vector<double> times{1.0};
    std::size_t K = 200;
    std::size_t M_ref = 1000;
    double dt = 1e-2;
    std::uint64_t seed = 1;
    double p = 2;
    std::size_t n = 1;
    std::string outputs = ".";
    std::vector<std::string> formats{"csv", "json"};
    unsigned threads = 1;
    std::size_t n_proj = 256;
    /// Compare an M_ref cloud with a 2 M_ref cloud after the study.
    bool refinement_check = false;
    SimulateOptions simulate;
    FlockingOptions flocking;
    InverseOptions inverse;

    void validate() const {
        require(!N_grid.empty(), "config: N_grid must be non-empty");
        for (std::size_t k = 0; k < N_grid.size(); ++k) {
            require(N_grid[k] >= 1, "config: N_grid entries must be >= 1");
            if (k) require(N_grid[k] > N_grid[k - 1], "config: N_grid must be strictly increasing");
        }
        require(!times.empty(), "config: times must be non-empty");
        for (double t : times) require(t >= 0 && std::isfinite(t), "config: times must be >= 0 (no backward runs)");
        require(K >= 2, "config: K must be >= 2");
        require(dt > 0 && std::isfinite(dt), "config: dt must be positive");
        require(p >= 1 && std::isfinite(p), "config: p must be >= 1");
        require(n >= 1 && n <= N_grid.front(), "config: need 1 <= n <= min N_grid");
        require(kernel.dim() == initial.dim(), "config: kernel and initial density dimensions differ");
        require(n_proj >= 1, "config: n_proj must be >= 1");
        require(threads >= 1, "config: threads must be >= 1");
        for (const auto& f : formats) require(f == "csv" || f == "json", "config: formats must be csv or json");
        require(flocking.frames >= 3 && flocking.t_end > 0 && flocking.M >= 2, "config: bad flocking options");
        require(inverse.epsilon > 0, "config: inverse.epsilon must be positive");
        require(inverse.confidence > 0 && inverse.confidence < 1, "config: inverse.confidence must be in (0,1)");
        require(inverse.t >= 0, "config: inverse.t must be >= 0");
    }

    /// Checks only the convergence study needs.
    void validate_convergence() const {
        validate();
        require(M_ref >= 4 * N_grid.back(), "config: M_ref must be >= 4 max(N_grid)");
        require(K * n <= M_ref, "config: need K n <= M_ref to subsample the reference clouds");
    }

    json to_json() const {
        return {{"kernel", kernel.to_json()},
                {"initial", initial.to_json()},
                {"N_grid", N_grid},
                {"times", times},
                {"K", K},
                {"M_ref", M_ref},
                {"dt", dt},
                {"seed", seed},
                {"p", p},
                {"n", n},
                {"outputs", outputs},
                {"formats", formats},
                {"threads", threads},
                {"n_proj", n_proj},
                {"refinement_check", refinement_check},
                {"simulate", {{"N", simulate.N}, {"t_end", simulate.t_end}, {"frame_stride", simulate.frame_stride}}},
                {"flocking", {{"M", flocking.M}, {"N", flocking.N}, {"t_end", flocking.t_end}, {"frames", flocking.frames}}},
                {"inverse",
                 {{"t", inverse.t},
                  {"epsilon", inverse.epsilon},
                  {"N_grid", inverse.N_grid},
                  {"K", inverse.K},
                  {"functions", inverse.functions},
                  {"confidence", inverse.confidence}}}};
    }

    /// Digest of everything that affects results (not outputs, formats or threads).
    std::string hash() const {
        json j = to_json();
        j.erase("outputs");
        j.erase("formats");
        j.erase("threads");
        return digest(j);
    }

    static ExperimentConfig from_json(const json& j) {
        require(j.is_object(), "config must be an object");
        static const std::vector<std::string> known{"kernel", "initial", "N_grid", "times",   "K",        "M_ref",
                                                    "dt",     "seed",    "p",      "n",       "outputs",  "formats",
                                                    "threads", "n_proj", "refinement_check", "simulate", "flocking",
                                                    "inverse"};
        for (const auto& [key, _] : j.items())
            require(std::find(known.begin(), known.end(), key) != known.end(), "config: unknown key '" + key + "'");
        ExperimentConfig c;
        try {
            if (j.contains("kernel")) c.kernel = InteractionKernel::from_json(j.at("kernel"));
            if (j.contains("initial")) c.initial = InitialDensitySpec::from_json(j.at("initial"));
            if (j.contains("N_grid")) c.N_grid = j.at("N_grid").get<std::vector<std::size_t>>();
            if (j.contains("times")) c.times = j.at("times").get<std::vector<double>>();
            c.K = j.value("K", c.K);
            c.M_ref = j.value("M_ref", c.M_ref);
            c.dt = j.value("dt", c.dt);
            c.seed = j.value("seed", c.seed);
            c.p = j.value("p", c.p);
            c.n = j.value("n", c.n);
            c.outputs = j.value("outputs", c.outputs);
            if (j.contains("formats")) {
                const auto& f = j.at("formats");
                c.formats = f.is_string() ? std::vector<std::string>{f.get<std::string>()} : f.get<std::vector<std::string>>();
            }
            c.threads = j.value("threads", c.threads);
            c.n_proj = j.value("n_proj", c.n_proj);
            c.refinement_check = j.value("refinement_check", c.refinement_check);
            if (j.contains("simulate")) {
                const auto& s = j.at("simulate");
                c.simulate.N = s.value("N", c.simulate.N);
                c.simulate.t_end = s.value("t_end", c.simulate.t_end);
                c.simulate.frame_stride = s.value("frame_stride", c.simulate.frame_stride);
            }
            if (j.contains("flocking")) {
                const auto& f = j.at("flocking");
                c.flocking.M = f.value("M", c.flocking.M);
                c.flocking.N = f.value("N", c.flocking.N);
                c.flocking.t_end = f.value("t_end", c.flocking.t_end);
                c.flocking.frames = f.value("frames", c.flocking.frames);
            }
            if (j.contains("inverse")) {
                const auto& v = j.at("inverse");
                c.inverse.t = v.value("t", c.inverse.t);
                c.inverse.epsilon = v.value("epsilon", c.inverse.epsilon);
                if (v.contains("N_grid")) c.inverse.N_grid = v.at("N_grid").get<std::vector<std::size_t>>();
                c.inverse.K = v.value("K", c.inverse.K);
                c.inverse.functions = v.value("functions", c.inverse.functions);
                c.inverse.confidence = v.value("confidence", c.inverse.confidence);
            }
        } catch (const json::exception& e) {
            throw InputError(std::string("config: ") + e.what());
        }
        c.validate();
        return c;
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::string strip_comment(const std::string& s) {
    bool quoted = false;
    for (std::size_t k = 0; k < s.size(); ++k) {
        if (s[k] == '"') quoted = !quoted;
        if (s[k] == '#' && !quoted) return s.substr(0, k);
    }
    return s;
}

inline void set_dotted(json& root, const std::string& key, json value) {
    json* node = &root;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = trim(key.substr(start, dot == std::string::npos ? std::string::npos : dot - start));
        require(!part.empty(), "config: empty key component in '" + key + "'");
        if (dot == std::string::npos) {
            (*node)[part] = std::move(value);
            return;
        }
        node = &(*node)[part];
        require(node->is_null() || node->is_object(), "config: '" + key + "' overrides a value with a table");
        start = dot + 1;
    }
}

} // namespace detail

/// TOML-style key/value text: `[section]` headers, dotted keys, JSON-literal values
/// (numbers, "strings", true/false, [arrays]); bare words are taken as strings.
inline json parse_kv(const std::string& text) {
    json root = json::object();
    std::string section;
    std::istringstream in(text);
    std::string raw;
    std::size_t lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        const std::string line = detail::trim(detail::strip_comment(raw));
        if (line.empty()) continue;
        if (line.front() == '[' && line.back() == ']' && line.find('=') == std::string::npos) {
            section = detail::trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        require(eq != std::string::npos, "config line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string val = detail::trim(line.substr(eq + 1));
        require(!key.empty() && !val.empty(), "config line " + std::to_string(lineno) + ": expected key = value");
        json v = json::parse(val, nullptr, false);
        if (v.is_discarded()) v = val;
        detail::set_dotted(root, section.empty() ? key : section + "." + key, std::move(v));
    }
    return root;
}

inline json parse_config_text(const std::string& text) {
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && text[first] == '{') {
        json j = json::parse(text, nullptr, false);
        require(!j.is_discarded(), "config: invalid JSON");
        return j;
    }
    return parse_kv(text);
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream f(path);
    require(f.good(), "cannot open config " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return ExperimentConfig::from_json(parse_config_text(ss.str()));
}

// ---------------------------------------------------------------------------
// convergence study

struct ConvergenceRecord {
    std::size_t N = 0;
    double t = 0;
    double W_hat = 0;
    double W_selfnoise = 0;
    /// sqrt(max(W_hat^2 - W_selfnoise^2, 0))
    double corrected = 0;
    double bound = 0;
    std::uint64_t seed_base = 0;
    std::size_t K = 0;
};

struct RefinementCheck {
    double t = 0;
    double raw = 0;        // W(M cloud, 2M cloud) at K samples each
    double corrected = 0;  // raw with the self-noise floor removed in quadrature
    double limit = 0;      // 25% of the smallest corrected W_hat
    bool ok = true;
    std::string message;

    json to_json() const {
        return {{"t", t}, {"raw", raw}, {"corrected", corrected}, {"limit", limit}, {"ok", ok}, {"message", message}};
    }
};

struct ConvergenceStudy {
    std::vector<ConvergenceRecord> records;
    std::vector<BoundEvaluation> bounds;  // one per config time
    std::string method;                   // "exact" or "sliced"
    std::string config_hash;
    std::uint64_t seed = 0;
    std::uint64_t reference_seed_a = 0, reference_seed_b = 0;
    std::optional<RefinementCheck> refinement;

    /// Records where corrected W_hat exceeds the bound.
    std::vector<const ConvergenceRecord*> breaches() const {
        std::vector<const ConvergenceRecord*> out;
        for (const auto& r : records)
            if (r.corrected > r.bound) out.push_back(&r);
        return out;
    }
};

/// Bound matched to the kernel: the strict Cucker-Smale constant for CS forms,
/// zero for gamma = 0, otherwise the explicit sublinear constant.
inline BoundEvaluation theorem_bound(const InteractionKernel& kernel, const InitialDensitySpec& initial, double t) {
    if (kernel.is_cucker_smale()) return cs_bound(kernel.rate()->sup_norm(), initial.support_data(), t);
    if (std::holds_alternative<NullForm>(kernel.form())) return lipschitz_bound(0.0, 0.0, t);
    return sublinear_bound(kernel.gamma0(), initial.support_data(), t);
}

namespace detail {

/// Rows (x_1, v_1, ..., x_n, v_n) built from cloud particles perm[k n + q].
inline std::vector<double> reference_rows(const ParticleEnsemble& cloud, const std::vector<std::size_t>& perm,
                                          std::size_t K, std::size_t n) {
    const std::size_t d = cloud.dim;
    std::vector<double> rows(K * 2 * d * n);
    for (std::size_t k = 0; k < K; ++k)
        for (std::size_t q = 0; q < n; ++q) {
            const std::size_t i = perm[k * n + q];
            double* dst = rows.data() + (k * n + q) * 2 * d;
            std::copy_n(cloud.x(i).data(), d, dst);
            std::copy_n(cloud.v(i).data(), d, dst + d);
        }
    return rows;
}

/// First `take` entries of a seeded uniform permutation of [0, m).
inline std::vector<std::size_t> subsample(std::size_t m, std::size_t take, std::uint64_t seed) {
    std::vector<std::size_t> idx(m);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    for (std::size_t k = 0; k < take; ++k) {
        std::uniform_int_distribution<std::size_t> pick(k, m - 1);
        std::swap(idx[k], idx[pick(rng)]);
    }
    idx.resize(take);
    return idx;
}

inline double empirical_wp(std::vector<double> a, std::vector<double> b, std::size_t width, const ExperimentConfig& cfg,
                           std::uint64_t slice_seed) {
    const auto mu = DiscreteMeasure::uniform(std::move(a), width);
    const auto nu = DiscreteMeasure::uniform(std::move(b), width);
    if (mu.size() <= kExactCap) return wp_exact(mu, nu, cfg.p).distance;
    return wp_sliced(mu, nu, cfg.p, cfg.n_proj, slice_seed, cfg.threads);
}

inline double quadrature_correct(double w, double floor) { return std::sqrt(std::max(w * w - floor * floor, 0.0)); }

inline IntegratorOptions record_only(const std::vector<double>& times, unsigned threads) {
    IntegratorOptions o;
    o.frame_stride = std::numeric_limits<std::size_t>::max() / 2;
    o.record_times = times;
    o.threads = threads;
    return o;
}

} // namespace detail

inline ConvergenceStudy run_convergence_study(const ExperimentConfig& cfg, const ProgressFn& progress = {}) {
    cfg.validate_convergence();
    auto say = [&](const std::string& s) {
        if (progress) progress(s);
    };
    const std::size_t K = cfg.K, n = cfg.n, d = cfg.initial.dim(), width = 2 * d * n;
    const double t_max = *std::max_element(cfg.times.begin(), cfg.times.end());
    const std::uint64_t slice_seed = derive_seed(cfg.seed, 7);

    ConvergenceStudy study;
    study.config_hash = cfg.hash();
    study.seed = cfg.seed;
    study.method = K <= kExactCap ? "exact" : "sliced";
    study.reference_seed_a = derive_seed(cfg.seed, 1);
    study.reference_seed_b = derive_seed(cfg.seed, 2);

    say("reference clouds (M_ref = " + std::to_string(cfg.M_ref) + ")");
    const auto opts = detail::record_only(cfg.times, cfg.threads);
    const auto ref_a = solve_vlasov(cfg.initial, cfg.kernel, cfg.M_ref, t_max, cfg.dt, study.reference_seed_a, opts);
    const auto ref_b = solve_vlasov(cfg.initial, cfg.kernel, cfg.M_ref, t_max, cfg.dt, study.reference_seed_b, opts);
    const auto perm_a = detail::subsample(cfg.M_ref, K * n, derive_seed(cfg.seed, 11));
    const auto perm_b = detail::subsample(cfg.M_ref, K * n, derive_seed(cfg.seed, 12));

    std::vector<double> floor(cfg.times.size());
    std::vector<std::vector<double>> rows_a(cfg.times.size());
    for (std::size_t q = 0; q < cfg.times.size(); ++q) {
        rows_a[q] = detail::reference_rows(ref_a.at(cfg.times[q]), perm_a, K, n);
        auto rows_b = detail::reference_rows(ref_b.at(cfg.times[q]), perm_b, K, n);
        floor[q] = detail::empirical_wp(rows_a[q], std::move(rows_b), width, cfg, slice_seed);
        study.bounds.push_back(theorem_bound(cfg.kernel, cfg.initial, cfg.times[q]));
    }

    for (std::size_t N : cfg.N_grid) {
        say("N = " + std::to_string(N) + ": " + std::to_string(K) + " runs");
        const std::uint64_t base = derive_seed(cfg.seed, 1000, N);
        std::vector<std::uint64_t> seeds(K);
        for (std::size_t k = 0; k < K; ++k) seeds[k] = base + k;
        const auto sets = marginal_samples_for_seeds(cfg.initial, cfg.kernel, N, n, cfg.times, cfg.dt, seeds, cfg.threads);
        for (std::size_t q = 0; q < cfg.times.size(); ++q) {
            ConvergenceRecord r;
            r.N = N;
            r.t = cfg.times[q];
            r.K = K;
            r.seed_base = base;
            r.W_hat = detail::empirical_wp(sets[q].samples, rows_a[q], width, cfg, slice_seed);
            r.W_selfnoise = floor[q];
            r.corrected = detail::quadrature_correct(r.W_hat, r.W_selfnoise);
            r.bound = study.bounds[q].bound(static_cast<double>(N));
            study.records.push_back(r);
        }
    }
    std::sort(study.records.begin(), study.records.end(),
              [](const auto& a, const auto& b) { return std::tie(a.N, a.t) < std::tie(b.N, b.t); });

    if (cfg.refinement_check) {
        say("refinement check (M_ref vs 2 M_ref)");
        RefinementCheck rc;
        rc.t = t_max;
        const auto fine = solve_vlasov(cfg.initial, cfg.kernel, 2 * cfg.M_ref, t_max, cfg.dt, derive_seed(cfg.seed, 3),
                                       detail::record_only({t_max}, cfg.threads));
        const auto perm_f = detail::subsample(2 * cfg.M_ref, K * n, derive_seed(cfg.seed, 13));
        const std::size_t q = static_cast<std::size_t>(
            std::find(cfg.times.begin(), cfg.times.end(), t_max) - cfg.times.begin());
        rc.raw = detail::empirical_wp(rows_a[q], detail::reference_rows(fine.final(), perm_f, K, n), width, cfg,
                                      slice_seed);
        rc.corrected = detail::quadrature_correct(rc.raw, floor[q]);
        double smallest = std::numeric_limits<double>::infinity();
        for (const auto& r : study.records) smallest = std::min(smallest, r.corrected);
        rc.limit = 0.25 * smallest;
        rc.ok = rc.corrected <= rc.limit;
        if (!rc.ok)
            rc.message = "reference cloud not converged in M: raise M_ref (e.g. to " + std::to_string(4 * cfg.M_ref) + ")";
        study.refinement = rc;
    }
    return study;
}

// ---------------------------------------------------------------------------
// rate fit

struct RateFit {
    double t = 0;
    double slope = std::numeric_limits<double>::quiet_NaN();
    double intercept = std::numeric_limits<double>::quiet_NaN();
    double r2 = std::numeric_limits<double>::quiet_NaN();
    std::vector<std::size_t> used_N;
    std::vector<std::size_t> excluded_N;
    bool inconclusive = true;
    std::string label;

    json to_json() const {
        auto num = [](double x) { return std::isfinite(x) ? json(x) : json(nullptr); };
        return {{"t", t},          {"slope", num(slope)},       {"intercept", num(intercept)},
                {"r2", num(r2)},   {"used_N", used_N},          {"excluded_N", excluded_N},
                {"inconclusive", inconclusive}, {"label", label}};
    }
};

/// Least squares of log(corrected W_hat) on log N over the noise-clear points
/// (W_hat > 2 W_selfnoise) at time t.
inline RateFit fit_rate(const std::vector<ConvergenceRecord>& records, double t) {
    RateFit fit;
    fit.t = t;
    std::vector<double> xs, ys;
    for (const auto& r : records) {
        if (std::abs(r.t - t) > 1e-12 * std::max(1.0, std::abs(t))) continue;
        const double c = detail::quadrature_correct(r.W_hat, r.W_selfnoise);
        if (r.W_hat > 2 * r.W_selfnoise && c > 0 && r.N >= 1) {
            xs.push_back(std::log(static_cast<double>(r.N)));
            ys.push_back(std::log(c));
            fit.used_N.push_back(r.N);
        } else {
            fit.excluded_N.push_back(r.N);
        }
    }
    auto distinct = fit.used_N;
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    if (distinct.size() < 3) {
        fit.label = "inconclusive: " + std::to_string(distinct.size()) +
                    " usable N (need 3 with W_hat > 2 W_selfnoise)";
        return fit;
    }
    const double k = static_cast<double>(xs.size());
    const double xm = std::accumulate(xs.begin(), xs.end(), 0.0) / k;
    const double ym = std::accumulate(ys.begin(), ys.end(), 0.0) / k;
    double sxx = 0, sxy = 0, syy = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxx += (xs[i] - xm) * (xs[i] - xm);
        sxy += (xs[i] - xm) * (ys[i] - ym);
        syy += (ys[i] - ym) * (ys[i] - ym);
    }
    fit.slope = sxy / sxx;
    fit.intercept = ym - fit.slope * xm;
    double sse = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double e = ys[i] - (fit.intercept + fit.slope * xs[i]);
        sse += e * e;
    }
    fit.r2 = syy > 0 ? 1 - sse / syy : 1.0;
    fit.inconclusive = false;
    fit.label = "fit";
    return fit;
}

// ---------------------------------------------------------------------------
// flocking study

struct FlockingReport {
    std::vector<double> times;
    std::vector<double> spread;  // (mean |v - vbar(t)|^2)^{1/2} of the cloud
    std::vector<double> radius;  // max |v - vbar(t)|
    double E = 0, F = 0;         // spread ~ E e^{-F t}
    FlockingSupportFit fit;
    std::size_t M = 0;
    std::size_t N_nbody = 0;
    std::vector<double> nbody_D_V;
    std::uint64_t cloud_seed = 0, nbody_seed = 0;
    bool flocking_detected = false;
    std::string label;
    std::string config_hash;

    json to_json() const {
        return {{"times", times},         {"spread", spread},       {"radius", radius},
                {"E", E},                 {"F", F},                 {"fit", fit.to_json()},
                {"M", M},                 {"N_nbody", N_nbody},     {"nbody_D_V", nbody_D_V},
                {"cloud_seed", cloud_seed}, {"nbody_seed", nbody_seed}, {"flocking_detected", flocking_detected},
                {"label", label},         {"config_hash", config_hash}};
    }
};

/// alpha at or below this counts as no flocking
inline constexpr double kFlockingAlphaMin = 0.01;

inline std::vector<double> linspace(double a, double b, std::size_t count) {
    std::vector<double> out(count);
    for (std::size_t k = 0; k < count; ++k)
        out[k] = count == 1 ? a : a + (b - a) * static_cast<double>(k) / static_cast<double>(count - 1);
    return out;
}

inline FlockingReport run_flocking_study(const ExperimentConfig& cfg, const ProgressFn& progress = {}) {
    cfg.validate();
    const bool is_null = std::holds_alternative<NullForm>(cfg.kernel.form());
    require(cfg.kernel.is_cucker_smale() || is_null, "flocking study needs a Cucker-Smale (or null) kernel");
    const auto& fo = cfg.flocking;
    FlockingReport rep;
    rep.config_hash = cfg.hash();
    rep.M = fo.M;
    rep.cloud_seed = derive_seed(cfg.seed, 21);
    rep.nbody_seed = derive_seed(cfg.seed, 22);
    const auto grid = linspace(0.0, fo.t_end, fo.frames);
    const auto opts = detail::record_only(grid, cfg.threads);

    if (progress) progress("flocking cloud (M = " + std::to_string(fo.M) + ")");
    const auto traj = solve_vlasov(cfg.initial, cfg.kernel, fo.M, fo.t_end, cfg.dt, rep.cloud_seed, opts);
    const std::size_t d = cfg.initial.dim();
    for (std::size_t f = 0; f < traj.frames(); ++f) {
        const auto& s = traj.states[f];
        const auto vbar = detail::mean_rows(s.velocities, s.count, d);
        double sq = 0;
        for (std::size_t i = 0; i < s.count; ++i)
            for (std::size_t k = 0; k < d; ++k) sq += (s.velocities[i * d + k] - vbar[k]) * (s.velocities[i * d + k] - vbar[k]);
        rep.times.push_back(traj.times[f]);
        rep.spread.push_back(std::sqrt(sq / static_cast<double>(s.count)));
        rep.radius.push_back(detail::max_radius(s.velocities, s.count, d, vbar));
    }
    const auto ef = detail::fit_log_linear(rep.times, rep.spread);
    rep.E = ef.used ? std::exp(ef.log_amplitude) : 0.0;
    rep.F = ef.used >= 2 ? ef.rate : 0.0;
    rep.fit = fit_flocking_support(traj);

    rep.N_nbody = fo.N ? fo.N : cfg.N_grid.back();
    if (progress) progress("flocking N-body run (N = " + std::to_string(rep.N_nbody) + ")");
    const auto nb = integrate(sample_initial(cfg.initial, rep.N_nbody, rep.nbody_seed), cfg.kernel, fo.t_end, cfg.dt, opts);
    for (const auto& s : nb.states) rep.nbody_D_V.push_back(diagnostics(s).velocity_diameter);

    const bool flat = *std::max_element(rep.radius.begin(), rep.radius.end()) <= 1e-12;
    if (flat) {
        rep.flocking_detected = true;
        rep.label = "flocked (velocity spread identically zero)";
    } else if (rep.fit.alpha > kFlockingAlphaMin) {
        rep.flocking_detected = true;
        rep.label = "flocking detected";
    } else {
        rep.label = "no flocking detected";
    }
    return rep;
}

// ---------------------------------------------------------------------------
// inverse (outside-mass) check

/// Product of balls B(cx, rx) x B(cv, rv) in phase space.
struct PhaseBox {
    std::vector<double> cx, cv;
    double rx = 0, rv = 0;

    double distance(std::span<const double> x, std::span<const double> v) const {
        double sx = 0, sv = 0;
        for (std::size_t k = 0; k < cx.size(); ++k) {
            sx += (x[k] - cx[k]) * (x[k] - cx[k]);
            sv += (v[k] - cv[k]) * (v[k] - cv[k]);
        }
        const double ex = std::max(std::sqrt(sx) - rx, 0.0), ev = std::max(std::sqrt(sv) - rv, 0.0);
        return std::sqrt(ex * ex + ev * ev);
    }
};

inline PhaseBox flocking_box(const FlockingSupportFit& fit, double t) {
    PhaseBox b;
    b.cx.resize(fit.xbar.size());
    for (std::size_t k = 0; k < fit.xbar.size(); ++k) b.cx[k] = fit.xbar[k] + t * fit.vbar[k];
    b.cv = fit.vbar;
    b.rx = fit.X;
    b.rv = fit.covering_velocity_radius(t);
    return b;
}

/// Lipschitz-1 test function with values in [0, 1] that vanishes on the box:
/// min(1, max(0, min_k <u_k, z> - h_k)), h_k the support function of the box at u_k.
/// An empty piece list stands for the distance to the box clipped at 1.
struct TestFunction {
    std::vector<std::vector<double>> u;  // each of length 2d, |u| <= 1
    std::vector<double> h;

    double operator()(const PhaseBox& box, std::span<const double> x, std::span<const double> v) const {
        if (u.empty()) return std::min(1.0, box.distance(x, v));
        const std::size_t d = x.size();
        double m = std::numeric_limits<double>::infinity();
        for (std::size_t p = 0; p < u.size(); ++p) {
            double s = -h[p];
            for (std::size_t k = 0; k < d; ++k) s += u[p][k] * x[k] + u[p][d + k] * v[k];
            m = std::min(m, s);
        }
        return std::clamp(m, 0.0, 1.0);
    }
};

inline std::vector<TestFunction> test_function_bank(const PhaseBox& box, std::size_t count, std::uint64_t seed) {
    const std::size_t d = box.cx.size();
    std::vector<TestFunction> bank(1);  // clipped distance
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    std::uniform_real_distribution<double> scale(0.5, 1.0);
    for (std::size_t f = 0; f < count; ++f) {
        TestFunction tf;
        const std::size_t pieces = 1 + f % 3;
        for (std::size_t p = 0; p < pieces; ++p) {
            std::vector<double> u(2 * d);
            double s = 0;
            do {
                s = 0;
                for (auto& c : u) {
                    c = g(rng);
                    s += c * c;
                }
            } while (s == 0);
            const double len = scale(rng) / std::sqrt(s);
            for (auto& c : u) c *= len;
            double ux = 0, uv = 0, h = 0;
            for (std::size_t k = 0; k < d; ++k) {
                ux += u[k] * u[k];
                uv += u[d + k] * u[d + k];
                h += u[k] * box.cx[k] + u[d + k] * box.cv[k];
            }
            h += box.rx * std::sqrt(ux) + box.rv * std::sqrt(uv);
            tf.u.push_back(std::move(u));
            tf.h.push_back(h);
        }
        bank.push_back(std::move(tf));
    }
    return bank;
}

/// Kendall tau-b between two sequences.
inline double kendall_tau(const std::vector<double>& a, const std::vector<double>& b) {
    require(a.size() == b.size(), "kendall_tau: length mismatch");
    double conc = 0, disc = 0, ta = 0, tb = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = i + 1; j < a.size(); ++j) {
            const double da = a[i] - a[j], db = b[i] - b[j];
            if (da == 0 && db == 0) continue;
            if (da == 0) ++ta;
            else if (db == 0) ++tb;
            else if ((da > 0) == (db > 0)) ++conc;
            else ++disc;
        }
    const double denom = std::sqrt((conc + disc + ta) * (conc + disc + tb));
    return denom > 0 ? (conc - disc) / denom : 0.0;
}

struct InverseRow {
    std::size_t N = 0;
    double max_estimate = 0;
    std::vector<double> estimates;  // one per test function
    double band = 0;
    bool at_or_above_threshold = false;
    bool control = false;
    bool ok = true;
    std::uint64_t seed_base = 0;
};

struct InverseReport {
    double t = 0, epsilon = 0;
    BoundEvaluation bound;
    double N_threshold = 0;  // ceil((C/eps)^2), +inf if C saturated
    double N_threshold_alternate = 0;
    PhaseBox box;
    FlockingSupportFit fit;
    std::vector<InverseRow> rows;
    std::size_t K = 0;
    std::size_t functions = 0;
    bool threshold_in_grid = false;
    double kendall_tau = 0;  // between N and the decrease of the max estimate
    bool trend_ok = false;
    bool ok = false;
    std::string mode;  // "threshold" or "trend"
    std::string config_hash;
    std::uint64_t bank_seed = 0;

    json to_json() const {
        json rj = json::array();
        for (const auto& r : rows)
            rj.push_back({{"N", r.N},
                          {"max_estimate", r.max_estimate},
                          {"estimates", r.estimates},
                          {"band", r.band},
                          {"at_or_above_threshold", r.at_or_above_threshold},
                          {"control", r.control},
                          {"ok", r.ok},
                          {"seed_base", r.seed_base}});
        auto num = [](double x) { return std::isfinite(x) ? json(x) : json("inf"); };
        return {{"t", t},
                {"epsilon", epsilon},
                {"bound", bound.to_json()},
                {"N_threshold", num(N_threshold)},
                {"N_threshold_alternate", num(N_threshold_alternate)},
                {"box", {{"cx", box.cx}, {"cv", box.cv}, {"rx", box.rx}, {"rv", box.rv}}},
                {"fit", fit.to_json()},
                {"rows", rj},
                {"K", K},
                {"functions", functions},
                {"threshold_in_grid", threshold_in_grid},
                {"kendall_tau", kendall_tau},
                {"trend_ok", trend_ok},
                {"ok", ok},
                {"mode", mode},
                {"config_hash", config_hash},
                {"bank_seed", bank_seed}};
    }
};

inline double ceil_threshold(double n) {
    return std::isfinite(n) ? std::ceil(n) : std::numeric_limits<double>::infinity();
}

inline InverseReport run_inverse_check(const ExperimentConfig& cfg, const FlockingSupportFit& fit, double epsilon,
                                       const ProgressFn& progress = {}) {
    cfg.validate();
    require(epsilon > 0, "inverse check: epsilon must be positive");
    require(fit.V > 0 || fit.X > 0 || !fit.vbar.empty(), "inverse check: needs a flocking fit");
    require(fit.vbar.size() == cfg.initial.dim(), "inverse check: fit dimension does not match the config");
    const auto& io = cfg.inverse;
    InverseReport rep;
    rep.t = io.t;
    rep.epsilon = epsilon;
    rep.fit = fit;
    rep.config_hash = cfg.hash();
    rep.K = io.K ? io.K : cfg.K;
    rep.functions = io.functions;
    rep.bound = flocking_bound(cfg.kernel.gamma0(), fit, io.t);
    rep.N_threshold = ceil_threshold(n_threshold(rep.bound.C_t, epsilon));
    rep.N_threshold_alternate = ceil_threshold(n_threshold(*rep.bound.alternate_C_t, epsilon));
    rep.box = flocking_box(fit, io.t);
    rep.bank_seed = derive_seed(cfg.seed, 31);
    const auto bank = test_function_bank(rep.box, io.functions, rep.bank_seed);

    auto grid = io.N_grid.empty() ? cfg.N_grid : io.N_grid;
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
    // Hoeffding with a union bound over the bank; every function takes values in [0, 1]
    const double band = std::sqrt(std::log(2.0 * static_cast<double>(bank.size()) / (1 - io.confidence)) /
                                  (2.0 * static_cast<double>(rep.K)));

    std::optional<std::size_t> control;
    for (std::size_t N : grid)
        if (static_cast<double>(N) < rep.N_threshold) control = N;

    const std::size_t d = cfg.initial.dim();
    for (std::size_t N : grid) {
        if (progress) progress("inverse N = " + std::to_string(N));
        InverseRow row;
        row.N = N;
        row.band = band;
        row.seed_base = derive_seed(cfg.seed, 2000, N);
        row.at_or_above_threshold = static_cast<double>(N) >= rep.N_threshold;
        row.control = control && *control == N;
        const auto set = marginal_samples(cfg.initial, cfg.kernel, N, 1, io.t, rep.K, cfg.dt, row.seed_base, cfg.threads);
        for (const auto& phi : bank) {
            double acc = 0;
            for (std::size_t k = 0; k < set.rows(); ++k) {
                const auto r = set.row(k);
                acc += phi(rep.box, r.subspan(0, d), r.subspan(d, d));
            }
            row.estimates.push_back(acc / static_cast<double>(set.rows()));
        }
        row.max_estimate = *std::max_element(row.estimates.begin(), row.estimates.end());
        row.ok = !row.at_or_above_threshold || row.max_estimate <= epsilon + band;
        rep.rows.push_back(std::move(row));
    }

    std::vector<double> ns, drops;
    for (const auto& r : rep.rows) {
        ns.push_back(static_cast<double>(r.N));
        drops.push_back(-r.max_estimate);
    }
    rep.kendall_tau = kendall_tau(ns, drops);
    rep.trend_ok = rep.rows.size() >= 4 && rep.kendall_tau > 0;
    rep.threshold_in_grid = !grid.empty() && static_cast<double>(grid.back()) >= rep.N_threshold;
    if (rep.threshold_in_grid) {
        rep.mode = "threshold";
        rep.ok = std::all_of(rep.rows.begin(), rep.rows.end(), [](const auto& r) { return r.ok; });
    } else {
        rep.mode = "trend";
        rep.ok = rep.trend_ok;
    }
    return rep;
}

inline InverseReport run_inverse_check(const ExperimentConfig& cfg, double epsilon, const ProgressFn& progress = {}) {
    const auto flock = run_flocking_study(cfg, progress);
    return run_inverse_check(cfg, flock.fit, epsilon, progress);
}

// ---------------------------------------------------------------------------
// reports

namespace report {

inline std::string convergence_csv(const ConvergenceStudy& s) {
    std::ostringstream os;
    io::precise(os) << "# config_hash=" << s.config_hash << " seed=" << s.seed << " reference_seeds=" << s.reference_seed_a
                    << ';' << s.reference_seed_b << " method=" << s.method << '\n';
    os << "N,t,W_hat,W_selfnoise,corrected,bound,K,seed_base\n";
    for (const auto& r : s.records)
        os << r.N << ',' << r.t << ',' << r.W_hat << ',' << r.W_selfnoise << ',' << r.corrected << ',' << r.bound << ','
           << r.K << ',' << r.seed_base << '\n';
    return os.str();
}

inline json convergence_json(const ConvergenceStudy& s) {
    json recs = json::array();
    for (const auto& r : s.records)
        recs.push_back({{"N", r.N},
                        {"t", r.t},
                        {"W_hat", r.W_hat},
                        {"W_selfnoise", r.W_selfnoise},
                        {"corrected", r.corrected},
                        {"bound", r.bound},
                        {"K", r.K},
                        {"seed_base", r.seed_base}});
    json b = json::array();
    for (const auto& e : s.bounds) b.push_back(e.to_json());
    json j = {{"config_hash", s.config_hash}, {"seed", s.seed},   {"reference_seeds", {s.reference_seed_a, s.reference_seed_b}},
              {"method", s.method},           {"records", recs},  {"bounds", b},
              {"breaches", s.breaches().size()}};
    if (s.refinement) j["refinement"] = s.refinement->to_json();
    return j;
}

inline json rate_json(const ConvergenceStudy& s, const std::vector<RateFit>& fits, std::size_t K) {
    json f = json::array();
    for (const auto& r : fits) f.push_back(r.to_json());
    return {{"config_hash", s.config_hash},
            {"seed", s.seed},
            {"K", K},
            {"K_sufficient_for_rate_fit", K >= 100},
            {"expected_slope", -0.5},
            {"fits", f}};
}

inline std::string flocking_csv(const FlockingReport& r) {
    std::ostringstream os;
    io::precise(os) << "# config_hash=" << r.config_hash << " cloud_seed=" << r.cloud_seed
                    << " nbody_seed=" << r.nbody_seed << '\n';
    os << "t,spread,radius,fit_radius,nbody_D_V\n";
    for (std::size_t f = 0; f < r.times.size(); ++f)
        os << r.times[f] << ',' << r.spread[f] << ',' << r.radius[f] << ','
           << r.fit.V * std::exp(-r.fit.alpha * r.times[f]) << ','
           << (f < r.nbody_D_V.size() ? r.nbody_D_V[f] : std::numeric_limits<double>::quiet_NaN()) << '\n';
    return os.str();
}

inline std::string inverse_csv(const InverseReport& r) {
    std::ostringstream os;
    io::precise(os) << "# config_hash=" << r.config_hash << " bank_seed=" << r.bank_seed << " epsilon=" << r.epsilon
                    << " t=" << r.t << '\n';
    os << "N,max_estimate,band,at_or_above_threshold,control,ok,seed_base\n";
    for (const auto& row : r.rows)
        os << row.N << ',' << row.max_estimate << ',' << row.band << ',' << row.at_or_above_threshold << ','
           << row.control << ',' << row.ok << ',' << row.seed_base << '\n';
    return os.str();
}

} // namespace report

} // namespace csmf
