// csmf: command-line driver for simulations, mean-field runs, bound evaluation
// and the three experiments. Exit codes: 0 ok, 2 bound breach, 3 input error.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include "csmf/csmf.hpp"

namespace fs = std::filesystem;
using namespace csmf;

namespace {

constexpr int kOk = 0;
constexpr int kBreach = 2;
constexpr int kInput = 3;

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    std::optional<unsigned> threads;
    std::optional<std::string> format;
    bool quiet = false;
};

ExperimentConfig resolve(const Common& c) {
    ExperimentConfig cfg = c.config.empty() ? ExperimentConfig{} : load_config(c.config);
    if (c.seed) cfg.seed = *c.seed;
    if (c.out_dir) cfg.outputs = *c.out_dir;
    if (c.threads) cfg.threads = *c.threads;
    if (c.format) cfg.formats = {*c.format};
    cfg.validate();
    fs::create_directories(cfg.outputs);
    return cfg;
}

bool wants(const ExperimentConfig& cfg, const std::string& f) {
    return std::find(cfg.formats.begin(), cfg.formats.end(), f) != cfg.formats.end();
}

void emit(const ExperimentConfig& cfg, const std::string& name, const std::string& body) {
    const auto path = (fs::path(cfg.outputs) / name).string();
    io::write_file(path, body);
    std::cout << "wrote " << path << '\n';
}

ProgressFn progress_for(const Common& c) {
    if (c.quiet) return {};
    return [](const std::string& s) { std::cerr << "[csmf] " << s << std::endl; };
}

int cmd_simulate(const Common& c) {
    const auto cfg = resolve(c);
    const auto& so = cfg.simulate;
    IntegratorOptions opts;
    opts.frame_stride = so.frame_stride;
    opts.threads = cfg.threads;
    const auto traj = integrate(sample_initial(cfg.initial, so.N, cfg.seed), cfg.kernel, so.t_end, cfg.dt, opts);
    const auto checks = check_apriori_bounds(traj, cfg.kernel);
    if (wants(cfg, "csv")) {
        std::ostringstream os;
        io::write_trajectory_csv(os, traj);
        emit(cfg, "trajectory.csv", os.str());
    }
    if (wants(cfg, "json")) {
        std::ostringstream os;
        io::write_diagnostics_jsonl(os, traj);
        emit(cfg, "diagnostics.jsonl", os.str());
        json j = checks.to_json();
        j["config_hash"] = cfg.hash();
        j["seed"] = cfg.seed;
        emit(cfg, "apriori.json", j.dump(2) + "\n");
    }
    std::cout << "a priori envelope flags: " << checks.total_flags() << '\n';
    return checks.ok() ? kOk : kBreach;
}

int cmd_meanfield(const Common& c) {
    const auto cfg = resolve(c);
    const double t_end = *std::max_element(cfg.times.begin(), cfg.times.end());
    IntegratorOptions opts;
    opts.record_times = cfg.times;
    opts.frame_stride = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(0.1 / cfg.dt)));
    opts.threads = cfg.threads;
    const auto traj = solve_vlasov(cfg.initial, cfg.kernel, cfg.M_ref, t_end, cfg.dt, cfg.seed, opts);
    const auto checks = check_kinetic_bounds(traj, cfg.kernel, cfg.initial);
    if (wants(cfg, "csv")) {
        std::ostringstream os;
        io::write_ensemble_csv(os, traj.final());
        emit(cfg, "cloud.csv", os.str());
    }
    if (wants(cfg, "json")) {
        std::ostringstream os;
        io::write_diagnostics_jsonl(os, traj);
        emit(cfg, "diagnostics.jsonl", os.str());
        json j = checks.to_json();
        j["config_hash"] = cfg.hash();
        j["seed"] = cfg.seed;
        j["M"] = cfg.M_ref;
        emit(cfg, "kinetic.json", j.dump(2) + "\n");
    }
    std::cout << "kinetic envelope flags: " << checks.total_flags() << '\n';
    return checks.ok() ? kOk : kBreach;
}

int cmd_converge(const Common& c) {
    auto cfg = resolve(c);
    const auto study = run_convergence_study(cfg, progress_for(c));
    std::vector<RateFit> fits;
    for (double t : cfg.times) fits.push_back(fit_rate(study.records, t));
    if (wants(cfg, "csv")) emit(cfg, "convergence.csv", report::convergence_csv(study));
    if (wants(cfg, "json")) emit(cfg, "convergence.json", report::convergence_json(study).dump(2) + "\n");
    emit(cfg, "rate.json", report::rate_json(study, fits, cfg.K).dump(2) + "\n");
    for (const auto& f : fits)
        std::cout << "t=" << f.t << " slope=" << f.slope << " r2=" << f.r2 << " (" << f.label << ")\n";
    if (study.refinement && !study.refinement->ok) {
        std::cerr << "error: " << study.refinement->message << '\n';
        return kInput;
    }
    const auto breaches = study.breaches();
    std::cout << "envelope breaches: " << breaches.size() << '\n';
    return breaches.empty() ? kOk : kBreach;
}

int cmd_flocking(const Common& c) {
    const auto cfg = resolve(c);
    const auto rep = run_flocking_study(cfg, progress_for(c));
    if (wants(cfg, "csv")) emit(cfg, "flocking.csv", report::flocking_csv(rep));
    emit(cfg, "flocking.json", rep.to_json().dump(2) + "\n");
    std::cout << rep.label << " (alpha=" << rep.fit.alpha << ", residual=" << rep.fit.residual << ")\n";
    return kOk;
}

int cmd_inverse(const Common& c, std::optional<double> epsilon) {
    const auto cfg = resolve(c);
    const auto rep = run_inverse_check(cfg, epsilon.value_or(cfg.inverse.epsilon), progress_for(c));
    if (wants(cfg, "csv")) emit(cfg, "inverse.csv", report::inverse_csv(rep));
    emit(cfg, "inverse.json", rep.to_json().dump(2) + "\n");
    std::cout << "mode=" << rep.mode << " N_threshold=" << rep.N_threshold << " kendall_tau=" << rep.kendall_tau
              << (rep.ok ? " ok" : " FAILED") << '\n';
    return rep.ok ? kOk : kBreach;
}

int cmd_bounds(const Common& c, std::optional<double> epsilon) {
    const auto cfg = resolve(c);
    const auto support = cfg.initial.support_data();
    json out = {{"config_hash", cfg.hash()}, {"support", support.to_json()}, {"gamma0", cfg.kernel.gamma0()}};
    json evals = json::array();
    std::ostringstream csv;
    io::precise(csv) << "theorem,t,C_t,alternate_C_t,saturated\n";
    auto add = [&](const BoundEvaluation& e) {
        json j = e.to_json();
        if (epsilon) j["N_threshold"] = n_threshold(e.C_t, *epsilon);
        evals.push_back(j);
        csv << to_string(e.theorem) << ',' << e.t << ',' << e.C_t << ','
            << (e.alternate_C_t ? *e.alternate_C_t : std::numeric_limits<double>::quiet_NaN()) << ',' << e.saturated
            << '\n';
    };
    for (double t : cfg.times) {
        add(theorem_bound(cfg.kernel, cfg.initial, t));
        if (!cfg.kernel.is_cucker_smale() && std::isfinite(cfg.kernel.sup_norm()))
            add(lipschitz_bound(cfg.kernel.sup_norm(),
                                lipschitz_on_region(cfg.kernel, support.v_sup * std::exp(2 * cfg.kernel.gamma0() * t),
                                                    2000, cfg.seed),
                                t));
        if (cfg.kernel.gamma0() > 0) add(sublinear_bound(cfg.kernel.gamma0(), support, t));
    }
    out["evaluations"] = evals;
    if (wants(cfg, "csv")) emit(cfg, "bounds.csv", csv.str());
    if (wants(cfg, "json")) emit(cfg, "bounds.json", out.dump(2) + "\n");
    return kOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Generalized Cucker-Smale particle systems, mean-field limits and convergence bounds"};
    app.require_subcommand(1);
    Common common;
    std::optional<double> epsilon;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", common.config, "experiment config (JSON or key = value)");
        sub->add_option("--seed", common.seed, "override the config seed");
        sub->add_option("--out-dir", common.out_dir, "report directory");
        sub->add_option("--threads", common.threads, "worker threads (results do not depend on it)")
            ->check(CLI::PositiveNumber);
        sub->add_option("--format", common.format, "report format")->check(CLI::IsMember({"csv", "json"}));
        sub->add_flag("--quiet", common.quiet, "no progress messages");
    };
    auto* simulate = app.add_subcommand("simulate", "N-body trajectory and a priori envelope check");
    auto* meanfield = app.add_subcommand("meanfield", "mean-field characteristics on an M_ref cloud");
    auto* converge = app.add_subcommand("converge", "convergence study and rate fit");
    auto* flocking = app.add_subcommand("flocking", "flocking decay study");
    auto* inverse = app.add_subcommand("inverse", "outside-mass check against the flocking box");
    auto* bounds = app.add_subcommand("bounds", "evaluate the explicit constants at the config times");
    for (auto* s : {simulate, meanfield, converge, flocking, inverse, bounds}) add_common(s);
    inverse->add_option("--epsilon", epsilon, "mass tolerance (default from config)");
    bounds->add_option("--epsilon", epsilon, "also report N threshold (C/eps)^2");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kInput;
    }

    try {
        if (*simulate) return cmd_simulate(common);
        if (*meanfield) return cmd_meanfield(common);
        if (*converge) return cmd_converge(common);
        if (*flocking) return cmd_flocking(common);
        if (*inverse) return cmd_inverse(common, epsilon);
        if (*bounds) return cmd_bounds(common, epsilon);
    } catch (const InputError& e) {
        std::cerr << "input error: " << e.what() << '\n';
        return kInput;
    } catch (const SizeCapError& e) {
        std::cerr << "input error: " << e.what() << '\n';
        return kInput;
    } catch (const UnsupportedError& e) {
        std::cerr << "input error: " << e.what() << '\n';
        return kInput;
    } catch (const json::exception& e) {
        std::cerr << "input error: " << e.what() << '\n';
        return kInput;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return kOk;
}
