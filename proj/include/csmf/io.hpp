#pragma once

// Plain-text formats: CSV for tables, JSON lines for per-frame diagnostics.
// Doubles are written with 17 significant digits so files round-trip exactly.

#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "dynamics.hpp"
#include "meanfield.hpp"
#include "transport.hpp"

namespace csmf::io {

inline std::ostream& precise(std::ostream& os) { return os << std::setprecision(17); }

inline std::vector<std::string> split(const std::string& line, char sep = ',') {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, sep)) out.push_back(cell);
    if (!line.empty() && line.back() == sep) out.emplace_back();
    return out;
}

inline double to_double(const std::string& s) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        while (used < s.size() && std::isspace(static_cast<unsigned char>(s[used]))) ++used;
        require(used == s.size(), "bad number '" + s + "'");
        return v;
    } catch (const std::logic_error&) {
        throw InputError("bad number '" + s + "'");
    }
}

inline std::string axis_header(const char* prefix, std::size_t d) {
    std::string h;
    for (std::size_t c = 0; c < d; ++c) h += std::string(",") + prefix + std::to_string(c);
    return h;
}

// t,particle,x0..,v0..
inline void write_trajectory_csv(std::ostream& os, const Trajectory& traj) {
    require(traj.frames() > 0, "write_trajectory_csv: empty trajectory");
    const std::size_t d = traj.initial().dim;
    precise(os) << "t,particle" << axis_header("x", d) << axis_header("v", d) << '\n';
    for (std::size_t f = 0; f < traj.frames(); ++f) {
        const auto& s = traj.states[f];
        for (std::size_t i = 0; i < s.count; ++i) {
            os << traj.times[f] << ',' << i;
            for (double c : s.x(i)) os << ',' << c;
            for (double c : s.v(i)) os << ',' << c;
            os << '\n';
        }
    }
}

inline void write_diagnostics_jsonl(std::ostream& os, const Trajectory& traj) {
    for (std::size_t f = 0; f < traj.frames(); ++f) {
        json j = diagnostics(traj.states[f]).to_json();
        j["t"] = traj.times[f];
        os << j.dump() << '\n';
    }
}

inline void write_ensemble_csv(std::ostream& os, const ParticleEnsemble& e) {
    precise(os) << "particle" << axis_header("x", e.dim) << axis_header("v", e.dim) << '\n';
    for (std::size_t i = 0; i < e.count; ++i) {
        os << i;
        for (double c : e.x(i)) os << ',' << c;
        for (double c : e.v(i)) os << ',' << c;
        os << '\n';
    }
}

// '#' metadata lines, then one row per run
inline void write_marginal_csv(std::ostream& os, const MarginalSampleSet& s) {
    precise(os) << "# N=" << s.N << " n=" << s.n << " t=" << s.t << " K=" << s.rows() << " dim=" << s.dim
                << " pooled=" << (s.pooled ? 1 : 0) << " kernel=" << s.kernel_hash << '\n';
    os << "# seeds=";
    for (std::size_t k = 0; k < s.seeds.size(); ++k) os << (k ? ";" : "") << s.seeds[k];
    os << '\n' << "run";
    for (std::size_t p = 0; p < s.n; ++p) {
        for (std::size_t c = 0; c < s.dim; ++c) os << ",x" << p << '_' << c;
        for (std::size_t c = 0; c < s.dim; ++c) os << ",v" << p << '_' << c;
    }
    os << '\n';
    for (std::size_t k = 0; k < s.rows(); ++k) {
        os << k;
        for (double c : s.row(k)) os << ',' << c;
        os << '\n';
    }
}

// weight,c0,c1,...
inline void write_measure_csv(std::ostream& os, const DiscreteMeasure& m) {
    precise(os) << "weight" << axis_header("c", m.dim) << '\n';
    for (std::size_t i = 0; i < m.size(); ++i) {
        os << m.weights[i];
        for (double c : m.point(i)) os << ',' << c;
        os << '\n';
    }
}

inline DiscreteMeasure read_measure_csv(std::istream& is) {
    std::string line;
    std::vector<double> pts, w;
    std::size_t dim = 0;
    bool header = false;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        auto cells = split(line);
        if (!header) {
            header = true;
            require(cells.size() >= 2 && cells[0] == "weight", "measure csv: header must start with 'weight'");
            dim = cells.size() - 1;
            continue;
        }
        require(cells.size() == dim + 1, "measure csv: row width does not match header");
        w.push_back(to_double(cells[0]));
        for (std::size_t c = 1; c <= dim; ++c) pts.push_back(to_double(cells[c]));
    }
    require(header && !w.empty(), "measure csv: no rows");
    auto m = DiscreteMeasure::weighted(std::move(pts), std::move(w), dim);
    m.validate();
    return m;
}

inline DiscreteMeasure read_measure_file(const std::string& path) {
    std::ifstream f(path);
    require(f.good(), "cannot open " + path);
    return read_measure_csv(f);
}

inline void write_plan_csv(std::ostream& os, const Coupling& c) {
    precise(os) << "i,j,mass\n";
    for (const auto& e : c.plan) os << e.i << ',' << e.j << ',' << e.mass << '\n';
}

inline void write_file(const std::string& path, const std::string& body) {
    std::ofstream f(path, std::ios::binary);
    require(f.good(), "cannot write " + path);
    f << body;
}

} // namespace csmf::io
