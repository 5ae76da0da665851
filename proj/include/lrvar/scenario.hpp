#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "lrvar/calibration.hpp"
#include "lrvar/common.hpp"
#include "lrvar/csv.hpp"
#include "lrvar/detection.hpp"
#include "lrvar/parallel.hpp"
#include "lrvar/rng.hpp"
#include "lrvar/var_model.hpp"

namespace lrvar {

// ---------------------------------------------------------------------------
// key = value configuration files with [section] headers
// ---------------------------------------------------------------------------

class KeyValueConfig {
  public:
    static KeyValueConfig parse_file(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw IoFailure("cannot open config: " + path);
        std::stringstream ss;
        ss << f.rdbuf();
        return parse(ss.str());
    }

    static KeyValueConfig parse(const std::string& text) {
        KeyValueConfig cfg;
        std::string section;
        std::stringstream ss(text);
        std::string line;
        int lineno = 0;
        while (std::getline(ss, line)) {
            ++lineno;
            const std::string trimmed = trim(line);
            if (trimmed.empty() || trimmed[0] == '#') continue;
            if (trimmed.front() == '[' && trimmed.back() == ']') {
                section = trim(trimmed.substr(1, trimmed.size() - 2));
                continue;
            }
            const auto eq = trimmed.find('=');
            if (eq == std::string::npos)
                throw ConfigInvalid("config line " + std::to_string(lineno) + " is not key = value");
            const std::string key = trim(trimmed.substr(0, eq));
            const std::string value = trim(trimmed.substr(eq + 1));
            if (key.empty()) throw ConfigInvalid("empty key at config line " + std::to_string(lineno));
            cfg.values_[section + "." + key] = value;
        }
        return cfg;
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string get_string(const std::string& key, const std::string& fallback) const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }

    double get_double(const std::string& key, double fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        try {
            return std::stod(it->second);
        } catch (...) {
            throw ConfigInvalid("expected a number for " + key + ", got '" + it->second + "'");
        }
    }

    std::int64_t get_int(const std::string& key, std::int64_t fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        try {
            return std::stoll(it->second);
        } catch (...) {
            throw ConfigInvalid("expected an integer for " + key + ", got '" + it->second + "'");
        }
    }

    bool get_bool(const std::string& key, bool fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        if (it->second == "true" || it->second == "1") return true;
        if (it->second == "false" || it->second == "0") return false;
        throw ConfigInvalid("expected true/false for " + key);
    }

    std::vector<double> get_list(const std::string& key, std::vector<double> fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        std::vector<double> out;
        std::stringstream ss(it->second);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            const std::string v = trim(cell);
            if (v.empty()) continue;
            out.push_back(std::stod(v));
        }
        if (out.empty()) throw ConfigInvalid("empty list for " + key);
        return out;
    }

    static std::string trim(const std::string& s) {
        std::size_t a = 0, b = s.size();
        while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
        while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
        return s.substr(a, b - a);
    }

  private:
    std::map<std::string, std::string> values_;
};

// ---------------------------------------------------------------------------
// scenario description
// ---------------------------------------------------------------------------

struct ScenarioConfig {
    std::string id = "scenario";
    std::string varied_param = "none";
    double param_value = 0.0;

    int p = 10;
    int horizon = 400;
    int rank = 3;
    double gamma1 = 0.9;
    double gamma2 = 0.9;
    std::optional<int> tau = 200;
    std::vector<double> jump_fro_grid = {0.0};
    double alpha = 0.05;
    GridKind grid_kind = GridKind::Single;
    double h = 0.125;
    double delta = 0.8;
    int quantile_samples = 150;
    int replicates = 50;
    std::uint64_t master_seed = 42;
    std::vector<double> constant_grid = default_constant_grid();
    SolverConfig solver;
    bool warm_start_quantiles = false;

    void validate() const {
        if (p < 1) throw ConfigInvalid("p must be positive");
        if (horizon < 4) throw ConfigInvalid("T must be at least 4");
        if (rank < 1 || rank > p) throw ConfigInvalid("R must lie in {1..p}");
        if (!(gamma1 > 0.0 && gamma1 < 1.0) || !(gamma2 > 0.0 && gamma2 < 1.0))
            throw ConfigInvalid("gamma must lie in (0,1)");
        if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigInvalid("alpha must lie in (0,1)");
        if (jump_fro_grid.empty()) throw ConfigInvalid("jump grid is empty");
        for (double j : jump_fro_grid)
            if (j < 0.0) throw ConfigInvalid("jump_fro must be nonnegative");
        if (replicates < 1) throw ConfigInvalid("replicates must be >= 1");
        if (!(h > static_cast<double>(p) / horizon && h < 0.5))
            throw ConfigInvalid("h must lie in (p/T, 1/2)");
        const int window = static_cast<int>(std::floor(h * horizon));
        if (horizon < 2 * window + 2) throw ConfigInvalid("T must be at least 2*ceil(T*h)+2");
        const bool has_positive_jump =
            std::any_of(jump_fro_grid.begin(), jump_fro_grid.end(), [](double j) { return j > 0.0; });
        if (!tau && has_positive_jump)
            throw ConfigInvalid("a positive jump requires a change-point location tau");
        if (tau && (*tau < 1 || *tau > horizon - 1))
            throw ConfigInvalid("tau must lie in {1..T-1}");
        if (grid_kind == GridKind::Single) {
            if (!tau) throw ConfigInvalid("single-point grid requires tau");
            if (*tau < window || *tau > horizon - window)
                throw ConfigInvalid("tau must lie inside the stationarity window [Th, T-Th]");
        }
        if (grid_kind == GridKind::Full)
            throw ConfigInvalid("the pipeline requires a window-restricted grid; use single, dyadic or window");
        solver.validate();
        CalibrationConfig calib{h, delta, constant_grid, std::max(2, quantile_samples), alpha};
        calib.validate(horizon, p);
    }

    CandidateGrid make_grid() const {
        const int window = static_cast<int>(std::floor(h * horizon));
        switch (grid_kind) {
            case GridKind::Single:
                return single_point_grid(*tau, horizon);
            case GridKind::Dyadic:
                return restrict_grid(dyadic_grid(horizon), window, horizon - window);
            case GridKind::Full:
            default: {
                std::vector<int> pts;
                for (int t = window; t <= horizon - window; ++t) pts.push_back(t);
                CandidateGrid grid = custom_grid(std::move(pts), horizon);
                grid.window_lo = window;
                grid.window_hi = horizon - window;
                return grid;
            }
        }
    }

    CalibrationConfig calibration() const {
        return CalibrationConfig{h, delta, constant_grid, quantile_samples, alpha};
    }
};

inline GridKind parse_grid_kind(const std::string& s) {
    if (s == "single") return GridKind::Single;
    if (s == "dyadic") return GridKind::Dyadic;
    if (s == "window") return GridKind::Custom;  // every point in the window
    if (s == "full") return GridKind::Full;
    throw ConfigInvalid("unknown grid kind '" + s + "'");
}

inline ScenarioConfig scenario_from_config(const KeyValueConfig& cfg) {
    ScenarioConfig sc;
    sc.id = cfg.get_string("scenario.id", sc.id);
    sc.p = static_cast<int>(cfg.get_int("scenario.p", sc.p));
    sc.horizon = static_cast<int>(cfg.get_int("scenario.T", sc.horizon));
    sc.rank = static_cast<int>(cfg.get_int("scenario.R", sc.rank));
    sc.gamma1 = cfg.get_double("scenario.gamma1", sc.gamma1);
    sc.gamma2 = cfg.get_double("scenario.gamma2", sc.gamma2);
    const std::string tau_str = cfg.get_string("scenario.tau", "200");
    if (tau_str == "none" || tau_str == "null")
        sc.tau = std::nullopt;
    else
        sc.tau = std::stoi(tau_str);
    sc.jump_fro_grid = cfg.get_list("scenario.jump_grid", sc.jump_fro_grid);
    if (cfg.has("scenario.jump_fro")) sc.jump_fro_grid = {cfg.get_double("scenario.jump_fro", 0.0)};
    sc.alpha = cfg.get_double("scenario.alpha", sc.alpha);
    sc.grid_kind = parse_grid_kind(cfg.get_string("scenario.grid", "single"));
    sc.replicates = static_cast<int>(cfg.get_int("scenario.replicates", sc.replicates));
    sc.master_seed = static_cast<std::uint64_t>(cfg.get_int("scenario.seed", 42));

    sc.h = cfg.get_double("calibration.h", sc.h);
    sc.delta = cfg.get_double("calibration.delta", sc.delta);
    sc.quantile_samples = static_cast<int>(cfg.get_int("calibration.S", sc.quantile_samples));
    sc.constant_grid = cfg.get_list("calibration.constant_grid", sc.constant_grid);

    sc.solver.max_iterations = static_cast<int>(cfg.get_int("solver.max_iterations", sc.solver.max_iterations));
    sc.solver.tolerance = cfg.get_double("solver.tolerance", sc.solver.tolerance);
    sc.solver.kkt_tolerance = cfg.get_double("solver.kkt_tolerance", sc.solver.kkt_tolerance);
    sc.solver.restart = cfg.get_bool("solver.restart", sc.solver.restart);
    const std::string rule = cfg.get_string("solver.step_rule", "fixed");
    sc.solver.step_rule = (rule == "backtracking") ? StepRule::Backtracking : StepRule::FixedLipschitz;
    sc.warm_start_quantiles = cfg.get_bool("solver.warm_start_quantiles", sc.warm_start_quantiles);
    return sc;
}

// ---------------------------------------------------------------------------
// power aggregation
// ---------------------------------------------------------------------------

struct WilsonInterval {
    double lo = 0.0;
    double hi = 1.0;
};

/// 95% score interval for a binomial proportion.
inline WilsonInterval wilson_interval(int successes, int trials, double z = 1.959963984540054) {
    if (trials < 1) throw ConfigInvalid("wilson interval needs at least one trial");
    const double n = trials;
    const double phat = static_cast<double>(successes) / n;
    const double z2 = z * z;
    const double denom = 1.0 + z2 / n;
    const double center = (phat + z2 / (2.0 * n)) / denom;
    const double half = z * std::sqrt(phat * (1.0 - phat) / n + z2 / (4.0 * n * n)) / denom;
    return {std::max(0.0, center - half), std::min(1.0, center + half)};
}

struct PowerRow {
    std::string scenario_id;
    std::string varied_param;
    double param_value = 0.0;
    double jump_fro = 0.0;
    int rejections = 0;
    int replicates = 0;
    double power = 0.0;
    WilsonInterval wilson;
};

/// Runs N seeded replicates of simulate -> detect per jump value and counts
/// rejections. Replicates are independent and may run concurrently; results
/// land in per-replicate slots so output is scheduling-independent.
inline std::vector<PowerRow> run_scenario(const ScenarioConfig& cfg, int threads = 1) {
    cfg.validate();
    const NoiseModel noise = NoiseModel::identity(cfg.p);
    const CandidateGrid grid = cfg.make_grid();
    const CalibrationConfig calib = cfg.calibration();

    std::vector<PowerRow> rows;
    for (std::size_t ji = 0; ji < cfg.jump_fro_grid.size(); ++ji) {
        const double jump = cfg.jump_fro_grid[ji];
        std::vector<char> rejected(static_cast<std::size_t>(cfg.replicates), 0);
        parallel_for(static_cast<std::size_t>(cfg.replicates), threads, [&](std::size_t r) {
            const std::uint64_t replicate_seed =
                derive_seed(cfg.master_seed, ji * 1000003ULL + r);
            Rng rng(replicate_seed);
            const TransitionMatrix base =
                random_low_rank_transition(cfg.p, cfg.rank, cfg.gamma1, rng);
            ChangeSpec spec = (jump == 0.0)
                                  ? ChangeSpec::null_model(base)
                                  : [&] {
                                        auto pair = make_change_pair(base, jump);
                                        return ChangeSpec(pair.first, pair.second, cfg.tau);
                                    }();
            const Trajectory traj = simulate(spec, noise, cfg.horizon, rng);
            const DetectResult det =
                detect(traj, noise, cfg.gamma1, cfg.gamma2, grid, calib, cfg.solver,
                       derive_seed(replicate_seed, 0x51), 1, cfg.warm_start_quantiles);
            rejected[r] = det.decision ? 1 : 0;
        });
        PowerRow row;
        row.scenario_id = cfg.id;
        row.varied_param = cfg.varied_param;
        row.param_value = cfg.param_value;
        row.jump_fro = jump;
        row.replicates = cfg.replicates;
        row.rejections = static_cast<int>(std::count(rejected.begin(), rejected.end(), 1));
        row.power = static_cast<double>(row.rejections) / cfg.replicates;
        row.wilson = wilson_interval(row.rejections, row.replicates);
        rows.push_back(std::move(row));
    }
    return rows;
}

inline void emit_power_csv(const std::vector<PowerRow>& rows, const std::string& path) {
    if (rows.empty()) throw ConfigInvalid("no power rows to write");
    std::ofstream f(path);
    if (!f) throw IoFailure("cannot open for writing: " + path);
    f << "scenario,varied_param,param_value,jump_fro,rejections,replicates,power,wilson_lo,wilson_hi\n";
    for (const auto& r : rows) {
        f << r.scenario_id << ',' << r.varied_param << ',' << format_double(r.param_value) << ','
          << format_double(r.jump_fro) << ',' << r.rejections << ',' << r.replicates << ','
          << format_double(r.power) << ',' << format_double(r.wilson.lo) << ','
          << format_double(r.wilson.hi) << '\n';
    }
    if (!f) throw IoFailure("write failed: " + path);
}

// ---------------------------------------------------------------------------
// figure presets (desk-scale)
// ---------------------------------------------------------------------------

namespace detail {

inline ScenarioConfig desk_base() {
    ScenarioConfig sc;
    sc.p = 10;
    sc.horizon = 400;
    sc.rank = 3;
    sc.gamma1 = 0.9;
    sc.gamma2 = 0.9;
    sc.tau = 200;
    sc.alpha = 0.05;
    sc.grid_kind = GridKind::Single;
    sc.h = 0.125;
    sc.delta = 0.8;
    sc.quantile_samples = 150;
    sc.replicates = 50;
    return sc;
}

}  // namespace detail

/// Desk-scale counterparts of the five study figures: power against the jump
/// norm while varying (1) the dimension, (2) known vs dyadic-grid location,
/// (3) the horizon, (4) the change-point location, (5) the rank.
inline std::vector<ScenarioConfig> preset_figures() {
    std::vector<ScenarioConfig> out;

    // fig1: dimension
    for (int p : {10, 20, 40}) {
        ScenarioConfig sc = detail::desk_base();
        sc.id = "fig1_p" + std::to_string(p);
        sc.varied_param = "p";
        sc.param_value = p;
        sc.p = p;
        sc.h = std::min(5.0 * p / sc.horizon, 0.25);
        sc.jump_fro_grid = {0.0, 0.6, 1.0, 1.5, 2.2};
        out.push_back(sc);
    }

    // fig2: known location vs dyadic grid (0 = single, 1 = dyadic)
    for (int dyadic : {0, 1}) {
        ScenarioConfig sc = detail::desk_base();
        sc.id = dyadic ? "fig2_dyadic" : "fig2_single";
        sc.varied_param = "grid";
        sc.param_value = dyadic;
        sc.grid_kind = dyadic ? GridKind::Dyadic : GridKind::Single;
        sc.jump_fro_grid = {0.5, 0.9, 1.4, 2.0};
        out.push_back(sc);
    }

    // fig3: horizon
    for (int horizon : {200, 400, 800}) {
        ScenarioConfig sc = detail::desk_base();
        sc.id = "fig3_T" + std::to_string(horizon);
        sc.varied_param = "T";
        sc.param_value = horizon;
        sc.horizon = horizon;
        sc.tau = horizon / 2;
        sc.h = std::min(5.0 * sc.p / horizon, 0.25);
        sc.jump_fro_grid = {0.0, 0.4, 0.7, 1.1, 1.8};
        out.push_back(sc);
    }

    // fig4: change-point location
    for (double frac : {0.1, 0.3, 0.5, 0.7, 0.9}) {
        ScenarioConfig sc = detail::desk_base();
        sc.id = "fig4_tau" + std::to_string(static_cast<int>(frac * 100));
        sc.varied_param = "tau_over_T";
        sc.param_value = frac;
        sc.tau = static_cast<int>(frac * sc.horizon);
        sc.h = 0.075;
        sc.jump_fro_grid = {1.0, 1.6, 2.2};
        out.push_back(sc);
    }

    // fig5: rank
    for (int rank : {2, 4, 8}) {
        ScenarioConfig sc = detail::desk_base();
        sc.id = "fig5_R" + std::to_string(rank);
        sc.varied_param = "R";
        sc.param_value = rank;
        sc.rank = rank;
        sc.jump_fro_grid = {0.0, 0.5, 0.9, 1.3, 1.8};
        out.push_back(sc);
    }

    for (auto& sc : out) sc.validate();
    return out;
}

}  // namespace lrvar
