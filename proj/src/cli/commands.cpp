#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "fields.hpp"
#include "mvbranch/cli.hpp"
#include "mvbranch/io.hpp"
#include "mvbranch/meanfield.hpp"
#include "mvbranch/rng.hpp"

namespace mvb::cli {

using nlohmann::json;
using namespace fields;
namespace fs = std::filesystem;

namespace {

constexpr const char* kVersion = "0.1.0";

/// Writes `dir/name` through `body`; creates the directory when needed.
template <typename Body>
void write_file(const fs::path& dir, const std::string& name, Body body) {
  fs::create_directories(dir);
  std::ofstream out(dir / name, std::ios::binary);
  if (!out) throw Error("cannot write " + (dir / name).string());
  body(out);
  if (!out) throw Error("write failed for " + (dir / name).string());
}

void write_json(const fs::path& dir, const std::string& name, const json& value) {
  write_file(dir, name, [&](std::ostream& out) { out << value.dump(2) << '\n'; });
}

/// Timestamped sidecar; the only output that differs between identical runs.
void write_run_info(const fs::path& dir, const std::string& command, const ExperimentConfig& config,
                    unsigned workers) {
  const auto now = std::chrono::system_clock::now();
  const std::time_t tt = std::chrono::system_clock::to_time_t(now);
  char stamp[32];
  std::strftime(stamp, sizeof(stamp), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&tt));
  write_json(dir, "run_info.json",
             {{"command", command},
              {"config_hash", config.hash},
              {"seed", config.budgets.seed},
              {"timestamp", stamp},
              {"version", kVersion},
              {"workers", workers}});
}

std::string sanitize(const std::string& name) {
  std::string out = name;
  for (char& c : out) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.' || c == '=')) c = '_';
  }
  return out;
}

void require_lq(const Runtime& rt, const std::string& what) {
  if (!rt.config.model.is_lq) throw ConfigError("config: " + what + " needs an lq model");
}

void require_initial(const Runtime& rt, const std::string& what) {
  if (!rt.config.initial) throw ConfigError("config: " + what + " needs an initial section");
}

double snap_to_grid(const TimeGrid& grid, double t, const std::string& path) {
  const auto j = grid.index_of(t);
  if (!j) fail(path, "must be a grid time");
  return grid[*j];
}

/// Flow used by checks that freeze the interaction: the moment ODE flow when
/// available, otherwise nu0 grown at the model's rate at the mean of nu0.
MeasureFlow reference_flow(const Runtime& rt) {
  if (auto flow = rt.ode_flow()) return *flow;
  const double t0 = rt.grid.start();
  Point mean = Point::Zero(1);
  if (rt.nu0.mass() > 0.0) mean[0] = rt.nu0.first_moment()[0] / rt.nu0.mass();
  const double theta = rt.model.growth_rate(t0, mean, rt.nu0, rt.control(t0, mean));
  return MeasureFlow::exponential(rt.grid, rt.nu0, theta);
}

double constant_theta(const Runtime& rt, const std::string& what) {
  if (rt.config.model.is_lq) return rt.config.model.lq.theta();
  const GenericModelSpec& g = rt.config.model.generic;
  (void)what;
  return g.gamma * progeny_net_growth(normalize_progeny(g.p, 10));
}

// ---------------------------------------------------------------------------
// Checks

NamedCheck hjb_check(const Runtime& rt, const CheckSpec& spec, const std::string& path) {
  require_lq(rt, "hjb_residual");
  const json& p = spec.params;
  reject_unknown(p, path, {"threshold", "n", "max_mass", "max_m1"});
  const double threshold = number(p, "threshold", path, 1e-6);
  const int n = static_cast<int>(count(p, "n", path, 10));
  const double max_mass = number(p, "max_mass", path, 5.0);
  const double max_m1 = number(p, "max_m1", path, 5.0);
  auto sol = rt.riccati;
  return {spec.name.empty() ? "hjb_residual" : spec.name, [=] {
            CheckReport r;
            r.statistic = max_hjb_residual(*sol, n, max_mass, max_m1);
            r.threshold = threshold;
            r.passed = r.statistic < threshold;
            r.samples = static_cast<std::size_t>(n) * n * n;
            r.detail = "convention " + to_string(sol->convention());
            return r;
          }};
}

NamedCheck verification_check(const Runtime& rt, const CheckSpec& spec, const std::string& path) {
  require_lq(rt, "verification");
  require_initial(rt, "verification");
  const json& p = spec.params;
  reject_unknown(p, path, {"threshold", "perturbations", "scale"});
  const double threshold = number(p, "threshold", path, 1e-6);
  const auto shifts = default_shifts(count(p, "perturbations", path, 20), number(p, "scale", path, 0.5));
  auto sol = rt.riccati;
  const Moments m0 = Moments::of(rt.nu0);
  return {spec.name.empty() ? "verification" : spec.name,
          [=] { return check_verification(sol, m0, shifts, threshold); }};
}

NamedCheck verification_mc_check(const Runtime& rt, const CheckSpec& spec, const std::string& path) {
  require_lq(rt, "verification_mc");
  require_initial(rt, "verification_mc");
  const json& p = spec.params;
  reject_unknown(p, path, {"trees"});
  const std::size_t trees = count(p, "trees", path, rt.config.budgets.trees);
  CostOptions options{rt.config.budgets.scheme, rt.batch};
  return {spec.name.empty() ? "verification_mc" : spec.name, [=, &rt] {
            return check_verification_mc(rt.riccati, rt.nu0, rt.grid, trees, rt.config.budgets.seed, options);
          }};
}

std::vector<NamedCheck> dpp_checks(const Runtime& rt, const CheckSpec& spec, const std::string& path) {
  require_lq(rt, "dpp");
  require_initial(rt, "dpp");
  const json& p = spec.params;
  reject_unknown(p, path, {"pairs", "panel", "scale", "threshold"});
  const double threshold = number(p, "threshold", path, 1e-6);
  const auto shifts = default_shifts(count(p, "panel", path, 20), number(p, "scale", path, 0.5));
  const double t0 = rt.grid.start(), T = rt.grid.end();
  std::vector<std::pair<double, double>> pairs{
      {t0, t0 + 0.5 * (T - t0)}, {t0 + 0.25 * (T - t0), t0 + 0.75 * (T - t0)}, {t0 + 0.5 * (T - t0), T}};
  if (p.contains("pairs")) {
    pairs.clear();
    if (!p.at("pairs").is_array()) fail(path + ".pairs", "expected an array of [t, s] pairs");
    for (const json& pair : p.at("pairs")) {
      if (!pair.is_array() || pair.size() != 2 || !pair[0].is_number() || !pair[1].is_number()) {
        fail(path + ".pairs", "expected an array of [t, s] pairs");
      }
      const double t = pair[0].get<double>(), s = pair[1].get<double>();
      if (!(t0 <= t && t <= s && s <= T)) fail(path + ".pairs", "need t0 <= t <= s <= T");
      pairs.emplace_back(t, s);
    }
  }
  std::vector<NamedCheck> out;
  auto sol = rt.riccati;
  const Moments m = Moments::of(rt.nu0);
  for (const auto& [t, s] : pairs) {
    std::ostringstream name;
    name << (spec.name.empty() ? "dpp" : spec.name) << ":t=" << t << ":s=" << s;
    out.push_back({name.str(), [=] {
                     return check_dpp(*sol, m, t, s, perturbed_panel(sol, t, m.mass, shifts), threshold);
                   }});
  }
  return out;
}

NamedCheck population_bound_check(const Runtime& rt, const CheckSpec& spec, const std::string& path) {
  require_initial(rt, "population_bound");
  const json& p = spec.params;
  reject_unknown(p, path, {"trees", "M1"});
  const std::size_t trees = count(p, "trees", path, std::max<std::size_t>(10000, rt.config.budgets.trees));
  const double M1 = number(p, "M1", path, rt.model.progeny.mean_bound());
  return {spec.name.empty() ? "population_bound" : spec.name, [=, &rt] {
            const MeasureFlow flow = reference_flow(rt);
            const SimulationPlan plan(rt.model, rt.control, flow, rt.grid);
            const auto summaries = simulate_summaries(plan, InitialSampler(rt.nu0, rt.config.budgets.scheme), trees,
                                                      rt.config.budgets.seed, rt.batch);
            return check_population_bound(summaries, rt.nu0.mass(), rt.model.rate_bound, M1,
                                          rt.grid.end() - rt.grid.start());
          }};
}

NamedCheck mass_law_check(const Runtime& rt, const CheckSpec& spec, const std::string& path) {
  require_initial(rt, "mass_law");
  const json& p = spec.params;
  reject_unknown(p, path, {"trees", "z"});
  const std::size_t trees = count(p, "trees", path, rt.config.budgets.trees);
  const double z = number(p, "z", path, 3.0);
  const double theta = constant_theta(rt, "mass_law");
  return {spec.name.empty() ? "mass_law" : spec.name, [=, &rt] {
            require(rt.nu0.mass() > 0.0, "mass_law: nu0 has zero mass");
            const MeasureFlow frozen = reference_flow(rt);
            FlowSimulationOptions options = rt.simulation_options();
            const MeasureFlow flow = simulate_flow(rt.model, rt.control, frozen, rt.nu0, rt.grid, trees,
                                                   StreamKey(rt.config.budgets.seed), options);
            const MomentEstimate end = moment_estimate(flow, flow.size() - 1);
            const double mass0 = rt.nu0.mass();
            const double expected = std::exp(theta * (rt.grid.end() - rt.grid.start()));
            CheckReport r;
            const double se = end.mass_se / mass0;
            r.statistic = se > 0.0 ? std::abs(end.mass / mass0 - expected) / se
                                   : (std::abs(end.mass / mass0 - expected) > 1e-12 ? INFINITY : 0.0);
            r.threshold = z;
            r.passed = r.statistic <= z;
            r.samples = trees;
            std::ostringstream detail;
            detail.precision(17);
            detail << "ratio " << end.mass / mass0 << ", expected " << expected << ", se " << se;
            r.detail = detail.str();
            return r;
          }};
}

NamedCheck flow_property_check_named(const Runtime& rt, const CheckSpec& spec, const std::string& path) {
  require_initial(rt, "flow_property");
  const json& p = spec.params;
  reject_unknown(p, path, {"u", "z"});
  const double t0 = rt.grid.start(), T = rt.grid.end();
  const double u = p.contains("u") ? snap_to_grid(rt.grid, number(p, "u", path, 0.0), path + ".u")
                                   : rt.grid[rt.grid.size() / 2];
  const double z = number(p, "z", path, 3.0);
  return {spec.name.empty() ? "flow_property" : spec.name, [=, &rt] {
            const FlowPropertyReport f =
                flow_property_check(rt.model, rt.control, rt.nu0, rt.grid, t0, u, T, rt.config.budgets.seed,
                                    rt.picard_options());
            auto ratio = [](double diff, double se) {
              return se > 0.0 ? diff / se : (diff > 1e-12 ? INFINITY : 0.0);
            };
            CheckReport r;
            r.statistic = std::max({ratio(f.mass_diff, f.mass_se), ratio(f.m1_diff, f.m1_se),
                                    ratio(f.m2_diff, f.m2_se)});
            r.threshold = z;
            r.passed = r.statistic <= z;
            r.samples = rt.config.budgets.picard.trees;
            std::ostringstream detail;
            detail << "wbar1 " << f.wbar1 << ", mass diff " << f.mass_diff << " (se " << f.mass_se << ")";
            r.detail = detail.str();
            return r;
          }};
}

CylindricalFunction cylindrical_by_name(const std::string& name, const std::string& path) {
  if (name == "mass") return CylindricalFunction::mass();
  if (name == "m1") return CylindricalFunction::first_moment();
  if (name == "m1_squared") return CylindricalFunction::first_moment_squared();
  if (name == "m2") return CylindricalFunction::second_moment();
  fail(path, "expected mass, m1, m1_squared or m2");
}

NamedCheck ito_check(const Runtime& rt, const CheckSpec& spec, const std::string& path) {
  require_initial(rt, "ito");
  const json& p = spec.params;
  reject_unknown(p, path, {"function", "flow", "s", "t", "tol"});
  const CylindricalFunction F = cylindrical_by_name(text(p, "function", path, "mass"), path + ".function");
  const std::string flow_kind = text(p, "flow", path, "ode");
  if (flow_kind != "ode" && flow_kind != "picard") fail(path + ".flow", "expected ode or picard");
  if (flow_kind == "ode" && !rt.ode_flow()) fail(path + ".flow", "the ode flow needs an lq model");
  const double s = snap_to_grid(rt.grid, number(p, "s", path, rt.grid.start()), path + ".s");
  const double t = snap_to_grid(rt.grid, number(p, "t", path, rt.grid.end()), path + ".t");
  const double tol = number(p, "tol", path, 1e-6);
  return {spec.name.empty() ? "ito:" + F.name : spec.name, [=, &rt] {
            const MeasureFlow flow =
                flow_kind == "ode" ? *rt.ode_flow()
                                   : solve_flow_picard(rt.model, rt.control, rt.nu0, rt.grid, rt.config.budgets.seed,
                                                       rt.picard_options())
                                         .flow;
            return ito_formula_check(F, rt.model, rt.control, flow, s, t, tol);
          }};
}

NamedCheck invariance_check(const Runtime& rt, const CheckSpec& spec, const std::string& path) {
  require_initial(rt, "initial_law_invariance");
  const json& p = spec.params;
  reject_unknown(p, path, {"schemes", "trees", "z"});
  InitScheme a = InitScheme::kBernoulliResidual, b = InitScheme::kClustered;
  if (p.contains("schemes")) {
    const json& s = p.at("schemes");
    if (!s.is_array() || s.size() != 2 || !s[0].is_string() || !s[1].is_string()) {
      fail(path + ".schemes", "expected two scheme names");
    }
    try {
      a = init_scheme_from_string(s[0].get<std::string>());
      b = init_scheme_from_string(s[1].get<std::string>());
    } catch (const InvalidArgument& e) {
      fail(path + ".schemes", e.what());
    }
  }
  PicardOptions options = rt.picard_options();
  options.trees = count(p, "trees", path, options.trees);
  if (options.trees < 100) fail(path + ".trees", "must be at least 100");
  const double z = number(p, "z", path, 3.0);
  return {spec.name.empty() ? "initial_law_invariance" : spec.name, [=, &rt] {
            return check_initial_law_invariance(rt.model, rt.control, rt.nu0, a, b, rt.grid, rt.config.budgets.seed,
                                                options, z);
          }};
}

}  // namespace

std::vector<NamedCheck> build_checks(const Runtime& rt, const std::vector<CheckSpec>& specs) {
  std::vector<NamedCheck> out;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const CheckSpec& spec = specs[i];
    const std::string path = "checks[" + std::to_string(i) + "]";
    if (spec.kind == "hjb_residual") out.push_back(hjb_check(rt, spec, path));
    else if (spec.kind == "verification") out.push_back(verification_check(rt, spec, path));
    else if (spec.kind == "verification_mc") out.push_back(verification_mc_check(rt, spec, path));
    else if (spec.kind == "dpp") {
      auto checks = dpp_checks(rt, spec, path);
      out.insert(out.end(), checks.begin(), checks.end());
    } else if (spec.kind == "population_bound") out.push_back(population_bound_check(rt, spec, path));
    else if (spec.kind == "mass_law") out.push_back(mass_law_check(rt, spec, path));
    else if (spec.kind == "flow_property") out.push_back(flow_property_check_named(rt, spec, path));
    else if (spec.kind == "ito") out.push_back(ito_check(rt, spec, path));
    else if (spec.kind == "initial_law_invariance") out.push_back(invariance_check(rt, spec, path));
    else fail(path + ".kind", "unknown check kind '" + spec.kind + "'");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Commands

int cmd_lq_solve(const CommandOptions& options) {
  Runtime rt = build_runtime(load_config(options.config_path, options.seed), options.workers);
  require_lq(rt, "lq-solve");
  const fs::path dir = resolve_output_dir(options.out_dir, rt.config);
  const std::string& hash = rt.config.hash;
  write_file(dir, "riccati.csv", [&](std::ostream& out) { write_riccati_csv(out, *rt.riccati, hash); });

  std::vector<Moments> samples;
  for (double mass : {0.5, 1.0, 2.0}) {
    for (double m1 : {-1.0, 0.0, 1.0}) samples.push_back({mass, m1, m1 * m1 / mass + mass});
  }
  write_file(dir, "value_surface.csv",
             [&](std::ostream& out) { write_value_surface_csv(out, *rt.riccati, samples, 11, hash); });

  const double mass0 = rt.config.initial ? rt.nu0.mass() : 1.0;
  const AffineFeedback optimal = lq_optimal_affine(rt.riccati, rt.grid.start(), mass0);
  write_file(dir, "optimal_control.csv",
             [&](std::ostream& out) { write_control_table_csv(out, optimal, rt.grid, hash); });
  if (rt.config.initial) {
    const Moments m0 = Moments::of(rt.nu0);
    const auto moments = lq_moment_flow(rt.config.model.lq, optimal, m0, rt.grid);
    write_file(dir, "ode_moments.csv", [&](std::ostream& out) { write_ode_moments_csv(out, rt.grid, moments, hash); });
    write_json(dir, "value.json",
               {{"config_hash", hash},
                {"t0", rt.grid.start()},
                {"value", lq_value(*rt.riccati, rt.grid.start(), m0)},
                {"convention", to_string(rt.config.model.convention)}});
  }
  write_run_info(dir, "lq-solve", rt.config, options.workers);
  return kExitOk;
}

int cmd_simulate(const CommandOptions& options) {
  Runtime rt = build_runtime(load_config(options.config_path, options.seed), options.workers);
  require_initial(rt, "simulate");
  const fs::path dir = resolve_output_dir(options.out_dir, rt.config);
  const std::string& hash = rt.config.hash;
  const std::uint64_t seed = rt.config.budgets.seed;

  const PicardResult picard = solve_flow_picard(rt.model, rt.control, rt.nu0, rt.grid, seed, rt.picard_options());
  const MeasureFlow final_flow = simulate_flow(rt.model, rt.control, picard.flow, rt.nu0, rt.grid,
                                               rt.config.budgets.trees, StreamKey(mix64(seed ^ 0xF17A1ull)),
                                               rt.simulation_options());
  write_file(dir, "flow_moments.csv", [&](std::ostream& out) { write_flow_moments_csv(out, final_flow, hash); });
  write_file(dir, "flow_atoms.csv", [&](std::ostream& out) { write_flow_atoms_csv(out, final_flow, hash); });
  write_json(dir, "picard.json",
             {{"config_hash", hash},
              {"converged", picard.diagnostics.converged},
              {"iterations", picard.diagnostics.iterations},
              {"residuals", picard.diagnostics.residuals},
              {"moment_residuals", picard.diagnostics.moment_residuals},
              {"tol", rt.config.budgets.picard.tol}});

  if (auto ode = rt.ode_flow()) {
    std::vector<Moments> moments;
    for (const FiniteMeasure& mu : ode->measures()) moments.push_back(Moments::of(mu));
    write_file(dir, "ode_moments.csv", [&](std::ostream& out) { write_ode_moments_csv(out, rt.grid, moments, hash); });
  }

  // A few sample trees with their genealogy.
  const std::size_t samples = rt.config.outputs.snapshot_trees;
  if (samples > 0) {
    json logs = json::array();
    std::ostringstream csv;
    for (std::size_t i = 0; i < samples; ++i) {
      const std::uint64_t tree_seed = mix64(seed ^ (0x7EE5ull + i));
      Configuration initial = init_population(rt.nu0, rt.config.budgets.scheme, tree_seed);
      const TreeTrajectory tree = simulate_tree(rt.model, rt.control, picard.flow, initial, rt.grid, tree_seed);
      write_snapshots_csv(csv, tree, i, hash, i == 0);
      json log = event_log_json(tree);
      log["tree"] = i;
      logs.push_back(std::move(log));
    }
    write_file(dir, "trees.csv", [&](std::ostream& out) { out << csv.str(); });
    write_json(dir, "events.json", {{"config_hash", hash}, {"trees", std::move(logs)}});
  }

  if (rt.costs) {
    CostEstimate estimate = estimate_cost(rt.model, *rt.costs, rt.control, picard.flow, rt.nu0, rt.grid,
                                          rt.config.budgets.trees, mix64(seed ^ 0xC057ull),
                                          CostOptions{rt.config.budgets.scheme, rt.batch});
    estimate.flow_converged = picard.diagnostics.converged;
    json report = cost_report_json(estimate, hash);
    if (rt.riccati) report["lq_value"] = lq_value(*rt.riccati, rt.grid.start(), Moments::of(rt.nu0));
    write_json(dir, "cost.json", report);
  }
  write_run_info(dir, "simulate", rt.config, options.workers);

  if (!picard.diagnostics.converged && rt.config.budgets.strict) {
    std::cerr << "simulate: Picard iteration did not reach tol " << rt.config.budgets.picard.tol << " in "
              << picard.diagnostics.iterations << " iterations\n";
    return kExitNotConverged;
  }
  return kExitOk;
}

namespace {

int run_checks(const Runtime& rt, const std::vector<NamedCheck>& checks, const fs::path& dir,
               const std::string& command, unsigned workers) {
  const std::vector<CheckReport> reports = run_suite(checks, rt.config.hash);
  write_json(dir, "summary.json", suite_summary_json(reports, rt.config.hash));
  for (const CheckReport& r : reports) {
    write_file(dir / "checks", sanitize(r.name) + ".csv",
               [&](std::ostream& out) { write_check_csv(out, r, rt.config.hash); });
    std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << "  statistic=" << format_double(r.statistic)
              << "  threshold=" << format_double(r.threshold);
    if (!r.detail.empty()) std::cout << "  (" << r.detail << ")";
    std::cout << '\n';
  }
  write_run_info(dir, command, rt.config, workers);
  const bool all = std::all_of(reports.begin(), reports.end(), [](const CheckReport& r) { return r.passed; });
  return all ? kExitOk : kExitCheckFailed;
}

}  // namespace

int cmd_verify(const CommandOptions& options) {
  Runtime rt = build_runtime(load_config(options.config_path, options.seed), options.workers);
  const auto checks = build_checks(rt, rt.config.checks);
  return run_checks(rt, checks, resolve_output_dir(options.out_dir, rt.config), "verify", options.workers);
}

int cmd_dpp_check(const CommandOptions& options) {
  Runtime rt = build_runtime(load_config(options.config_path, options.seed), options.workers);
  std::vector<CheckSpec> specs;
  for (const CheckSpec& s : rt.config.checks) {
    if (s.kind == "dpp") specs.push_back(s);
  }
  if (specs.empty()) specs.push_back({"dpp", "", json::object()});
  const auto checks = build_checks(rt, specs);
  return run_checks(rt, checks, resolve_output_dir(options.out_dir, rt.config), "dpp-check", options.workers);
}

int cmd_fp(const CommandOptions& options) {
  Runtime rt = build_runtime(load_config(options.config_path, options.seed), options.workers);
  require_initial(rt, "fp");
  if (!rt.config.grid.space) throw ConfigError("config: grid.x_lo, grid.x_hi and grid.dx are required for fp");
  const SpaceGrid space = *rt.config.grid.space;
  check_mass_leak(rt.nu0, space);
  const fs::path dir = resolve_output_dir(options.out_dir, rt.config);
  const std::string& hash = rt.config.hash;

  // Frozen flow: exact moment flow for LQ, Picard for measure-dependent
  // generic models, nu0 itself otherwise (the coefficients ignore it).
  MeasureFlow flow = [&] {
    if (auto ode = rt.ode_flow()) return *ode;
    if (!rt.config.model.is_lq && rt.config.model.generic.measure_dependent()) {
      return solve_flow_picard(rt.model, rt.control, rt.nu0, rt.grid, rt.config.budgets.seed, rt.picard_options())
          .flow;
    }
    return MeasureFlow::constant(rt.grid, rt.nu0);
  }();
  FpCoefficients coefficients = frozen_coefficients(rt.model, rt.control, flow);
  coefficients.time_independent_sigma = true;  // both model families have constant sigma

  const auto density_fn = rt.config.initial->density();
  const Eigen::VectorXd rho0 = density_fn ? discretize_density(density_fn, space) : density_from_measure(rt.nu0, space);
  const DensityFlow fd = fp_solve(coefficients, rho0, space, rt.grid, rt.config.fp.options);
  write_file(dir, "density.csv",
             [&](std::ostream& out) { write_density_csv(out, fd, hash, rt.config.outputs.density_stride); });
  write_file(dir, "mass_trace.csv", [&](std::ostream& out) { write_mass_trace_csv(out, fd, hash); });

  json report = {{"config_hash", hash},
                 {"cells", space.cells},
                 {"dx", space.dx()},
                 {"scheme", to_string(rt.config.fp.options.scheme)},
                 {"boundary", to_string(rt.config.fp.options.boundary)},
                 {"min_density", fd.min_density},
                 {"clipped", fd.clipped},
                 {"final_mass", fd.mass.back()}};
  if (rt.config.fp.cross_check_trees > 0) {
    FlowSimulationOptions sim = rt.simulation_options();
    const MeasureFlow particles = simulate_flow(rt.model, rt.control, flow, rt.nu0, rt.grid,
                                                rt.config.fp.cross_check_trees,
                                                StreamKey(rt.config.budgets.seed), sim);
    const std::size_t last = rt.grid.size() - 1;
    const Eigen::Index cap = 2000;
    report["cross_check"] = {{"trees", rt.config.fp.cross_check_trees},
                             {"wbar1", wbar1(thin_to_quantiles(fd.as_measure(last), cap),
                                             thin_to_quantiles(particles.measure(last), cap))}};
  }
  write_json(dir, "fp_report.json", report);
  write_run_info(dir, "fp", rt.config, options.workers);
  return kExitOk;
}

int run_cli(int argc, char** argv) {
  CLI::App app{"mvbranch: controlled McKean-Vlasov branching diffusions"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  CommandOptions options;
  std::string out_dir;
  std::uint64_t seed = 0;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config,-c", options.config_path, "experiment config (JSON)")->required();
    sub->add_option("--out,-o", out_dir, std::string("output directory (default: config, then $") + kOutputDirEnv +
                                             ", then ./mvbranch_out)");
    sub->add_option("--seed", seed, "override budgets.seed");
    sub->add_option("--workers,-j", options.workers, "worker threads (0: all cores)");
  };
  struct Entry {
    const char* name;
    const char* help;
    int (*run)(const CommandOptions&);
  };
  const Entry entries[] = {
      {"lq-solve", "solve the Riccati system and write value and control tables", cmd_lq_solve},
      {"simulate", "Picard flow, final simulation, sample trees and cost", cmd_simulate},
      {"verify", "run the configured check suite", cmd_verify},
      {"fp", "finite-difference Fokker-Planck solve", cmd_fp},
      {"dpp-check", "run only the dynamic programming checks", cmd_dpp_check},
  };
  std::vector<std::pair<CLI::App*, const Entry*>> subs;
  for (const Entry& e : entries) {
    CLI::App* sub = app.add_subcommand(e.name, e.help);
    add_common(sub);
    subs.emplace_back(sub, &e);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  for (auto& [sub, entry] : subs) {
    if (!sub->parsed()) continue;
    if (!out_dir.empty()) options.out_dir = out_dir;
    if (sub->count("--seed") > 0) options.seed = seed;
    try {
      return entry->run(options);
    } catch (const NumericalFailure& e) {
      std::cerr << entry->name << ": numerical failure: " << e.what() << '\n';
      return kExitNumerical;
    } catch (const InvalidArgument& e) {
      std::cerr << entry->name << ": " << e.what() << '\n';
      return kExitConfig;
    } catch (const DimensionMismatch& e) {
      std::cerr << entry->name << ": " << e.what() << '\n';
      return kExitConfig;
    } catch (const std::exception& e) {
      std::cerr << entry->name << ": error: " << e.what() << '\n';
      return kExitConfig;
    }
  }
  return kExitConfig;
}

}  // namespace mvb::cli
