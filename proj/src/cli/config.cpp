#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "mvbranch/cli.hpp"
#include "fields.hpp"
#include "mvbranch/io.hpp"
#include "mvbranch/measure_io.hpp"

namespace mvb::cli {

using nlohmann::json;

using namespace fields;

namespace {

/// A number, or {"t": [...], "values": [...]} sampled on increasing times.
TimeFunction time_function(const json& object, const std::string& key, const std::string& path, double fallback) {
  if (!object.contains(key)) return TimeFunction(fallback);
  const json& v = object.at(key);
  const std::string where = join(path, key);
  if (v.is_number()) return TimeFunction(number(object, key, path, fallback));
  if (!v.is_object()) fail(where, "expected a number or a {t, values} table");
  reject_unknown(v, where, {"t", "values"});
  if (!v.contains("t") || !v.contains("values")) fail(where, "table needs both t and values");
  std::vector<double> t = number_list(v, "t", where);
  std::vector<double> values = number_list(v, "values", where);
  if (t.size() != values.size() || t.size() < 2) fail(where, "t and values must have equal length >= 2");
  try {
    return TimeFunction(std::move(t), std::move(values));
  } catch (const InvalidArgument& e) {
    fail(where, e.what());
  }
}

ModelSection parse_model(const json& j) {
  const std::string path = "model";
  reject_unknown(j, path, {"type", "lq", "generic", "costs"});
  ModelSection out;
  const std::string type = text(j, "type", path, "");
  if (type == "lq") {
    out.is_lq = true;
    if (!j.contains("lq")) fail("model.lq", "required for type lq");
    if (j.contains("generic") || j.contains("costs")) fail(path, "generic and costs only apply to type generic");
    const json& lq = object_at(j, "lq", path);
    const std::string p = "model.lq";
    reject_unknown(lq, p,
                   {"b1", "b2", "b3", "sigma", "gamma", "gamma_bar", "p", "L1", "L2", "L3", "L4", "g1", "g2", "g3",
                    "convention", "riccati_dt"});
    LQModel& m = out.lq;
    m.b1 = time_function(lq, "b1", p, 0.0);
    m.b2 = time_function(lq, "b2", p, 0.0);
    m.b3 = time_function(lq, "b3", p, 0.0);
    m.L1 = time_function(lq, "L1", p, 0.0);
    m.L2 = time_function(lq, "L2", p, 0.0);
    m.L3 = time_function(lq, "L3", p, 0.0);
    if (!lq.contains("L4")) fail("model.lq.L4", "required key missing (control cost weight, must be > 0)");
    m.L4 = time_function(lq, "L4", p, 1.0);
    m.sigma = number(lq, "sigma", p, 0.0);
    m.gamma = number(lq, "gamma", p, 1.0);
    m.gamma_bar = number(lq, "gamma_bar", p, 0.0);
    if (lq.contains("p")) m.p = number_list(lq, "p", p);
    m.g1 = number(lq, "g1", p, 0.0);
    m.g2 = number(lq, "g2", p, 0.0);
    m.g3 = number(lq, "g3", p, 0.0);
    try {
      out.convention = theta_convention_from_string(text(lq, "convention", p, "theta_explicit"));
    } catch (const InvalidArgument& e) {
      fail("model.lq.convention", e.what());
    }
    out.riccati_dt = number(lq, "riccati_dt", p, 0.0);
    if (out.riccati_dt < 0.0) fail("model.lq.riccati_dt", "must be positive");
  } else if (type == "generic") {
    if (!j.contains("generic")) fail("model.generic", "required for type generic");
    if (j.contains("lq")) fail(path, "lq only applies to type lq");
    const json& g = object_at(j, "generic", path);
    const std::string p = "model.generic";
    reject_unknown(g, p, {"drift", "sigma", "gamma", "gamma_bar", "p"});
    GenericModelSpec& m = out.generic;
    if (g.contains("drift")) {
      const json& d = object_at(g, "drift", p);
      const std::string dp = p + ".drift";
      reject_unknown(d, dp, {"const", "x", "mass", "m1", "control"});
      m.drift_const = number(d, "const", dp, 0.0);
      m.drift_x = number(d, "x", dp, 0.0);
      m.drift_mass = number(d, "mass", dp, 0.0);
      m.drift_m1 = number(d, "m1", dp, 0.0);
      m.drift_control = number(d, "control", dp, 0.0);
    }
    m.sigma = number(g, "sigma", p, 0.0);
    m.gamma = number(g, "gamma", p, 1.0);
    m.gamma_bar = number(g, "gamma_bar", p, 0.0);
    if (g.contains("p")) m.p = number_list(g, "p", p);
    if (m.gamma < 0.0) fail("model.generic.gamma", "must be nonnegative");
    if (m.gamma_bar != 0.0 && m.gamma_bar < m.gamma) fail("model.generic.gamma_bar", "must be >= gamma");
    if (j.contains("costs")) {
      const json& c = object_at(j, "costs", path);
      reject_unknown(c, "model.costs", {"running", "terminal"});
      QuadraticCostSpec costs;
      if (c.contains("running")) {
        const json& r = object_at(c, "running", "model.costs");
        reject_unknown(r, "model.costs.running", {"x2", "mass", "m1", "a2"});
        costs.x2 = number(r, "x2", "model.costs.running", 0.0);
        costs.mass = number(r, "mass", "model.costs.running", 0.0);
        costs.m1 = number(r, "m1", "model.costs.running", 0.0);
        costs.a2 = number(r, "a2", "model.costs.running", 0.0);
      }
      if (c.contains("terminal")) {
        const json& t = object_at(c, "terminal", "model.costs");
        reject_unknown(t, "model.costs.terminal", {"x2", "mass", "m1"});
        costs.g_x2 = number(t, "x2", "model.costs.terminal", 0.0);
        costs.g_mass = number(t, "mass", "model.costs.terminal", 0.0);
        costs.g_m1 = number(t, "m1", "model.costs.terminal", 0.0);
      }
      out.costs = costs;
    }
  } else {
    fail("model.type", "expected \"lq\" or \"generic\"");
  }
  return out;
}

ControlSection parse_control(const json& j) {
  const std::string path = "control";
  ControlSection out;
  const std::string type = text(j, "type", path, "");
  if (type == "zero") {
    reject_unknown(j, path, {"type"});
    out.kind = ControlKind::kZero;
  } else if (type == "affine") {
    reject_unknown(j, path, {"type", "offset", "slope"});
    out.kind = ControlKind::kAffine;
    out.offset = number(j, "offset", path, 0.0);
    out.slope = number(j, "slope", path, 0.0);
  } else if (type == "optimal") {
    reject_unknown(j, path, {"type"});
    out.kind = ControlKind::kOptimal;
  } else if (type == "table") {
    reject_unknown(j, path, {"type", "t", "offset", "slope"});
    out.kind = ControlKind::kTable;
    for (const char* key : {"t", "offset", "slope"}) {
      if (!j.contains(key)) fail(join(path, key), "required for a table control");
    }
    out.times = number_list(j, "t", path);
    out.offsets = number_list(j, "offset", path);
    out.slopes = number_list(j, "slope", path);
    if (out.times.size() < 2 || out.offsets.size() != out.times.size() || out.slopes.size() != out.times.size()) {
      fail(path, "t, offset and slope must have equal length >= 2");
    }
  } else {
    fail("control.type", "expected zero, affine, optimal or table");
  }
  return out;
}

double standard_normal_quantile(double p) {
  double lo = -40.0, hi = 40.0;
  for (int k = 0; k < 200; ++k) {
    const double mid = 0.5 * (lo + hi);
    if (0.5 * std::erfc(-mid / std::sqrt(2.0)) < p) lo = mid; else hi = mid;
  }
  return 0.5 * (lo + hi);
}

InitialSection parse_initial(const json& j) {
  const std::string path = "initial";
  InitialSection out;
  out.family = text(j, "family", path, "atoms");
  if (out.family == "atoms") {
    reject_unknown(j, path, {"family", "atoms"});
    if (!j.contains("atoms")) fail("initial.atoms", "required for the atoms family");
    try {
      out.measure = measure_from_json(j.at("atoms"), 1);
    } catch (const std::exception& e) {
      fail("initial.atoms", e.what());
    }
    if (out.measure.dimension() != 1) fail("initial.atoms", "only one-dimensional measures are supported");
    out.mass = out.measure.mass();
    return out;
  }
  const std::size_t n = count(j, "count", path, 200);
  if (n < 1) fail("initial.count", "must be positive");
  out.mass = required_number(j, "mass", path);
  if (out.mass < 0.0) fail("initial.mass", "must be nonnegative");
  Eigen::MatrixXd positions(1, static_cast<Eigen::Index>(n));
  Eigen::VectorXd weights = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(n), out.mass / static_cast<double>(n));
  if (out.family == "gaussian") {
    reject_unknown(j, path, {"family", "mass", "mean", "sd", "count"});
    out.mean = number(j, "mean", path, 0.0);
    out.sd = required_number(j, "sd", path);
    if (out.sd <= 0.0) fail("initial.sd", "must be positive");
    // Quantile atoms: equal weights at the midpoints of n equal-probability cells.
    for (std::size_t i = 0; i < n; ++i) {
      const double q = (static_cast<double>(i) + 0.5) / static_cast<double>(n);
      positions(0, static_cast<Eigen::Index>(i)) = out.mean + out.sd * standard_normal_quantile(q);
    }
  } else if (out.family == "uniform") {
    reject_unknown(j, path, {"family", "mass", "a", "b", "count"});
    out.a = required_number(j, "a", path);
    out.b = required_number(j, "b", path);
    if (!(out.b > out.a)) fail("initial", "uniform family needs a < b");
    for (std::size_t i = 0; i < n; ++i) {
      positions(0, static_cast<Eigen::Index>(i)) =
          out.a + (out.b - out.a) * (static_cast<double>(i) + 0.5) / static_cast<double>(n);
    }
  } else {
    fail("initial.family", "expected atoms, gaussian or uniform");
  }
  out.measure = FiniteMeasure(std::move(positions), std::move(weights));
  return out;
}

GridSection parse_grid(const json& j) {
  const std::string path = "grid";
  reject_unknown(j, path, {"t0", "T", "dt", "x_lo", "x_hi", "dx"});
  GridSection out;
  out.t0 = number(j, "t0", path, 0.0);
  out.T = required_number(j, "T", path);
  out.dt = required_number(j, "dt", path);
  if (!(out.dt > 0.0)) fail("grid.dt", "must be positive");
  if (!(out.T > out.t0)) fail("grid.T", "must exceed t0");
  const bool any_space = j.contains("x_lo") || j.contains("x_hi") || j.contains("dx");
  if (any_space) {
    const double lo = required_number(j, "x_lo", path);
    const double hi = required_number(j, "x_hi", path);
    const double dx = required_number(j, "dx", path);
    if (!(dx > 0.0)) fail("grid.dx", "must be positive");
    if (!(hi > lo)) fail("grid.x_hi", "must exceed x_lo");
    out.space = SpaceGrid::with_step(lo, hi, dx);
  }
  return out;
}

InitScheme scheme_of(const json& j, const std::string& key, const std::string& path, InitScheme fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return init_scheme_from_string(text(j, key, path, ""));
  } catch (const InvalidArgument& e) {
    fail(join(path, key), e.what());
  }
}

BudgetSection parse_budgets(const json& j) {
  const std::string path = "budgets";
  reject_unknown(j, path, {"trees", "seed", "strict", "atom_cap", "scheme", "block_size", "picard"});
  BudgetSection out;
  out.trees = count(j, "trees", path, out.trees);
  if (out.trees == 0) fail("budgets.trees", "must be positive");
  out.seed = count(j, "seed", path, out.seed);
  out.strict = boolean(j, "strict", path, false);
  out.atom_cap = count(j, "atom_cap", path, out.atom_cap);
  out.scheme = scheme_of(j, "scheme", path, out.scheme);
  out.block_size = count(j, "block_size", path, out.block_size);
  if (out.block_size == 0) fail("budgets.block_size", "must be positive");
  if (j.contains("picard")) {
    const json& p = object_at(j, "picard", path);
    const std::string pp = "budgets.picard";
    reject_unknown(p, pp, {"trees", "tol", "max_iter", "damping", "residual_times", "residual_atoms"});
    PicardOptions& o = out.picard;
    o.trees = count(p, "trees", pp, o.trees);
    o.tol = number(p, "tol", pp, o.tol);
    o.max_iter = count(p, "max_iter", pp, o.max_iter);
    o.damping = number(p, "damping", pp, o.damping);
    o.residual_times = count(p, "residual_times", pp, o.residual_times);
    o.residual_atoms = count(p, "residual_atoms", pp, o.residual_atoms);
    if (o.trees < 100) fail("budgets.picard.trees", "must be at least 100");
    if (o.tol < 0.0) fail("budgets.picard.tol", "must be nonnegative");
    if (o.max_iter == 0) fail("budgets.picard.max_iter", "must be positive");
    if (!(o.damping > 0.0 && o.damping <= 1.0)) fail("budgets.picard.damping", "must lie in (0, 1]");
  }
  return out;
}

OutputSection parse_outputs(const json& j) {
  const std::string path = "outputs";
  reject_unknown(j, path, {"directory", "snapshot_trees", "density_stride"});
  OutputSection out;
  if (j.contains("directory")) out.directory = text(j, "directory", path, "");
  out.snapshot_trees = count(j, "snapshot_trees", path, out.snapshot_trees);
  out.density_stride = count(j, "density_stride", path, out.density_stride);
  if (out.density_stride == 0) fail("outputs.density_stride", "must be positive");
  return out;
}

FpSection parse_fp(const json& j) {
  const std::string path = "fp";
  reject_unknown(j, path, {"scheme", "boundary", "safety", "cross_check_trees"});
  FpSection out;
  const std::string scheme = text(j, "scheme", path, "implicit");
  if (scheme == "implicit") out.options.scheme = FpScheme::kImplicit;
  else if (scheme == "explicit") out.options.scheme = FpScheme::kExplicit;
  else fail("fp.scheme", "expected implicit or explicit");
  const std::string boundary = text(j, "boundary", path, "zero_flux");
  if (boundary == "zero_flux") out.options.boundary = FpBoundary::kZeroFlux;
  else if (boundary == "zero_value") out.options.boundary = FpBoundary::kZeroValue;
  else fail("fp.boundary", "expected zero_flux or zero_value");
  out.options.safety = number(j, "safety", path, out.options.safety);
  if (!(out.options.safety > 0.0)) fail("fp.safety", "must be positive");
  out.cross_check_trees = count(j, "cross_check_trees", path, 0);
  return out;
}

std::vector<CheckSpec> parse_checks(const json& j) {
  if (!j.is_array()) fail("checks", "expected an array");
  std::vector<CheckSpec> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string path = "checks[" + std::to_string(i) + "]";
    const json& c = j[i];
    if (!c.is_object()) fail(path, "expected an object");
    CheckSpec spec;
    spec.kind = text(c, "kind", path, "");
    if (spec.kind.empty()) fail(path + ".kind", "required key missing");
    spec.name = text(c, "name", path, "");
    spec.params = c;
    spec.params.erase("kind");
    spec.params.erase("name");
    out.push_back(std::move(spec));
  }
  return out;
}

}  // namespace

std::function<double(double)> InitialSection::density() const {
  if (family == "gaussian") {
    const double m = mass, mu = mean, s = sd;
    return [m, mu, s](double x) {
      const double z = (x - mu) / s;
      return m * std::exp(-0.5 * z * z) / (s * std::sqrt(2.0 * M_PI));
    };
  }
  if (family == "uniform") {
    const double m = mass, lo = a, hi = b;
    return [m, lo, hi](double x) { return (x >= lo && x <= hi) ? m / (hi - lo) : 0.0; };
  }
  return {};
}

std::string experiment_hash(const json& document) {
  json copy = document;
  if (copy.is_object()) copy.erase("outputs");
  return config_hash(copy);
}

ExperimentConfig parse_config(const json& document) {
  reject_unknown(document, "", {"model", "control", "initial", "grid", "budgets", "outputs", "fp", "checks"});
  ExperimentConfig out;
  out.raw = document;
  out.hash = experiment_hash(document);
  if (!document.contains("model")) fail("model", "required section missing");
  if (!document.contains("grid")) fail("grid", "required section missing");
  out.model = parse_model(object_at(document, "model", ""));
  out.grid = parse_grid(object_at(document, "grid", ""));
  if (document.contains("control")) out.control = parse_control(object_at(document, "control", ""));
  if (document.contains("initial")) out.initial = parse_initial(object_at(document, "initial", ""));
  if (document.contains("budgets")) out.budgets = parse_budgets(object_at(document, "budgets", ""));
  if (document.contains("outputs")) out.outputs = parse_outputs(object_at(document, "outputs", ""));
  if (document.contains("fp")) out.fp = parse_fp(object_at(document, "fp", ""));
  if (document.contains("checks")) out.checks = parse_checks(document.at("checks"));

  if (out.model.is_lq) {
    out.model.lq.t0 = out.grid.t0;
    out.model.lq.horizon = out.grid.T;
    try {
      out.model.lq.validate();
    } catch (const InvalidArgument& e) {
      fail("model.lq", e.what());
    }
  } else if (out.control.kind == ControlKind::kOptimal) {
    fail("control.type", "the optimal control needs an lq model");
  }
  return out;
}

ExperimentConfig load_config(const std::string& path, std::optional<std::uint64_t> seed_override) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  json document;
  try {
    document = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config: '" + path + "' is not valid JSON: " + e.what());
  }
  if (seed_override) {
    if (!document.is_object()) fail("", "expected an object");
    document["budgets"]["seed"] = *seed_override;
  }
  return parse_config(document);
}

// ---------------------------------------------------------------------------
// Runtime

namespace {

ModelCoefficients generic_coefficients(const GenericModelSpec& g) {
  ModelCoefficients m;
  m.dimension = 1;
  m.drift = [g](double, const Point& x, const FiniteMeasure& mu, const ControlValue& a) {
    const double m1 = mu.empty() ? 0.0 : mu.first_moment()[0];
    return Point(Point::Constant(1, g.drift_const + g.drift_x * x[0] + g.drift_mass * mu.mass() + g.drift_m1 * m1 +
                                        g.drift_control * a[0]));
  };
  const double sigma = g.sigma;
  m.diffusion = [sigma](double, const Point&, const FiniteMeasure&, const ControlValue&) {
    return DiffusionMatrix(DiffusionMatrix::Constant(1, 1, sigma));
  };
  const double gamma = g.gamma;
  m.branching_rate = [gamma](double, const Point&, const FiniteMeasure&, const ControlValue&) { return gamma; };
  m.rate_bound = g.gamma_bar > 0.0 ? g.gamma_bar : g.gamma;
  m.progeny = ProgenyLaw::constant(g.p);
  return m;
}

CostSpec generic_costs(const QuadraticCostSpec& c) {
  CostSpec out;
  out.running = [c](double, const Point& x, const FiniteMeasure& mu, const ControlValue& a) {
    const double m1 = mu.empty() ? 0.0 : mu.first_moment()[0];
    return c.x2 * x[0] * x[0] + c.mass * mu.mass() + c.m1 * m1 + c.a2 * a[0] * a[0];
  };
  out.terminal = [c](const Point& x, const FiniteMeasure& mu) {
    const double m1 = mu.empty() ? 0.0 : mu.first_moment()[0];
    return c.g_x2 * x[0] * x[0] + c.g_mass * mu.mass() + c.g_m1 * m1;
  };
  return out;
}

}  // namespace

PicardOptions Runtime::picard_options() const {
  PicardOptions o = config.budgets.picard;
  o.simulation = simulation_options();
  return o;
}

FlowSimulationOptions Runtime::simulation_options() const {
  FlowSimulationOptions o;
  o.atom_cap = config.budgets.atom_cap;
  o.scheme = config.budgets.scheme;
  o.batch = batch;
  return o;
}

std::optional<MeasureFlow> Runtime::ode_flow() const {
  if (!config.model.is_lq || !affine) return std::nullopt;
  return lq_moment_measure_flow(config.model.lq, *affine, Moments::of(nu0), grid);
}

Runtime build_runtime(ExperimentConfig config, unsigned workers) {
  const GridSection& g = config.grid;
  TimeGrid grid = TimeGrid::uniform(g.t0, g.T, g.dt);
  Runtime rt{std::move(config), std::move(grid), {}, nullptr, ClosedLoopControl::zero(1), std::nullopt, std::nullopt,
             FiniteMeasure(1), BatchOptions{}};
  const ExperimentConfig& c = rt.config;
  rt.batch.workers = workers;
  rt.batch.block_size = c.budgets.block_size;
  if (c.initial) rt.nu0 = c.initial->measure;

  if (c.model.is_lq) {
    rt.model = lq_coefficients(c.model.lq);
    rt.costs = lq_costs(c.model.lq);
    const double rdt = c.model.riccati_dt > 0.0 ? c.model.riccati_dt : g.dt;
    rt.riccati = std::make_shared<const RiccatiSolution>(
        solve_riccati(c.model.lq, TimeGrid::uniform(g.t0, g.T, rdt), c.model.convention));
  } else {
    rt.model = generic_coefficients(c.model.generic);
    if (c.model.costs) rt.costs = generic_costs(*c.model.costs);
  }

  switch (c.control.kind) {
    case ControlKind::kZero:
      rt.affine = AffineFeedback{[](double) { return 0.0; }, [](double) { return 0.0; }};
      rt.control = ClosedLoopControl::zero(1);
      break;
    case ControlKind::kAffine:
      rt.control = ClosedLoopControl::constant_affine(c.control.offset, c.control.slope);
      rt.affine = rt.control.affine;
      break;
    case ControlKind::kOptimal:
      require(c.initial.has_value(), "config: the optimal control needs an initial measure");
      rt.affine = lq_optimal_affine(rt.riccati, g.t0, rt.nu0.mass());
      rt.control = lq_optimal_control_law(rt.riccati, g.t0, rt.nu0.mass());
      break;
    case ControlKind::kTable: {
      TimeFunction offset(c.control.times, c.control.offsets);
      TimeFunction slope(c.control.times, c.control.slopes);
      double lipschitz = 0.0;
      for (double t : rt.grid.times()) lipschitz = std::max({lipschitz, std::abs(offset(t)), std::abs(slope(t))});
      rt.affine = AffineFeedback{[offset](double t) { return offset(t); }, [slope](double t) { return slope(t); }};
      rt.control = ClosedLoopControl::from_affine(*rt.affine, lipschitz);
      break;
    }
  }
  return rt;
}

std::string resolve_output_dir(const std::optional<std::string>& flag, const ExperimentConfig& config) {
  if (flag && !flag->empty()) return *flag;
  if (config.outputs.directory && !config.outputs.directory->empty()) return *config.outputs.directory;
  if (const char* env = std::getenv(kOutputDirEnv); env != nullptr && *env != '\0') return env;
  return "mvbranch_out";
}

}  // namespace mvb::cli
