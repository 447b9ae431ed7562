#include "mvbranch/verify.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "mvbranch/rng.hpp"
#include "mvbranch/stats.hpp"

namespace mvb {

// ---------------------------------------------------------------------------
// Cylindrical functions

Eigen::VectorXd CylindricalFunction::inner(const FiniteMeasure& m) const {
  Eigen::VectorXd v(static_cast<Eigen::Index>(tests.size()));
  for (std::size_t i = 0; i < tests.size(); ++i) v[static_cast<Eigen::Index>(i)] = m.integrate(tests[i].phi);
  return v;
}

double CylindricalFunction::operator()(const FiniteMeasure& m) const { return outer(inner(m)); }

double CylindricalFunction::linear_derivative(const FiniteMeasure& m, const Point& x) const {
  const Eigen::VectorXd c = outer_gradient(inner(m));
  double out = 0.0;
  for (std::size_t i = 0; i < tests.size(); ++i) out += c[static_cast<Eigen::Index>(i)] * tests[i].phi(x);
  return out;
}

Point CylindricalFunction::intrinsic_derivative(const FiniteMeasure& m, const Point& x) const {
  const Eigen::VectorXd c = outer_gradient(inner(m));
  Point out = Point::Zero(x.size());
  for (std::size_t i = 0; i < tests.size(); ++i) out += c[static_cast<Eigen::Index>(i)] * tests[i].gradient(x);
  return out;
}

DiffusionMatrix CylindricalFunction::intrinsic_hessian(const FiniteMeasure& m, const Point& x) const {
  const Eigen::VectorXd c = outer_gradient(inner(m));
  DiffusionMatrix out = DiffusionMatrix::Zero(x.size(), x.size());
  for (std::size_t i = 0; i < tests.size(); ++i) out += c[static_cast<Eigen::Index>(i)] * tests[i].hessian(x);
  return out;
}

void CylindricalFunction::check_quadratic_growth(int dimension, double constant, double radius) const {
  require(dimension >= 1 && dimension <= kMaxDimension, "check_quadratic_growth: bad dimension");
  SplitMix64 rng(StreamKey(0xC71DULL));
  for (int k = 0; k < 200; ++k) {
    Point x(dimension);
    for (int i = 0; i < dimension; ++i) x[i] = radius * (2.0 * rng.uniform() - 1.0);
    for (std::size_t i = 0; i < tests.size(); ++i) {
      const double value = tests[i].phi(x);
      if (!(std::abs(value) <= constant * (1.0 + x.squaredNorm()))) {
        std::ostringstream msg;
        msg << "cylindrical function '" << name << "': test " << i << " violates |phi(x)| <= " << constant
            << "(1 + |x|^2) at |x| = " << x.norm();
        throw InvalidArgument(msg.str());
      }
    }
  }
}

namespace {

CylinderTest constant_one() {
  return {[](const Point&) { return 1.0; }, [](const Point& x) { return Point(Point::Zero(x.size())); },
          [](const Point& x) { return DiffusionMatrix(DiffusionMatrix::Zero(x.size(), x.size())); }};
}

CylinderTest first_coordinate() {
  return {[](const Point& x) { return x[0]; },
          [](const Point& x) {
            Point g = Point::Zero(x.size());
            g[0] = 1.0;
            return g;
          },
          [](const Point& x) { return DiffusionMatrix(DiffusionMatrix::Zero(x.size(), x.size())); }};
}

CylinderTest squared_norm() {
  return {[](const Point& x) { return x.squaredNorm(); }, [](const Point& x) { return Point(2.0 * x); },
          [](const Point& x) { return DiffusionMatrix(2.0 * DiffusionMatrix::Identity(x.size(), x.size())); }};
}

CylindricalFunction linear_of(std::string name, CylinderTest test) {
  CylindricalFunction f;
  f.name = std::move(name);
  f.tests.push_back(std::move(test));
  f.outer = [](const Eigen::VectorXd& v) { return v[0]; };
  f.outer_gradient = [](const Eigen::VectorXd&) { return Eigen::VectorXd::Ones(1).eval(); };
  return f;
}

}  // namespace

CylindricalFunction CylindricalFunction::mass() { return linear_of("mass", constant_one()); }
CylindricalFunction CylindricalFunction::first_moment() { return linear_of("m1", first_coordinate()); }
CylindricalFunction CylindricalFunction::second_moment() { return linear_of("m2", squared_norm()); }

CylindricalFunction CylindricalFunction::first_moment_squared() {
  CylindricalFunction f;
  f.name = "m1_squared";
  f.tests.push_back(first_coordinate());
  f.outer = [](const Eigen::VectorXd& v) { return v[0] * v[0]; };
  f.outer_gradient = [](const Eigen::VectorXd& v) { return (2.0 * v).eval(); };
  return f;
}

// ---------------------------------------------------------------------------
// Ito formula

double ito_generator(const CylindricalFunction& F, const ModelCoefficients& model, const ClosedLoopControl& control,
                     const MeasureFlow& flow, std::size_t j) {
  const FiniteMeasure& mu = flow.measure(j);
  const double t = flow.grid()[j];
  if (mu.empty()) return 0.0;
  const Eigen::VectorXd c = F.outer_gradient(F.inner(mu));
  CompensatedSum total;
  for (Eigen::Index k = 0; k < mu.size(); ++k) {
    const Point x = mu.position(k);
    const ControlValue a = control(t, x);
    const Point b = model.drift(t, x, mu, a);
    const DiffusionMatrix s = model.diffusion(t, x, mu, a);
    const DiffusionMatrix ss = s * s.transpose();
    const double growth = model.growth_rate(t, x, mu, a);
    double value = 0.0;
    for (std::size_t i = 0; i < F.tests.size(); ++i) {
      const CylinderTest& test = F.tests[i];
      const double term = b.dot(test.gradient(x)) + 0.5 * (ss.cwiseProduct(test.hessian(x))).sum() +
                          growth * test.phi(x);
      value += c[static_cast<Eigen::Index>(i)] * term;
    }
    total.add(mu.weights()[k] * value);
  }
  return total.value();
}

double ito_residual(const CylindricalFunction& F, const ModelCoefficients& model, const ClosedLoopControl& control,
                    const MeasureFlow& flow, double s, double t) {
  const auto is = flow.grid().index_of(s);
  const auto it = flow.grid().index_of(t);
  require(is.has_value() && it.has_value(), "ito_residual: s and t must be grid times of the flow");
  require(*is <= *it, "ito_residual: need s <= t");
  CompensatedSum integral;
  double previous = ito_generator(F, model, control, flow, *is);
  for (std::size_t j = *is; j < *it; ++j) {
    const double next = ito_generator(F, model, control, flow, j + 1);
    integral.add(0.5 * flow.grid().step(j) * (previous + next));
    previous = next;
  }
  return F(flow.measure(*it)) - F(flow.measure(*is)) - integral.value();
}

CheckReport ito_formula_check(const CylindricalFunction& F, const ModelCoefficients& model,
                              const ClosedLoopControl& control, const MeasureFlow& flow, double s, double t,
                              double tol) {
  CheckReport report;
  report.name = "ito_formula:" + F.name;
  report.statistic = std::abs(ito_residual(F, model, control, flow, s, t));
  report.threshold = tol;
  report.passed = report.statistic <= tol;
  report.samples = flow.size();
  return report;
}

// ---------------------------------------------------------------------------
// A priori bound

CheckReport check_population_bound(const std::vector<TreeSummary>& trees, double nu0_mass, double gamma_bar, double M1,
                                   double horizon) {
  require(trees.size() >= 10000, "check_population_bound: needs at least 10^4 trees");
  require(nu0_mass >= 0.0 && gamma_bar >= 0.0 && M1 >= 0.0 && horizon >= 0.0,
          "check_population_bound: parameters must be nonnegative");
  SampleStats stats;
  for (const TreeSummary& s : trees) stats.add(s.sup_population);
  CheckReport report;
  report.name = "population_bound";
  report.statistic = stats.mean();
  report.threshold = nu0_mass * std::exp(gamma_bar * M1 * horizon) + 3.0 * stats.standard_error();
  report.passed = report.statistic <= report.threshold;
  report.samples = trees.size();
  std::ostringstream detail;
  detail << "bound " << nu0_mass * std::exp(gamma_bar * M1 * horizon) << ", se " << stats.standard_error();
  report.detail = detail.str();
  return report;
}

// ---------------------------------------------------------------------------
// Dynamic programming and verification

DppResult dpp_values(const RiccatiSolution& sol, const Moments& m, double t, double s,
                     const std::vector<AffineFeedback>& panel, double dt) {
  const LQModel& model = sol.model();
  require(t >= model.t0 && t <= s && s <= model.horizon, "dpp_values: need t0 <= t <= s <= T");
  auto shared = std::make_shared<const RiccatiSolution>(sol);
  auto rhs_of = [&](const AffineFeedback& control) {
    const LQPolicyEvaluation eval = lq_evaluate_policy(model, control, t, m, s, dt);
    return eval.running + lq_value(sol, s, eval.end);
  };
  DppResult out;
  out.lhs = lq_value(sol, t, m);
  out.rhs_optimal = rhs_of(lq_optimal_affine(shared, t, m.mass));
  out.rhs = out.rhs_optimal;
  out.rhs_panel.reserve(panel.size());
  for (const AffineFeedback& control : panel) {
    out.rhs_panel.push_back(rhs_of(control));
    out.rhs = std::min(out.rhs, out.rhs_panel.back());
  }
  return out;
}

CheckReport check_dpp(const RiccatiSolution& sol, const Moments& m, double t, double s,
                      const std::vector<AffineFeedback>& panel, double tol, double dt) {
  const DppResult r = dpp_values(sol, m, t, s, panel, dt);
  CheckReport report;
  std::ostringstream name;
  name << "dpp:t=" << t << ":s=" << s;
  report.name = name.str();
  // Both one-sided violations; <= 0 when the inequalities hold exactly.
  report.statistic = std::max(r.lhs - r.rhs, r.rhs_optimal - r.lhs);
  report.threshold = tol;
  report.passed = report.statistic <= tol;
  report.samples = panel.size() + 1;
  std::ostringstream detail;
  detail.precision(17);
  detail << "lhs " << r.lhs << ", rhs " << r.rhs << ", rhs(a*) " << r.rhs_optimal;
  report.detail = detail.str();
  return report;
}

std::vector<AffineFeedback> perturbed_panel(const std::shared_ptr<const RiccatiSolution>& sol, double t, double mass,
                                            const std::vector<std::pair<double, double>>& shifts) {
  const AffineFeedback star = lq_optimal_affine(sol, t, mass);
  std::vector<AffineFeedback> panel;
  panel.reserve(shifts.size());
  for (const auto& [e0, e1] : shifts) {
    panel.push_back({[off = star.offset, e0](double u) { return off(u) + e0; },
                     [slope = star.slope, e1](double u) { return slope(u) + e1; }});
  }
  return panel;
}

std::vector<std::pair<double, double>> default_shifts(std::size_t count, double scale) {
  std::vector<std::pair<double, double>> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(count);
    const double radius = scale * (i % 2 == 0 ? 1.0 : 0.5);
    out.emplace_back(radius * std::cos(angle), radius * std::sin(angle));
  }
  return out;
}

CheckReport check_verification(const std::shared_ptr<const RiccatiSolution>& sol, const Moments& m0,
                               const std::vector<std::pair<double, double>>& shifts, double tol, double dt) {
  require(sol != nullptr, "check_verification: missing Riccati solution");
  const LQModel& model = sol->model();
  model.validate();
  const double t0 = sol->grid().start();
  const double value = lq_value(*sol, t0, m0);
  const double optimal = lq_cost_ode(model, lq_optimal_affine(sol, t0, m0.mass), t0, m0, dt);
  double statistic = std::abs(optimal - value);
  double min_margin = std::numeric_limits<double>::infinity();
  for (const AffineFeedback& control : perturbed_panel(sol, t0, m0.mass, shifts)) {
    const double margin = lq_cost_ode(model, control, t0, m0, dt) - value;
    min_margin = std::min(min_margin, margin);
    statistic = std::max(statistic, -margin);
  }
  CheckReport report;
  report.name = "verification";
  report.statistic = statistic;
  report.threshold = tol;
  report.passed = statistic <= tol;
  report.samples = shifts.size() + 1;
  std::ostringstream detail;
  detail.precision(17);
  detail << "w " << value << ", J(a*) " << optimal << ", min perturbed margin " << min_margin;
  report.detail = detail.str();
  return report;
}

MonteCarloVerification verification_monte_carlo(const std::shared_ptr<const RiccatiSolution>& sol,
                                                const FiniteMeasure& nu0, const TimeGrid& grid, std::size_t trees,
                                                std::uint64_t seed, const CostOptions& options) {
  require(sol != nullptr, "verification_monte_carlo: missing Riccati solution");
  const LQModel& model = sol->model();
  const double t0 = grid.start();
  const Moments m0 = Moments::of(nu0);
  const AffineFeedback affine = lq_optimal_affine(sol, t0, m0.mass);
  const ClosedLoopControl control = lq_optimal_control_law(sol, t0, m0.mass);
  const MeasureFlow flow = lq_moment_measure_flow(model, affine, m0, grid);
  MonteCarloVerification out;
  out.estimate = estimate_cost(lq_coefficients(model), lq_costs(model), control, flow, nu0, grid, trees, seed, options);
  out.value = lq_value(*sol, t0, m0);
  return out;
}

CheckReport check_verification_mc(const std::shared_ptr<const RiccatiSolution>& sol, const FiniteMeasure& nu0,
                                  const TimeGrid& grid, std::size_t trees, std::uint64_t seed,
                                  const CostOptions& options) {
  const MonteCarloVerification mc = verification_monte_carlo(sol, nu0, grid, trees, seed, options);
  CheckReport report;
  report.name = "verification_mc";
  report.statistic = std::abs(mc.estimate.mean - mc.value);
  report.threshold = 3.0 * mc.estimate.std_error;
  report.passed = report.statistic <= report.threshold;
  report.samples = trees;
  std::ostringstream detail;
  detail.precision(17);
  detail << "J " << mc.estimate.mean << ", se " << mc.estimate.std_error << ", w " << mc.value;
  report.detail = detail.str();
  return report;
}

// ---------------------------------------------------------------------------
// Initial-law invariance

namespace {

double z_score(double a, double b, double se_a, double se_b) {
  const double diff = std::abs(a - b);
  const double se = std::sqrt(se_a * se_a + se_b * se_b);
  if (se > 0.0) return diff / se;
  return diff > 1e-12 * (1.0 + std::abs(a)) ? std::numeric_limits<double>::infinity() : 0.0;
}

}  // namespace

InvarianceResult initial_law_invariance(const ModelCoefficients& model, const ClosedLoopControl& control,
                                        const FiniteMeasure& nu0, InitScheme scheme_a, InitScheme scheme_b,
                                        const TimeGrid& grid, std::uint64_t seed, const PicardOptions& options) {
  PicardOptions a_opts = options;
  a_opts.simulation.scheme = scheme_a;
  PicardOptions b_opts = options;
  b_opts.simulation.scheme = scheme_b;
  PicardResult a = solve_flow_picard(model, control, nu0, grid, seed, a_opts);
  PicardResult b = solve_flow_picard(model, control, nu0, grid, mix64(seed ^ 0x1A7C0DEull), b_opts);
  InvarianceResult out{std::move(a.flow), std::move(b.flow), 0.0, 0.0};
  for (std::size_t j = 0; j < grid.size(); ++j) {
    const MomentEstimate ea = moment_estimate(out.flow_a, j);
    const MomentEstimate eb = moment_estimate(out.flow_b, j);
    out.max_z = std::max({out.max_z, z_score(ea.mass, eb.mass, ea.mass_se, eb.mass_se),
                          z_score(ea.m2, eb.m2, ea.m2_se, eb.m2_se)});
    out.max_difference = std::max({out.max_difference, std::abs(ea.mass - eb.mass), std::abs(ea.m2 - eb.m2)});
    for (Eigen::Index i = 0; i < ea.m1.size(); ++i) {
      out.max_z = std::max(out.max_z, z_score(ea.m1[i], eb.m1[i], ea.m1_se[i], eb.m1_se[i]));
      out.max_difference = std::max(out.max_difference, std::abs(ea.m1[i] - eb.m1[i]));
    }
  }
  return out;
}

CheckReport check_initial_law_invariance(const ModelCoefficients& model, const ClosedLoopControl& control,
                                         const FiniteMeasure& nu0, InitScheme scheme_a, InitScheme scheme_b,
                                         const TimeGrid& grid, std::uint64_t seed, const PicardOptions& options,
                                         double z_threshold) {
  const InvarianceResult r = initial_law_invariance(model, control, nu0, scheme_a, scheme_b, grid, seed, options);
  CheckReport report;
  report.name = "initial_law_invariance";
  report.statistic = r.max_z;
  report.threshold = z_threshold;
  report.passed = r.max_z <= z_threshold;
  report.samples = options.trees;
  std::ostringstream detail;
  detail << to_string(scheme_a) << " vs " << to_string(scheme_b) << ", max |difference| " << r.max_difference;
  report.detail = detail.str();
  return report;
}

double max_hjb_residual(const RiccatiSolution& sol, int n, double max_mass, double max_m1, double spread) {
  require(n >= 2, "max_hjb_residual: need n >= 2");
  const double t0 = sol.grid().start(), T = sol.grid().end();
  double worst = 0.0;
  for (int i = 0; i < n; ++i) {
    const double t = t0 + (T - t0) * i / (n - 1);
    for (int k = 0; k < n; ++k) {
      const double mass = max_mass * (k + 1) / n;
      for (int l = 0; l < n; ++l) {
        const double m1 = -max_m1 + 2.0 * max_m1 * l / (n - 1);
        const Moments m{mass, m1, m1 * m1 / mass + spread * mass};
        worst = std::max(worst, std::abs(hjb_residual(sol, t, m)));
      }
    }
  }
  return worst;
}

std::vector<CheckReport> run_suite(const std::vector<NamedCheck>& checks, const std::string& config_hash) {
  std::vector<CheckReport> out;
  out.reserve(checks.size());
  for (const NamedCheck& check : checks) {
    CheckReport report;
    try {
      report = check.run();
    } catch (const std::exception& e) {
      report = CheckReport{};
      report.statistic = std::numeric_limits<double>::quiet_NaN();
      report.threshold = std::numeric_limits<double>::quiet_NaN();
      report.passed = false;
      report.detail = std::string("error: ") + e.what();
    }
    report.name = check.name;
    report.config_hash = config_hash;
    out.push_back(std::move(report));
  }
  std::stable_sort(out.begin(), out.end(), [](const CheckReport& a, const CheckReport& b) { return a.name < b.name; });
  return out;
}

}  // namespace mvb
