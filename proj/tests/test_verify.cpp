#include <doctest.h>

#include <cmath>

#include "mvbranch/lq.hpp"
#include "mvbranch/verify.hpp"
#include "support.hpp"

using namespace mvb;
using namespace mvb::testing;

namespace {

LQModel reference_model() {
  LQModel m;
  m.b1 = -0.5;
  m.b2 = 0.1;
  m.b3 = 1.0;
  m.sigma = 0.5;
  m.p = {0.2, 0.3, 0.5};
  m.L1 = 1.0;
  m.L2 = 0.5;
  m.L3 = 0.2;
  m.L4 = 1.0;
  m.g1 = 1.0;
  m.g2 = 0.5;
  m.g3 = 0.1;
  return m;
}

std::shared_ptr<const RiccatiSolution> solve(const LQModel& m) {
  return std::make_shared<const RiccatiSolution>(solve_riccati(m, TimeGrid::uniform(0.0, 1.0, 1e-3)));
}

}  // namespace

TEST_CASE("cylindrical derivatives agree with finite differences") {
  const FiniteMeasure m = atoms({-0.4, 0.3, 1.2}, {0.5, 1.0, 0.7});
  const double eps = 1e-6;
  for (const CylindricalFunction& F : {CylindricalFunction::mass(), CylindricalFunction::first_moment(),
                                       CylindricalFunction::first_moment_squared(), CylindricalFunction::second_moment()}) {
    for (double x : {-1.0, 0.2, 0.9}) {
      const FiniteMeasure bumped = mixture(m, 1.0, FiniteMeasure::dirac(pt(x)), eps);
      CHECK((F(bumped) - F(m)) / eps == doctest::Approx(F.linear_derivative(m, x * Point::Ones(1))).epsilon(1e-5));
      const double h = 1e-5;
      const double fd = (F.linear_derivative(m, pt(x + h)) - F.linear_derivative(m, pt(x - h))) / (2.0 * h);
      CHECK(F.intrinsic_derivative(m, pt(x))[0] == doctest::Approx(fd).epsilon(1e-6));
      const double fd2 = (F.intrinsic_derivative(m, pt(x + h))[0] - F.intrinsic_derivative(m, pt(x - h))[0]) / (2.0 * h);
      CHECK(F.intrinsic_hessian(m, pt(x))(0, 0) == doctest::Approx(fd2).epsilon(1e-6));
    }
  }
  CHECK(CylindricalFunction::first_moment_squared()(m) == doctest::Approx(std::pow(m.first_moment()[0], 2)));
}

TEST_CASE("quadratic growth guard") {
  CHECK_NOTHROW(CylindricalFunction::second_moment().check_quadratic_growth(1, 1.0));
  CylindricalFunction quartic = CylindricalFunction::mass();
  quartic.tests[0].phi = [](const Point& x) { return std::pow(x[0], 4); };
  CHECK_THROWS_AS(quartic.check_quadratic_growth(1, 10.0), InvalidArgument);
}

TEST_CASE("Ito residuals on a moment-ODE flow") {
  const LQModel lq = reference_model();
  const auto sol = solve(lq);
  const TimeGrid grid = TimeGrid::uniform(0.0, 1.0, 1e-3);
  const AffineFeedback affine = lq_optimal_affine(sol, 0.0, 1.0);
  const MeasureFlow flow = lq_moment_measure_flow(lq, affine, {1.0, 0.5, 0.5}, grid);
  const ModelCoefficients model = lq_coefficients(lq);
  const ClosedLoopControl control = ClosedLoopControl::from_affine(affine, 2.0);
  CHECK(std::abs(ito_residual(CylindricalFunction::mass(), model, control, flow, 0.0, 1.0)) < 1e-6);
  CHECK(std::abs(ito_residual(CylindricalFunction::first_moment(), model, control, flow, 0.0, 1.0)) < 1e-6);
  CHECK(std::abs(ito_residual(CylindricalFunction::first_moment_squared(), model, control, flow, 0.2, 0.8)) < 1e-6);
  const CheckReport r = ito_formula_check(CylindricalFunction::second_moment(), model, control, flow, 0.0, 1.0, 1e-6);
  CHECK(r.passed);
  CHECK(r.name == "ito_formula:m2");
  CHECK_THROWS_AS(ito_residual(CylindricalFunction::mass(), model, control, flow, 0.0, 0.00051), InvalidArgument);
}

TEST_CASE("population bound") {
  const TimeGrid grid = TimeGrid::uniform(0.0, 1.0, 0.02);
  const MeasureFlow flow = trivial_flow(grid);
  const ClosedLoopControl zero = ClosedLoopControl::zero();

  const ModelCoefficients still = constant_model(0, 0, 0.2, 1.0, {0.0, 1.0});
  const SimulationPlan still_plan(still, zero, flow, grid);
  const auto frozen = simulate_summaries(still_plan, InitialSampler(atoms({0.0}, {3.0}), InitScheme::kDeterministicRounding),
                                         10000, 1);
  const CheckReport flat = check_population_bound(frozen, 3.0, 1.0, 1.0, 1.0);
  CHECK(flat.statistic == 3.0);
  CHECK(flat.passed);

  const ModelCoefficients binary = constant_model(0, 0, 0.0, 1.0, {0.0, 0.0, 1.0});
  const SimulationPlan binary_plan(binary, zero, flow, grid);
  const auto grown = simulate_summaries(binary_plan, InitialSampler(atoms({0.0}, {1.0}), InitScheme::kDeterministicRounding),
                                        10000, 2);
  const CheckReport supercritical = check_population_bound(grown, 1.0, 1.0, 2.0, 1.0);
  CHECK(supercritical.passed);
  CHECK(supercritical.statistic == doctest::Approx(std::exp(1.0)).epsilon(0.05));

  const ModelCoefficients death = constant_model(0, 0, 0.0, 1.0, {1.0});
  const SimulationPlan death_plan(death, zero, flow, grid);
  const auto dying = simulate_summaries(death_plan, InitialSampler(atoms({0.0}, {1.0}), InitScheme::kDeterministicRounding),
                                        10000, 3);
  const CheckReport edge = check_population_bound(dying, 1.0, 1.0, 0.0, 1.0);
  CHECK(edge.threshold >= 1.0);
  CHECK(edge.passed);

  CHECK_THROWS_AS(check_population_bound(std::vector<TreeSummary>(100), 1.0, 1.0, 1.0, 1.0), InvalidArgument);
}

TEST_CASE("dynamic programming checks") {
  const auto sol = solve(reference_model());
  const Moments m{1.0, 0.5, 0.5};
  const auto panel = perturbed_panel(sol, 0.25, m.mass, default_shifts(20));
  CHECK(panel.size() == 20);

  const DppResult same = dpp_values(*sol, m, 0.4, 0.4, panel);
  CHECK(same.rhs == same.lhs);
  CHECK(same.rhs_optimal == same.lhs);

  const DppResult to_end = dpp_values(*sol, m, 0.0, 1.0, {});
  CHECK(std::abs(to_end.rhs_optimal - lq_cost_ode(sol->model(), lq_optimal_affine(sol, 0.0, m.mass), 0.0, m)) < 1e-9);

  const CheckReport r = check_dpp(*sol, m, 0.25, 0.75, panel);
  CHECK(r.passed);
  CHECK(r.statistic <= 1e-6);

  // Enlarging the panel never raises the minimum.
  const auto small = std::vector<AffineFeedback>(panel.begin(), panel.begin() + 5);
  CHECK(dpp_values(*sol, m, 0.25, 0.75, panel).rhs <= dpp_values(*sol, m, 0.25, 0.75, small).rhs);
}

TEST_CASE("deterministic verification") {
  const auto sol = solve(reference_model());
  const CheckReport r = check_verification(sol, {1.0, 0.5, 0.5}, default_shifts(20));
  CHECK(r.passed);

  LQModel zero = reference_model();
  zero.L1 = zero.L2 = zero.L3 = 0.0;
  zero.g1 = zero.g2 = zero.g3 = 0.0;
  const CheckReport z = check_verification(solve(zero), {1.0, 0.5, 0.5}, default_shifts(4));
  CHECK(z.passed);
  CHECK(z.statistic == 0.0);
}

TEST_CASE("Monte Carlo verification") {
  const auto sol = solve(reference_model());
  const TimeGrid grid = TimeGrid::uniform(0.0, 1.0, 0.005);
  const CheckReport r = check_verification_mc(sol, atoms({0.0, 1.0}, {0.5, 0.5}), grid, 10000, 17);
  CHECK(r.passed);
  CHECK(r.samples == 10000);
}

TEST_CASE("initial-law invariance null calibration") {
  const TimeGrid grid = TimeGrid::uniform(0.0, 1.0, 0.05);
  const ModelCoefficients model = constant_model(0.2, -0.5, 0.5, 1.0, {0.2, 0.3, 0.5});
  PicardOptions options;
  options.trees = 4000;
  options.tol = 0.2;
  options.max_iter = 2;
  const ClosedLoopControl zero = ClosedLoopControl::zero();
  const CheckReport same = check_initial_law_invariance(model, zero, atoms({0.0, 1.0}, {1.0, 1.0}),
                                                        InitScheme::kDeterministicRounding,
                                                        InitScheme::kDeterministicRounding, grid, 5, options);
  CHECK(same.passed);
  const CheckReport integer = check_initial_law_invariance(model, zero, atoms({0.0, 1.0}, {1.5, 1.5}),
                                                           InitScheme::kDeterministicRounding,
                                                           InitScheme::kBernoulliResidual, grid, 6, options);
  CHECK(integer.passed);
}

TEST_CASE("HJB grid maximum") {
  CHECK(max_hjb_residual(*solve(reference_model())) < 1e-6);
}

TEST_CASE("suite runner isolates failures and sorts by name") {
  const std::vector<NamedCheck> checks{
      {"b_pass", [] { return CheckReport{"b_pass", 0.0, 1.0, true, 1, "", ""}; }},
      {"a_throw", []() -> CheckReport { throw NumericalFailure("boom"); }},
      {"c_fail", [] { return CheckReport{"c_fail", 2.0, 1.0, false, 1, "", ""}; }},
  };
  const auto reports = run_suite(checks, "abc");
  REQUIRE(reports.size() == 3);
  CHECK(reports[0].name == "a_throw");
  CHECK_FALSE(reports[0].passed);
  CHECK(std::isnan(reports[0].statistic));
  CHECK(reports[0].detail.find("boom") != std::string::npos);
  CHECK(reports[1].passed);
  CHECK_FALSE(reports[2].passed);
  for (const auto& r : reports) CHECK(r.config_hash == "abc");
  CHECK(run_suite({}).empty());
}
