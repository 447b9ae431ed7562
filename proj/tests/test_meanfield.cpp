#include <doctest.h>

#include <cmath>

#include "mvbranch/lq.hpp"
#include "mvbranch/meanfield.hpp"
#include "support.hpp"

using namespace mvb;
using namespace mvb::testing;

namespace {

LQModel small_lq() {
  LQModel m;
  m.b1 = -0.5;
  m.b2 = 0.1;
  m.b3 = 1.0;
  m.sigma = 0.5;
  m.gamma = 1.0;
  m.p = {0.2, 0.3, 0.5};
  m.L1 = 1.0;
  m.L4 = 1.0;
  m.g1 = 1.0;
  return m;
}

bool within(double diff, double se, double k = 3.0) { return std::abs(diff) <= k * se + 1e-12; }

}  // namespace

TEST_CASE("measure-independent model converges at the noise floor") {
  const TimeGrid grid = TimeGrid::uniform(0.0, 1.0, 0.02);
  const ModelCoefficients model = constant_model(0.0, -0.5, 0.5, 1.0, {0.2, 0.3, 0.5});
  const FiniteMeasure nu0 = atoms({0.0, 1.0}, {0.5, 0.5});
  PicardOptions options;
  options.trees = 4000;
  options.tol = 0.1;
  options.max_iter = 3;
  const PicardResult r = solve_flow_picard(model, ClosedLoopControl::zero(), nu0, grid, 3, options);
  CHECK(r.diagnostics.converged);
  CHECK(r.diagnostics.iterations <= 2);
  CHECK(r.diagnostics.residuals.back() < options.tol);
  CHECK(r.flow.provenance().source == FlowSource::kPicard);
}

TEST_CASE("an unreachable tolerance is reported as not converged") {
  const TimeGrid grid = TimeGrid::uniform(0.0, 0.5, 0.05);
  const ModelCoefficients model = constant_model(0.0, 0.0, 0.3, 1.0, {0.0, 1.0});
  PicardOptions options;
  options.trees = 200;
  options.tol = 0.0;
  options.max_iter = 3;
  const PicardResult r = solve_flow_picard(model, ClosedLoopControl::zero(), atoms({0.0}, {1.0}), grid, 1, options);
  CHECK_FALSE(r.diagnostics.converged);
  CHECK(r.diagnostics.iterations == 3);
  CHECK(r.diagnostics.residuals.size() == 3);
  CHECK(r.diagnostics.moment_residuals.size() == 3);
}

TEST_CASE("too few trees are rejected") {
  const TimeGrid grid = TimeGrid::uniform(0.0, 0.5, 0.05);
  const ModelCoefficients model = constant_model(0.0, 0.0, 0.3, 1.0, {0.0, 1.0});
  PicardOptions options;
  options.trees = 50;
  CHECK_THROWS_AS(solve_flow_picard(model, ClosedLoopControl::zero(), atoms({0.0}, {1.0}), grid, 1, options),
                  InvalidArgument);
}

TEST_CASE("mass flow follows exp(theta t)") {
  const TimeGrid grid = TimeGrid::uniform(0.0, 1.0, 0.02);
  const ModelCoefficients model = constant_model(0.0, 0.0, 0.5, 1.0, {0.2, 0.3, 0.5});
  const FiniteMeasure nu0 = atoms({0.0}, {1.5});
  const MeasureFlow flow = simulate_flow(model, ClosedLoopControl::zero(), trivial_flow(grid), nu0, grid, 20000,
                                         StreamKey(4));
  for (std::size_t j = 0; j < grid.size(); j += 10) {
    const MomentEstimate e = moment_estimate(flow, j);
    CHECK(within(e.mass - 1.5 * std::exp(0.3 * grid[j]), e.mass_se));
  }
}

TEST_CASE("Picard flow of an LQ closed loop matches the moment ODEs") {
  const LQModel lq = small_lq();
  const TimeGrid grid = TimeGrid::uniform(0.0, 1.0, 0.01);
  const ModelCoefficients model = lq_coefficients(lq);
  AffineFeedback affine{[](double) { return 0.2; }, [](double) { return -0.4; }};
  const ClosedLoopControl control = ClosedLoopControl::from_affine(affine, 0.4);
  const FiniteMeasure nu0 = atoms({0.0, 1.0}, {0.5, 0.5});
  PicardOptions options;
  options.trees = 8000;
  options.tol = 0.08;
  options.max_iter = 4;
  const PicardResult r = solve_flow_picard(model, control, nu0, grid, 11, options);
  const auto ode = lq_moment_flow(lq, affine, Moments::of(nu0), grid);
  for (std::size_t j = 0; j < grid.size(); j += 20) {
    const MomentEstimate e = moment_estimate(r.flow, j);
    CHECK(within(e.mass - ode[j].mass, e.mass_se));
    CHECK(within(e.m1[0] - ode[j].m1, e.m1_se[0]));
    CHECK(within(e.m2 - ode[j].m2, e.m2_se));
  }
}

TEST_CASE("flow property") {
  const TimeGrid grid = TimeGrid::uniform(0.0, 1.0, 0.02);
  PicardOptions options;
  options.trees = 4000;
  options.tol = 0.1;
  options.max_iter = 3;

  SUBCASE("degenerate interval") {
    const ModelCoefficients model = constant_model(0.0, 0.0, 0.5, 1.0, {0.2, 0.3, 0.5});
    const FlowPropertyReport r =
        flow_property_check(model, ClosedLoopControl::zero(), atoms({0.0}, {1.0}), grid, 0.5, 0.5, 0.5, 3, options);
    CHECK(r.wbar1 == 0.0);
    CHECK(r.mass_diff == 0.0);
  }

  SUBCASE("deterministic transport") {
    const ModelCoefficients model = constant_model(0.5, 0.0, 0.0, 1.0, {0.0, 1.0});
    const FlowPropertyReport r =
        flow_property_check(model, ClosedLoopControl::zero(), atoms({0.0}, {1.0}), grid, 0.0, 0.5, 1.0, 3, options);
    CHECK(r.wbar1 < 1e-9);
    CHECK(std::abs(r.m1_diff) < 1e-9);
  }

  SUBCASE("LQ restart") {
    const LQModel lq = small_lq();
    const ModelCoefficients model = lq_coefficients(lq);
    const ClosedLoopControl control = ClosedLoopControl::constant_affine(0.1, -0.3);
    const FlowPropertyReport r =
        flow_property_check(model, control, atoms({0.0, 1.0}, {0.5, 0.5}), grid, 0.0, 0.5, 1.0, 5, options);
    CHECK(within(r.mass_diff, r.mass_se));
    CHECK(within(r.m1_diff, r.m1_se));
    CHECK(within(r.m2_diff, r.m2_se));
  }
}

TEST_CASE("residual check indices span the grid") {
  const auto idx = residual_check_indices(101, 21);
  CHECK(idx.size() == 21);
  CHECK(idx.front() == 0);
  CHECK(idx.back() == 100);
  CHECK(residual_check_indices(5, 21).size() == 5);
}
