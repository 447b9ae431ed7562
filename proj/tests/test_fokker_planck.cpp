#include <doctest.h>

#include <cmath>

#include "mvbranch/fokker_planck.hpp"
#include "support.hpp"

using namespace mvb;
using namespace mvb::testing;

namespace {

FpCoefficients constant_coefficients(double b, double sigma, double pi) {
  FpCoefficients c;
  c.drift = [b](double, double) { return b; };
  c.sigma = [sigma](double, double) { return sigma; };
  c.source = [pi](double, double) { return pi; };
  c.time_independent_sigma = true;
  return c;
}

double gaussian(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return std::exp(-0.5 * z * z) / (sd * std::sqrt(2.0 * M_PI));
}

double variance(const Eigen::VectorXd& rho, const SpaceGrid& space) {
  double m0 = 0.0, m1 = 0.0, m2 = 0.0;
  for (int i = 0; i < space.cells; ++i) {
    const double x = space.center(i), w = rho[i] * space.dx();
    m0 += w;
    m1 += w * x;
    m2 += w * x * x;
  }
  return m2 / m0 - (m1 / m0) * (m1 / m0);
}

}  // namespace

TEST_CASE("space grid") {
  const SpaceGrid g = SpaceGrid::with_step(-1.0, 1.0, 0.01);
  CHECK(g.cells == 200);
  CHECK(g.center(0) == doctest::Approx(-0.995));
  CHECK_THROWS_AS(SpaceGrid::with_step(1.0, -1.0, 0.01), InvalidArgument);
}

TEST_CASE("heat equation conserves mass and spreads variance") {
  const SpaceGrid space = SpaceGrid::with_step(-6.0, 6.0, 0.01);
  const TimeGrid time = TimeGrid::uniform(0.0, 1.0, 0.01);
  const Eigen::VectorXd rho0 = discretize_density([](double x) { return gaussian(x, 0.0, 0.5); }, space);
  const DensityFlow flow = fp_solve(constant_coefficients(0.0, 0.7, 0.0), rho0, space, time);
  CHECK(std::abs(flow.mass.back() - flow.mass.front()) < 1e-8);
  const double grown = variance(flow.density.back(), space) - variance(flow.density.front(), space);
  CHECK(grown == doctest::Approx(0.49).epsilon(0.02));
  CHECK(flow.min_density >= -1e-12);
}

TEST_CASE("constant source grows mass exponentially") {
  const SpaceGrid space = SpaceGrid::with_step(-6.0, 6.0, 0.02);
  const TimeGrid time = TimeGrid::uniform(0.0, 1.0, 0.01);
  const Eigen::VectorXd rho0 = discretize_density([](double x) { return 2.0 * gaussian(x, 0.3, 0.5); }, space);
  const DensityFlow flow = fp_solve(constant_coefficients(0.2, 0.5, 0.7), rho0, space, time);
  for (std::size_t j = 0; j < time.size(); j += 20)
    CHECK(flow.mass[j] == doctest::Approx(flow.mass[0] * std::exp(0.7 * time[j])).epsilon(0.005));
}

TEST_CASE("pure transport shifts the density by cT") {
  const SpaceGrid space = SpaceGrid::with_step(-3.0, 3.0, 0.01);
  const TimeGrid time = TimeGrid::uniform(0.0, 1.0, 0.005);
  const Eigen::VectorXd rho0 = discretize_density([](double x) { return gaussian(x, -1.0, 0.2); }, space);
  const DensityFlow flow = fp_solve(constant_coefficients(1.5, 0.0, 0.0), rho0, space, time);
  auto mean = [&](const Eigen::VectorXd& rho) {
    double m0 = 0.0, m1 = 0.0;
    for (int i = 0; i < space.cells; ++i) {
      m0 += rho[i];
      m1 += rho[i] * space.center(i);
    }
    return m1 / m0;
  };
  CHECK(std::abs(mean(flow.density.back()) - mean(rho0) - 1.5) <= space.dx());
}

TEST_CASE("explicit scheme enforces its stability bound") {
  const SpaceGrid space = SpaceGrid::with_step(-2.0, 2.0, 0.01);
  const TimeGrid time = TimeGrid::uniform(0.0, 0.1, 0.01);
  const Eigen::VectorXd rho0 = discretize_density([](double x) { return gaussian(x, 0.0, 0.3); }, space);
  FpOptions options;
  options.scheme = FpScheme::kExplicit;
  CHECK_THROWS_AS(fp_solve(constant_coefficients(0.0, 1.0, 0.0), rho0, space, time, options), NumericalFailure);
  const TimeGrid fine = TimeGrid::uniform(0.0, 0.01, 2e-5);
  const DensityFlow flow = fp_solve(constant_coefficients(0.0, 1.0, 0.0), rho0, space, fine, options);
  CHECK(std::abs(flow.mass.back() - flow.mass.front()) < 1e-8);
}

TEST_CASE("non-finite coefficients are rejected") {
  const SpaceGrid space = SpaceGrid::with_step(-2.0, 2.0, 0.05);
  const TimeGrid time = TimeGrid::uniform(0.0, 0.1, 0.01);
  FpCoefficients bad = constant_coefficients(0.0, 1.0, 0.0);
  bad.drift = [](double, double x) { return x > 1.0 ? NAN : 0.0; };
  const Eigen::VectorXd rho0 = discretize_density([](double x) { return gaussian(x, 0.0, 0.3); }, space);
  CHECK_THROWS_AS(fp_solve(bad, rho0, space, time), NumericalFailure);
}

TEST_CASE("zero-value boundary loses mass, zero flux does not") {
  const SpaceGrid space = SpaceGrid::with_step(-1.0, 1.0, 0.02);
  const TimeGrid time = TimeGrid::uniform(0.0, 0.5, 0.01);
  const Eigen::VectorXd rho0 = discretize_density([](double x) { return gaussian(x, 0.0, 0.3); }, space);
  FpOptions flux, value;
  value.boundary = FpBoundary::kZeroValue;
  const double kept = fp_solve(constant_coefficients(0.0, 1.0, 0.0), rho0, space, time, flux).mass.back();
  const double lost = fp_solve(constant_coefficients(0.0, 1.0, 0.0), rho0, space, time, value).mass.back();
  CHECK(kept == doctest::Approx(rho0.sum() * space.dx()).epsilon(1e-10));
  CHECK(lost < kept - 0.05);
}

TEST_CASE("eta norm") {
  const SpaceGrid space = SpaceGrid::with_step(-1.0, 1.0, 0.01);
  CHECK(eta_norm(Eigen::VectorXd::Zero(space.cells), space, 1.0) == 0.0);
  CHECK(eta_norm(Eigen::VectorXd::Constant(space.cells, 0.7), space, 0.0) == doctest::Approx(0.7 * std::sqrt(2.0)));

  const SpaceGrid coarse = SpaceGrid::with_step(-10.0, 10.0, 0.01), fine = SpaceGrid::with_step(-10.0, 10.0, 0.005);
  auto phi = [](double x) { return gaussian(x, 0.0, 1.0); };
  const double a = eta_norm(discretize_density(phi, coarse), coarse, 1.0);
  const double b = eta_norm(discretize_density(phi, fine), fine, 1.0);
  CHECK(std::isfinite(a));
  CHECK(a == doctest::Approx(b).epsilon(0.01));

  const SpaceGrid huge = SpaceGrid::with_step(-1000.0, 1000.0, 1.0);
  CHECK(std::isinf(eta_norm(Eigen::VectorXd::Constant(huge.cells, 1.0), huge, 1.0)));
}

TEST_CASE("mass leak detection") {
  const FiniteMeasure inside = atoms({-0.5, 0.5}, {1.0, 1.0});
  const FiniteMeasure outside = atoms({-0.5, 3.0}, {1.0, 1.0});
  const SpaceGrid space = SpaceGrid::with_step(-1.0, 1.0, 0.1);
  CHECK_NOTHROW(check_mass_leak(inside, space));
  CHECK_THROWS_AS(check_mass_leak(outside, space), InvalidArgument);
}

TEST_CASE("weak-form residual is first order") {
  const FpCoefficients c = constant_coefficients(0.3, 0.6, 0.4);
  auto residual = [&](double dx, double dt) {
    const SpaceGrid space = SpaceGrid::with_step(-4.0, 4.0, dx);
    const TimeGrid time = TimeGrid::uniform(0.0, 1.0, dt);
    const Eigen::VectorXd rho0 = discretize_density([](double x) { return gaussian(x, 0.0, 0.4); }, space);
    const DensityFlow flow = fp_solve(c, rho0, space, time);
    double worst = 0.0;
    for (double center : {-1.0, -0.5, 0.0, 0.5, 1.0})
      worst = std::max(worst, std::abs(weak_form_residual(flow, c, bump_test(center, 1.0))));
    return worst;
  };
  const double coarse = residual(0.04, 0.02), fine = residual(0.02, 0.01);
  CHECK(coarse / fine == doctest::Approx(2.0).epsilon(0.4));
}

TEST_CASE("density from atoms and back") {
  const SpaceGrid space = SpaceGrid::with_step(-1.0, 1.0, 0.5);
  const Eigen::VectorXd rho = density_from_measure(atoms({-0.9, 0.1, 0.2, 5.0}, {1.0, 0.5, 0.5, 3.0}), space);
  CHECK(rho.sum() * space.dx() == doctest::Approx(2.0));
  const DensityFlow flow{space, TimeGrid({0.0}), FpBoundary::kZeroFlux, {rho}, {2.0}};
  CHECK(flow.as_measure(0).mass() == doctest::Approx(2.0));
}

TEST_CASE("ellipticity report") {
  const SpaceGrid space = SpaceGrid::with_step(-1.0, 1.0, 0.1);
  const TimeGrid time = TimeGrid::uniform(0.0, 1.0, 0.1);
  CHECK(ellipticity(constant_coefficients(0, 0.5, 0), space, time).uniformly_elliptic);
  FpCoefficients degenerate = constant_coefficients(0, 0.5, 0);
  degenerate.sigma = [](double, double x) { return std::abs(x) < 0.5 ? 0.0 : 1.0; };
  CHECK_FALSE(ellipticity(degenerate, space, time).uniformly_elliptic);
}

TEST_CASE("frozen coefficients and uniqueness stress") {
  const ModelCoefficients model = constant_model(0.5, -0.8, 0.7, 1.0, {0.2, 0.3, 0.5});
  const TimeGrid grid = TimeGrid::uniform(0.0, 1.0, 0.01);
  const MeasureFlow flow = trivial_flow(grid);
  const ClosedLoopControl zero = ClosedLoopControl::zero();
  const FpCoefficients c = frozen_coefficients(model, zero, flow);
  CHECK(c.drift(0.0, 1.0) == doctest::Approx(-0.3));
  CHECK(c.source(0.0, 0.0) == doctest::Approx(0.3));

  // nu0 = 2.5 N(0, 0.5^2): quantile atoms for the particles.
  std::vector<double> xs, ws;
  for (int k = 0; k < 400; ++k) {
    const double x = -2.5 + 5.0 * (k + 0.5) / 400.0;
    xs.push_back(x);
    ws.push_back(2.5 * gaussian(x, 0.0, 0.5) * 5.0 / 400.0);
  }
  UniquenessOptions options;
  options.trees = 3000;
  options.dx = {0.04, 0.02, 0.01};
  const UniquenessReport r = uniqueness_stress(model, zero, flow, atoms(xs, ws),
                                               [](double x) { return 2.5 * gaussian(x, 0.0, 0.5); }, -5.0, 5.0,
                                               options);
  REQUIRE(r.fd_distances.size() == 2);
  CHECK(r.fd_ratio == doctest::Approx(2.0).epsilon(0.5));
  CHECK(r.ellipticity.uniformly_elliptic);
  // The liftings differ in joint law only; their marginal gap sits at the
  // same-lifting noise level.
  CHECK(r.particle_distance < 3.0 * r.particle_null_distance + 0.02);
}
