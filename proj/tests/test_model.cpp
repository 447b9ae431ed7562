#include <doctest.h>

#include "support.hpp"

using namespace mvb;
using namespace mvb::testing;

TEST_CASE("progeny normalisation folds the tail") {
  const auto p = normalize_progeny({0.1, 0.2, 0.3, 0.4}, 2);
  REQUIRE(p.size() == 3);
  CHECK(p[2] == doctest::Approx(0.7));
  CHECK(progeny_mean({0.25, 0.25, 0.5}) == doctest::Approx(1.25));
  CHECK(progeny_net_growth({0.2, 0.3, 0.5}) == doctest::Approx(0.3));
  CHECK_THROWS_AS(normalize_progeny({0.5, -0.1, 0.6}, 10), InvalidArgument);
  CHECK_THROWS_AS(normalize_progeny({}, 10), InvalidArgument);
}

TEST_CASE("state-dependent progeny respects the mean bound") {
  ProgenyLaw law([](double, const Point& x, const FiniteMeasure&, const ControlValue&) {
    return x[0] > 0.0 ? std::vector<double>{0.0, 0.0, 1.0} : std::vector<double>{1.0};
  }, 1.5);
  const ControlValue a = ControlValue::Zero(1);
  CHECK(law.probabilities(0.0, pt(-1.0), FiniteMeasure(1), a)[0] == 1.0);
  CHECK_THROWS_AS(law.probabilities(0.0, pt(1.0), FiniteMeasure(1), a), NumericalFailure);
  CHECK_THROWS_AS(ProgenyLaw::constant({0.0, 0.0, 1.0}, 1.0), InvalidArgument);
}

TEST_CASE("branching rate range is enforced") {
  ModelCoefficients m = constant_model(0, 0, 0, 1.0, {0.0, 1.0});
  m.rate_bound = 0.5;
  const ControlValue a = ControlValue::Zero(1);
  CHECK_THROWS_AS(m.rate(0.0, pt(0.0), FiniteMeasure(1), a), NumericalFailure);
  m.rate_bound = 2.0;
  CHECK(m.rate(0.0, pt(0.0), FiniteMeasure(1), a) == 1.0);
}

TEST_CASE("control spot checks") {
  CHECK_NOTHROW(spot_check_control(ClosedLoopControl::constant_affine(0.5, -1.0), 1, 0.0, 1.0));
  ClosedLoopControl cubic;
  cubic.feedback = [](double, const Point& x) {
    ControlValue a(1);
    a[0] = x[0] * x[0] * x[0];
    return a;
  };
  cubic.lipschitz = 1.0;
  CHECK_THROWS_AS(spot_check_control(cubic, 1, 0.0, 1.0), InvalidArgument);
}

TEST_CASE("model growth spot check") {
  ModelCoefficients m = constant_model(0.1, -0.5, 0.3, 1.0, {0.0, 1.0});
  m.growth_constant = 1.0;
  CHECK_NOTHROW(spot_check_model(m, ClosedLoopControl::zero(), FiniteMeasure(1), 0.0, 1.0));
  m.growth_constant = 0.01;
  CHECK_THROWS_AS(spot_check_model(m, ClosedLoopControl::zero(), FiniteMeasure(1), 0.0, 1.0), InvalidArgument);
}

TEST_CASE("time grids") {
  const TimeGrid g = TimeGrid::uniform(0.0, 1.0, 0.3);
  CHECK(g.steps() == 4);
  CHECK(g.end() == 1.0);
  CHECK(g.index_of(0.5).value() == 2);
  CHECK_FALSE(g.index_of(0.3).has_value());
  CHECK(g.floor_index(0.3).value() == 1);
  CHECK_FALSE(g.floor_index(-0.1).has_value());
  CHECK(g.slice(1, 3).size() == 3);
  CHECK_THROWS_AS(TimeGrid::uniform(0.0, 1.0, 0.0), InvalidArgument);
  CHECK_THROWS_AS(TimeGrid::uniform(0.0, 1.0, -0.1), InvalidArgument);
  CHECK_THROWS_AS(TimeGrid({0.0, 0.5, 0.5}), InvalidArgument);
}

TEST_CASE("measure flows") {
  const TimeGrid g = TimeGrid::uniform(0.0, 1.0, 0.25);
  const MeasureFlow grow = MeasureFlow::exponential(g, FiniteMeasure::dirac(pt(1.0), 2.0), 0.5);
  CHECK(grow.measure(4).mass() == doctest::Approx(2.0 * std::exp(0.5)));
  CHECK(grow.at(0.3).mass() == doctest::Approx(grow.measure(1).mass()));

  std::vector<Eigen::Vector3d> moments(g.size(), Eigen::Vector3d(2.0, 1.0, 3.0));
  const MeasureFlow two_atom = MeasureFlow::from_moments(g, moments);
  for (std::size_t j = 0; j < g.size(); ++j) {
    CHECK(two_atom.measure(j).mass() == doctest::Approx(2.0));
    CHECK(two_atom.measure(j).first_moment()[0] == doctest::Approx(1.0));
    CHECK(two_atom.measure(j).second_moment() == doctest::Approx(3.0));
  }
  CHECK(grow.covers(g.slice(1, 3)));
  CHECK_FALSE(grow.covers(TimeGrid::uniform(0.0, 2.0, 0.25)));
}
