#include <doctest.h>

#include <cmath>

#include "mvbranch/stats.hpp"
#include "support.hpp"

using namespace mvb;
using namespace mvb::testing;

namespace {

const ClosedLoopControl zero = ClosedLoopControl::zero();

/// Counts snapshots that violate the antichain property.
class AuditObserver : public TreeObserver {
 public:
  void on_snapshot(std::size_t, double, const PopulationView& population) override {
    if (!population.to_configuration().is_antichain()) ++broken_snapshots;
  }
  void on_event(const BranchEvent& event) override { events.push_back(event); }

  std::size_t broken_snapshots = 0;
  std::vector<BranchEvent> events;
};

}  // namespace

TEST_CASE("sample_offspring partition lookup") {
  const std::vector<double> p{0.25, 0.25, 0.5};
  CHECK(sample_offspring(0.1, p) == 0);
  CHECK(sample_offspring(0.3, p) == 1);
  CHECK(sample_offspring(0.6, p) == 2);
  CHECK(sample_offspring(0.25, p) == 1);
  CHECK(sample_offspring(0.999999999, p) == 2);
}

TEST_CASE("init_population examples") {
  const FiniteMeasure three = atoms({-0.5, 0.2, 1.1}, {1.0, 1.0, 1.0});
  const Configuration c = init_population(three, InitScheme::kDeterministicRounding, 4);
  REQUIRE(c.size() == 3);
  CHECK(c.labels()[0] == Label{1});
  CHECK(c.labels()[2] == Label{3});
  CHECK(init_population(FiniteMeasure(1), InitScheme::kBernoulliResidual, 1).empty());
  CHECK_THROWS_AS(init_population(atoms({0.0}, {2.5}), InitScheme::kDeterministicRounding, 1), InvalidArgument);
  CHECK(init_scheme_from_string(to_string(InitScheme::kClustered)) == InitScheme::kClustered);
  CHECK_THROWS_AS(init_scheme_from_string("nope"), InvalidArgument);
}

TEST_CASE("bernoulli residual count has the right mean") {
  const InitialSampler sampler(atoms({0.0, 1.0}, {1.25, 1.25}), InitScheme::kBernoulliResidual);
  SampleStats count;
  const StreamKey root(99);
  for (std::uint64_t i = 0; i < 100000; ++i) {
    SplitMix64 rng(root.child(i));
    count.add(static_cast<double>(sampler.draw(rng).size()));
  }
  CHECK(std::abs(count.mean() - 2.5) <= 3.0 * count.standard_error());
}

TEST_CASE("clustered and poisson liftings share the mean count") {
  const FiniteMeasure nu0 = atoms({0.0, 1.0}, {1.25, 1.25});
  for (InitScheme scheme : {InitScheme::kClustered, InitScheme::kPoisson}) {
    const InitialSampler sampler(nu0, scheme);
    SampleStats count, x;
    const StreamKey root(7);
    for (std::uint64_t i = 0; i < 40000; ++i) {
      SplitMix64 rng(root.child(i));
      const Configuration c = sampler.draw(rng);
      count.add(static_cast<double>(c.size()));
      double sum = 0.0;
      for (std::size_t k = 0; k < c.size(); ++k) sum += c.position(k)[0];
      x.add(sum);
    }
    CHECK(std::abs(count.mean() - 2.5) <= 3.0 * count.standard_error());
    CHECK(std::abs(x.mean() - 1.25) <= 3.0 * x.standard_error());
  }
}

TEST_CASE("frozen dynamics keep the population") {
  const TimeGrid grid = TimeGrid::uniform(0.0, 1.0, 0.01);
  const ModelCoefficients model = constant_model(0, 0, 0, 5.0, {0.0, 1.0});
  const Configuration init(std::vector<Label>{{1}, {2}, {3}}, atoms({0.1, 0.2, 0.3}, {1, 1, 1}).positions());
  const TreeTrajectory tree = simulate_tree(model, ClosedLoopControl::zero(), trivial_flow(grid), init, grid, 3);
  CHECK(tree.snapshots.size() == grid.size());
  CHECK(tree.snapshots.back().size() == 3);
  CHECK_FALSE(tree.events.empty());
  Eigen::VectorXd xs = tree.snapshots.back().positions().row(0).transpose();
  std::sort(xs.data(), xs.data() + xs.size());
  CHECK(xs[0] == 0.1);
  CHECK(xs[2] == 0.3);
  for (const BranchEvent& e : tree.events) CHECK(e.offspring == 1);
}

TEST_CASE("simulation is deterministic in the seed") {
  const TimeGrid grid = TimeGrid::uniform(0.0, 1.0, 0.01);
  const ModelCoefficients model = constant_model(0.2, -0.3, 0.7, 1.5, {0.3, 0.2, 0.5});
  const Configuration init = init_population(atoms({0.0, 1.0}, {1, 1}), InitScheme::kDeterministicRounding, 1);
  const TreeTrajectory a = simulate_tree(model, ClosedLoopControl::zero(), trivial_flow(grid), init, grid, 77);
  const TreeTrajectory b = simulate_tree(model, ClosedLoopControl::zero(), trivial_flow(grid), init, grid, 77);
  REQUIRE(a.events.size() == b.events.size());
  for (std::size_t j = 0; j < grid.size(); ++j) {
    CHECK(a.snapshots[j].labels() == b.snapshots[j].labels());
    CHECK((a.snapshots[j].positions() - b.snapshots[j].positions()).norm() == 0.0);
  }
}

TEST_CASE("antichain and label consistency under branching") {
  const TimeGrid grid = TimeGrid::uniform(0.0, 1.0, 0.01);
  const ModelCoefficients model = constant_model(0.0, 0.0, 1.0, 2.0, {0.3, 0.2, 0.3, 0.2});
  const MeasureFlow flow = trivial_flow(grid);
  const SimulationPlan plan(model, zero, flow, grid);
  const Configuration init = init_population(atoms({0.0}, {2.0}), InitScheme::kDeterministicRounding, 1);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    AuditObserver audit;
    simulate_tree(plan, init, StreamKey(seed), audit);
    CHECK(audit.broken_snapshots == 0);
  }
  // Children appear in the snapshot taken at the event time and the parent
  // never shows up again.
  const TreeTrajectory tree = simulate_tree(model, ClosedLoopControl::zero(), flow, init, grid, 5);
  REQUIRE_FALSE(tree.events.empty());
  for (const BranchEvent& e : tree.events) {
    const auto at = grid.index_of(e.time);
    REQUIRE(at.has_value());
    const auto& born = tree.snapshots[*at].labels();
    for (int i = 1; i <= e.offspring; ++i) {
      const Label child = child_label(e.parent, static_cast<std::uint32_t>(i));
      const bool present = std::any_of(born.begin(), born.end(), [&](const Label& l) { return is_prefix(child, l); });
      CHECK(present);
    }
    for (std::size_t j = *at; j < grid.size(); ++j) {
      for (const Label& l : tree.snapshots[j].labels()) CHECK(l != e.parent);
    }
  }
}

TEST_CASE("pure death survival probability") {
  const TimeGrid grid = TimeGrid::uniform(0.0, 1.0, 0.01);
  const ModelCoefficients model = constant_model(0, 0, 0, 1.0, {1.0});
  const MeasureFlow flow = trivial_flow(grid);
  const SimulationPlan plan(model, zero, flow, grid);
  const InitialSampler init(atoms({0.0}, {1.0}), InitScheme::kDeterministicRounding);
  const auto trees = simulate_summaries(plan, init, 100000, 21);
  SampleStats alive;
  for (const TreeSummary& s : trees) alive.add(s.final_population > 0 ? 1.0 : 0.0);
  // The thinning clock fires with probability 1 - exp(-dt) per step, which is
  // exact for a constant rate.
  CHECK(std::abs(alive.mean() - std::exp(-1.0)) <= 3.0 * alive.standard_error());
}

TEST_CASE("critical branching keeps the expected population") {
  const TimeGrid grid = TimeGrid::uniform(0.0, 1.0, 0.01);
  const ModelCoefficients model = constant_model(0, 0, 0.5, 2.0, {0.5, 0.0, 0.5});
  const MeasureFlow flow = trivial_flow(grid);
  const SimulationPlan plan(model, zero, flow, grid);
  const InitialSampler init(atoms({0.0}, {5.0}), InitScheme::kDeterministicRounding);
  const auto trees = simulate_summaries(plan, init, 100000, 22);
  SampleStats count;
  for (const TreeSummary& s : trees) count.add(s.final_population);
  CHECK(std::abs(count.mean() - 5.0) <= 3.0 * count.standard_error());
}

TEST_CASE("empirical_measure examples") {
  const TimeGrid grid({0.0, 1.0});
  TreeTrajectory one{grid, {}, {}};
  one.snapshots.assign(2, Configuration(std::vector<Label>{{1}, {2}, {3}}, atoms({0, 1, 2}, {1, 1, 1}).positions()));
  const std::vector<TreeTrajectory> single{one};
  const FiniteMeasure mu = empirical_measure(single, 1.0);
  CHECK(mu.size() == 3);
  CHECK(mu.mass() == 3.0);

  TreeTrajectory a{grid, {}, {}}, b{grid, {}, {}};
  a.snapshots.assign(2, Configuration(std::vector<Label>{{1}}, atoms({0}, {1}).positions()));
  b.snapshots.assign(2, Configuration(std::vector<Label>{{1}}, atoms({4}, {1}).positions()));
  const std::vector<TreeTrajectory> pair{a, b};
  const FiniteMeasure nu = empirical_measure(pair, 0.0);
  CHECK(nu.mass() == 1.0);
  CHECK(nu.weights()[0] == 0.5);
  CHECK_THROWS_AS(empirical_measure(pair, 0.5), InvalidArgument);
}

TEST_CASE("batch results do not depend on the worker count") {
  const TimeGrid grid = TimeGrid::uniform(0.0, 0.5, 0.01);
  const ModelCoefficients model = constant_model(0.1, 0, 0.5, 1.0, {0.2, 0.3, 0.5});
  const MeasureFlow flow = trivial_flow(grid);
  const SimulationPlan plan(model, zero, flow, grid);
  const InitialSampler init(atoms({0.0}, {1.5}), InitScheme::kBernoulliResidual);
  const auto one = simulate_summaries(plan, init, 700, 5, {64, 1});
  const auto four = simulate_summaries(plan, init, 700, 5, {64, 4});
  REQUIRE(one.size() == four.size());
  for (std::size_t i = 0; i < one.size(); ++i) {
    CHECK(one[i].sup_population == four[i].sup_population);
    CHECK(one[i].sup_second_moment == four[i].sup_second_moment);
  }
}

TEST_CASE("second-moment supremum is stable under step halving") {
  const ModelCoefficients model = constant_model(0.0, -0.5, 1.0, 1.0, {0.2, 0.3, 0.5});
  const InitialSampler init(atoms({0.5}, {1.0}), InitScheme::kDeterministicRounding);
  double estimates[2];
  const double steps[2] = {0.02, 0.01};
  for (int k = 0; k < 2; ++k) {
    const TimeGrid grid = TimeGrid::uniform(0.0, 1.0, steps[k]);
    const MeasureFlow flow = trivial_flow(grid);
    const SimulationPlan plan(model, zero, flow, grid);
    SampleStats s;
    for (const TreeSummary& t : simulate_summaries(plan, init, 20000, 31 + k)) s.add(t.sup_second_moment);
    estimates[k] = s.mean();
    CHECK(std::isfinite(estimates[k]));
  }
  CHECK(std::abs(estimates[0] / estimates[1] - 1.0) < 0.1);
}

TEST_CASE("simulation rejects a flow that does not cover the grid") {
  const TimeGrid grid = TimeGrid::uniform(0.0, 1.0, 0.1);
  const MeasureFlow short_flow = trivial_flow(TimeGrid::uniform(0.0, 0.5, 0.1));
  const ModelCoefficients model = constant_model(0, 0, 0, 1.0, {0.0, 1.0});
  CHECK_THROWS_AS(simulate_tree(model, ClosedLoopControl::zero(), short_flow, Configuration(1), grid, 1),
                  InvalidArgument);
}

TEST_CASE("non-finite coefficients abort with a diagnostic") {
  const TimeGrid grid = TimeGrid::uniform(0.0, 1.0, 0.1);
  ModelCoefficients model = constant_model(0, 0, 0, 1.0, {0.0, 1.0});
  model.drift = [](double, const Point&, const FiniteMeasure&, const ControlValue&) {
    Point b(1);
    b[0] = NAN;
    return b;
  };
  const Configuration init(std::vector<Label>{{1}}, atoms({0}, {1}).positions());
  CHECK_THROWS_AS(simulate_tree(model, ClosedLoopControl::zero(), trivial_flow(grid), init, grid, 1), NumericalFailure);
}
