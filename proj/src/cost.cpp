#include "mvbranch/cost.hpp"

#include <cmath>
#include <sstream>

#include "mvbranch/stats.hpp"

namespace mvb {

void spot_check_costs(const CostSpec& costs, const ClosedLoopControl& control, const FiniteMeasure& m, int dimension,
                      double t0, double horizon, double radius, std::uint64_t seed) {
  SplitMix64 rng(StreamKey{seed});
  const double mass_terms = 1.0 + m.second_moment() + m.mass();
  for (int k = 0; k < 64; ++k) {
    const double t = t0 + rng.uniform() * (horizon - t0);
    Point x(dimension);
    for (int r = 0; r < dimension; ++r) x[r] = (2.0 * rng.uniform() - 1.0) * radius;
    const ControlValue a = control(t, x);
    const double l = costs.running(t, x, m, a);
    const double g = costs.terminal(x, m);
    if (!std::isfinite(l) || !std::isfinite(g)) throw NumericalFailure("cost: non-finite value at a spot check");
    if (costs.running_growth &&
        std::abs(l) > *costs.running_growth * (mass_terms + x.squaredNorm() + a.squaredNorm()) * (1.0 + 1e-9)) {
      std::ostringstream msg;
      msg << "cost: running cost exceeds its declared growth bound at t = " << t;
      throw InvalidArgument(msg.str());
    }
    if (costs.terminal_growth && std::abs(g) > *costs.terminal_growth * (mass_terms + x.squaredNorm()) * (1.0 + 1e-9))
      throw InvalidArgument("cost: terminal cost exceeds its declared growth bound");
  }
}

namespace {

class CostObserver : public TreeObserver {
 public:
  CostObserver(const SimulationPlan& plan, const CostSpec& costs) : plan_(plan), costs_(costs) {}

  void begin_tree(std::size_t, const Configuration&) override {
    running_ = CompensatedSum{};
    terminal_ = 0.0;
  }

  void on_snapshot(std::size_t step, double t, const PopulationView& population) override {
    const TimeGrid& grid = plan_.grid();
    if (step < grid.steps()) {
      const FiniteMeasure& mu = plan_.measure_at_step(step);
      const double dt = grid.step(step);
      for (Eigen::Index i = 0; i < population.positions.cols(); ++i) {
        const Point x = population.positions.col(i);
        running_.add(dt * costs_.running(t, x, mu, plan_.control()(t, x)));
      }
    } else {
      const FiniteMeasure& mu = plan_.flow().at(t);
      CompensatedSum g;
      for (Eigen::Index i = 0; i < population.positions.cols(); ++i) g.add(costs_.terminal(population.positions.col(i), mu));
      terminal_ = g.value();
    }
  }

  void end_tree() override {
    const double r = running_.value();
    if (!std::isfinite(r) || !std::isfinite(terminal_)) throw NumericalFailure("estimate_cost: non-finite tree cost");
    running_stats_.add(r);
    terminal_stats_.add(terminal_);
    total_stats_.add(r + terminal_);
  }

  const SampleStats& running_stats() const { return running_stats_; }
  const SampleStats& terminal_stats() const { return terminal_stats_; }
  const SampleStats& total_stats() const { return total_stats_; }

 private:
  const SimulationPlan& plan_;
  const CostSpec& costs_;
  CompensatedSum running_;
  double terminal_ = 0.0;
  SampleStats running_stats_;
  SampleStats terminal_stats_;
  SampleStats total_stats_;
};

}  // namespace

CostEstimate estimate_cost(const ModelCoefficients& model, const CostSpec& costs, const ClosedLoopControl& control,
                           const MeasureFlow& flow, const FiniteMeasure& nu0, const TimeGrid& grid, std::size_t trees,
                           std::uint64_t seed, const CostOptions& options) {
  require(trees >= 100, "estimate_cost: need at least 100 trees");
  require(static_cast<bool>(costs.running) && static_cast<bool>(costs.terminal), "estimate_cost: incomplete costs");
  const SimulationPlan plan(model, control, flow, grid);
  const InitialSampler sampler(nu0, options.scheme);
  auto blocks = run_batch<CostObserver>(
      plan, sampler, trees, StreamKey(seed), [&](std::size_t) { return CostObserver(plan, costs); }, options.batch);
  SampleStats running, terminal, total;
  for (const auto& b : blocks) {
    running.merge(b.running_stats());
    terminal.merge(b.terminal_stats());
    total.merge(b.total_stats());
  }
  CostEstimate est;
  est.mean = total.mean();
  est.std_error = total.standard_error();
  est.trees = trees;
  est.running = running.mean();
  est.terminal = terminal.mean();
  return est;
}

CostEstimate estimate_cost(const ModelCoefficients& model, const CostSpec& costs, const ClosedLoopControl& control,
                           const FiniteMeasure& nu0, const TimeGrid& grid, std::size_t trees, std::uint64_t seed,
                           const PicardOptions& picard, const CostOptions& options) {
  const PicardResult fixed_point = solve_flow_picard(model, control, nu0, grid, mix64(seed ^ 0x5EEDF10Bull), picard);
  CostEstimate est = estimate_cost(model, costs, control, fixed_point.flow, nu0, grid, trees, seed, options);
  est.flow_converged = fixed_point.diagnostics.converged;
  return est;
}

}  // namespace mvb
