#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mvbranch/flow.hpp"
#include "mvbranch/measures.hpp"
#include "mvbranch/model.hpp"
#include "mvbranch/rng.hpp"

namespace mvb {

/// Ways of lifting an initial measure nu0 to a random configuration.
///
/// kDeterministicRounding and kBernoulliResidual place i.i.d. particles drawn
/// from nu0 / mass. kPoisson draws a Poisson(mass) count of i.i.d. particles.
/// kClustered draws floor(mass) + Bernoulli(frac) particles that all sit at a
/// single position drawn from nu0 / mass. All four share the same mean
/// measure nu0 but differ in joint law.
enum class InitScheme { kDeterministicRounding, kBernoulliResidual, kPoisson, kClustered };

std::string to_string(InitScheme scheme);
InitScheme init_scheme_from_string(const std::string& name);

/// Prepared sampler for repeated draws of initial configurations.
class InitialSampler {
 public:
  InitialSampler(FiniteMeasure nu0, InitScheme scheme);

  Configuration draw(SplitMix64& rng) const;

  const FiniteMeasure& initial_measure() const { return nu0_; }
  InitScheme scheme() const { return scheme_; }

 private:
  Point draw_position(SplitMix64& rng) const;
  std::size_t draw_count(SplitMix64& rng) const;

  FiniteMeasure nu0_;
  InitScheme scheme_;
  std::vector<double> cumulative_;
};

Configuration init_population(const FiniteMeasure& nu0, InitScheme scheme, std::uint64_t seed);

/// The unique l with u in [p_0 + ... + p_{l-1}, p_0 + ... + p_l).
int sample_offspring(double u, std::span<const double> p);

struct BranchEvent {
  double time = 0.0;
  Label parent;
  int offspring = 0;
};

struct TreeTrajectory {
  TimeGrid grid;
  std::vector<Configuration> snapshots;  // one per grid time
  std::vector<BranchEvent> events;
};

/// Borrowed view of the alive particles of a tree; valid only during the
/// observer callback that receives it.
struct PopulationView {
  const std::vector<Label>& labels;
  const Eigen::MatrixXd& positions;  // d x n

  std::size_t size() const { return labels.size(); }
  Configuration to_configuration() const { return Configuration::trusted(labels, positions); }
};

/// Receives the population at every grid time of one simulated tree.
class TreeObserver {
 public:
  virtual ~TreeObserver() = default;
  virtual void begin_tree(std::size_t /*tree_index*/, const Configuration& /*initial*/) {}
  virtual void on_snapshot(std::size_t step, double t, const PopulationView& population) = 0;
  virtual void on_event(const BranchEvent& /*event*/) {}
  virtual void end_tree() {}
};

/// Model, control, frozen flow and grid bundled for repeated simulation.
/// Holds references: the arguments must outlive the plan.
class SimulationPlan {
 public:
  SimulationPlan(const ModelCoefficients& model, const ClosedLoopControl& control, const MeasureFlow& flow,
                 const TimeGrid& grid);
  // Temporaries would dangle.
  SimulationPlan(ModelCoefficients&&, const ClosedLoopControl&, const MeasureFlow&, const TimeGrid&) = delete;
  SimulationPlan(const ModelCoefficients&, ClosedLoopControl&&, const MeasureFlow&, const TimeGrid&) = delete;
  SimulationPlan(const ModelCoefficients&, const ClosedLoopControl&, MeasureFlow&&, const TimeGrid&) = delete;
  SimulationPlan(const ModelCoefficients&, const ClosedLoopControl&, const MeasureFlow&, TimeGrid&&) = delete;

  const ModelCoefficients& model() const { return *model_; }
  const ClosedLoopControl& control() const { return *control_; }
  const MeasureFlow& flow() const { return *flow_; }
  const TimeGrid& grid() const { return *grid_; }

  /// Interaction measure used on step j (left endpoint, frozen).
  const FiniteMeasure& measure_at_step(std::size_t j) const { return flow_->measure(flow_index_[j]); }

  /// Abort a tree whose population exceeds this bound.
  std::size_t max_population = 5'000'000;

 private:
  const ModelCoefficients* model_;
  const ClosedLoopControl* control_;
  const MeasureFlow* flow_;
  const TimeGrid* grid_;
  std::vector<std::size_t> flow_index_;
};

/// Euler-Maruyama diffusion with dominated-thinning branching; streams every
/// grid-time population to `observer`. Draws for particle i on step j come
/// from `tree_key` split by (step tag, j, i).
void simulate_tree(const SimulationPlan& plan, Configuration initial, const StreamKey& tree_key,
                   TreeObserver& observer);

TreeTrajectory simulate_tree(const ModelCoefficients& model, const ClosedLoopControl& control, const MeasureFlow& flow,
                             const Configuration& initial, const TimeGrid& grid, std::uint64_t seed);

/// Atoms of all alive particles at grid time `t`, each weighted 1 / #trees.
FiniteMeasure empirical_measure(std::span<const TreeTrajectory> trees, double t);

struct BatchOptions {
  std::size_t block_size = 256;
  unsigned workers = 0;  // 0: hardware concurrency
};

/// Runs `job(block)` for block = 0..blocks-1 on a worker pool. The first
/// exception thrown by any job is rethrown.
void parallel_for_blocks(std::size_t blocks, unsigned workers, const std::function<void(std::size_t)>& job);

/// Simulates `trees` independent trees. Tree i draws its initial
/// configuration and dynamics from `root.child(i)`. Trees are grouped in
/// fixed blocks, each with its own observer from `make_observer(block)`;
/// observers come back in block order, so reductions over them do not depend
/// on the worker count. An observer method `finish_block()`, when present,
/// runs on the worker after the block's last tree.
template <typename Observer, typename Factory>
std::vector<Observer> run_batch(const SimulationPlan& plan, const InitialSampler& init, std::size_t trees,
                                const StreamKey& root, Factory make_observer, const BatchOptions& options = {}) {
  const std::size_t block_size = std::max<std::size_t>(1, options.block_size);
  const std::size_t blocks = (trees + block_size - 1) / block_size;
  std::vector<std::optional<Observer>> results(blocks);
  parallel_for_blocks(blocks, options.workers, [&](std::size_t b) {
    Observer observer = make_observer(b);
    const std::size_t first = b * block_size;
    const std::size_t last = std::min(trees, first + block_size);
    for (std::size_t tree = first; tree < last; ++tree) {
      const StreamKey key = root.child(tree);
      SplitMix64 rng(tagged(key, StreamTag::kInitial));
      Configuration initial = init.draw(rng);
      observer.begin_tree(tree, initial);
      simulate_tree(plan, std::move(initial), key, observer);
      observer.end_tree();
    }
    if constexpr (requires { observer.finish_block(); }) observer.finish_block();
    results[b].emplace(std::move(observer));
  });
  std::vector<Observer> out;
  out.reserve(blocks);
  for (auto& r : results) out.push_back(std::move(*r));
  return out;
}

/// Per-tree summaries used by the a priori bound checks.
struct TreeSummary {
  double sup_population = 0.0;
  double sup_second_moment = 0.0;  // sup_s sum_k |X^k_s|^2
  double final_population = 0.0;
};

/// Collects a TreeSummary per tree of a block.
class SummaryObserver : public TreeObserver {
 public:
  void begin_tree(std::size_t tree_index, const Configuration& initial) override;
  void on_snapshot(std::size_t step, double t, const PopulationView& population) override;
  void end_tree() override;

  const std::vector<TreeSummary>& summaries() const { return summaries_; }

 private:
  TreeSummary current_;
  std::vector<TreeSummary> summaries_;
};

std::vector<TreeSummary> simulate_summaries(const SimulationPlan& plan, const InitialSampler& init, std::size_t trees,
                                            std::uint64_t seed, const BatchOptions& options = {});

}  // namespace mvb
