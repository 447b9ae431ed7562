#include "mvbranch/engine.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <sstream>
#include <thread>

namespace mvb {

std::string to_string(InitScheme scheme) {
  switch (scheme) {
    case InitScheme::kDeterministicRounding: return "deterministic_rounding";
    case InitScheme::kBernoulliResidual: return "bernoulli_residual";
    case InitScheme::kPoisson: return "poisson";
    case InitScheme::kClustered: return "clustered";
  }
  return "unknown";
}

InitScheme init_scheme_from_string(const std::string& name) {
  for (InitScheme s : {InitScheme::kDeterministicRounding, InitScheme::kBernoulliResidual, InitScheme::kPoisson,
                       InitScheme::kClustered}) {
    if (to_string(s) == name) return s;
  }
  throw InvalidArgument("unknown init scheme '" + name + "'");
}

// ---------------------------------------------------------------------------
// Initial configurations

InitialSampler::InitialSampler(FiniteMeasure nu0, InitScheme scheme) : nu0_(std::move(nu0)), scheme_(scheme) {
  const double mass = nu0_.mass();
  if (scheme_ == InitScheme::kDeterministicRounding && std::abs(mass - std::round(mass)) > 1e-9) {
    std::ostringstream msg;
    msg << "init_population: deterministic_rounding needs an integer mass, got " << mass;
    throw InvalidArgument(msg.str());
  }
  cumulative_.resize(static_cast<std::size_t>(nu0_.size()));
  double acc = 0.0;
  for (Eigen::Index i = 0; i < nu0_.size(); ++i) {
    acc += nu0_.weights()[i];
    cumulative_[static_cast<std::size_t>(i)] = acc;
  }
}

Point InitialSampler::draw_position(SplitMix64& rng) const {
  const double u = rng.uniform() * cumulative_.back();
  auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
  const auto i = std::min<std::size_t>(static_cast<std::size_t>(it - cumulative_.begin()), cumulative_.size() - 1);
  return nu0_.position(static_cast<Eigen::Index>(i));
}

std::size_t InitialSampler::draw_count(SplitMix64& rng) const {
  const double mass = nu0_.mass();
  switch (scheme_) {
    case InitScheme::kDeterministicRounding: return static_cast<std::size_t>(std::llround(mass));
    case InitScheme::kPoisson: return mass > 0.0 ? std::poisson_distribution<std::size_t>(mass)(rng) : 0;
    case InitScheme::kBernoulliResidual:
    case InitScheme::kClustered: {
      const double whole = std::floor(mass);
      return static_cast<std::size_t>(whole) + (rng.uniform() < mass - whole ? 1 : 0);
    }
  }
  return 0;
}

Configuration InitialSampler::draw(SplitMix64& rng) const {
  const std::size_t n = nu0_.empty() ? 0 : draw_count(rng);
  std::vector<Label> labels(n);
  Eigen::MatrixXd positions(nu0_.dimension(), static_cast<Eigen::Index>(n));
  const Point shared = scheme_ == InitScheme::kClustered && n > 0 ? draw_position(rng) : Point();
  for (std::size_t k = 0; k < n; ++k) {
    labels[k] = Label{static_cast<std::uint32_t>(k + 1)};
    positions.col(static_cast<Eigen::Index>(k)) = scheme_ == InitScheme::kClustered ? shared : draw_position(rng);
  }
  return Configuration::trusted(std::move(labels), std::move(positions));
}

Configuration init_population(const FiniteMeasure& nu0, InitScheme scheme, std::uint64_t seed) {
  SplitMix64 rng(tagged(StreamKey(seed), StreamTag::kInitial));
  return InitialSampler(nu0, scheme).draw(rng);
}

int sample_offspring(double u, std::span<const double> p) {
  double acc = 0.0;
  for (std::size_t l = 0; l < p.size(); ++l) {
    acc += p[l];
    if (u < acc) return static_cast<int>(l);
  }
  // Rounding can leave u just above the last partial sum; take the last
  // ell with positive probability.
  for (std::size_t l = p.size(); l-- > 0;) {
    if (p[l] > 0.0) return static_cast<int>(l);
  }
  return 0;
}

// ---------------------------------------------------------------------------
// Single tree

SimulationPlan::SimulationPlan(const ModelCoefficients& model, const ClosedLoopControl& control,
                               const MeasureFlow& flow, const TimeGrid& grid)
    : model_(&model), control_(&control), flow_(&flow), grid_(&grid) {
  require(static_cast<bool>(model.drift) && static_cast<bool>(model.diffusion) &&
              static_cast<bool>(model.branching_rate),
          "simulate: model coefficients are incomplete");
  require(static_cast<bool>(control.feedback), "simulate: control has no feedback");
  require(model.rate_bound > 0.0 && std::isfinite(model.rate_bound), "simulate: rate bound must be positive");
  if (!flow.covers(grid)) throw InvalidArgument("simulate: the measure flow does not cover the time grid");
  if (flow.dimension() != model.dimension) throw DimensionMismatch("simulate: flow and model dimensions differ");
  flow_index_.resize(grid.size());
  for (std::size_t j = 0; j < grid.size(); ++j) flow_index_[j] = *flow.grid().floor_index(grid[j]);
}

namespace {

[[noreturn]] void fail_nonfinite(const char* what, const Label& label, double t) {
  std::ostringstream msg;
  msg << "simulate: non-finite " << what << " for particle " << format_label(label) << " at t = " << t;
  throw NumericalFailure(msg.str());
}

}  // namespace

void simulate_tree(const SimulationPlan& plan, Configuration initial, const StreamKey& tree_key,
                   TreeObserver& observer) {
  const ModelCoefficients& model = plan.model();
  const ClosedLoopControl& control = plan.control();
  const TimeGrid& grid = plan.grid();
  const int d = model.dimension;
  if (initial.dimension() != d) throw DimensionMismatch("simulate: initial configuration has the wrong dimension");

  std::vector<Label> labels = initial.labels();
  Eigen::MatrixXd positions = initial.positions();
  const double gamma_bar = model.rate_bound;
  const StreamKey step_root = tagged(tree_key, StreamTag::kStep);

  observer.on_snapshot(0, grid[0], PopulationView{labels, positions});

  struct Birth {
    std::size_t particle;
    int offspring;
  };
  std::vector<Birth> births;
  Point xi(d);

  for (std::size_t j = 0; j < grid.steps(); ++j) {
    const double t = grid[j];
    const double dt = grid.step(j);
    const double sqrt_dt = std::sqrt(dt);
    const double candidate_prob = -std::expm1(-gamma_bar * dt);
    const FiniteMeasure& mu = plan.measure_at_step(j);
    const StreamKey step_key = step_root.child(j);
    births.clear();

    for (std::size_t i = 0; i < labels.size(); ++i) {
      const auto col = static_cast<Eigen::Index>(i);
      const Point x = positions.col(col);
      const ControlValue a = control(t, x);
      const Point b = model.drift(t, x, mu, a);
      const DiffusionMatrix s = model.diffusion(t, x, mu, a);
      if (!a.allFinite()) fail_nonfinite("control", labels[i], t);
      if (!b.allFinite() || !s.allFinite()) fail_nonfinite("drift/diffusion", labels[i], t);

      SplitMix64 rng(step_key.child(i));
      for (int r = 0; r < d; ++r) xi[r] = rng.normal();
      const Point next = x + b * dt + s * xi * sqrt_dt;
      if (!next.allFinite()) fail_nonfinite("position", labels[i], grid[j + 1]);
      positions.col(col) = next;

      if (rng.uniform() < candidate_prob) {
        const double gamma = model.rate(t, x, mu, a);
        if (rng.uniform() * gamma_bar < gamma) {
          const std::vector<double> p = model.progeny.probabilities(t, x, mu, a);
          births.push_back({i, sample_offspring(rng.uniform(), p)});
        }
      }
    }

    if (!births.empty()) {
      std::size_t extra = 0;
      for (const Birth& e : births) extra += static_cast<std::size_t>(e.offspring);
      const std::size_t next_size = labels.size() - births.size() + extra;
      if (next_size > plan.max_population) {
        std::ostringstream msg;
        msg << "simulate: population " << next_size << " exceeds the cap " << plan.max_population << " at t = "
            << grid[j + 1];
        throw NumericalFailure(msg.str());
      }
      std::vector<Label> next_labels;
      next_labels.reserve(next_size);
      Eigen::MatrixXd next_positions(d, static_cast<Eigen::Index>(next_size));
      std::size_t out = 0;
      std::size_t cursor = 0;
      for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto col = static_cast<Eigen::Index>(i);
        if (cursor < births.size() && births[cursor].particle == i) {
          const int l = births[cursor++].offspring;
          observer.on_event(BranchEvent{grid[j + 1], labels[i], l});
          for (int c = 1; c <= l; ++c) {
            next_labels.push_back(child_label(labels[i], static_cast<std::uint32_t>(c)));
            next_positions.col(static_cast<Eigen::Index>(out++)) = positions.col(col);
          }
        } else {
          next_labels.push_back(std::move(labels[i]));
          next_positions.col(static_cast<Eigen::Index>(out++)) = positions.col(col);
        }
      }
      labels = std::move(next_labels);
      positions = std::move(next_positions);
    }

    observer.on_snapshot(j + 1, grid[j + 1], PopulationView{labels, positions});
  }
}

namespace {

class RecordingObserver : public TreeObserver {
 public:
  explicit RecordingObserver(TreeTrajectory& out) : out_(out) {}
  void on_snapshot(std::size_t, double, const PopulationView& population) override {
    out_.snapshots.push_back(population.to_configuration());
  }
  void on_event(const BranchEvent& event) override { out_.events.push_back(event); }

 private:
  TreeTrajectory& out_;
};

}  // namespace

TreeTrajectory simulate_tree(const ModelCoefficients& model, const ClosedLoopControl& control, const MeasureFlow& flow,
                             const Configuration& initial, const TimeGrid& grid, std::uint64_t seed) {
  const SimulationPlan plan(model, control, flow, grid);
  TreeTrajectory trajectory{grid, {}, {}};
  trajectory.snapshots.reserve(grid.size());
  RecordingObserver recorder(trajectory);
  simulate_tree(plan, initial, StreamKey(seed), recorder);
  return trajectory;
}

FiniteMeasure empirical_measure(std::span<const TreeTrajectory> trees, double t) {
  require(!trees.empty(), "empirical_measure: no trees");
  const int d = trees.front().snapshots.front().dimension();
  std::vector<const Configuration*> at_t;
  at_t.reserve(trees.size());
  Eigen::Index total = 0;
  for (const TreeTrajectory& tree : trees) {
    const auto j = tree.grid.index_of(t);
    if (!j) throw InvalidArgument("empirical_measure: t is not a grid time of every tree");
    at_t.push_back(&tree.snapshots[*j]);
    total += static_cast<Eigen::Index>(at_t.back()->size());
  }
  Eigen::MatrixXd positions(d, total);
  Eigen::Index col = 0;
  for (const Configuration* c : at_t) {
    positions.middleCols(col, static_cast<Eigen::Index>(c->size())) = c->positions();
    col += static_cast<Eigen::Index>(c->size());
  }
  return FiniteMeasure(std::move(positions), Eigen::VectorXd::Constant(total, 1.0 / static_cast<double>(trees.size())));
}

// ---------------------------------------------------------------------------
// Batches

void parallel_for_blocks(std::size_t blocks, unsigned workers, const std::function<void(std::size_t)>& job) {
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = static_cast<unsigned>(std::min<std::size_t>(workers, blocks));
  if (workers <= 1) {
    for (std::size_t b = 0; b < blocks; ++b) job(b);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    for (std::size_t b = next++; b < blocks; b = next++) {
      try {
        job(b);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = blocks;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

void SummaryObserver::begin_tree(std::size_t, const Configuration&) { current_ = TreeSummary{}; }

void SummaryObserver::on_snapshot(std::size_t, double, const PopulationView& population) {
  const auto n = static_cast<double>(population.size());
  current_.sup_population = std::max(current_.sup_population, n);
  current_.sup_second_moment = std::max(current_.sup_second_moment, population.positions.squaredNorm());
  current_.final_population = n;
}

void SummaryObserver::end_tree() { summaries_.push_back(current_); }

std::vector<TreeSummary> simulate_summaries(const SimulationPlan& plan, const InitialSampler& init, std::size_t trees,
                                            std::uint64_t seed, const BatchOptions& options) {
  auto blocks = run_batch<SummaryObserver>(
      plan, init, trees, StreamKey(seed), [](std::size_t) { return SummaryObserver{}; }, options);
  std::vector<TreeSummary> out;
  out.reserve(trees);
  for (const auto& block : blocks) out.insert(out.end(), block.summaries().begin(), block.summaries().end());
  return out;
}

}  // namespace mvb
