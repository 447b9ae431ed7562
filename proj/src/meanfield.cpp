#include "mvbranch/meanfield.hpp"

#include <cmath>
#include <limits>
#include <set>

namespace mvb {

namespace {

struct MomentSums {
  double n = 0.0;
  double n_sq = 0.0;
  Eigen::VectorXd s1;
  Eigen::VectorXd s1_sq;
  double s2 = 0.0;
  double s2_sq = 0.0;
};

/// Accumulates per-time moment sums and (thinned) particle positions for the
/// trees of one block.
class FlowObserver : public TreeObserver {
 public:
  FlowObserver(std::size_t times, int dimension, double tree_weight, std::size_t block_cap)
      : dimension_(dimension), tree_weight_(tree_weight), block_cap_(block_cap), sums_(times), buffers_(times) {
    for (auto& s : sums_) {
      s.s1 = Eigen::VectorXd::Zero(dimension);
      s.s1_sq = Eigen::VectorXd::Zero(dimension);
    }
  }

  void on_snapshot(std::size_t step, double, const PopulationView& population) override {
    MomentSums& s = sums_[step];
    const auto n = static_cast<double>(population.size());
    const Eigen::VectorXd first = population.positions.rowwise().sum();
    const double second = population.positions.squaredNorm();
    s.n += n;
    s.n_sq += n * n;
    s.s1 += first;
    s.s1_sq += first.cwiseAbs2();
    s.s2 += second;
    s.s2_sq += second * second;
    auto& buffer = buffers_[step];
    buffer.insert(buffer.end(), population.positions.data(),
                  population.positions.data() + population.positions.size());
  }

  void finish_block() {
    measures_.reserve(buffers_.size());
    for (auto& buffer : buffers_) {
      const auto n = static_cast<Eigen::Index>(buffer.size()) / dimension_;
      Eigen::MatrixXd positions = Eigen::Map<const Eigen::MatrixXd>(buffer.data(), dimension_, n);
      FiniteMeasure mu(std::move(positions), Eigen::VectorXd::Constant(n, tree_weight_));
      measures_.push_back(block_cap_ > 0 ? thin_to_quantiles(mu, static_cast<Eigen::Index>(block_cap_))
                                         : std::move(mu));
      std::vector<double>().swap(buffer);
    }
  }

  const std::vector<MomentSums>& sums() const { return sums_; }
  const std::vector<FiniteMeasure>& measures() const { return measures_; }

 private:
  int dimension_;
  double tree_weight_;
  std::size_t block_cap_;
  std::vector<MomentSums> sums_;
  std::vector<std::vector<double>> buffers_;
  std::vector<FiniteMeasure> measures_;
};

double standard_error(double sum, double sum_sq, double n) {
  if (n < 2.0) return 0.0;
  const double mean = sum / n;
  const double second = sum_sq / n;
  // One-pass variance: differences within a few ulps of E[X^2] are cancellation.
  const double var = second - mean * mean;
  if (var <= 64.0 * std::numeric_limits<double>::epsilon() * second) return 0.0;
  return std::sqrt(var / (n - 1.0));
}

FiniteMeasure concatenate(const std::vector<const FiniteMeasure*>& parts, int dimension) {
  Eigen::Index total = 0;
  for (const FiniteMeasure* p : parts) total += p->size();
  Eigen::MatrixXd positions(dimension, total);
  Eigen::VectorXd weights(total);
  Eigen::Index col = 0;
  for (const FiniteMeasure* p : parts) {
    positions.middleCols(col, p->size()) = p->positions();
    weights.segment(col, p->size()) = p->weights();
    col += p->size();
  }
  return FiniteMeasure(std::move(positions), std::move(weights));
}

FiniteMeasure cap_atoms(const FiniteMeasure& mu, std::size_t cap) {
  return cap > 0 ? thin_to_quantiles(mu, static_cast<Eigen::Index>(cap)) : mu;
}

double moment_gap(const MomentEstimate& a, const MomentEstimate& b) {
  return std::abs(a.mass - b.mass) + (a.m1 - b.m1).lpNorm<1>() + std::abs(a.m2 - b.m2);
}

}  // namespace

MeasureFlow simulate_flow(const ModelCoefficients& model, const ClosedLoopControl& control, const MeasureFlow& frozen,
                          const FiniteMeasure& nu0, const TimeGrid& grid, std::size_t trees, const StreamKey& key,
                          const FlowSimulationOptions& options) {
  require(trees >= 1, "simulate_flow: need at least one tree");
  const SimulationPlan plan(model, control, frozen, grid);
  const InitialSampler sampler(nu0, options.scheme);
  const double n_trees = static_cast<double>(trees);
  const std::size_t block_size = std::max<std::size_t>(1, options.batch.block_size);
  const std::size_t blocks = (trees + block_size - 1) / block_size;
  const std::size_t block_cap =
      options.atom_cap == 0 ? 0 : std::max<std::size_t>(8, (options.atom_cap + blocks - 1) / blocks);
  const int d = model.dimension;

  auto results = run_batch<FlowObserver>(
      plan, sampler, trees, key,
      [&](std::size_t) { return FlowObserver(grid.size(), d, 1.0 / n_trees, block_cap); }, options.batch);

  std::vector<FiniteMeasure> measures;
  std::vector<MomentEstimate> stats;
  measures.reserve(grid.size());
  stats.reserve(grid.size());
  std::vector<const FiniteMeasure*> parts(results.size());
  for (std::size_t j = 0; j < grid.size(); ++j) {
    MomentSums total;
    total.s1 = Eigen::VectorXd::Zero(d);
    total.s1_sq = Eigen::VectorXd::Zero(d);
    for (std::size_t b = 0; b < results.size(); ++b) {
      const MomentSums& s = results[b].sums()[j];
      total.n += s.n;
      total.n_sq += s.n_sq;
      total.s1 += s.s1;
      total.s1_sq += s.s1_sq;
      total.s2 += s.s2;
      total.s2_sq += s.s2_sq;
      parts[b] = &results[b].measures()[j];
    }
    MomentEstimate est;
    est.mass = total.n / n_trees;
    est.mass_se = standard_error(total.n, total.n_sq, n_trees);
    est.m1 = total.s1 / n_trees;
    est.m1_se.resize(d);
    for (int r = 0; r < d; ++r) est.m1_se[r] = standard_error(total.s1[r], total.s1_sq[r], n_trees);
    est.m2 = total.s2 / n_trees;
    est.m2_se = standard_error(total.s2, total.s2_sq, n_trees);
    stats.push_back(std::move(est));
    measures.push_back(cap_atoms(concatenate(parts, d), options.atom_cap));
  }
  MeasureFlow flow(grid, std::move(measures), FlowProvenance{FlowSource::kPicard, 0, {}});
  flow.set_statistics(std::move(stats));
  return flow;
}

std::vector<std::size_t> residual_check_indices(std::size_t grid_size, std::size_t count) {
  std::vector<std::size_t> out;
  if (grid_size == 0) return out;
  if (count >= grid_size || count < 2) {
    if (count < 2 && count < grid_size) return {grid_size - 1};
    out.resize(grid_size);
    for (std::size_t j = 0; j < grid_size; ++j) out[j] = j;
    return out;
  }
  std::set<std::size_t> picked;
  for (std::size_t k = 0; k < count; ++k) {
    picked.insert(static_cast<std::size_t>(
        std::llround(static_cast<double>(k) * static_cast<double>(grid_size - 1) / static_cast<double>(count - 1))));
  }
  return {picked.begin(), picked.end()};
}

double flow_distance(const MeasureFlow& a, const MeasureFlow& b, const std::vector<std::size_t>& indices,
                     std::size_t atoms) {
  require(a.size() == b.size(), "flow_distance: flows on different grids");
  const std::size_t cap = a.dimension() == 1 ? atoms : std::min<std::size_t>(atoms, 400);
  double worst = 0.0;
  for (std::size_t j : indices) {
    worst = std::max(worst, wbar1(cap_atoms(a.measure(j), cap), cap_atoms(b.measure(j), cap)));
  }
  return worst;
}

MomentEstimate moment_estimate(const MeasureFlow& flow, std::size_t j) {
  if (!flow.statistics().empty()) return flow.statistics()[j];
  const FiniteMeasure& mu = flow.measure(j);
  MomentEstimate est;
  est.mass = mu.mass();
  est.m1 = mu.first_moment();
  est.m1_se = Eigen::VectorXd::Zero(mu.dimension());
  est.m2 = mu.second_moment();
  return est;
}

PicardResult solve_flow_picard(const ModelCoefficients& model, const ClosedLoopControl& control,
                               const FiniteMeasure& nu0, const TimeGrid& grid, std::uint64_t seed,
                               const PicardOptions& options) {
  require(options.trees >= 100, "solve_flow_picard: need at least 100 trees per iteration");
  require(options.tol >= 0.0, "solve_flow_picard: tolerance must be nonnegative");
  require(options.max_iter >= 1, "solve_flow_picard: max_iter must be positive");
  require(options.damping > 0.0 && options.damping <= 1.0, "solve_flow_picard: damping must lie in (0, 1]");
  if (nu0.dimension() != model.dimension) throw DimensionMismatch("solve_flow_picard: nu0 has the wrong dimension");

  MeasureFlow current = [&] {
    if (options.initial_guess) return *options.initial_guess;
    const FiniteMeasure start = cap_atoms(nu0, options.simulation.atom_cap);
    Point mean = Point::Zero(model.dimension);
    if (nu0.mass() > 0.0) mean = nu0.first_moment() / nu0.mass();
    const double theta_hat = model.growth_rate(grid.start(), mean, nu0, control(grid.start(), mean));
    return MeasureFlow::exponential(grid, start, theta_hat);
  }();
  require(current.covers(grid) && current.size() == grid.size(), "solve_flow_picard: initial guess on another grid");

  const auto indices = residual_check_indices(grid.size(), options.residual_times);
  const StreamKey root(seed);
  PicardDiagnostics diag;
  for (std::size_t k = 1; k <= options.max_iter; ++k) {
    MeasureFlow next =
        simulate_flow(model, control, current, nu0, grid, options.trees, root.child(k), options.simulation);
    if (options.damping < 1.0) {
      std::vector<FiniteMeasure> blended;
      blended.reserve(grid.size());
      for (std::size_t j = 0; j < grid.size(); ++j) {
        blended.push_back(cap_atoms(mixture(next.measure(j), options.damping, current.measure(j), 1.0 - options.damping),
                                    options.simulation.atom_cap));
      }
      std::vector<MomentEstimate> stats = next.statistics();
      for (std::size_t j = 0; j < grid.size(); ++j) {
        const MomentEstimate prev = moment_estimate(current, j);
        const double l = options.damping;
        stats[j].mass = l * stats[j].mass + (1.0 - l) * prev.mass;
        stats[j].m1 = l * stats[j].m1 + (1.0 - l) * prev.m1;
        stats[j].m2 = l * stats[j].m2 + (1.0 - l) * prev.m2;
        stats[j].mass_se *= l;
        stats[j].m1_se *= l;
        stats[j].m2_se *= l;
      }
      next = MeasureFlow(grid, std::move(blended));
      next.set_statistics(std::move(stats));
    }
    const double residual = flow_distance(next, current, indices, options.residual_atoms);
    double moment_residual = 0.0;
    for (std::size_t j : indices)
      moment_residual = std::max(moment_residual, moment_gap(moment_estimate(next, j), moment_estimate(current, j)));
    diag.residuals.push_back(residual);
    diag.moment_residuals.push_back(moment_residual);
    diag.iterations = k;
    current = std::move(next);
    if (residual < options.tol) {
      diag.converged = true;
      break;
    }
  }
  current.set_provenance(FlowProvenance{FlowSource::kPicard, diag.iterations, diag.residuals});
  return PicardResult{std::move(current), std::move(diag)};
}

FlowPropertyReport flow_property_check(const ModelCoefficients& model, const ClosedLoopControl& control,
                                       const FiniteMeasure& nu0, const TimeGrid& grid, double t, double u, double s,
                                       std::uint64_t seed, const PicardOptions& options) {
  const auto it = grid.index_of(t);
  const auto iu = grid.index_of(u);
  const auto is = grid.index_of(s);
  require(it && iu && is, "flow_property_check: t, u, s must be grid times");
  require(*it <= *iu && *iu <= *is, "flow_property_check: need t <= u <= s");
  if (*it == *is) return {};

  const PicardResult a = solve_flow_picard(model, control, nu0, grid.slice(*it, *is), seed, options);
  const FiniteMeasure& a_u = a.flow.measure(*iu - *it);
  const std::size_t last_a = *is - *it;
  FlowPropertyReport report;
  if (*iu == *is) return report;

  PicardOptions restart = options;
  restart.initial_guess.reset();
  if (restart.simulation.scheme == InitScheme::kDeterministicRounding &&
      std::abs(a_u.mass() - std::round(a_u.mass())) > 1e-9)
    restart.simulation.scheme = InitScheme::kBernoulliResidual;
  const PicardResult b = solve_flow_picard(model, control, a_u, grid.slice(*iu, *is), mix64(seed ^ 0xF10AB1Eull), restart);
  const std::size_t last_b = *is - *iu;

  const std::size_t cap = options.residual_atoms;
  report.wbar1 = flow_distance(MeasureFlow(TimeGrid({s}), {a.flow.measure(last_a)}),
                               MeasureFlow(TimeGrid({s}), {b.flow.measure(last_b)}), {0}, cap);
  const MomentEstimate ma = moment_estimate(a.flow, last_a);
  const MomentEstimate mb = moment_estimate(b.flow, last_b);
  report.mass_diff = ma.mass - mb.mass;
  report.m1_diff = (ma.m1 - mb.m1).norm();
  report.m2_diff = ma.m2 - mb.m2;
  report.mass_se = std::hypot(ma.mass_se, mb.mass_se);
  report.m1_se = std::sqrt(ma.m1_se.squaredNorm() + mb.m1_se.squaredNorm());
  report.m2_se = std::hypot(ma.m2_se, mb.m2_se);
  return report;
}

}  // namespace mvb
