#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "mvbranch/measures.hpp"
#include "mvbranch/types.hpp"

namespace mvb {

/// Offspring-count distribution (p_0, ..., p_lmax) evaluated along the
/// state. Laws with longer support are truncated at `max_offspring`, the tail
/// mass being folded into the last entry.
class ProgenyLaw {
 public:
  using Evaluator =
      std::function<std::vector<double>(double t, const Point& x, const FiniteMeasure& m, const ControlValue& a)>;

  ProgenyLaw() = default;
  ProgenyLaw(Evaluator evaluator, double mean_bound, int max_offspring = 10);

  /// State-independent law. `mean_bound` defaults to its mean.
  static ProgenyLaw constant(std::vector<double> probabilities, std::optional<double> mean_bound = std::nullopt,
                             int max_offspring = 10);

  /// Normalised probabilities at a point; throws if the evaluator leaves the
  /// simplex or the mean offspring number exceeds `mean_bound()`.
  std::vector<double> probabilities(double t, const Point& x, const FiniteMeasure& m, const ControlValue& a) const;

  double mean_bound() const { return mean_bound_; }
  int max_offspring() const { return max_offspring_; }
  bool is_constant() const { return constant_.has_value(); }
  const std::optional<std::vector<double>>& constant_probabilities() const { return constant_; }

  /// Per-ell Lipschitz constants (metadata only).
  std::vector<double> lipschitz_constants;

 private:
  Evaluator evaluator_;
  double mean_bound_ = 0.0;
  int max_offspring_ = 10;
  std::optional<std::vector<double>> constant_;
};

/// Truncate to `max_offspring`, fold the tail, validate and renormalise.
std::vector<double> normalize_progeny(std::vector<double> p, int max_offspring);

/// sum_l l p_l
double progeny_mean(const std::vector<double>& p);

/// sum_l (l - 1) p_l; times the branching rate this is the mass growth rate.
double progeny_net_growth(const std::vector<double>& p);

struct ModelCoefficients {
  using DriftFn = std::function<Point(double, const Point&, const FiniteMeasure&, const ControlValue&)>;
  using DiffusionFn = std::function<DiffusionMatrix(double, const Point&, const FiniteMeasure&, const ControlValue&)>;
  using RateFn = std::function<double(double, const Point&, const FiniteMeasure&, const ControlValue&)>;

  int dimension = 1;
  DriftFn drift;
  DiffusionFn diffusion;
  RateFn branching_rate;
  double rate_bound = 1.0;  // dominating rate gamma-bar
  ProgenyLaw progeny;
  /// Declared linear-growth constant C with |b| + |sigma| <= C(1 + |x| + mass + |a|).
  std::optional<double> growth_constant;

  /// Branching rate with the [0, rate_bound] range enforced.
  double rate(double t, const Point& x, const FiniteMeasure& m, const ControlValue& a) const;

  /// Net mass growth rate gamma * sum (l - 1) p_l at a point.
  double growth_rate(double t, const Point& x, const FiniteMeasure& m, const ControlValue& a) const;
};

/// Scalar affine feedback a = offset(t) + slope(t) x for one-dimensional models.
struct AffineFeedback {
  std::function<double(double)> offset;
  std::function<double(double)> slope;
};

struct ClosedLoopControl {
  using Feedback = std::function<ControlValue(double t, const Point& x)>;

  Feedback feedback;
  double lipschitz = 0.0;
  std::optional<AffineFeedback> affine;

  ControlValue operator()(double t, const Point& x) const { return feedback(t, x); }

  static ClosedLoopControl zero(int control_dimension = 1);
  static ClosedLoopControl constant_affine(double offset, double slope);
  static ClosedLoopControl from_affine(AffineFeedback affine, double lipschitz);
};

/// Spot-checks |a(t,x) - a(t,y)| <= L|x - y| and |a(t,x)| <= L(1 + |x|) on
/// pseudo-random points of [t0, T] x [-radius, radius]^d. Throws on violation.
void spot_check_control(const ClosedLoopControl& control, int dimension, double t0, double horizon,
                        double radius = 10.0, std::uint64_t seed = 7);

/// Spot-checks the declared linear-growth bound of drift and diffusion and
/// the rate range at pseudo-random points, against the supplied measure.
void spot_check_model(const ModelCoefficients& model, const ClosedLoopControl& control, const FiniteMeasure& m,
                      double t0, double horizon, double radius = 10.0, std::uint64_t seed = 11);

/// Increasing sequence of times t_0 < ... < t_M.
class TimeGrid {
 public:
  explicit TimeGrid(std::vector<double> times);

  /// t0, t0 + h, ..., T with h the largest spacing <= dt that divides T - t0.
  static TimeGrid uniform(double t0, double horizon, double dt);

  std::size_t size() const { return times_.size(); }
  std::size_t steps() const { return times_.size() - 1; }
  double operator[](std::size_t j) const { return times_[j]; }
  double start() const { return times_.front(); }
  double end() const { return times_.back(); }
  double step(std::size_t j) const { return times_[j + 1] - times_[j]; }
  const std::vector<double>& times() const { return times_; }

  /// Index of a grid time equal to `t` up to a relative 1e-9 tolerance.
  std::optional<std::size_t> index_of(double t) const;
  /// Largest index with times()[j] <= t (within tolerance); nullopt before start.
  std::optional<std::size_t> floor_index(double t) const;

  /// times()[first..last] as a grid of its own.
  TimeGrid slice(std::size_t first, std::size_t last) const;

 private:
  std::vector<double> times_;
};

}  // namespace mvb
