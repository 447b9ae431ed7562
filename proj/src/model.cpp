#include "mvbranch/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "mvbranch/rng.hpp"

namespace mvb {

// ---------------------------------------------------------------------------
// Progeny

std::vector<double> normalize_progeny(std::vector<double> p, int max_offspring) {
  require(max_offspring >= 0, "progeny: max_offspring must be nonnegative");
  require(!p.empty(), "progeny: empty probability vector");
  for (double v : p) {
    if (!std::isfinite(v) || v < -1e-12 || v > 1.0 + 1e-12) {
      std::ostringstream msg;
      msg << "progeny: probability " << v << " outside [0, 1]";
      throw InvalidArgument(msg.str());
    }
  }
  const auto cap = static_cast<std::size_t>(max_offspring) + 1;
  if (p.size() > cap) {
    const double tail = std::accumulate(p.begin() + static_cast<std::ptrdiff_t>(cap), p.end(), 0.0);
    p.resize(cap);
    p.back() += tail;
  }
  for (double& v : p) v = std::clamp(v, 0.0, 1.0);
  const double total = std::accumulate(p.begin(), p.end(), 0.0);
  if (std::abs(total - 1.0) > 1e-9) {
    std::ostringstream msg;
    msg << "progeny: probabilities sum to " << total << ", expected 1";
    throw InvalidArgument(msg.str());
  }
  for (double& v : p) v /= total;
  return p;
}

double progeny_mean(const std::vector<double>& p) {
  double mean = 0.0;
  for (std::size_t l = 0; l < p.size(); ++l) mean += static_cast<double>(l) * p[l];
  return mean;
}

double progeny_net_growth(const std::vector<double>& p) { return progeny_mean(p) - std::accumulate(p.begin(), p.end(), 0.0); }

ProgenyLaw::ProgenyLaw(Evaluator evaluator, double mean_bound, int max_offspring)
    : evaluator_(std::move(evaluator)), mean_bound_(mean_bound), max_offspring_(max_offspring) {
  require(static_cast<bool>(evaluator_), "ProgenyLaw: missing evaluator");
  require(mean_bound >= 0.0, "ProgenyLaw: mean bound must be nonnegative");
}

ProgenyLaw ProgenyLaw::constant(std::vector<double> probabilities, std::optional<double> mean_bound,
                                int max_offspring) {
  auto p = normalize_progeny(std::move(probabilities), max_offspring);
  const double mean = progeny_mean(p);
  ProgenyLaw law([p](double, const Point&, const FiniteMeasure&, const ControlValue&) { return p; },
                 mean_bound.value_or(mean), max_offspring);
  require(mean <= law.mean_bound_ + 1e-12, "ProgenyLaw: mean offspring exceeds the declared bound");
  law.constant_ = std::move(p);
  return law;
}

std::vector<double> ProgenyLaw::probabilities(double t, const Point& x, const FiniteMeasure& m,
                                              const ControlValue& a) const {
  if (constant_) return *constant_;
  auto p = normalize_progeny(evaluator_(t, x, m, a), max_offspring_);
  const double mean = progeny_mean(p);
  if (mean > mean_bound_ + 1e-12) {
    std::ostringstream msg;
    msg << "progeny: mean offspring " << mean << " exceeds bound M1 = " << mean_bound_ << " at t = " << t;
    throw NumericalFailure(msg.str());
  }
  return p;
}

// ---------------------------------------------------------------------------
// Coefficients and controls

double ModelCoefficients::rate(double t, const Point& x, const FiniteMeasure& m, const ControlValue& a) const {
  const double gamma = branching_rate(t, x, m, a);
  if (!(gamma >= 0.0 && gamma <= rate_bound * (1.0 + 1e-12))) {
    std::ostringstream msg;
    msg << "branching rate " << gamma << " outside [0, " << rate_bound << "] at t = " << t;
    throw NumericalFailure(msg.str());
  }
  return std::min(gamma, rate_bound);
}

double ModelCoefficients::growth_rate(double t, const Point& x, const FiniteMeasure& m, const ControlValue& a) const {
  return rate(t, x, m, a) * progeny_net_growth(progeny.probabilities(t, x, m, a));
}

ClosedLoopControl ClosedLoopControl::zero(int control_dimension) {
  ClosedLoopControl control;
  control.feedback = [control_dimension](double, const Point&) {
    return ControlValue(ControlValue::Zero(control_dimension));
  };
  control.lipschitz = 0.0;
  control.affine = AffineFeedback{[](double) { return 0.0; }, [](double) { return 0.0; }};
  return control;
}

ClosedLoopControl ClosedLoopControl::constant_affine(double offset, double slope) {
  return from_affine(AffineFeedback{[offset](double) { return offset; }, [slope](double) { return slope; }},
                     std::max(std::abs(offset), std::abs(slope)));
}

ClosedLoopControl ClosedLoopControl::from_affine(AffineFeedback affine, double lipschitz) {
  ClosedLoopControl control;
  control.feedback = [offset = affine.offset, slope = affine.slope](double t, const Point& x) {
    ControlValue a(1);
    a[0] = offset(t) + slope(t) * x[0];
    return a;
  };
  control.lipschitz = lipschitz;
  control.affine = std::move(affine);
  return control;
}

namespace {

Point random_point(SplitMix64& rng, int dimension, double radius) {
  Point x(dimension);
  for (int r = 0; r < dimension; ++r) x[r] = (2.0 * rng.uniform() - 1.0) * radius;
  return x;
}

}  // namespace

void spot_check_control(const ClosedLoopControl& control, int dimension, double t0, double horizon, double radius,
                        std::uint64_t seed) {
  SplitMix64 rng(StreamKey{seed});
  const double L = control.lipschitz * (1.0 + 1e-9) + 1e-12;
  for (int k = 0; k < 64; ++k) {
    const double t = t0 + rng.uniform() * (horizon - t0);
    const Point x = random_point(rng, dimension, radius);
    const Point y = random_point(rng, dimension, radius);
    const ControlValue ax = control(t, x);
    const ControlValue ay = control(t, y);
    if ((ax - ay).norm() > L * (x - y).norm() || ax.norm() > L * (1.0 + x.norm())) {
      std::ostringstream msg;
      msg << "control violates its declared Lipschitz / growth constant " << control.lipschitz << " at t = " << t;
      throw InvalidArgument(msg.str());
    }
  }
}

void spot_check_model(const ModelCoefficients& model, const ClosedLoopControl& control, const FiniteMeasure& m,
                      double t0, double horizon, double radius, std::uint64_t seed) {
  SplitMix64 rng(StreamKey{seed});
  for (int k = 0; k < 64; ++k) {
    const double t = t0 + rng.uniform() * (horizon - t0);
    const Point x = random_point(rng, model.dimension, radius);
    const ControlValue a = control(t, x);
    const Point b = model.drift(t, x, m, a);
    const DiffusionMatrix s = model.diffusion(t, x, m, a);
    if (!b.allFinite() || !s.allFinite()) throw NumericalFailure("model: non-finite coefficients at a spot check");
    model.rate(t, x, m, a);
    model.progeny.probabilities(t, x, m, a);
    if (model.growth_constant) {
      const double bound = *model.growth_constant * (1.0 + x.norm() + m.mass() + a.norm());
      if (b.norm() + s.norm() > bound * (1.0 + 1e-9)) {
        std::ostringstream msg;
        msg << "model: drift/diffusion exceed the declared linear-growth bound at t = " << t;
        throw InvalidArgument(msg.str());
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Time grids

TimeGrid::TimeGrid(std::vector<double> times) : times_(std::move(times)) {
  require(!times_.empty(), "TimeGrid: empty");
  for (std::size_t j = 0; j < times_.size(); ++j) {
    require(std::isfinite(times_[j]), "TimeGrid: non-finite time");
    if (j > 0) require(times_[j] > times_[j - 1], "TimeGrid: times must be strictly increasing");
  }
}

TimeGrid TimeGrid::uniform(double t0, double horizon, double dt) {
  require(std::isfinite(dt) && dt > 0.0, "TimeGrid: dt must be positive");
  require(std::isfinite(t0) && std::isfinite(horizon) && horizon >= t0, "TimeGrid: need t0 <= T");
  const double span = horizon - t0;
  auto steps = static_cast<std::size_t>(std::llround(span / dt));
  if (std::abs(static_cast<double>(steps) * dt - span) > 1e-9 * std::max(1.0, std::abs(horizon)))
    steps = static_cast<std::size_t>(std::ceil(span / dt));
  std::vector<double> times(steps + 1);
  for (std::size_t j = 0; j <= steps; ++j)
    times[j] = steps == 0 ? t0 : t0 + span * static_cast<double>(j) / static_cast<double>(steps);
  times.back() = horizon;
  return TimeGrid(std::move(times));
}

std::optional<std::size_t> TimeGrid::index_of(double t) const {
  const double tol = 1e-9 * std::max({1.0, std::abs(start()), std::abs(end())});
  auto it = std::lower_bound(times_.begin(), times_.end(), t - tol);
  if (it != times_.end() && std::abs(*it - t) <= tol) return static_cast<std::size_t>(it - times_.begin());
  return std::nullopt;
}

std::optional<std::size_t> TimeGrid::floor_index(double t) const {
  const double tol = 1e-9 * std::max({1.0, std::abs(start()), std::abs(end())});
  auto it = std::upper_bound(times_.begin(), times_.end(), t + tol);
  if (it == times_.begin()) return std::nullopt;
  return static_cast<std::size_t>(it - times_.begin()) - 1;
}

TimeGrid TimeGrid::slice(std::size_t first, std::size_t last) const {
  require(first <= last && last < times_.size(), "TimeGrid::slice: index range outside the grid");
  return TimeGrid(std::vector<double>(times_.begin() + static_cast<std::ptrdiff_t>(first),
                                      times_.begin() + static_cast<std::ptrdiff_t>(last) + 1));
}

}  // namespace mvb
