#pragma once

#include <string>
#include <vector>

#include "mvbranch/measures.hpp"
#include "mvbranch/model.hpp"

namespace mvb {

/// Monte Carlo estimate of the mass and first two moments of mu_t together
/// with their standard errors across independent trees.
struct MomentEstimate {
  double mass = 0.0;
  double mass_se = 0.0;
  Eigen::VectorXd m1;
  Eigen::VectorXd m1_se;
  double m2 = 0.0;
  double m2_se = 0.0;
};

enum class FlowSource { kGiven, kPicard, kMomentOde, kFdSolver };

std::string to_string(FlowSource source);

struct FlowProvenance {
  FlowSource source = FlowSource::kGiven;
  std::size_t iterations = 0;
  std::vector<double> residuals;
};

/// Deterministic measure flow t -> mu_t sampled on a time grid. Lookups at
/// times between grid nodes return the measure at the preceding node.
class MeasureFlow {
 public:
  MeasureFlow(TimeGrid grid, std::vector<FiniteMeasure> measures, FlowProvenance provenance = {});

  /// The same measure at every grid time.
  static MeasureFlow constant(TimeGrid grid, const FiniteMeasure& mu);

  /// mu scaled by exp(rate (t - t0)).
  static MeasureFlow exponential(TimeGrid grid, const FiniteMeasure& mu, double rate);

  /// One-dimensional flow realised by two-atom measures matching prescribed
  /// (mass, m1, m2) at each time. Integrals of polynomials of degree <= 2 are
  /// exact, which is all the linear-quadratic machinery needs.
  static MeasureFlow from_moments(TimeGrid grid, const std::vector<Eigen::Vector3d>& moments,
                                  FlowSource source = FlowSource::kMomentOde);

  const TimeGrid& grid() const { return grid_; }
  std::size_t size() const { return measures_.size(); }
  int dimension() const { return measures_.front().dimension(); }

  const FiniteMeasure& measure(std::size_t j) const { return measures_[j]; }
  const FiniteMeasure& at(double t) const;
  const std::vector<FiniteMeasure>& measures() const { return measures_; }

  /// Whether every time of `grid` lies within [start, end] of this flow.
  bool covers(const TimeGrid& grid) const;

  const FlowProvenance& provenance() const { return provenance_; }
  void set_provenance(FlowProvenance provenance) { provenance_ = std::move(provenance); }

  /// Full-sample moment estimates (empty unless produced by simulation).
  const std::vector<MomentEstimate>& statistics() const { return statistics_; }
  void set_statistics(std::vector<MomentEstimate> statistics);

 private:
  TimeGrid grid_;
  std::vector<FiniteMeasure> measures_;
  FlowProvenance provenance_;
  std::vector<MomentEstimate> statistics_;
};

}  // namespace mvb
