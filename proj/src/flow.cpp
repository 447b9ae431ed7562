#include "mvbranch/flow.hpp"

#include <algorithm>
#include <cmath>

namespace mvb {

std::string to_string(FlowSource source) {
  switch (source) {
    case FlowSource::kGiven: return "given";
    case FlowSource::kPicard: return "picard";
    case FlowSource::kMomentOde: return "moment_ode";
    case FlowSource::kFdSolver: return "fd_solver";
  }
  return "unknown";
}

MeasureFlow::MeasureFlow(TimeGrid grid, std::vector<FiniteMeasure> measures, FlowProvenance provenance)
    : grid_(std::move(grid)), measures_(std::move(measures)), provenance_(std::move(provenance)) {
  require(measures_.size() == grid_.size(), "MeasureFlow: need one measure per grid time");
  const int d = measures_.front().dimension();
  for (std::size_t j = 0; j < measures_.size(); ++j) {
    if (measures_[j].dimension() != d) throw DimensionMismatch("MeasureFlow: measures of different dimensions");
    if (!std::isfinite(measures_[j].mass())) throw NumericalFailure("MeasureFlow: non-finite mass");
  }
}

MeasureFlow MeasureFlow::constant(TimeGrid grid, const FiniteMeasure& mu) {
  std::vector<FiniteMeasure> measures(grid.size(), mu);
  return MeasureFlow(std::move(grid), std::move(measures));
}

MeasureFlow MeasureFlow::exponential(TimeGrid grid, const FiniteMeasure& mu, double rate) {
  std::vector<FiniteMeasure> measures;
  measures.reserve(grid.size());
  for (double t : grid.times()) measures.push_back(scaled(mu, std::exp(rate * (t - grid.start()))));
  return MeasureFlow(std::move(grid), std::move(measures));
}

MeasureFlow MeasureFlow::from_moments(TimeGrid grid, const std::vector<Eigen::Vector3d>& moments,
                                      FlowSource source) {
  require(moments.size() == grid.size(), "MeasureFlow::from_moments: need one moment triple per grid time");
  std::vector<FiniteMeasure> measures;
  measures.reserve(grid.size());
  for (const Eigen::Vector3d& m : moments) {
    const double mass = m[0];
    if (!(mass >= 0.0) || !m.allFinite()) throw NumericalFailure("MeasureFlow::from_moments: invalid moments");
    if (mass == 0.0) {
      measures.emplace_back(1);
      continue;
    }
    const double mean = m[1] / mass;
    const double spread = std::sqrt(std::max(0.0, m[2] / mass - mean * mean));
    Eigen::MatrixXd pos(1, 2);
    pos << mean - spread, mean + spread;
    measures.emplace_back(std::move(pos), Eigen::Vector2d(0.5 * mass, 0.5 * mass));
  }
  return MeasureFlow(std::move(grid), std::move(measures), FlowProvenance{source, 0, {}});
}

const FiniteMeasure& MeasureFlow::at(double t) const {
  const auto j = grid_.floor_index(t);
  const double tol = 1e-9 * std::max({1.0, std::abs(grid_.start()), std::abs(grid_.end())});
  if (!j || t > grid_.end() + tol) throw InvalidArgument("MeasureFlow: time outside the flow's grid");
  return measures_[*j];
}

bool MeasureFlow::covers(const TimeGrid& grid) const {
  const double tol = 1e-9 * std::max({1.0, std::abs(grid_.start()), std::abs(grid_.end())});
  return grid.start() >= grid_.start() - tol && grid.end() <= grid_.end() + tol;
}

void MeasureFlow::set_statistics(std::vector<MomentEstimate> statistics) {
  require(statistics.empty() || statistics.size() == grid_.size(), "MeasureFlow: one moment estimate per grid time");
  statistics_ = std::move(statistics);
}

}  // namespace mvb
