#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace mvb {

struct FlowArc {
  int from = 0;
  int to = 0;
  double cost = 0.0;
};

struct MinCostFlowResult {
  double cost = 0.0;
  std::vector<double> flow;  // one entry per input arc
  std::size_t pivots = 0;
};

/// Uncapacitated minimum-cost flow by primal network simplex.
///
/// `supply[v] > 0` marks a source and `supply[v] < 0` a sink; supplies must
/// balance to within 1e-9 of their total absolute value. Arcs are directed
/// and carry nonnegative flow with no upper bound. Supplies and flows are
/// real valued, so weighted transportation problems are handled directly.
MinCostFlowResult solve_min_cost_flow(int node_count, std::span<const double> supply,
                                      std::span<const FlowArc> arcs);

/// Exact optimal transport cost between two weighted point sets given a
/// dense cost matrix (rows: source atoms, cols: target atoms).
double transport_cost(const Eigen::VectorXd& source_weights, const Eigen::VectorXd& target_weights,
                      const Eigen::MatrixXd& cost);

}  // namespace mvb
