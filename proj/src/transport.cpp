#include "mvbranch/transport.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "mvbranch/types.hpp"

namespace mvb {

namespace {

// Spanning-tree network simplex. After a pivot only the subtree cut off by
// the leaving arc changes parent, depth and potential; it is re-hung under
// the entering arc by a breadth-first sweep over per-node tree adjacency.
// Leaving arcs follow the strongly feasible tree rule (last blocking arc on
// the cycle oriented from the join node).
class NetworkSimplex {
 public:
  NetworkSimplex(int node_count, std::span<const double> supply, std::span<const FlowArc> arcs)
      : node_count_(node_count), arc_count_(static_cast<int>(arcs.size())) {
    const int total_arcs = arc_count_ + node_count_;
    from_.resize(total_arcs);
    to_.resize(total_arcs);
    cost_.resize(total_arcs);
    flow_.assign(total_arcs, 0.0);
    tree_pos_.assign(total_arcs, -1);

    double max_cost = 0.0;
    for (int a = 0; a < arc_count_; ++a) {
      const FlowArc& arc = arcs[a];
      if (arc.from < 0 || arc.from >= node_count_ || arc.to < 0 || arc.to >= node_count_)
        throw InvalidArgument("min-cost flow: arc endpoint out of range");
      if (!std::isfinite(arc.cost)) throw InvalidArgument("min-cost flow: non-finite arc cost");
      from_[a] = arc.from;
      to_[a] = arc.to;
      cost_[a] = arc.cost;
      max_cost = std::max(max_cost, std::abs(arc.cost));
    }
    max_cost_ = max_cost;
    const double artificial = (max_cost + 1.0) * (node_count_ + 1);

    root_ = node_count_;
    tree_arcs_.resize(node_count_);
    for (int u = 0; u < node_count_; ++u) {
      const int a = arc_count_ + u;
      if (supply[u] >= 0.0) {
        from_[a] = u;
        to_[a] = root_;
        flow_[a] = supply[u];
        cost_[a] = 0.0;
      } else {
        from_[a] = root_;
        to_[a] = u;
        flow_[a] = -supply[u];
        cost_[a] = artificial;
      }
      tree_arcs_[u] = a;
      tree_pos_[a] = u;
    }

    parent_.resize(node_count_ + 1);
    pred_.resize(node_count_ + 1);
    depth_.resize(node_count_ + 1);
    potential_.resize(node_count_ + 1);
    adjacency_.assign(node_count_ + 1, {});
    for (int a : tree_arcs_) {
      adjacency_[from_[a]].push_back(a);
      adjacency_[to_[a]].push_back(a);
    }
    queue_.resize(node_count_ + 1);
    parent_[root_] = -1;
    pred_[root_] = -1;
    depth_[root_] = 0;
    potential_[root_] = 0.0;
    if (hang_subtree(root_) != node_count_ + 1)
      throw NumericalFailure("min-cost flow: basis is not a spanning tree");
  }

  void run() {
    const std::size_t max_pivots = 100 * (static_cast<std::size_t>(arc_count_) + node_count_) + 1000;
    const int block = std::max(10, static_cast<int>(std::sqrt(static_cast<double>(arc_count_))));
    int next = 0;
    while (true) {
      const int entering = find_entering(block, next);
      if (entering < 0) break;
      pivot(entering);
      if (++pivots_ > max_pivots) throw NumericalFailure("min-cost flow: pivot limit exceeded");
    }
  }

  double real_cost() const {
    double total = 0.0;
    for (int a = 0; a < arc_count_; ++a) total += flow_[a] * cost_[a];
    return total;
  }

  double artificial_flow() const {
    double total = 0.0;
    for (int a = arc_count_; a < arc_count_ + node_count_; ++a) total += flow_[a];
    return total;
  }

  std::vector<double> real_flows() const { return {flow_.begin(), flow_.begin() + arc_count_}; }
  std::size_t pivots() const { return pivots_; }

 private:
  double reduced_cost(int a) const { return cost_[a] + potential_[from_[a]] - potential_[to_[a]]; }

  double tolerance(int a) const {
    return 1e-12 * (max_cost_ + std::abs(potential_[from_[a]]) + std::abs(potential_[to_[a]]) + 1.0);
  }

  int find_entering(int block, int& next) {
    if (arc_count_ == 0) return -1;
    int best = -1;
    double best_value = 0.0;
    int scanned_in_block = 0;
    for (int scanned = 0; scanned < arc_count_; ++scanned) {
      const int a = next;
      next = (next + 1 == arc_count_) ? 0 : next + 1;
      const double rc = reduced_cost(a);
      if (tree_pos_[a] < 0 && rc < -tolerance(a) && rc < best_value) {
        best_value = rc;
        best = a;
      }
      if (++scanned_in_block == block) {
        if (best >= 0) return best;
        scanned_in_block = 0;
      }
    }
    return best;
  }

  void pivot(int entering) {
    const int u = from_[entering];
    const int v = to_[entering];
    int a = u;
    int b = v;
    while (a != b) {
      if (depth_[a] > depth_[b]) {
        a = parent_[a];
      } else if (depth_[b] > depth_[a]) {
        b = parent_[b];
      } else {
        a = parent_[a];
        b = parent_[b];
      }
    }
    const int join = a;

    double delta = std::numeric_limits<double>::infinity();
    int leaving = -1;
    bool leaving_on_u_side = false;
    for (int x = u; x != join; x = parent_[x]) {
      const int arc = pred_[x];
      if (from_[arc] == x && flow_[arc] < delta) {
        delta = flow_[arc];
        leaving = arc;
        leaving_on_u_side = true;
      }
    }
    for (int x = v; x != join; x = parent_[x]) {
      const int arc = pred_[x];
      if (to_[arc] == x && flow_[arc] <= delta) {
        delta = flow_[arc];
        leaving = arc;
        leaving_on_u_side = false;
      }
    }
    if (leaving < 0) throw NumericalFailure("min-cost flow: unbounded (negative cycle)");

    if (delta > 0.0) {
      flow_[entering] += delta;
      for (int x = u; x != join; x = parent_[x]) {
        const int arc = pred_[x];
        flow_[arc] += (from_[arc] == x) ? -delta : delta;
      }
      for (int x = v; x != join; x = parent_[x]) {
        const int arc = pred_[x];
        flow_[arc] += (to_[arc] == x) ? -delta : delta;
      }
    }
    flow_[leaving] = 0.0;

    const int slot = tree_pos_[leaving];
    tree_pos_[leaving] = -1;
    tree_arcs_[slot] = entering;
    tree_pos_[entering] = slot;

    // The endpoint of the entering arc inside the detached subtree becomes
    // its new root, hanging from the other endpoint.
    const int inner = leaving_on_u_side ? u : v;
    const int outer = leaving_on_u_side ? v : u;
    detach(from_[leaving], leaving);
    detach(to_[leaving], leaving);
    adjacency_[u].push_back(entering);
    adjacency_[v].push_back(entering);
    parent_[inner] = outer;
    pred_[inner] = entering;
    depth_[inner] = depth_[outer] + 1;
    potential_[inner] =
        (to_[entering] == inner) ? potential_[outer] + cost_[entering] : potential_[outer] - cost_[entering];
    hang_subtree(inner);
  }

  void detach(int node, int arc) {
    auto& list = adjacency_[node];
    const auto it = std::find(list.begin(), list.end(), arc);
    if (it == list.end()) throw NumericalFailure("min-cost flow: tree adjacency out of sync");
    *it = list.back();
    list.pop_back();
  }

  /// Recomputes parent, depth and potential below `top`, whose own fields
  /// are already set. Returns the number of nodes visited.
  int hang_subtree(int top) {
    int head = 0;
    int tail = 0;
    queue_[tail++] = top;
    while (head < tail) {
      const int node = queue_[head++];
      for (int arc : adjacency_[node]) {
        if (arc == pred_[node]) continue;
        const int child = (from_[arc] == node) ? to_[arc] : from_[arc];
        parent_[child] = node;
        pred_[child] = arc;
        depth_[child] = depth_[node] + 1;
        potential_[child] =
            (to_[arc] == child) ? potential_[node] + cost_[arc] : potential_[node] - cost_[arc];
        queue_[tail++] = child;
      }
    }
    return tail;
  }

  int node_count_;
  int arc_count_;
  int root_ = 0;
  double max_cost_ = 0.0;
  std::size_t pivots_ = 0;
  std::vector<int> from_, to_;
  std::vector<double> cost_, flow_;
  std::vector<int> tree_arcs_, tree_pos_;
  std::vector<int> parent_, pred_, depth_;
  std::vector<double> potential_;
  std::vector<std::vector<int>> adjacency_;
  std::vector<int> queue_;
};

}  // namespace

MinCostFlowResult solve_min_cost_flow(int node_count, std::span<const double> supply,
                                      std::span<const FlowArc> arcs) {
  if (node_count < 0 || static_cast<int>(supply.size()) != node_count)
    throw InvalidArgument("min-cost flow: supply size does not match node count");
  double balance = 0.0;
  double scale = 0.0;
  for (double s : supply) {
    if (!std::isfinite(s)) throw InvalidArgument("min-cost flow: non-finite supply");
    balance += s;
    scale += std::abs(s);
  }
  if (std::abs(balance) > 1e-9 * std::max(scale, 1.0))
    throw InvalidArgument("min-cost flow: supplies do not balance (sum " + std::to_string(balance) + ")");

  NetworkSimplex simplex(node_count, supply, arcs);
  simplex.run();
  if (simplex.artificial_flow() > 1e-9 * std::max(scale, 1.0))
    throw NumericalFailure("min-cost flow: infeasible (flow left on artificial arcs)");
  return {simplex.real_cost(), simplex.real_flows(), simplex.pivots()};
}

double transport_cost(const Eigen::VectorXd& source_weights, const Eigen::VectorXd& target_weights,
                      const Eigen::MatrixXd& cost) {
  const auto n = source_weights.size();
  const auto m = target_weights.size();
  if (cost.rows() != n || cost.cols() != m)
    throw DimensionMismatch("transport_cost: cost matrix shape does not match weights");
  if (n == 0 || m == 0) {
    if (source_weights.sum() > 0.0 || target_weights.sum() > 0.0)
      throw InvalidArgument("transport_cost: cannot transport mass to an empty side");
    return 0.0;
  }
  std::vector<double> supply(n + m);
  for (Eigen::Index i = 0; i < n; ++i) supply[i] = source_weights[i];
  for (Eigen::Index j = 0; j < m; ++j) supply[n + j] = -target_weights[j];
  std::vector<FlowArc> arcs;
  arcs.reserve(static_cast<std::size_t>(n * m));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < m; ++j)
      arcs.push_back({static_cast<int>(i), static_cast<int>(n + j), cost(i, j)});
  return solve_min_cost_flow(static_cast<int>(n + m), supply, arcs).cost;
}

}  // namespace mvb
