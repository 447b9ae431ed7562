#include "mvbranch/measures.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "mvbranch/transport.hpp"

namespace mvb {

// ---------------------------------------------------------------------------
// FiniteMeasure

FiniteMeasure::FiniteMeasure(int dimension)
    : dimension_(dimension), positions_(dimension, 0), weights_(0), first_moment_(Eigen::VectorXd::Zero(dimension)) {
  require(dimension >= 1, "FiniteMeasure: dimension must be positive");
}

FiniteMeasure::FiniteMeasure(Eigen::MatrixXd positions, Eigen::VectorXd weights)
    : dimension_(static_cast<int>(positions.rows())) {
  require(dimension_ >= 1, "FiniteMeasure: dimension must be positive");
  if (positions.cols() != weights.size())
    throw DimensionMismatch("FiniteMeasure: positions and weights have different atom counts");

  Eigen::Index kept = 0;
  for (Eigen::Index i = 0; i < weights.size(); ++i) {
    const double w = weights[i];
    if (!std::isfinite(w) || w < 0.0) throw InvalidArgument("FiniteMeasure: weights must be finite and nonnegative");
    if (!positions.col(i).allFinite()) throw InvalidArgument("FiniteMeasure: positions must be finite");
    if (w < kWeightFloor) continue;
    if (kept != i) {
      positions.col(kept) = positions.col(i);
      weights[kept] = w;
    }
    ++kept;
  }
  positions.conservativeResize(Eigen::NoChange, kept);
  weights.conservativeResize(kept);
  positions_ = std::move(positions);
  weights_ = std::move(weights);

  mass_ = weights_.sum();
  first_moment_ = positions_ * weights_;
  second_moment_ = positions_.colwise().squaredNorm().dot(weights_);
}

FiniteMeasure FiniteMeasure::dirac(const Point& x, double weight) {
  Eigen::MatrixXd positions = x;
  Eigen::VectorXd weights(1);
  weights[0] = weight;
  return FiniteMeasure(std::move(positions), std::move(weights));
}

double FiniteMeasure::integrate(const std::function<double(const Point&)>& f) const {
  double total = 0.0;
  for (Eigen::Index i = 0; i < size(); ++i) total += weights_[i] * f(positions_.col(i));
  return total;
}

MeasureMoments moments(const FiniteMeasure& mu) { return {mu.mass(), mu.first_moment(), mu.second_moment()}; }

FiniteMeasure scaled(const FiniteMeasure& mu, double factor) {
  require(factor >= 0.0, "scaled: factor must be nonnegative");
  return FiniteMeasure(mu.positions(), mu.weights() * factor);
}

FiniteMeasure mixture(const FiniteMeasure& a, double a_weight, const FiniteMeasure& b, double b_weight) {
  if (a.dimension() != b.dimension()) throw DimensionMismatch("mixture: dimension mismatch");
  Eigen::MatrixXd positions(a.dimension(), a.size() + b.size());
  positions << a.positions(), b.positions();
  Eigen::VectorXd weights(a.size() + b.size());
  weights << a.weights() * a_weight, b.weights() * b_weight;
  return FiniteMeasure(std::move(positions), std::move(weights));
}

FiniteMeasure thin_to_quantiles(const FiniteMeasure& mu, Eigen::Index cap) {
  require(cap >= 1, "thin_to_quantiles: cap must be positive");
  if (mu.size() <= cap) return mu;

  std::vector<Eigen::Index> order(static_cast<std::size_t>(mu.size()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  const auto& pos = mu.positions();
  std::sort(order.begin(), order.end(), [&](Eigen::Index i, Eigen::Index j) {
    for (Eigen::Index r = 0; r < pos.rows(); ++r) {
      if (pos(r, i) != pos(r, j)) return pos(r, i) < pos(r, j);
    }
    return i < j;
  });

  const double mass = mu.mass();
  const double atom_weight = mass / static_cast<double>(cap);
  std::vector<Eigen::Index> chosen;
  std::vector<double> chosen_weight;
  double cumulative = 0.0;
  std::size_t cursor = 0;
  for (Eigen::Index k = 0; k < cap; ++k) {
    const double target = (static_cast<double>(k) + 0.5) * atom_weight;
    while (cursor + 1 < order.size() && cumulative + mu.weights()[order[cursor]] < target) {
      cumulative += mu.weights()[order[cursor]];
      ++cursor;
    }
    const Eigen::Index atom = order[cursor];
    if (!chosen.empty() && chosen.back() == atom) {
      chosen_weight.back() += atom_weight;
    } else {
      chosen.push_back(atom);
      chosen_weight.push_back(atom_weight);
    }
  }

  Eigen::MatrixXd positions(mu.dimension(), static_cast<Eigen::Index>(chosen.size()));
  Eigen::VectorXd weights(static_cast<Eigen::Index>(chosen.size()));
  for (std::size_t k = 0; k < chosen.size(); ++k) {
    positions.col(static_cast<Eigen::Index>(k)) = pos.col(chosen[k]);
    weights[static_cast<Eigen::Index>(k)] = chosen_weight[k];
  }
  return FiniteMeasure(std::move(positions), std::move(weights));
}

// ---------------------------------------------------------------------------
// Labels and configurations

bool is_prefix(const Label& ancestor, const Label& label) {
  return ancestor.size() <= label.size() && std::equal(ancestor.begin(), ancestor.end(), label.begin());
}

Label child_label(const Label& parent, std::uint32_t index) {
  Label child;
  child.reserve(parent.size() + 1);
  child.assign(parent.begin(), parent.end());
  child.push_back(index);
  return child;
}

std::string format_label(const Label& label) {
  std::string out;
  for (std::size_t i = 0; i < label.size(); ++i) {
    if (i > 0) out += '.';
    out += std::to_string(label[i]);
  }
  return out;
}

Configuration::Configuration(int dimension) : positions_(dimension, 0) {
  require(dimension >= 1, "Configuration: dimension must be positive");
}

Configuration::Configuration(std::vector<Label> labels, Eigen::MatrixXd positions)
    : labels_(std::move(labels)), positions_(std::move(positions)) {
  require(positions_.rows() >= 1, "Configuration: dimension must be positive");
  if (static_cast<Eigen::Index>(labels_.size()) != positions_.cols())
    throw DimensionMismatch("Configuration: label and position counts differ");
  for (const Label& label : labels_) require(!label.empty(), "Configuration: empty label");
  if (!positions_.allFinite()) throw InvalidArgument("Configuration: positions must be finite");
  if (!is_antichain()) throw InvalidArgument("Configuration: labels do not form an antichain");
}

Configuration Configuration::trusted(std::vector<Label> labels, Eigen::MatrixXd positions) {
  Configuration config(static_cast<int>(positions.rows()));
  config.labels_ = std::move(labels);
  config.positions_ = std::move(positions);
  return config;
}

bool Configuration::is_antichain() const {
  // After lexicographic sorting, a label that is a prefix of another is also
  // a prefix of its immediate successor.
  std::vector<const Label*> sorted;
  sorted.reserve(labels_.size());
  for (const Label& label : labels_) sorted.push_back(&label);
  std::sort(sorted.begin(), sorted.end(), [](const Label* a, const Label* b) { return *a < *b; });
  for (std::size_t i = 1; i < sorted.size(); ++i) {
    if (is_prefix(*sorted[i - 1], *sorted[i])) return false;
  }
  return true;
}

double config_distance(const Configuration& e1, const Configuration& e2) {
  if (e1.dimension() != e2.dimension()) throw DimensionMismatch("config_distance: dimension mismatch");
  auto sorted_indices = [](const Configuration& e) {
    std::vector<std::size_t> idx(e.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return e.labels()[a] < e.labels()[b]; });
    return idx;
  };
  const auto a = sorted_indices(e1);
  const auto b = sorted_indices(e2);
  double distance = 0.0;
  std::size_t i = 0;
  std::size_t j = 0;
  while (i < a.size() || j < b.size()) {
    if (j == b.size() || (i < a.size() && e1.labels()[a[i]] < e2.labels()[b[j]])) {
      distance += 1.0;
      ++i;
    } else if (i == a.size() || e2.labels()[b[j]] < e1.labels()[a[i]]) {
      distance += 1.0;
      ++j;
    } else {
      distance += std::min((e1.position(a[i]) - e2.position(b[j])).norm(), 1.0);
      ++i;
      ++j;
    }
  }
  return distance;
}

// ---------------------------------------------------------------------------
// Extended Wasserstein distance

double CemeteryMetric::to_cemetery(const Point& x) const {
  const double base = base_point.size() == 0 ? std::min(x.norm(), 1.0) : rho(x, base_point);
  return base + 1.0;
}

namespace {

void check_pair(const FiniteMeasure& mu, const FiniteMeasure& nu, const CemeteryMetric& metric, const char* who,
                Eigen::Index cap = kMaxTransportAtoms) {
  if (mu.dimension() != nu.dimension()) throw DimensionMismatch(std::string(who) + ": dimension mismatch");
  if (metric.base_point.size() != 0 && metric.base_point.size() != mu.dimension())
    throw DimensionMismatch(std::string(who) + ": cemetery base point has wrong dimension");
  if (mu.size() > cap || nu.size() > cap) {
    std::ostringstream msg;
    msg << who << ": more than " << cap << " atoms per side; thin the measures first";
    throw InvalidArgument(msg.str());
  }
}

Point base_point_of(const CemeteryMetric& metric, int dimension) {
  return metric.base_point.size() == 0 ? Point(Point::Zero(dimension)) : metric.base_point;
}

}  // namespace

double wbar1_dense(const FiniteMeasure& mu, const FiniteMeasure& nu, const CemeteryMetric& metric,
                   std::optional<double> padding_mass) {
  check_pair(mu, nu, metric, "wbar1_dense");
  const double heavier = std::max(mu.mass(), nu.mass());
  const double pad = padding_mass.value_or(heavier);
  require(pad >= heavier * (1.0 - 1e-12), "wbar1_dense: padding mass below the heavier measure");
  const double mu_pad = std::max(pad - mu.mass(), 0.0);
  const double nu_pad = std::max(pad - nu.mass(), 0.0);
  const bool mu_cemetery = padding_mass.has_value() || mu_pad > 0.0;
  const bool nu_cemetery = padding_mass.has_value() || nu_pad > 0.0;

  const Eigen::Index n = mu.size() + (mu_cemetery ? 1 : 0);
  const Eigen::Index m = nu.size() + (nu_cemetery ? 1 : 0);
  if (n == 0 && m == 0) return 0.0;

  Eigen::VectorXd a(n);
  Eigen::VectorXd b(m);
  a.head(mu.size()) = mu.weights();
  b.head(nu.size()) = nu.weights();
  if (mu_cemetery) a[n - 1] = mu_pad;
  if (nu_cemetery) b[m - 1] = nu_pad;

  Eigen::MatrixXd cost(n, m);
  for (Eigen::Index i = 0; i < n; ++i) {
    const bool i_cem = mu_cemetery && i == n - 1;
    for (Eigen::Index j = 0; j < m; ++j) {
      const bool j_cem = nu_cemetery && j == m - 1;
      if (i_cem && j_cem) {
        cost(i, j) = 0.0;
      } else if (i_cem) {
        cost(i, j) = metric.to_cemetery(nu.position(j));
      } else if (j_cem) {
        cost(i, j) = metric.to_cemetery(mu.position(i));
      } else {
        cost(i, j) = metric.rho(mu.position(i), nu.position(j));
      }
    }
  }
  return transport_cost(a, b, cost);
}

double wbar1_line_graph(const FiniteMeasure& mu, const FiniteMeasure& nu, const CemeteryMetric& metric) {
  check_pair(mu, nu, metric, "wbar1_line_graph");
  require(mu.dimension() == 1, "wbar1_line_graph: requires dimension 1");
  if (mu.empty() && nu.empty()) return 0.0;

  // Nodes: atoms of mu, atoms of nu, base point, hub, cemetery. The hub joins
  // every line node at cost 1/2, so shortest paths realise min(|x - y|, 1);
  // the cemetery hangs off the base point at cost 1.
  const int n_mu = static_cast<int>(mu.size());
  const int n_nu = static_cast<int>(nu.size());
  const int base = n_mu + n_nu;
  const int hub = base + 1;
  const int cemetery = base + 2;
  const int node_count = base + 3;

  std::vector<double> supply(node_count, 0.0);
  std::vector<std::pair<double, int>> line;
  line.reserve(static_cast<std::size_t>(base + 1));
  for (int i = 0; i < n_mu; ++i) {
    supply[i] = mu.weights()[i];
    line.emplace_back(mu.positions()(0, i), i);
  }
  for (int j = 0; j < n_nu; ++j) {
    supply[n_mu + j] = -nu.weights()[j];
    line.emplace_back(nu.positions()(0, j), n_mu + j);
  }
  supply[cemetery] = nu.mass() - mu.mass();
  line.emplace_back(base_point_of(metric, 1)[0], base);
  std::sort(line.begin(), line.end());

  std::vector<FlowArc> arcs;
  arcs.reserve(4 * line.size() + 2);
  for (std::size_t k = 0; k + 1 < line.size(); ++k) {
    const double gap = line[k + 1].first - line[k].first;
    arcs.push_back({line[k].second, line[k + 1].second, gap});
    arcs.push_back({line[k + 1].second, line[k].second, gap});
  }
  for (const auto& [x, node] : line) {
    arcs.push_back({node, hub, 0.5});
    arcs.push_back({hub, node, 0.5});
  }
  arcs.push_back({base, cemetery, 1.0});
  arcs.push_back({cemetery, base, 1.0});
  return solve_min_cost_flow(node_count, supply, arcs).cost;
}

namespace {

/// Concave piecewise-linear function on [-1/2, 1/2]: breakpoints b_1 < ... <
/// b_k, slopes s_0 > ... > s_k on the pieces between them, value at -1/2.
struct ConcavePiecewise {
  static constexpr double kLo = -0.5;
  static constexpr double kHi = 0.5;
  std::vector<double> breaks;
  std::vector<double> slopes{0.0};
  double value_lo = 0.0;

  double at(double y) const {
    double value = value_lo, x = kLo;
    std::size_t i = 0;
    for (; i < breaks.size() && breaks[i] < y; ++i) {
      value += slopes[i] * (breaks[i] - x);
      x = breaks[i];
    }
    return value + slopes[i] * (y - x);
  }

  void add_linear(double w) {
    for (double& s : slopes) s += w;
    value_lo += w * kLo;
  }

  /// Argmax: left end of the region where the slope turns nonpositive.
  double argmax() const {
    for (std::size_t i = 0; i < slopes.size(); ++i) {
      if (slopes[i] <= 0.0) return i == 0 ? kLo : breaks[i - 1];
    }
    return kHi;
  }

  double max() const { return at(argmax()); }

  /// y -> max_{|z - y| <= g} f(z): the rising part moves left by g, the
  /// falling part right by g, and a flat piece fills the gap.
  void window_max(double g) {
    if (g <= 0.0) return;
    const double z = argmax();
    const double new_lo = at(std::min(kLo + g, z));
    std::vector<double> nb;
    std::vector<double> ns;
    nb.reserve(breaks.size() + 2);
    ns.reserve(slopes.size() + 2);
    std::size_t i = 0;
    // Rising pieces: breakpoints strictly left of z.
    ns.push_back(slopes[0]);
    for (; i < breaks.size() && breaks[i] < z; ++i) {
      const double b = breaks[i] - g;
      if (b <= kLo) {
        ns.back() = slopes[i + 1];
      } else {
        nb.push_back(b);
        ns.push_back(slopes[i + 1]);
      }
    }
    // Flat piece [z - g, z + g].
    if (z - g > kLo) {
      nb.push_back(z - g);
      ns.push_back(0.0);
    } else {
      ns.back() = 0.0;
    }
    if (z + g < kHi) {
      // Falling pieces: skip a breakpoint sitting exactly at z.
      if (i < breaks.size() && breaks[i] == z) ++i;
      nb.push_back(z + g);
      ns.push_back(slopes[std::min(i, slopes.size() - 1)]);
      for (; i < breaks.size(); ++i) {
        const double b = breaks[i] + g;
        if (b >= kHi) break;
        nb.push_back(b);
        ns.push_back(slopes[i + 1]);
      }
    }
    breaks = std::move(nb);
    slopes = std::move(ns);
    value_lo = new_lo;
  }
};

}  // namespace

double wbar1_line_dual(const FiniteMeasure& mu, const FiniteMeasure& nu, const CemeteryMetric& metric) {
  check_pair(mu, nu, metric, "wbar1_line_dual", kMaxLineDualAtoms);
  require(mu.dimension() == 1, "wbar1_line_dual: requires dimension 1");
  if (mu.empty() && nu.empty()) return 0.0;

  // Dual: with the hub potential fixed at 0, line potentials are 1-Lipschitz
  // with values in [-1/2, 1/2], and the cemetery adds |mass difference|
  // after moving its supply onto the base point.
  const double cemetery_supply = nu.mass() - mu.mass();
  std::vector<std::pair<double, double>> line;
  line.reserve(static_cast<std::size_t>(mu.size() + nu.size() + 1));
  for (Eigen::Index i = 0; i < mu.size(); ++i) line.emplace_back(mu.positions()(0, i), mu.weights()[i]);
  for (Eigen::Index j = 0; j < nu.size(); ++j) line.emplace_back(nu.positions()(0, j), -nu.weights()[j]);
  line.emplace_back(base_point_of(metric, 1)[0], cemetery_supply);
  std::sort(line.begin(), line.end());

  ConcavePiecewise f;
  for (std::size_t k = 0; k < line.size(); ++k) {
    if (k > 0) f.window_max(line[k].first - line[k - 1].first);
    f.add_linear(line[k].second);
  }
  return std::max(f.max(), 0.0) + std::abs(cemetery_supply);
}

double wbar1(const FiniteMeasure& mu, const FiniteMeasure& nu, const CemeteryMetric& metric) {
  if (mu.dimension() == 1 && nu.dimension() == 1) return wbar1_line_dual(mu, nu, metric);
  return wbar1_dense(mu, nu, metric);
}

double wbar1_dual_lower_bound(const FiniteMeasure& mu, const FiniteMeasure& nu,
                              std::span<const TestFunction> test_functions, const CemeteryMetric& metric) {
  if (mu.dimension() != nu.dimension()) throw DimensionMismatch("wbar1_dual_lower_bound: dimension mismatch");

  constexpr Eigen::Index kProbeAtoms = 200;
  std::vector<Point> probes;
  auto collect = [&](const FiniteMeasure& m) {
    const Eigen::Index stride = std::max<Eigen::Index>(1, m.size() / kProbeAtoms);
    for (Eigen::Index i = 0; i < m.size(); i += stride) probes.push_back(m.position(i));
  };
  collect(mu);
  collect(nu);

  const double mass_gap = std::abs(mu.mass() - nu.mass());
  double best = 0.0;  // the zero function belongs to the class
  for (std::size_t f = 0; f < test_functions.size(); ++f) {
    const TestFunction& phi = test_functions[f];
    std::vector<double> values(probes.size());
    for (std::size_t i = 0; i < probes.size(); ++i) values[i] = phi(probes[i]);
    for (std::size_t i = 0; i < probes.size(); ++i) {
      for (std::size_t j = i + 1; j < probes.size(); ++j) {
        const double bound = metric.rho(probes[i], probes[j]);
        if (std::abs(values[i] - values[j]) > bound + 1e-12) {
          std::ostringstream msg;
          msg << "wbar1_dual_lower_bound: test function " << f << " is not 1-Lipschitz for rho: |phi(x)-phi(y)| = "
              << std::abs(values[i] - values[j]) << " > rho(x,y) = " << bound;
          throw InvalidArgument(msg.str());
        }
      }
    }
    best = std::max(best, mu.integrate(phi) - nu.integrate(phi));
  }
  return best + mass_gap;
}

}  // namespace mvb
