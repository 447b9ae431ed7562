#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mvbranch/types.hpp"

namespace mvb {

/// Finite nonnegative atomic measure on R^d. Positions are stored column-wise
/// (d x n). Atoms with weight below 1e-15 are dropped on construction, and
/// mass and first two moments are cached since the measure is immutable.
class FiniteMeasure {
 public:
  static constexpr double kWeightFloor = 1e-15;

  FiniteMeasure() : FiniteMeasure(1) {}
  explicit FiniteMeasure(int dimension);
  FiniteMeasure(Eigen::MatrixXd positions, Eigen::VectorXd weights);

  static FiniteMeasure dirac(const Point& x, double weight = 1.0);

  int dimension() const { return dimension_; }
  Eigen::Index size() const { return weights_.size(); }
  bool empty() const { return weights_.size() == 0; }

  const Eigen::MatrixXd& positions() const { return positions_; }
  const Eigen::VectorXd& weights() const { return weights_; }
  Point position(Eigen::Index i) const { return positions_.col(i); }

  double mass() const { return mass_; }
  const Eigen::VectorXd& first_moment() const { return first_moment_; }
  double second_moment() const { return second_moment_; }

  double integrate(const std::function<double(const Point&)>& f) const;

 private:
  int dimension_;
  Eigen::MatrixXd positions_;
  Eigen::VectorXd weights_;
  double mass_ = 0.0;
  Eigen::VectorXd first_moment_;
  double second_moment_ = 0.0;
};

struct MeasureMoments {
  double mass = 0.0;
  Eigen::VectorXd m1;
  double m2 = 0.0;
};

MeasureMoments moments(const FiniteMeasure& mu);

/// `factor * mu`.
FiniteMeasure scaled(const FiniteMeasure& mu, double factor);

/// `a_weight * a + b_weight * b` as a single atomic measure.
FiniteMeasure mixture(const FiniteMeasure& a, double a_weight, const FiniteMeasure& b, double b_weight);

/// Deterministic mass-preserving thinning to at most `cap` atoms: atoms are
/// ordered by their first coordinate and replaced by `cap` equally weighted
/// quantile representatives. Returns `mu` unchanged when it is small enough.
FiniteMeasure thin_to_quantiles(const FiniteMeasure& mu, Eigen::Index cap);

// ---------------------------------------------------------------------------
// Ulam-Harris labels and configurations

using Label = std::vector<std::uint32_t>;

/// True when `ancestor` is a (not necessarily strict) prefix of `label`.
bool is_prefix(const Label& ancestor, const Label& label);

/// Child `index` (1-based) of `parent`.
Label child_label(const Label& parent, std::uint32_t index);

/// Dotted form, e.g. "1.2.1".
std::string format_label(const Label& label);

/// Finite antichain of labelled particles with positions in R^d.
class Configuration {
 public:
  explicit Configuration(int dimension = 1);
  /// Validates the antichain property; throws InvalidArgument otherwise.
  Configuration(std::vector<Label> labels, Eigen::MatrixXd positions);

  /// Skips validation. Used by the simulation engine, which maintains the
  /// antichain by construction.
  static Configuration trusted(std::vector<Label> labels, Eigen::MatrixXd positions);

  int dimension() const { return static_cast<int>(positions_.rows()); }
  std::size_t size() const { return labels_.size(); }
  bool empty() const { return labels_.empty(); }

  const std::vector<Label>& labels() const { return labels_; }
  const Eigen::MatrixXd& positions() const { return positions_; }
  Point position(std::size_t i) const { return positions_.col(static_cast<Eigen::Index>(i)); }

  /// Whether the label set is a valid antichain with distinct labels.
  bool is_antichain() const;

 private:
  std::vector<Label> labels_;
  Eigen::MatrixXd positions_;
};

/// #(K1 sym-diff K2) + sum over shared labels of min(|x - y|, 1).
double config_distance(const Configuration& e1, const Configuration& e2);

// ---------------------------------------------------------------------------
// Extended Wasserstein distance

/// Truncated metric rho(x, y) = min(|x - y|, 1) extended by a cemetery point
/// with rho(x, cemetery) = rho(x, base_point) + 1.
struct CemeteryMetric {
  Point base_point;  // empty means the origin

  double rho(const Point& x, const Point& y) const { return std::min((x - y).norm(), 1.0); }
  double to_cemetery(const Point& x) const;
};

/// Atom count above which the dense and graph solvers refuse to run; both
/// need memory quadratic in the atom count.
inline constexpr Eigen::Index kMaxTransportAtoms = 10000;

/// Cap for wbar1_line_dual. Memory is linear but the live breakpoints grow
/// with n in practice: about 6 s at 5 x 10^4 atoms, 90 s at 2 x 10^5.
inline constexpr Eigen::Index kMaxLineDualAtoms = 100000;

/// Exact W-bar_1 between two atomic measures. One-dimensional inputs go to
/// wbar1_line_dual; higher dimensions use the dense transportation problem.
double wbar1(const FiniteMeasure& mu, const FiniteMeasure& nu, const CemeteryMetric& metric = {});

/// Dense transportation formulation with both sides padded by cemetery mass up
/// to `padding_mass` (defaults to the larger of the two masses).
double wbar1_dense(const FiniteMeasure& mu, const FiniteMeasure& nu, const CemeteryMetric& metric = {},
                   std::optional<double> padding_mass = std::nullopt);

/// Sparse-graph formulation; requires dimension 1.
double wbar1_line_graph(const FiniteMeasure& mu, const FiniteMeasure& nu, const CemeteryMetric& metric = {});

/// One-dimensional dual: maximises sum_i w_i phi(x_i) over 1-Lipschitz phi
/// with values in [-1/2, 1/2] by a sweep over the sorted atoms that carries
/// the best partial objective as a concave function of the current
/// potential. O(n log n + n k) with k the live breakpoints (k < n).
double wbar1_line_dual(const FiniteMeasure& mu, const FiniteMeasure& nu, const CemeteryMetric& metric = {});

using TestFunction = std::function<double(const Point&)>;

/// max over the supplied test functions (and the zero function) of
/// <mu - nu, phi> + |mass(mu) - mass(nu)|. Every test function is checked
/// to be 1-Lipschitz for rho on pairs of atoms; violations throw.
double wbar1_dual_lower_bound(const FiniteMeasure& mu, const FiniteMeasure& nu,
                              std::span<const TestFunction> test_functions, const CemeteryMetric& metric = {});

}  // namespace mvb
