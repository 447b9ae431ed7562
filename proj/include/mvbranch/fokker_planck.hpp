#pragma once

#include <functional>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "mvbranch/engine.hpp"
#include "mvbranch/flow.hpp"
#include "mvbranch/model.hpp"

namespace mvb {

/// Uniform cell-centred grid of `cells` cells on [x_lo, x_hi].
struct SpaceGrid {
  double x_lo = -1.0;
  double x_hi = 1.0;
  int cells = 200;

  static SpaceGrid with_step(double x_lo, double x_hi, double dx);

  double dx() const { return (x_hi - x_lo) / cells; }
  double center(int i) const { return x_lo + (i + 0.5) * dx(); }
  void validate() const;
};

enum class FpBoundary { kZeroFlux, kZeroValue };
enum class FpScheme { kImplicit, kExplicit };

std::string to_string(FpBoundary boundary);
std::string to_string(FpScheme scheme);

/// Coefficients of the linear equation
/// d_t rho = -d_x(b rho) + 1/2 d_xx(sigma^2 rho) + pi rho.
struct FpCoefficients {
  std::function<double(double t, double x)> drift;
  std::function<double(double t, double x)> sigma;
  std::function<double(double t, double x)> source;
  bool time_independent_sigma = false;
};

/// Freezes a one-dimensional model along a flow under a feedback control:
/// b(t, x, mu_t, a(t, x)), sigma(...) and pi = gamma sum (l - 1) p_l.
/// Holds references to all three arguments.
FpCoefficients frozen_coefficients(const ModelCoefficients& model, const ClosedLoopControl& control,
                                   const MeasureFlow& flow);

struct FpOptions {
  FpScheme scheme = FpScheme::kImplicit;
  FpBoundary boundary = FpBoundary::kZeroFlux;
  double safety = 0.4;  // explicit mode: dt <= safety dx^2 / sigma^2
};

/// Density history on a space-time grid.
struct DensityFlow {
  SpaceGrid space;
  TimeGrid time;
  FpBoundary boundary = FpBoundary::kZeroFlux;
  std::vector<Eigen::VectorXd> density;  // one vector of cell values per time
  std::vector<double> mass;
  double min_density = 0.0;   // most negative value seen before clipping
  std::size_t clipped = 0;    // cells clipped to zero

  /// Cell-centre atoms with weights rho_i dx.
  FiniteMeasure as_measure(std::size_t j) const;
};

/// Samples a density function at cell centres.
Eigen::VectorXd discretize_density(const std::function<double(double)>& f, const SpaceGrid& space);

/// Histogram density of an atomic measure (atoms outside the grid are dropped).
Eigen::VectorXd density_from_measure(const FiniteMeasure& mu, const SpaceGrid& space);

/// Throws InvalidArgument when the fraction of `nu0`'s mass outside the
/// spatial domain exceeds `tol`.
void check_mass_leak(const FiniteMeasure& nu0, const SpaceGrid& space, double tol = 1e-10);

/// Upwind advection (explicit, sub-cycled to Courant number <= 0.9), centred
/// diffusion (implicit by default) and the source through the exact factor
/// exp(pi dt) per step.
DensityFlow fp_solve(const FpCoefficients& coefficients, const Eigen::VectorXd& density0, const SpaceGrid& space,
                     const TimeGrid& time, const FpOptions& options = {});

/// sqrt(sum_j exp(eta(x_j)) rho_j^2 dx) with eta(x) = eta0 sqrt(1 + x^2);
/// +infinity when the weight overflows.
double eta_norm(const Eigen::VectorXd& density, const SpaceGrid& space, double eta0);

/// Smooth test function with its first two derivatives.
struct SmoothTest {
  std::function<double(double)> phi;
  std::function<double(double)> dphi;
  std::function<double(double)> d2phi;
};

/// Bump exp(-1 / (1 - ((x - c)/r)^2)) supported on (c - r, c + r).
SmoothTest bump_test(double center, double radius);

/// <phi, rho_T> - <phi, rho_0> - int <b phi' + 1/2 sigma^2 phi'' + pi phi, rho_t> dt
/// with the time integral by the trapezoid rule on the density's grid.
double weak_form_residual(const DensityFlow& flow, const FpCoefficients& coefficients, const SmoothTest& test);

/// Sampled ellipticity / boundedness of sigma^2 on the grid.
struct EllipticityReport {
  double min_sigma_sq = 0.0;
  double max_sigma_sq = 0.0;
  bool uniformly_elliptic = false;
};

EllipticityReport ellipticity(const FpCoefficients& coefficients, const SpaceGrid& space, const TimeGrid& time);

struct UniquenessReport {
  std::vector<double> dx;              // resolutions used
  std::vector<double> fd_distances;    // W-bar_1 between final marginals at consecutive resolutions
  double fd_ratio = 0.0;               // fd_distances[0] / fd_distances[1] when defined
  double particle_distance = 0.0;      // between the two liftings
  double particle_null_distance = 0.0; // same lifting, independent seeds
  EllipticityReport ellipticity;
};

struct UniquenessOptions {
  std::vector<double> dx{0.04, 0.02, 0.01};
  std::size_t trees = 5000;
  InitScheme scheme_a = InitScheme::kBernoulliResidual;
  InitScheme scheme_b = InitScheme::kPoisson;
  std::uint64_t seed = 1;
  std::size_t atoms = 2000;
  BatchOptions batch;
};

/// FD self-convergence at several resolutions plus particle marginals from
/// two initial liftings of the same nu0, all against the frozen flow.
UniquenessReport uniqueness_stress(const ModelCoefficients& model, const ClosedLoopControl& control,
                                   const MeasureFlow& flow, const FiniteMeasure& nu0,
                                   const std::function<double(double)>& nu0_density, double x_lo, double x_hi,
                                   const UniquenessOptions& options = {});

}  // namespace mvb
