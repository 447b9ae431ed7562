#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mvbranch/cost.hpp"
#include "mvbranch/engine.hpp"
#include "mvbranch/lq.hpp"
#include "mvbranch/meanfield.hpp"

namespace mvb {

struct CheckReport {
  std::string name;
  double statistic = 0.0;
  double threshold = 0.0;
  bool passed = false;
  std::size_t samples = 0;
  std::string config_hash;
  std::string detail;
};

/// Test function phi on R^d with gradient and Hessian.
struct CylinderTest {
  std::function<double(const Point&)> phi;
  std::function<Point(const Point&)> gradient;
  std::function<DiffusionMatrix(const Point&)> hessian;
};

/// F(m) = outer(<m, phi_1>, ..., <m, phi_k>). Its linear derivative is
/// sum_i d_i outer phi_i(x), its intrinsic derivative sum_i d_i outer grad phi_i(x).
struct CylindricalFunction {
  std::string name;
  std::vector<CylinderTest> tests;
  std::function<double(const Eigen::VectorXd&)> outer;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> outer_gradient;

  Eigen::VectorXd inner(const FiniteMeasure& m) const;
  double operator()(const FiniteMeasure& m) const;
  double linear_derivative(const FiniteMeasure& m, const Point& x) const;
  Point intrinsic_derivative(const FiniteMeasure& m, const Point& x) const;
  DiffusionMatrix intrinsic_hessian(const FiniteMeasure& m, const Point& x) const;

  /// Checks |phi_i(x)| <= C(1 + |x|^2) at sampled points; throws otherwise.
  void check_quadratic_growth(int dimension, double constant, double radius = 100.0) const;

  /// mass, <m, x_1>, <m, x_1>^2 and m2 for one-dimensional measures.
  static CylindricalFunction mass();
  static CylindricalFunction first_moment();
  static CylindricalFunction first_moment_squared();
  static CylindricalFunction second_moment();
};

/// <b . D_mu F + 1/2 Tr(sigma sigma^T d_x D_mu F) + gamma sum (l - 1) p_l dF/dmu, mu>
/// at time t with mu the flow measure at grid index j.
double ito_generator(const CylindricalFunction& F, const ModelCoefficients& model, const ClosedLoopControl& control,
                     const MeasureFlow& flow, std::size_t j);

/// F(mu_t) - F(mu_s) - int_s^t generator du (trapezoid on the flow grid).
/// s and t must be grid times of the flow.
double ito_residual(const CylindricalFunction& F, const ModelCoefficients& model, const ClosedLoopControl& control,
                    const MeasureFlow& flow, double s, double t);

CheckReport ito_formula_check(const CylindricalFunction& F, const ModelCoefficients& model,
                              const ClosedLoopControl& control, const MeasureFlow& flow, double s, double t,
                              double tol);

/// Mean of sup_s #K_s against nu0_mass exp(gamma_bar M1 T); needs >= 10^4 trees.
CheckReport check_population_bound(const std::vector<TreeSummary>& trees, double nu0_mass, double gamma_bar, double M1,
                                   double horizon);

struct DppResult {
  double lhs = 0.0;
  double rhs_optimal = 0.0;
  std::vector<double> rhs_panel;
  double rhs = 0.0;  // min over panel and the optimal control
};

/// lhs = w(t, m); rhs(a) = int_t^s <L, mu_u> du + w(s, m_s) along each
/// control's moment flow from (t, m).
DppResult dpp_values(const RiccatiSolution& sol, const Moments& m, double t, double s,
                     const std::vector<AffineFeedback>& panel, double dt = 1e-3);

/// Passes iff lhs <= rhs + tol and lhs >= rhs(a*) - tol.
CheckReport check_dpp(const RiccatiSolution& sol, const Moments& m, double t, double s,
                      const std::vector<AffineFeedback>& panel, double tol = 1e-6, double dt = 1e-3);

/// Panel of affine controls (k0 + e0, k1 + e1) around the optimal feedback at (t, mass).
std::vector<AffineFeedback> perturbed_panel(const std::shared_ptr<const RiccatiSolution>& sol, double t, double mass,
                                            const std::vector<std::pair<double, double>>& shifts);

/// `count` shifts spread over [-scale, scale]^2, deterministic.
std::vector<std::pair<double, double>> default_shifts(std::size_t count, double scale = 0.5);

/// J(a*) = w(t0, m0) within tol and J(a) >= w - tol for every perturbed control.
CheckReport check_verification(const std::shared_ptr<const RiccatiSolution>& sol, const Moments& m0,
                               const std::vector<std::pair<double, double>>& shifts, double tol = 1e-6,
                               double dt = 1e-3);

struct MonteCarloVerification {
  CostEstimate estimate;
  double value = 0.0;
};

/// Monte Carlo cost of the optimal feedback from (t0, nu0) against w(t0, m0),
/// with the flow supplied by the moment ODEs.
MonteCarloVerification verification_monte_carlo(const std::shared_ptr<const RiccatiSolution>& sol,
                                                const FiniteMeasure& nu0, const TimeGrid& grid, std::size_t trees,
                                                std::uint64_t seed, const CostOptions& options = {});

CheckReport check_verification_mc(const std::shared_ptr<const RiccatiSolution>& sol, const FiniteMeasure& nu0,
                                  const TimeGrid& grid, std::size_t trees, std::uint64_t seed,
                                  const CostOptions& options = {});

struct InvarianceResult {
  MeasureFlow flow_a;
  MeasureFlow flow_b;
  double max_z = 0.0;          // max over grid and moments of |difference| / combined SE
  double max_difference = 0.0; // max absolute moment difference
};

InvarianceResult initial_law_invariance(const ModelCoefficients& model, const ClosedLoopControl& control,
                                        const FiniteMeasure& nu0, InitScheme scheme_a, InitScheme scheme_b,
                                        const TimeGrid& grid, std::uint64_t seed, const PicardOptions& options);

CheckReport check_initial_law_invariance(const ModelCoefficients& model, const ClosedLoopControl& control,
                                         const FiniteMeasure& nu0, InitScheme scheme_a, InitScheme scheme_b,
                                         const TimeGrid& grid, std::uint64_t seed, const PicardOptions& options,
                                         double z_threshold = 3.0);

/// Largest |hjb_residual| over an n x n x n grid of (t, mass, m1) with
/// m2 = m1^2 / mass + spread * mass.
double max_hjb_residual(const RiccatiSolution& sol, int n = 10, double max_mass = 5.0, double max_m1 = 5.0,
                        double spread = 1.0);

struct NamedCheck {
  std::string name;
  std::function<CheckReport()> run;
};

/// Runs every check; exceptions become failed reports. Reports are returned
/// sorted by name.
std::vector<CheckReport> run_suite(const std::vector<NamedCheck>& checks, const std::string& config_hash = {});

}  // namespace mvb
