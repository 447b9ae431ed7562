#pragma once

#include <memory>
#include <vector>

#include <Eigen/Dense>

#include "mvbranch/cost.hpp"
#include "mvbranch/model.hpp"

namespace mvb {

/// Scalar function of time: a constant or a natural cubic spline through a
/// table of samples (flat extrapolation outside the table).
class TimeFunction {
 public:
  TimeFunction(double value = 0.0);  // NOLINT(google-explicit-constructor)
  TimeFunction(std::vector<double> times, std::vector<double> values);

  double operator()(double t) const;
  bool is_constant() const { return times_.empty(); }
  /// Constant value, or the first sample.
  double constant_value() const { return values_.front(); }

 private:
  std::vector<double> times_;
  std::vector<double> values_;
  std::vector<double> second_derivatives_;
};

/// One-dimensional LQ model: drift b1 x + b2 mass + b3 a, constant sigma,
/// constant branching rate gamma with constant progeny law p, running cost
/// L1 x^2 + L2 mass + L3 m1 + L4 a^2 and terminal cost g1 x^2 + g2 mass + g3 m1.
struct LQModel {
  TimeFunction b1, b2, b3;
  double sigma = 0.0;
  double gamma = 1.0;
  double gamma_bar = 0.0;  // 0: equal to gamma
  std::vector<double> p{0.0, 1.0};
  TimeFunction L1, L2, L3;
  TimeFunction L4{1.0};
  double g1 = 0.0, g2 = 0.0, g3 = 0.0;
  double t0 = 0.0;
  double horizon = 1.0;

  /// gamma * sum (l - 1) p_l
  double theta() const;
  double rate_bound() const { return gamma_bar > 0.0 ? gamma_bar : gamma; }

  /// Checks L4 > 0 on a dense sample, gamma in (0, gamma-bar], a valid
  /// progeny law with positive mean, and t0 < T.
  void validate() const;
};

/// (mass, m1, m2) of a one-dimensional measure.
struct Moments {
  double mass = 0.0;
  double m1 = 0.0;
  double m2 = 0.0;

  Eigen::Vector3d vector() const { return {mass, m1, m2}; }
  static Moments of(const FiniteMeasure& mu);
};

enum class ThetaConvention { kPrinted, kThetaExplicit };

std::string to_string(ThetaConvention convention);
ThetaConvention theta_convention_from_string(const std::string& name);

/// (Lambda, Gamma1, Gamma2, Gamma3, Gamma4)
using RiccatiState = Eigen::Matrix<double, 5, 1>;

/// Right-hand side of the Riccati system written as d/dt state = f(t, state).
RiccatiState riccati_rhs(const LQModel& model, ThetaConvention convention, double t, const RiccatiState& y);

/// Riccati system sampled on a grid together with the right-hand side at each
/// node; values between nodes by cubic Hermite interpolation.
class RiccatiSolution {
 public:
  RiccatiSolution(LQModel model, ThetaConvention convention, TimeGrid grid, std::vector<RiccatiState> values,
                  std::vector<RiccatiState> derivatives);

  const LQModel& model() const { return model_; }
  ThetaConvention convention() const { return convention_; }
  const TimeGrid& grid() const { return grid_; }
  const std::vector<RiccatiState>& values() const { return values_; }
  const std::vector<RiccatiState>& derivatives() const { return derivatives_; }

  RiccatiState value(double t) const;
  RiccatiState derivative(double t) const;

  double lambda(double t) const { return value(t)[0]; }
  double gamma2(double t) const { return value(t)[2]; }

  /// Copy with `delta` added to every stored value (derivatives untouched).
  /// Used to confirm that the HJB residual detects a wrong solution.
  RiccatiSolution perturbed(const RiccatiState& delta) const;

 private:
  std::size_t segment(double t) const;

  LQModel model_;
  ThetaConvention convention_;
  TimeGrid grid_;
  std::vector<RiccatiState> values_;
  std::vector<RiccatiState> derivatives_;
};

/// Backward RK4 from T on `grid` (which must end at the model horizon).
/// Throws NumericalFailure if any component exceeds 1e8 in magnitude.
RiccatiSolution solve_riccati(const LQModel& model, const TimeGrid& grid,
                              ThetaConvention convention = ThetaConvention::kThetaExplicit);

/// Lambda m2 + Gamma1 mass + Gamma2 mass m1 + Gamma3 mass^2 + Gamma4 mass^3.
double lq_value(const RiccatiSolution& sol, double t, const Moments& m);

/// -(2 b3 Lambda x + b3 Gamma2 mass) / (2 L4).
double lq_optimal_control(const RiccatiSolution& sol, double t, double x, double mass);

/// Affine form of the optimal feedback along the flow started at (t0, mass0):
/// slope -b3 Lambda / L4, offset -b3 Gamma2 mass_t / (2 L4) with
/// mass_t = mass0 exp(theta (t - t0)).
AffineFeedback lq_optimal_affine(const std::shared_ptr<const RiccatiSolution>& sol, double t0, double mass0);

/// The same feedback as a ClosedLoopControl with the sup of its coefficients
/// on the grid as Lipschitz constant.
ClosedLoopControl lq_optimal_control_law(const std::shared_ptr<const RiccatiSolution>& sol, double t0, double mass0);

/// Moment ODEs of the closed loop under a = k0(t) + k1(t) x, integrated by
/// RK4 on `grid` from (grid.start(), m0).
std::vector<Moments> lq_moment_flow(const LQModel& model, const AffineFeedback& control, const Moments& m0,
                                    const TimeGrid& grid);

/// The moment flow wrapped as a MeasureFlow of two-atom measures.
MeasureFlow lq_moment_measure_flow(const LQModel& model, const AffineFeedback& control, const Moments& m0,
                                   const TimeGrid& grid);

/// Running cost rate <L(t, ., m, a(t, .)), m> for an affine control.
double lq_running_rate(const LQModel& model, const AffineFeedback& control, double t, const Moments& m);

/// <g(., m), m>
double lq_terminal_cost(const LQModel& model, const Moments& m);

struct LQPolicyEvaluation {
  double running = 0.0;  // integral of the running cost rate over [t0, s]
  Moments end;           // moments at s
};

/// Integrates the moments together with the running cost from (t0, m0) to s
/// by RK4 with about `dt` per step.
LQPolicyEvaluation lq_evaluate_policy(const LQModel& model, const AffineFeedback& control, double t0,
                                      const Moments& m0, double s, double dt = 1e-3);

/// Cost of the affine policy from (t0, m0): running cost to T plus terminal cost.
double lq_cost_ode(const LQModel& model, const AffineFeedback& control, double t0, const Moments& m0,
                   double dt = 1e-3);

/// d_t w + <L(t, ., m, a*), m> + <G^{a*}_t w, m> at (t, m), with d_t w built
/// from the stored node derivatives and the generator from the derivatives of w.
double hjb_residual(const RiccatiSolution& sol, double t, const Moments& m);

/// Hamiltonian integrand L4 a^2 + b3 a (2 Lambda x + Gamma2 mass) at (t, x, mass).
double lq_hamiltonian_integrand(const RiccatiSolution& sol, double t, double x, double mass, double a);

/// Generic-engine coefficients and costs of the LQ model.
ModelCoefficients lq_coefficients(const LQModel& model);
CostSpec lq_costs(const LQModel& model);

}  // namespace mvb
