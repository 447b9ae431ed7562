#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "mvbranch/engine.hpp"
#include "mvbranch/flow.hpp"

namespace mvb {

struct FlowSimulationOptions {
  /// Atoms kept per grid time; 0 keeps every particle. Moment statistics are
  /// always computed from the full sample.
  std::size_t atom_cap = 2000;
  InitScheme scheme = InitScheme::kBernoulliResidual;
  BatchOptions batch;
};

/// Simulates `trees` trees against the frozen flow `frozen` and returns the
/// empirical mean-measure flow on `grid` with per-time moment statistics.
MeasureFlow simulate_flow(const ModelCoefficients& model, const ClosedLoopControl& control, const MeasureFlow& frozen,
                          const FiniteMeasure& nu0, const TimeGrid& grid, std::size_t trees, const StreamKey& key,
                          const FlowSimulationOptions& options = {});

struct PicardOptions {
  std::size_t trees = 1000;
  double tol = 0.05;
  std::size_t max_iter = 10;
  double damping = 1.0;           // weight of the new iterate, in (0, 1]
  std::size_t residual_atoms = 2000;
  std::size_t residual_times = 21;  // grid times on which the residual is evaluated
  FlowSimulationOptions simulation;
  std::optional<MeasureFlow> initial_guess;
};

struct PicardDiagnostics {
  std::vector<double> residuals;         // sup_t W-bar_1 between consecutive iterates
  std::vector<double> moment_residuals;  // sup_t |mass| + |m1| + |m2| differences
  std::size_t iterations = 0;
  bool converged = false;
};

struct PicardResult {
  MeasureFlow flow;
  PicardDiagnostics diagnostics;
};

/// Fixed point mu = Phi(mu), Phi(mu) the empirical flow of trees simulated
/// against mu. The first guess is nu0 grown at the net rate theta-hat
/// evaluated at (t0, mean of nu0). Iterate k uses stream seed.child(k).
PicardResult solve_flow_picard(const ModelCoefficients& model, const ClosedLoopControl& control,
                               const FiniteMeasure& nu0, const TimeGrid& grid, std::uint64_t seed,
                               const PicardOptions& options = {});

/// Grid indices at which the Picard residual is evaluated.
std::vector<std::size_t> residual_check_indices(std::size_t grid_size, std::size_t count);

/// sup over `indices` of W-bar_1 between the two flows after thinning both
/// to `atoms` atoms.
double flow_distance(const MeasureFlow& a, const MeasureFlow& b, const std::vector<std::size_t>& indices,
                     std::size_t atoms);

struct FlowPropertyReport {
  double wbar1 = 0.0;  // between mu^A_s and mu^B_s
  double mass_diff = 0.0;
  double m1_diff = 0.0;
  double m2_diff = 0.0;
  double mass_se = 0.0;  // combined standard errors
  double m1_se = 0.0;
  double m2_se = 0.0;
};

/// Flow A solves from (t, nu0) to s; flow B restarts from (u, mu^A_u) to s.
/// Reports the discrepancy of the two time-s marginals. t, u, s must be grid
/// times with t <= u <= s.
FlowPropertyReport flow_property_check(const ModelCoefficients& model, const ClosedLoopControl& control,
                                       const FiniteMeasure& nu0, const TimeGrid& grid, double t, double u, double s,
                                       std::uint64_t seed, const PicardOptions& options = {});

/// Moment estimate at grid index j: the simulation statistics when present,
/// exact moments of the stored measure otherwise (zero standard error).
MomentEstimate moment_estimate(const MeasureFlow& flow, std::size_t j);

}  // namespace mvb
