#pragma once

#include <cstdint>
#include <functional>
#include <optional>

#include "mvbranch/engine.hpp"
#include "mvbranch/meanfield.hpp"

namespace mvb {

struct CostSpec {
  using RunningFn = std::function<double(double t, const Point& x, const FiniteMeasure& m, const ControlValue& a)>;
  using TerminalFn = std::function<double(const Point& x, const FiniteMeasure& m)>;

  RunningFn running;
  TerminalFn terminal;
  /// Declared growth constants: |L| <= C_L(1 + |x|^2 + m2 + mass + |a|^2),
  /// |g| <= C_g(1 + |x|^2 + m2 + mass).
  std::optional<double> running_growth;
  std::optional<double> terminal_growth;
};

/// Spot-checks the declared growth constants at pseudo-random points.
void spot_check_costs(const CostSpec& costs, const ClosedLoopControl& control, const FiniteMeasure& m, int dimension,
                      double t0, double horizon, double radius = 10.0, std::uint64_t seed = 13);

struct CostEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  std::size_t trees = 0;
  double running = 0.0;
  double terminal = 0.0;
  bool flow_converged = true;
};

struct CostOptions {
  InitScheme scheme = InitScheme::kBernoulliResidual;
  BatchOptions batch;
};

/// Monte Carlo estimate of J against a supplied flow: per tree the left-point
/// sum over steps of dt * sum_k L(t_j, X^k, mu_{t_j}, a(t_j, X^k)) plus
/// sum_k g(X^k_T, mu_T); mean and standard error over trees.
CostEstimate estimate_cost(const ModelCoefficients& model, const CostSpec& costs, const ClosedLoopControl& control,
                           const MeasureFlow& flow, const FiniteMeasure& nu0, const TimeGrid& grid, std::size_t trees,
                           std::uint64_t seed, const CostOptions& options = {});

/// As above, with the flow obtained first by solve_flow_picard. A
/// non-converged flow is used anyway and flagged in the estimate.
CostEstimate estimate_cost(const ModelCoefficients& model, const CostSpec& costs, const ClosedLoopControl& control,
                           const FiniteMeasure& nu0, const TimeGrid& grid, std::size_t trees, std::uint64_t seed,
                           const PicardOptions& picard, const CostOptions& options = {});

}  // namespace mvb
