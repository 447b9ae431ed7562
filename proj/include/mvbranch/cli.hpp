#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mvbranch/cost.hpp"
#include "mvbranch/fokker_planck.hpp"
#include "mvbranch/lq.hpp"
#include "mvbranch/verify.hpp"

namespace mvb::cli {

/// Schema violation in an experiment config.
class ConfigError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 1,
  kExitNumerical = 2,
  kExitNotConverged = 3,
  kExitCheckFailed = 4,
};

/// Environment variable naming the default output directory.
inline constexpr const char* kOutputDirEnv = "MVBRANCH_OUTPUT_DIR";

/// One-dimensional model with drift c + a x + k_mass mass + k_m1 m1 + u a,
/// constant sigma, constant branching rate and progeny law.
struct GenericModelSpec {
  double drift_const = 0.0;
  double drift_x = 0.0;
  double drift_mass = 0.0;
  double drift_m1 = 0.0;
  double drift_control = 0.0;
  double sigma = 0.0;
  double gamma = 1.0;
  double gamma_bar = 0.0;  // 0: equal to gamma
  std::vector<double> p{0.0, 1.0};

  bool measure_dependent() const { return drift_mass != 0.0 || drift_m1 != 0.0; }
};

/// Running x2 x^2 + mass m-bar + m1 <m, x> + a2 a^2; terminal with the g_ fields.
struct QuadraticCostSpec {
  double x2 = 0.0, mass = 0.0, m1 = 0.0, a2 = 0.0;
  double g_x2 = 0.0, g_mass = 0.0, g_m1 = 0.0;
};

struct ModelSection {
  bool is_lq = false;
  LQModel lq;
  ThetaConvention convention = ThetaConvention::kThetaExplicit;
  double riccati_dt = 0.0;  // 0: the grid step
  GenericModelSpec generic;
  std::optional<QuadraticCostSpec> costs;  // generic models only
};

enum class ControlKind { kZero, kAffine, kOptimal, kTable };

struct ControlSection {
  ControlKind kind = ControlKind::kZero;
  double offset = 0.0;
  double slope = 0.0;
  std::vector<double> times, offsets, slopes;  // kTable
};

struct InitialSection {
  std::string family = "atoms";  // atoms | gaussian | uniform
  FiniteMeasure measure;
  double mass = 0.0, mean = 0.0, sd = 1.0, a = 0.0, b = 1.0;

  /// Density of nu0 for the Fokker-Planck solver; the histogram of the atoms
  /// for the atoms family.
  std::function<double(double)> density() const;
};

struct GridSection {
  double t0 = 0.0;
  double T = 1.0;
  double dt = 0.01;
  std::optional<SpaceGrid> space;
};

struct BudgetSection {
  std::size_t trees = 1000;
  std::uint64_t seed = 1;
  bool strict = false;
  std::size_t atom_cap = 2000;
  InitScheme scheme = InitScheme::kBernoulliResidual;
  std::size_t block_size = 256;
  PicardOptions picard;
};

struct OutputSection {
  std::optional<std::string> directory;
  std::size_t snapshot_trees = 3;
  std::size_t density_stride = 1;
};

struct FpSection {
  FpOptions options;
  std::size_t cross_check_trees = 0;  // 0: no particle cross-check
};

struct CheckSpec {
  std::string kind;
  std::string name;
  nlohmann::json params;  // validated per kind when the check is built
};

struct ExperimentConfig {
  nlohmann::json raw;
  std::string hash;
  ModelSection model;
  ControlSection control;
  std::optional<InitialSection> initial;
  GridSection grid;
  BudgetSection budgets;
  OutputSection outputs;
  FpSection fp;
  std::vector<CheckSpec> checks;
};

/// Validates and converts a config document. Unknown keys are rejected.
ExperimentConfig parse_config(const nlohmann::json& document);

/// Reads a config file; a seed override replaces budgets.seed before hashing.
ExperimentConfig load_config(const std::string& path, std::optional<std::uint64_t> seed_override = std::nullopt);

/// Hash of the config without its outputs section, so that the same
/// experiment written to different directories carries the same hash.
std::string experiment_hash(const nlohmann::json& document);

/// Model, control and initial law assembled from a config.
struct Runtime {
  ExperimentConfig config;
  TimeGrid grid;
  ModelCoefficients model;
  std::shared_ptr<const RiccatiSolution> riccati;  // LQ models only
  ClosedLoopControl control;
  std::optional<AffineFeedback> affine;
  std::optional<CostSpec> costs;
  FiniteMeasure nu0;
  BatchOptions batch;

  PicardOptions picard_options() const;
  FlowSimulationOptions simulation_options() const;
  /// Moment-ODE flow when the model is LQ and the control affine.
  std::optional<MeasureFlow> ode_flow() const;
};

Runtime build_runtime(ExperimentConfig config, unsigned workers);

/// Checks named by the config, ready for run_suite.
std::vector<NamedCheck> build_checks(const Runtime& runtime, const std::vector<CheckSpec>& specs);

struct CommandOptions {
  std::string config_path;
  std::optional<std::string> out_dir;
  std::optional<std::uint64_t> seed;
  unsigned workers = 0;
};

/// --out, then the config's outputs.directory, then the environment
/// variable, then "mvbranch_out".
std::string resolve_output_dir(const std::optional<std::string>& flag, const ExperimentConfig& config);

int cmd_lq_solve(const CommandOptions& options);
int cmd_simulate(const CommandOptions& options);
int cmd_verify(const CommandOptions& options);
int cmd_fp(const CommandOptions& options);
int cmd_dpp_check(const CommandOptions& options);

/// Parses argv, dispatches, and maps exceptions to exit codes.
int run_cli(int argc, char** argv);

}  // namespace mvb::cli
