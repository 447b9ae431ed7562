#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "mvbranch/cost.hpp"
#include "mvbranch/engine.hpp"
#include "mvbranch/flow.hpp"
#include "mvbranch/fokker_planck.hpp"
#include "mvbranch/lq.hpp"
#include "mvbranch/measure_io.hpp"
#include "mvbranch/verify.hpp"

namespace mvb {

/// Compact dump with keys sorted at every level.
std::string canonical_json(const nlohmann::json& value);

/// 16 hex digits of the 64-bit FNV-1a digest of canonical_json(config).
std::string config_hash(const nlohmann::json& config);

/// Every CSV artifact starts with this comment line, then the header row.
void write_hash_line(std::ostream& out, const std::string& hash);

/// Reads the hash from a leading `# config_hash: ...` line; empty if absent.
std::string read_hash_line(std::istream& in);

/// t,atom,x_1..x_d,weight
void write_flow_atoms_csv(std::ostream& out, const MeasureFlow& flow, const std::string& hash);

/// t,mass,mass_se,m1_1..m1_d,m1_se_1..m1_se_d,m2,m2_se
void write_flow_moments_csv(std::ostream& out, const MeasureFlow& flow, const std::string& hash);

/// Same columns as the flow moments file with zero standard errors.
void write_ode_moments_csv(std::ostream& out, const TimeGrid& grid, const std::vector<Moments>& moments,
                           const std::string& hash);

/// t,Lambda,Gamma1,Gamma2,Gamma3,Gamma4
void write_riccati_csv(std::ostream& out, const RiccatiSolution& sol, const std::string& hash);

/// t,mass,m1,m2,value on a grid of `n` times and the supplied moment samples.
void write_value_surface_csv(std::ostream& out, const RiccatiSolution& sol, const std::vector<Moments>& samples,
                             std::size_t n, const std::string& hash);

/// t,offset,slope of the optimal affine feedback.
void write_control_table_csv(std::ostream& out, const AffineFeedback& control, const TimeGrid& grid,
                             const std::string& hash);

/// t,x,rho for every `stride`-th time of the density history.
void write_density_csv(std::ostream& out, const DensityFlow& flow, const std::string& hash, std::size_t stride = 1);

/// t,mass,min_density
void write_mass_trace_csv(std::ostream& out, const DensityFlow& flow, const std::string& hash);

/// t,label,x_1..x_d for each snapshot of a tree.
void write_snapshots_csv(std::ostream& out, const TreeTrajectory& tree, std::size_t tree_index,
                         const std::string& hash, bool header = true);

/// {"grid": {...}, "events": [{"t", "parent", "offspring"}], "final_population"}
nlohmann::json event_log_json(const TreeTrajectory& tree);

/// {mean, se, N, running, terminal, flow_converged, config_hash}
nlohmann::json cost_report_json(const CostEstimate& estimate, const std::string& hash);

nlohmann::json check_report_json(const CheckReport& report);

/// {config_hash, total, passed, failed, all_passed, checks: [...]}
nlohmann::json suite_summary_json(const std::vector<CheckReport>& reports, const std::string& hash);

/// name,statistic,threshold,passed,samples
void write_check_csv(std::ostream& out, const CheckReport& report, const std::string& hash);

}  // namespace mvb
