#include "mvbranch/io.hpp"

#include <cstdint>
#include <cstdio>
#include <istream>
#include <ostream>

namespace mvb {

std::string canonical_json(const nlohmann::json& value) {
  // nlohmann::json objects are std::map backed, so dump() already sorts keys.
  return value.dump();
}

std::string config_hash(const nlohmann::json& config) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : canonical_json(config)) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buffer[17];
  std::snprintf(buffer, sizeof(buffer), "%016llx", static_cast<unsigned long long>(h));
  return buffer;
}

void write_hash_line(std::ostream& out, const std::string& hash) { out << "# config_hash: " << hash << '\n'; }

std::string read_hash_line(std::istream& in) {
  static const std::string prefix = "# config_hash: ";
  const auto start = in.tellg();
  std::string line;
  if (std::getline(in, line) && line.rfind(prefix, 0) == 0) return line.substr(prefix.size());
  in.clear();
  in.seekg(start);
  return {};
}

namespace {

void write_moment_row(std::ostream& out, double t, const MomentEstimate& e) {
  out << format_double(t) << ',' << format_double(e.mass) << ',' << format_double(e.mass_se);
  for (Eigen::Index i = 0; i < e.m1.size(); ++i) out << ',' << format_double(e.m1[i]);
  for (Eigen::Index i = 0; i < e.m1.size(); ++i) out << ',' << format_double(e.m1_se.size() ? e.m1_se[i] : 0.0);
  out << ',' << format_double(e.m2) << ',' << format_double(e.m2_se) << '\n';
}

void write_moment_header(std::ostream& out, int dimension) {
  out << "t,mass,mass_se";
  for (int i = 1; i <= dimension; ++i) out << ",m1_" << i;
  for (int i = 1; i <= dimension; ++i) out << ",m1_se_" << i;
  out << ",m2,m2_se\n";
}

}  // namespace

void write_flow_atoms_csv(std::ostream& out, const MeasureFlow& flow, const std::string& hash) {
  write_hash_line(out, hash);
  const int d = flow.dimension();
  out << "t,atom";
  for (int r = 1; r <= d; ++r) out << ",x_" << r;
  out << ",weight\n";
  for (std::size_t j = 0; j < flow.size(); ++j) {
    const FiniteMeasure& mu = flow.measure(j);
    const std::string t = format_double(flow.grid()[j]);
    for (Eigen::Index i = 0; i < mu.size(); ++i) {
      out << t << ',' << i;
      for (int r = 0; r < d; ++r) out << ',' << format_double(mu.positions()(r, i));
      out << ',' << format_double(mu.weights()[i]) << '\n';
    }
  }
}

void write_flow_moments_csv(std::ostream& out, const MeasureFlow& flow, const std::string& hash) {
  write_hash_line(out, hash);
  write_moment_header(out, flow.dimension());
  for (std::size_t j = 0; j < flow.size(); ++j) write_moment_row(out, flow.grid()[j], moment_estimate(flow, j));
}

void write_ode_moments_csv(std::ostream& out, const TimeGrid& grid, const std::vector<Moments>& moments,
                           const std::string& hash) {
  require(moments.size() == grid.size(), "write_ode_moments_csv: one moment triple per grid time");
  write_hash_line(out, hash);
  write_moment_header(out, 1);
  for (std::size_t j = 0; j < grid.size(); ++j) {
    MomentEstimate e;
    e.mass = moments[j].mass;
    e.m1 = Eigen::VectorXd::Constant(1, moments[j].m1);
    e.m1_se = Eigen::VectorXd::Zero(1);
    e.m2 = moments[j].m2;
    write_moment_row(out, grid[j], e);
  }
}

void write_riccati_csv(std::ostream& out, const RiccatiSolution& sol, const std::string& hash) {
  write_hash_line(out, hash);
  out << "t,Lambda,Gamma1,Gamma2,Gamma3,Gamma4\n";
  for (std::size_t j = 0; j < sol.grid().size(); ++j) {
    out << format_double(sol.grid()[j]);
    for (int k = 0; k < 5; ++k) out << ',' << format_double(sol.values()[j][k]);
    out << '\n';
  }
}

void write_value_surface_csv(std::ostream& out, const RiccatiSolution& sol, const std::vector<Moments>& samples,
                             std::size_t n, const std::string& hash) {
  require(n >= 2, "write_value_surface_csv: need at least two times");
  write_hash_line(out, hash);
  out << "t,mass,m1,m2,value\n";
  const double t0 = sol.grid().start(), T = sol.grid().end();
  for (std::size_t i = 0; i < n; ++i) {
    const double t = t0 + (T - t0) * static_cast<double>(i) / static_cast<double>(n - 1);
    for (const Moments& m : samples) {
      out << format_double(t) << ',' << format_double(m.mass) << ',' << format_double(m.m1) << ','
          << format_double(m.m2) << ',' << format_double(lq_value(sol, t, m)) << '\n';
    }
  }
}

void write_control_table_csv(std::ostream& out, const AffineFeedback& control, const TimeGrid& grid,
                             const std::string& hash) {
  write_hash_line(out, hash);
  out << "t,offset,slope\n";
  for (double t : grid.times()) {
    out << format_double(t) << ',' << format_double(control.offset(t)) << ',' << format_double(control.slope(t))
        << '\n';
  }
}

void write_density_csv(std::ostream& out, const DensityFlow& flow, const std::string& hash, std::size_t stride) {
  require(stride >= 1, "write_density_csv: stride must be positive");
  write_hash_line(out, hash);
  out << "t,x,rho\n";
  const std::size_t last = flow.density.size() - 1;
  for (std::size_t j = 0; j < flow.density.size(); ++j) {
    if (j % stride != 0 && j != last) continue;
    const std::string t = format_double(flow.time[j]);
    for (int i = 0; i < flow.space.cells; ++i) {
      out << t << ',' << format_double(flow.space.center(i)) << ',' << format_double(flow.density[j][i]) << '\n';
    }
  }
}

void write_mass_trace_csv(std::ostream& out, const DensityFlow& flow, const std::string& hash) {
  write_hash_line(out, hash);
  out << "t,mass,min_density\n";
  for (std::size_t j = 0; j < flow.mass.size(); ++j) {
    out << format_double(flow.time[j]) << ',' << format_double(flow.mass[j]) << ','
        << format_double(flow.density[j].minCoeff()) << '\n';
  }
}

void write_snapshots_csv(std::ostream& out, const TreeTrajectory& tree, std::size_t tree_index,
                         const std::string& hash, bool header) {
  const int d = tree.snapshots.empty() ? 1 : tree.snapshots.front().dimension();
  if (header) {
    write_hash_line(out, hash);
    out << "tree,t,label";
    for (int r = 1; r <= d; ++r) out << ",x_" << r;
    out << '\n';
  }
  for (std::size_t j = 0; j < tree.snapshots.size(); ++j) {
    const Configuration& c = tree.snapshots[j];
    const std::string t = format_double(tree.grid[j]);
    for (std::size_t k = 0; k < c.size(); ++k) {
      out << tree_index << ',' << t << ',' << format_label(c.labels()[k]);
      for (int r = 0; r < d; ++r) out << ',' << format_double(c.positions()(r, static_cast<Eigen::Index>(k)));
      out << '\n';
    }
  }
}

nlohmann::json event_log_json(const TreeTrajectory& tree) {
  nlohmann::json events = nlohmann::json::array();
  for (const BranchEvent& e : tree.events) {
    events.push_back({{"t", e.time}, {"parent", format_label(e.parent)}, {"offspring", e.offspring}});
  }
  const double dt = tree.grid.steps() > 0 ? tree.grid.step(0) : 0.0;
  return {{"grid", {{"t0", tree.grid.start()}, {"T", tree.grid.end()}, {"dt", dt}}},
          {"events", std::move(events)},
          {"final_population", tree.snapshots.empty() ? 0 : tree.snapshots.back().size()}};
}

nlohmann::json cost_report_json(const CostEstimate& estimate, const std::string& hash) {
  return {{"mean", estimate.mean},         {"se", estimate.std_error},
          {"N", estimate.trees},           {"running", estimate.running},
          {"terminal", estimate.terminal}, {"flow_converged", estimate.flow_converged},
          {"config_hash", hash}};
}

nlohmann::json check_report_json(const CheckReport& report) {
  return {{"name", report.name},           {"statistic", report.statistic},
          {"threshold", report.threshold}, {"pass", report.passed},
          {"samples", report.samples},     {"config_hash", report.config_hash},
          {"detail", report.detail}};
}

nlohmann::json suite_summary_json(const std::vector<CheckReport>& reports, const std::string& hash) {
  nlohmann::json checks = nlohmann::json::array();
  std::size_t passed = 0;
  for (const CheckReport& r : reports) {
    checks.push_back(check_report_json(r));
    if (r.passed) ++passed;
  }
  return {{"config_hash", hash},
          {"total", reports.size()},
          {"passed", passed},
          {"failed", reports.size() - passed},
          {"all_passed", passed == reports.size()},
          {"checks", std::move(checks)}};
}

void write_check_csv(std::ostream& out, const CheckReport& report, const std::string& hash) {
  write_hash_line(out, hash);
  out << "name,statistic,threshold,passed,samples\n";
  out << report.name << ',' << format_double(report.statistic) << ',' << format_double(report.threshold) << ','
      << (report.passed ? 1 : 0) << ',' << report.samples << '\n';
}

}  // namespace mvb
