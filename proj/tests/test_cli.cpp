#include <doctest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "mvbranch/cli.hpp"
#include "mvbranch/io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kTool = MVB_TOOL_PATH;
const fs::path kConfigs = fs::path(MVB_SOURCE_DIR) / "configs";

/// Fresh directory per test case, removed on exit.
struct Scratch {
  fs::path dir;
  explicit Scratch(const std::string& name) : dir(fs::temp_directory_path() / ("mvb_cli_" + name)) {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Scratch() { fs::remove_all(dir); }

  fs::path write(const std::string& name, const json& config) const {
    const fs::path path = dir / name;
    std::ofstream(path) << config.dump(2);
    return path;
  }
};

json shipped(const std::string& name) {
  std::ifstream in(kConfigs / name);
  return json::parse(in);
}

int run(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + (env.empty() ? "" : " ") + kTool.string() + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

int run(const std::string& command, const fs::path& config, const fs::path& out) {
  return run(command + " -c " + config.string() + " -o " + out.string());
}

/// Columns of a hash-stamped CSV by header name.
struct Csv {
  std::string hash;
  std::map<std::string, std::vector<double>> columns;
};

Csv read_csv(const fs::path& path) {
  std::ifstream in(path);
  Csv out;
  out.hash = mvb::read_hash_line(in);
  std::string line;
  std::getline(in, line);
  std::vector<std::string> names;
  std::istringstream header(line);
  for (std::string cell; std::getline(header, cell, ',');) names.push_back(cell);
  while (std::getline(in, line)) {
    std::istringstream row(line);
    std::size_t k = 0;
    for (std::string cell; std::getline(row, cell, ','); ++k) {
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      out.columns[names.at(k)].push_back(*end == '\0' ? v : NAN);
    }
  }
  return out;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

double scalar_riccati(double a, double c, double l, double g, double tau) {
  const double disc = std::sqrt(c * c + 4.0 * a * l);
  const double rp = (c + disc) / (2.0 * a), rm = (c - disc) / (2.0 * a);
  const double q = (g - rp) / (g - rm) * std::exp(-a * (rp - rm) * tau);
  return (rp - rm * q) / (1.0 - q);
}

}  // namespace

TEST_CASE("lq-solve writes an all-zero Riccati table for a zero-cost model") {
  Scratch s("zero_cost");
  const json config = shipped("zero_cost.json");
  REQUIRE(run("lq-solve", s.write("c.json", config), s.dir / "out") == 0);
  const Csv csv = read_csv(s.dir / "out" / "riccati.csv");
  CHECK(csv.hash == mvb::cli::experiment_hash(config));
  CHECK(csv.columns.at("t").size() == 101);
  for (const char* name : {"Lambda", "Gamma1", "Gamma2", "Gamma3", "Gamma4"})
    for (double v : csv.columns.at(name)) CHECK(v == 0.0);
  for (const char* file : {"value_surface.csv", "optimal_control.csv", "ode_moments.csv", "value.json"})
    CHECK(fs::exists(s.dir / "out" / file));
}

TEST_CASE("lq-solve matches the scalar Riccati closed form") {
  Scratch s("constant_riccati");
  REQUIRE(run("lq-solve", s.write("c.json", shipped("constant_riccati.json")), s.dir / "out") == 0);
  const Csv csv = read_csv(s.dir / "out" / "riccati.csv");
  const auto& t = csv.columns.at("t");
  const auto& lambda = csv.columns.at("Lambda");
  // b1 = 0.3, b3 = 1.2, L1 = 0.8, L4 = 0.5, g1 = 0.4, theta = 0.
  for (std::size_t j = 0; j < t.size(); j += 10)
    CHECK(std::abs(lambda[j] - scalar_riccati(1.44 / 0.5, 0.6, 0.8, 0.4, 1.0 - t[j])) < 1e-8);
}

TEST_CASE("config errors exit 1") {
  Scratch s("config_errors");
  json unknown = shipped("zero_cost.json");
  unknown["grid"]["dtt"] = 0.1;
  CHECK(run("lq-solve", s.write("unknown.json", unknown), s.dir / "a") == 1);

  json no_l4 = shipped("zero_cost.json");
  no_l4["model"]["lq"].erase("L4");
  CHECK(run("lq-solve", s.write("no_l4.json", no_l4), s.dir / "b") == 1);

  json bad_dt = shipped("generic_simulate.json");
  bad_dt["grid"]["dt"] = 0.0;
  CHECK(run("simulate", s.write("dt0.json", bad_dt), s.dir / "c") == 1);
  bad_dt["grid"]["dt"] = -0.1;
  CHECK(run("simulate", s.write("dtneg.json", bad_dt), s.dir / "c") == 1);

  json leak = shipped("heat_fp.json");
  leak["grid"]["x_lo"] = -0.5;
  leak["grid"]["x_hi"] = 0.5;
  CHECK(run("fp", s.write("leak.json", leak), s.dir / "d") == 1);

  CHECK(run("lq-solve", s.write("generic.json", shipped("heat_fp.json")), s.dir / "e") == 1);
  CHECK(run("verify -c " + (s.dir / "missing.json").string()) == 1);
  CHECK(run("") == 1);
  std::ofstream(s.dir / "broken.json") << "{ not json";
  CHECK(run("verify -c " + (s.dir / "broken.json").string()) == 1);
  CHECK_FALSE(fs::exists(s.dir / "a"));
}

TEST_CASE("fp mass traces") {
  Scratch s("fp");
  REQUIRE(run("fp", s.write("heat.json", shipped("heat_fp.json")), s.dir / "heat") == 0);
  const auto heat = read_csv(s.dir / "heat" / "mass_trace.csv").columns.at("mass");
  for (double m : heat) CHECK(std::abs(m - heat.front()) < 1e-8);

  json growth = shipped("growth_fp.json");
  growth["fp"].erase("cross_check_trees");
  REQUIRE(run("fp", s.write("growth.json", growth), s.dir / "growth") == 0);
  const Csv trace = read_csv(s.dir / "growth" / "mass_trace.csv");
  const auto& t = trace.columns.at("t");
  const auto& mass = trace.columns.at("mass");
  // theta = gamma (sum_k k p_k - 1) = 0.3.
  for (std::size_t j = 0; j < t.size(); ++j)
    CHECK(mass[j] == doctest::Approx(mass[0] * std::exp(0.3 * t[j])).epsilon(0.005));
  const json report = json::parse(slurp(s.dir / "growth" / "fp_report.json"));
  CHECK(report["cells"] == 1000);
  CHECK_FALSE(report.contains("cross_check"));
}

TEST_CASE("explicit-scheme instability exits 2") {
  Scratch s("unstable");
  json config = shipped("heat_fp.json");
  config["fp"] = {{"scheme", "explicit"}};
  CHECK(run("fp", s.write("c.json", config), s.dir / "out") == 2);
}

TEST_CASE("a frozen population keeps constant moments") {
  Scratch s("frozen");
  json config = shipped("generic_simulate.json");
  config["model"]["generic"] = {{"sigma", 0.0}, {"gamma", 1.0}, {"p", {0.0, 1.0}}};
  config["model"].erase("costs");
  config["control"] = {{"type", "zero"}};
  config["initial"] = {{"family", "atoms"}, {"atoms", {{{"pos", {0.4}}, {"w", 2.0}}}}};
  config["budgets"]["scheme"] = "deterministic_rounding";
  REQUIRE(run("simulate", s.write("c.json", config), s.dir / "out") == 0);
  const Csv csv = read_csv(s.dir / "out" / "flow_moments.csv");
  for (const char* name : {"mass", "m1_1", "m2"}) {
    const auto& col = csv.columns.at(name);
    for (double v : col) CHECK(v == col.front());
  }
  for (const char* name : {"mass_se", "m1_se_1", "m2_se"})
    for (double v : csv.columns.at(name)) CHECK(v == 0.0);
  CHECK(csv.columns.at("mass").front() == 2.0);
  CHECK(csv.columns.at("m1_1").front() == doctest::Approx(0.8));
  CHECK_FALSE(fs::exists(s.dir / "out" / "cost.json"));
}

TEST_CASE("verify exit codes") {
  Scratch s("verify");
  CHECK(run("verify", s.write("wrong.json", shipped("wrong_convention.json")), s.dir / "wrong") == 4);
  const json wrong = json::parse(slurp(s.dir / "wrong" / "summary.json"));
  CHECK(wrong["failed"] == 1);
  CHECK(wrong["checks"][0]["name"] == "hjb_residual");
  CHECK(fs::exists(s.dir / "wrong" / "checks" / "hjb_residual.csv"));

  json empty = shipped("zero_cost.json");
  empty["checks"] = json::array();
  CHECK(run("verify", s.write("empty.json", empty), s.dir / "empty") == 0);
  const json summary = json::parse(slurp(s.dir / "empty" / "summary.json"));
  CHECK(summary["total"] == 0);
  CHECK(summary["checks"].empty());

  CHECK(run("verify", s.write("zero.json", shipped("zero_cost.json")), s.dir / "zero") == 0);

  json unknown_kind = shipped("zero_cost.json");
  unknown_kind["checks"] = {{{"kind", "telepathy"}}};
  CHECK(run("verify", s.write("kind.json", unknown_kind), s.dir / "kind") == 1);
}

TEST_CASE("dpp-check runs the default panel") {
  Scratch s("dpp");
  json config = shipped("zero_cost.json");
  config["model"]["lq"]["L1"] = 1.0;
  config["model"]["lq"]["g1"] = 1.0;
  config.erase("checks");
  REQUIRE(run("dpp-check", s.write("c.json", config), s.dir / "out") == 0);
  const json summary = json::parse(slurp(s.dir / "out" / "summary.json"));
  CHECK(summary["total"] == 3);
  CHECK(summary["all_passed"] == true);
}

TEST_CASE("reruns are byte-identical and every CSV is hash-stamped") {
  Scratch s("rerun");
  const json config = shipped("generic_simulate.json");
  const fs::path path = s.write("c.json", config);
  REQUIRE(run("simulate", path, s.dir / "a") == 0);
  REQUIRE(run("simulate", path, s.dir / "b") == 0);
  const std::string hash = mvb::cli::experiment_hash(config);
  std::size_t compared = 0;
  for (const auto& entry : fs::recursive_directory_iterator(s.dir / "a")) {
    if (!entry.is_regular_file()) continue;
    const fs::path rel = fs::relative(entry.path(), s.dir / "a");
    if (rel == "run_info.json") continue;
    CHECK_MESSAGE(slurp(entry.path()) == slurp(s.dir / "b" / rel), rel.string());
    ++compared;
    if (rel.extension() == ".csv") {
      std::ifstream in(entry.path());
      CHECK_MESSAGE(mvb::read_hash_line(in) == hash, rel.string());
    } else {
      CHECK(json::parse(slurp(entry.path()))["config_hash"] == hash);
    }
  }
  CHECK(compared >= 6);
  CHECK(json::parse(slurp(s.dir / "a" / "run_info.json"))["config_hash"] == hash);

  // A seed override is part of the experiment.
  REQUIRE(run("simulate -c " + path.string() + " -o " + (s.dir / "c").string() + " --seed 99") == 0);
  std::ifstream in(s.dir / "c" / "flow_moments.csv");
  CHECK(mvb::read_hash_line(in) != hash);
}

TEST_CASE("output directory falls back to the environment") {
  Scratch s("env");
  const fs::path config = s.write("c.json", shipped("zero_cost.json"));
  const fs::path target = s.dir / "from_env";
  REQUIRE(run("lq-solve -c " + config.string(), std::string(mvb::cli::kOutputDirEnv) + "=" + target.string()) == 0);
  CHECK(fs::exists(target / "riccati.csv"));

  // The flag wins over the environment.
  REQUIRE(run("lq-solve -c " + config.string() + " -o " + (s.dir / "flag").string(),
              std::string(mvb::cli::kOutputDirEnv) + "=" + (s.dir / "unused").string()) == 0);
  CHECK(fs::exists(s.dir / "flag" / "riccati.csv"));
  CHECK_FALSE(fs::exists(s.dir / "unused"));
}

TEST_CASE("strict mode reports non-convergence with exit 3") {
  Scratch s("strict");
  json config = shipped("generic_simulate.json");
  config["budgets"]["picard"] = {{"trees", 200}, {"tol", 0.0}, {"max_iter", 2}};
  config["budgets"]["trees"] = 200;
  CHECK(run("simulate", s.write("lenient.json", config), s.dir / "lenient") == 0);
  CHECK(json::parse(slurp(s.dir / "lenient" / "picard.json"))["converged"] == false);
  config["budgets"]["strict"] = true;
  CHECK(run("simulate", s.write("strict.json", config), s.dir / "strict") == 3);
  CHECK(fs::exists(s.dir / "strict" / "flow_moments.csv"));
}

TEST_CASE("artifacts match the shipped schema") {
  std::ifstream schema_file(fs::path(MVB_SOURCE_DIR) / "schema" / "artifacts.json");
  const json schema = json::parse(schema_file)["files"];
  Scratch s("schema");
  json growth = shipped("growth_fp.json");
  growth["fp"]["cross_check_trees"] = 500;
  REQUIRE(run("lq-solve", s.write("lq.json", shipped("lq_reference.json")), s.dir / "out") == 0);
  REQUIRE(run("simulate", s.write("sim.json", shipped("generic_simulate.json")), s.dir / "out") == 0);
  REQUIRE(run("fp", s.write("fp.json", growth), s.dir / "out") == 0);
  REQUIRE(run("verify", s.write("zero.json", shipped("zero_cost.json")), s.dir / "out") == 0);

  std::size_t seen = 0;
  for (const auto& entry : fs::recursive_directory_iterator(s.dir / "out")) {
    if (!entry.is_regular_file()) continue;
    std::string key = fs::relative(entry.path(), s.dir / "out").string();
    if (key.rfind("checks/", 0) == 0) key = "checks/<name>.csv";
    REQUIRE_MESSAGE(schema.contains(key), key);
    const json& spec = schema[key];
    ++seen;
    if (spec["kind"] == "csv") {
      std::ifstream in(entry.path());
      CHECK(!mvb::read_hash_line(in).empty());
      std::string header;
      std::getline(in, header);
      std::string expected;
      for (const auto& column : spec["columns"]) expected += (expected.empty() ? "" : ",") + column.get<std::string>();
      CHECK_MESSAGE(header == expected, key);
    } else {
      const json doc = json::parse(slurp(entry.path()));
      for (const auto& k : spec["keys"]) {
        const std::string name = k.get<std::string>();
        const std::string where = key + ": " + name;
        CHECK_MESSAGE(doc.contains(name), where);
      }
    }
  }
  // Every documented file was produced at least once.
  CHECK(seen >= schema.size());
}
