#include "mvbranch/measure_io.hpp"

#include <charconv>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <vector>

namespace mvb {

std::string format_double(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buffer[32];
  const auto result = std::to_chars(buffer, buffer + sizeof(buffer), value, std::chars_format::general, 17);
  return std::string(buffer, result.ptr);
}

void write_measure_csv(std::ostream& out, const FiniteMeasure& mu) {
  for (int r = 0; r < mu.dimension(); ++r) out << "x_" << (r + 1) << ',';
  out << "weight\n";
  for (Eigen::Index i = 0; i < mu.size(); ++i) {
    for (int r = 0; r < mu.dimension(); ++r) out << format_double(mu.positions()(r, i)) << ',';
    out << format_double(mu.weights()[i]) << '\n';
  }
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream stream(line);
  while (std::getline(stream, field, ',')) fields.push_back(field);
  return fields;
}

double parse_double(const std::string& text) {
  std::size_t used = 0;
  double value = 0.0;
  try {
    value = std::stod(text, &used);
  } catch (const std::exception&) {
    throw InvalidArgument("measure CSV: cannot parse number '" + text + "'");
  }
  if (used != text.size() && text.find_first_not_of(" \r\t", used) != std::string::npos)
    throw InvalidArgument("measure CSV: trailing characters in '" + text + "'");
  return value;
}

}  // namespace

FiniteMeasure read_measure_csv(std::istream& in) {
  std::string line;
  do {
    if (!std::getline(in, line)) throw InvalidArgument("measure CSV: missing header");
  } while (line.empty() || line[0] == '#');
  if (!line.empty() && line.back() == '\r') line.pop_back();

  const auto header = split_csv_line(line);
  if (header.size() < 2 || header.back() != "weight") throw InvalidArgument("measure CSV: header must end in 'weight'");
  const int dimension = static_cast<int>(header.size()) - 1;
  for (int r = 0; r < dimension; ++r) {
    if (header[r] != "x_" + std::to_string(r + 1)) throw InvalidArgument("measure CSV: unexpected column " + header[r]);
  }

  std::vector<double> coords;
  std::vector<double> weights;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto fields = split_csv_line(line);
    if (static_cast<int>(fields.size()) != dimension + 1) throw InvalidArgument("measure CSV: wrong field count");
    for (int r = 0; r < dimension; ++r) coords.push_back(parse_double(fields[r]));
    weights.push_back(parse_double(fields.back()));
  }
  const auto n = static_cast<Eigen::Index>(weights.size());
  Eigen::MatrixXd positions = Eigen::Map<Eigen::MatrixXd>(coords.data(), dimension, n);
  Eigen::VectorXd w = Eigen::Map<Eigen::VectorXd>(weights.data(), n);
  return FiniteMeasure(std::move(positions), std::move(w));
}

nlohmann::json measure_to_json(const FiniteMeasure& mu) {
  nlohmann::json atoms = nlohmann::json::array();
  for (Eigen::Index i = 0; i < mu.size(); ++i) {
    std::vector<double> pos(mu.positions().col(i).data(), mu.positions().col(i).data() + mu.dimension());
    atoms.push_back({{"pos", pos}, {"w", mu.weights()[i]}});
  }
  return atoms;
}

FiniteMeasure measure_from_json(const nlohmann::json& atoms, int dimension) {
  if (!atoms.is_array()) throw InvalidArgument("measure JSON: expected an array of {pos, w}");
  if (atoms.empty()) return FiniteMeasure(dimension);
  const auto d = static_cast<Eigen::Index>(atoms.front().at("pos").size());
  Eigen::MatrixXd positions(d, static_cast<Eigen::Index>(atoms.size()));
  Eigen::VectorXd weights(static_cast<Eigen::Index>(atoms.size()));
  Eigen::Index i = 0;
  for (const auto& atom : atoms) {
    for (const auto& [key, value] : atom.items()) {
      if (key != "pos" && key != "w") throw InvalidArgument("measure JSON: unknown key '" + key + "'");
    }
    const auto& pos = atom.at("pos");
    if (static_cast<Eigen::Index>(pos.size()) != d) throw DimensionMismatch("measure JSON: ragged positions");
    for (Eigen::Index r = 0; r < d; ++r) positions(r, i) = pos[r].get<double>();
    weights[i] = atom.at("w").get<double>();
    ++i;
  }
  return FiniteMeasure(std::move(positions), std::move(weights));
}

}  // namespace mvb
