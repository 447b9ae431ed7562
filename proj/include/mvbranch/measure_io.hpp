#pragma once

#include <iosfwd>
#include <string>

#include <json.hpp>

#include "mvbranch/measures.hpp"

namespace mvb {

/// Shortest round-trippable text for a double (17 significant digits).
std::string format_double(double value);

/// CSV block with header `x_1,...,x_d,weight` and one row per atom.
void write_measure_csv(std::ostream& out, const FiniteMeasure& mu);
FiniteMeasure read_measure_csv(std::istream& in);

/// JSON array of `{"pos": [...], "w": weight}` objects.
nlohmann::json measure_to_json(const FiniteMeasure& mu);
/// `dimension` is only consulted for an empty array.
FiniteMeasure measure_from_json(const nlohmann::json& atoms, int dimension = 1);

}  // namespace mvb
