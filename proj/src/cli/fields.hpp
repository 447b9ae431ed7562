#pragma once

// JSON field accessors shared by the config parser and the check builder.
// Every failure is a ConfigError naming the offending path.

#include <cmath>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "mvbranch/cli.hpp"

namespace mvb::cli::fields {

using nlohmann::json;

[[noreturn]] inline void fail(const std::string& path, const std::string& message) {
  throw ConfigError("config: " + (path.empty() ? std::string("<root>") : path) + ": " + message);
}

inline std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

inline const json& object_at(const json& parent, const std::string& key, const std::string& path) {
  const json& value = parent.at(key);
  if (!value.is_object()) fail(join(path, key), "expected an object");
  return value;
}

inline void reject_unknown(const json& object, const std::string& path, const std::set<std::string>& allowed) {
  if (!object.is_object()) fail(path, "expected an object");
  for (const auto& [key, value] : object.items()) {
    if (!allowed.count(key)) fail(join(path, key), "unknown key");
  }
}

inline double number(const json& object, const std::string& key, const std::string& path, double fallback) {
  if (!object.contains(key)) return fallback;
  const json& v = object.at(key);
  if (!v.is_number()) fail(join(path, key), "expected a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) fail(join(path, key), "must be finite");
  return x;
}

inline double required_number(const json& object, const std::string& key, const std::string& path) {
  if (!object.contains(key)) fail(join(path, key), "required key missing");
  return number(object, key, path, 0.0);
}

inline std::size_t count(const json& object, const std::string& key, const std::string& path, std::size_t fallback) {
  if (!object.contains(key)) return fallback;
  const json& v = object.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0) fail(join(path, key), "expected a nonnegative integer");
  return v.get<std::size_t>();
}

inline bool boolean(const json& object, const std::string& key, const std::string& path, bool fallback) {
  if (!object.contains(key)) return fallback;
  if (!object.at(key).is_boolean()) fail(join(path, key), "expected true or false");
  return object.at(key).get<bool>();
}

inline std::string text(const json& object, const std::string& key, const std::string& path, const std::string& fallback) {
  if (!object.contains(key)) return fallback;
  if (!object.at(key).is_string()) fail(join(path, key), "expected a string");
  return object.at(key).get<std::string>();
}

inline std::vector<double> number_list(const json& object, const std::string& key, const std::string& path) {
  const json& v = object.at(key);
  if (!v.is_array()) fail(join(path, key), "expected an array of numbers");
  std::vector<double> out;
  for (const json& x : v) {
    if (!x.is_number()) fail(join(path, key), "expected an array of numbers");
    out.push_back(x.get<double>());
  }
  return out;
}

}  // namespace mvb::cli::fields
