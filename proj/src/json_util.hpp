#pragma once

// Field access helpers that report failures as SchemaError with a JSON pointer.

#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <string>

#include "hetplan/errors.hpp"
#include "json.hpp"

namespace hetplan::detail {

using nlohmann::json;

inline json parse_json(std::istream& in) {
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(e.what());
  }
}

inline std::string child(const std::string& path, const std::string& key) { return path + "/" + key; }
inline std::string child(const std::string& path, size_t index) {
  return path + "/" + std::to_string(index);
}

inline const json& require(const json& obj, const std::string& key, const std::string& path) {
  if (!obj.is_object()) throw SchemaError(path.empty() ? "/" : path, "expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) throw SchemaError(child(path, key), "missing required field");
  return *it;
}

inline const json& require_array(const json& obj, const std::string& key, const std::string& path) {
  const json& v = require(obj, key, path);
  if (!v.is_array()) throw SchemaError(child(path, key), "expected an array");
  return v;
}

inline double as_double(const json& v, const std::string& path) {
  if (!v.is_number()) throw SchemaError(path, "expected a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) throw SchemaError(path, "expected a finite number");
  return d;
}

inline int64_t as_int64(const json& v, const std::string& path) {
  if (v.is_number_integer()) return v.get<int64_t>();
  if (v.is_number_float()) {
    const double d = v.get<double>();
    if (std::isfinite(d) && d == std::floor(d) && std::abs(d) < 9.0e15) return static_cast<int64_t>(d);
  }
  throw SchemaError(path, "expected an integer");
}

inline int as_int(const json& v, const std::string& path) {
  const int64_t x = as_int64(v, path);
  if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) {
    throw SchemaError(path, "integer out of range");
  }
  return static_cast<int>(x);
}

inline std::string as_string(const json& v, const std::string& path) {
  if (!v.is_string()) throw SchemaError(path, "expected a string");
  return v.get<std::string>();
}

inline double get_double(const json& obj, const std::string& key, const std::string& path) {
  return as_double(require(obj, key, path), child(path, key));
}
inline int64_t get_int64(const json& obj, const std::string& key, const std::string& path) {
  return as_int64(require(obj, key, path), child(path, key));
}
inline int get_int(const json& obj, const std::string& key, const std::string& path) {
  return as_int(require(obj, key, path), child(path, key));
}
inline std::string get_string(const json& obj, const std::string& key, const std::string& path) {
  return as_string(require(obj, key, path), child(path, key));
}

}  // namespace hetplan::detail
