#ifndef HSRL_JSON_IO_HPP
#define HSRL_JSON_IO_HPP

#include "hsrl/types.hpp"

#include <json.hpp>

#include <string>

namespace hsrl {

using json = nlohmann::json;

json vec_to_json(const Vec& v);
json mat_to_json(const Mat& m);  // row-major nested arrays
json box_to_json(const Box& b);  // [[lo, hi], ...]

// The readers throw ConfigError naming `what` on malformed input.
Vec vec_from_json(const json& j, const std::string& what);
Mat mat_from_json(const json& j, const std::string& what);
Box box_from_json(const json& j, const std::string& what);

/// Member lookup that throws ConfigError instead of json::out_of_range.
const json& require(const json& j, const std::string& key);

template <typename T>
T value_or(const json& j, const std::string& key, T fallback) {
  if (!j.is_object() || !j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("bad value for '" + key + "': " + e.what());
  }
}

json read_json_file(const std::string& path);
void write_json_file(const std::string& path, const json& j);

}  // namespace hsrl

#endif  // HSRL_JSON_IO_HPP
