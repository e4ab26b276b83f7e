#include "hsrl/json_io.hpp"

#include <cmath>
#include <fstream>

namespace hsrl {

json vec_to_json(const Vec& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

json mat_to_json(const Mat& m) {
  json out = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    out.push_back(std::move(row));
  }
  return out;
}

json box_to_json(const Box& b) {
  json out = json::array();
  for (Eigen::Index i = 0; i < b.dim(); ++i) out.push_back({b.lo[i], b.hi[i]});
  return out;
}

static double number(const json& j, const std::string& what) {
  if (!j.is_number()) throw ConfigError(what + ": expected a number");
  double x = j.get<double>();
  if (!std::isfinite(x)) throw ConfigError(what + ": non-finite value");
  return x;
}

Vec vec_from_json(const json& j, const std::string& what) {
  if (!j.is_array()) throw ConfigError(what + ": expected an array");
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = number(j[i], what);
  return v;
}

Mat mat_from_json(const json& j, const std::string& what) {
  if (!j.is_array() || j.empty()) throw ConfigError(what + ": expected a non-empty nested array");
  const auto rows = static_cast<Eigen::Index>(j.size());
  if (!j[0].is_array()) throw ConfigError(what + ": expected rows");
  const auto cols = static_cast<Eigen::Index>(j[0].size());
  Mat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const json& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
      throw ConfigError(what + ": ragged matrix");
    }
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = number(row[static_cast<std::size_t>(c)], what);
  }
  return m;
}

Box box_from_json(const json& j, const std::string& what) {
  if (!j.is_array() || j.empty()) throw ConfigError(what + ": expected [[lo, hi], ...]");
  Vec lo(static_cast<Eigen::Index>(j.size())), hi(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_array() || j[i].size() != 2) throw ConfigError(what + ": expected [lo, hi] pairs");
    lo[static_cast<Eigen::Index>(i)] = number(j[i][0], what);
    hi[static_cast<Eigen::Index>(i)] = number(j[i][1], what);
  }
  try {
    return Box(lo, hi);
  } catch (const ConfigError& e) {
    throw ConfigError(what + ": " + e.what());
  }
}

const json& require(const json& j, const std::string& key) {
  if (!j.is_object() || !j.contains(key)) throw ConfigError("missing key '" + key + "'");
  return j.at(key);
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

void write_json_file(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << j.dump(2) << '\n';
  if (!out) throw Error("write failed: " + path);
}

}  // namespace hsrl
