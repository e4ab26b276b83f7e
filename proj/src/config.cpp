#include "hsrl/config.hpp"

#include "hsrl/json_io.hpp"

#include <cstdio>

namespace hsrl {

std::string config_hash(const nlohmann::json& j) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : j.dump()) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("configuration must be a JSON object");
  RunConfig rc;
  rc.document = j;
  try {
    rc.env = build_environment(j);
    nlohmann::json train = value_or<nlohmann::json>(j, "train", nlohmann::json::object());
    nlohmann::json eval = value_or<nlohmann::json>(j, "eval", nlohmann::json::object());
    if (j.contains("seed")) {
      if (!train.contains("seed")) train["seed"] = j.at("seed");
      if (!eval.contains("seed")) eval["seed"] = j.at("seed");
    }
    rc.train = train_config_from_json(train);
    rc.eval = eval_protocol_from_json(eval);
    const nlohmann::json est = value_or<nlohmann::json>(j, "estimation", nlohmann::json::object());
    auto& e = rc.verifier.estimation;
    e.grid_per_dim = value_or(est, "grid_per_dim", e.grid_per_dim);
    e.control_grid = value_or(est, "control_grid", e.control_grid);
    e.margin_factor = value_or(est, "margin_factor", e.margin_factor);
    e.flow_step = value_or(est, "flow_step", e.flow_step);
    auto& d2 = rc.verifier.degree2;
    d2.h = value_or(est, "fd_step", d2.h);
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("malformed configuration: ") + ex.what());
  } catch (const InvalidBuffer& ex) {
    throw ConfigError(std::string("invalid buffer: ") + ex.what());
  } catch (const DegenerateConstraint& ex) {
    throw ConfigError(std::string("degenerate constraint: ") + ex.what());
  }
  rc.hash = config_hash(j);
  return rc;
}

RunConfig load_run_config(const std::string& path) { return run_config_from_json(read_json_file(path)); }

}  // namespace hsrl
