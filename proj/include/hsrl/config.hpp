#ifndef HSRL_CONFIG_HPP
#define HSRL_CONFIG_HPP

#include "hsrl/environments.hpp"
#include "hsrl/evaluation.hpp"
#include "hsrl/trainer.hpp"
#include "hsrl/verifier.hpp"

#include <json.hpp>

#include <string>

namespace hsrl {

/// One JSON document drives a run:
/// {"env": ..., "params": {...}, "train": {...}, "eval": {...},
///  "estimation": {...}, "seed": ...}
struct RunConfig {
  nlohmann::json document;
  Environment env;
  TrainConfig train;
  EvalProtocol eval;
  VerifierOptions verifier;
  std::string hash;
};

RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);

/// FNV-1a (64 bit) of the compact dump, as 16 hex digits. Object keys are
/// sorted by the JSON library, so the dump is canonical.
std::string config_hash(const nlohmann::json& j);

}  // namespace hsrl

#endif  // HSRL_CONFIG_HPP
