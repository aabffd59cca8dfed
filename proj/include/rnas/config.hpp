#pragma once

#include <vector>

#include <json.hpp>

#include "rnas/attacks.hpp"
#include "rnas/network.hpp"

// JSON forms of the run-time settings. Readers keep defaults for missing
// keys, reject unknown keys and throw UsageError on bad values.
namespace rnas {

nlohmann::json network_spec_to_json(const NetworkSpec& s);
NetworkSpec network_spec_from_json(const nlohmann::json& j, NetworkSpec defaults = {});

/// {"kind": "pgd", "epsilon": ..., "step_size": ..., "iterations": ..., "random_start": ...}.
/// Unset fields take AttackConfig::defaults(kind, epsilon).
nlohmann::json attack_config_to_json(const AttackConfig& c);
AttackConfig attack_config_from_json(const nlohmann::json& j);

/// Accepts a single attack object, an attack name, or an array of either.
std::vector<AttackConfig> attack_list_from_json(const nlohmann::json& j);

nlohmann::json eval_options_to_json(const EvalOptions& o);
EvalOptions eval_options_from_json(const nlohmann::json& j, EvalOptions defaults = {});

}  // namespace rnas
