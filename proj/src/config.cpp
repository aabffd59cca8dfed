#include "rnas/config.hpp"

namespace rnas {

namespace {

template <typename Fn>
auto guarded(const char* what, Fn&& fn) {
  try {
    return fn();
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string(what) + ": " + e.what());
  }
}

void require_object(const nlohmann::json& j, const char* what) {
  if (!j.is_object()) throw UsageError(std::string(what) + " must be a JSON object");
}

}  // namespace

nlohmann::json network_spec_to_json(const NetworkSpec& s) {
  return {{"num_cells", s.num_cells},
          {"init_channels", s.init_channels},
          {"num_classes", s.num_classes},
          {"input_shape", s.input_shape}};
}

NetworkSpec network_spec_from_json(const nlohmann::json& j, NetworkSpec s) {
  require_object(j, "network config");
  guarded("network config", [&] {
    for (const auto& [key, value] : j.items()) {
      if (key == "num_cells") s.num_cells = value.get<std::size_t>();
      else if (key == "init_channels") s.init_channels = value.get<std::size_t>();
      else if (key == "num_classes") s.num_classes = value.get<std::size_t>();
      else if (key == "input_shape") s.input_shape = value.get<Shape>();
      else throw UsageError("network config: unknown key '" + key + "'");
    }
    return 0;
  });
  s.validate();
  return s;
}

nlohmann::json attack_config_to_json(const AttackConfig& c) {
  return {{"kind", attack_name(c.kind)},
          {"epsilon", c.epsilon},
          {"step_size", c.step_size},
          {"iterations", c.iterations},
          {"random_start", c.random_start}};
}

AttackConfig attack_config_from_json(const nlohmann::json& j) {
  if (j.is_string()) return AttackConfig::defaults(attack_from_name(j.get<std::string>()));
  require_object(j, "attack config");
  AttackConfig c = guarded("attack config", [&] {
    if (!j.contains("kind")) throw UsageError("attack config: missing 'kind'");
    const AttackKind kind = attack_from_name(j.at("kind").get<std::string>());
    AttackConfig out = AttackConfig::defaults(kind, j.value("epsilon", 8.0 / 255.0));
    for (const auto& [key, value] : j.items()) {
      if (key == "kind" || key == "epsilon") continue;
      if (key == "step_size") out.step_size = value.get<double>();
      else if (key == "iterations") out.iterations = value.get<int>();
      else if (key == "random_start") out.random_start = value.get<bool>();
      else throw UsageError("attack config: unknown key '" + key + "'");
    }
    return out;
  });
  c.validate();
  return c;
}

std::vector<AttackConfig> attack_list_from_json(const nlohmann::json& j) {
  std::vector<AttackConfig> out;
  if (j.is_array()) {
    for (const auto& item : j) out.push_back(attack_config_from_json(item));
  } else {
    out.push_back(attack_config_from_json(j));
  }
  if (out.empty()) throw UsageError("attack list is empty");
  return out;
}

nlohmann::json eval_options_to_json(const EvalOptions& o) {
  return {{"batch_size", o.batch_size}, {"seed", o.seed}, {"threads", o.threads}};
}

EvalOptions eval_options_from_json(const nlohmann::json& j, EvalOptions o) {
  require_object(j, "eval config");
  guarded("eval config", [&] {
    for (const auto& [key, value] : j.items()) {
      if (key == "batch_size") o.batch_size = value.get<std::size_t>();
      else if (key == "seed") o.seed = value.get<std::uint64_t>();
      else if (key == "threads") o.threads = value.get<std::size_t>();
      else throw UsageError("eval config: unknown key '" + key + "'");
    }
    return 0;
  });
  if (o.batch_size == 0) throw UsageError("eval config: batch_size must be positive");
  if (o.threads == 0) throw UsageError("eval config: threads must be positive");
  return o;
}

}  // namespace rnas
