// Copyright 2026 The diagdistill Authors
// SPDX-License-Identifier: Apache-2.0

#include "diagdistill/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <iterator>

#include <json.hpp>

namespace diag {

namespace {

using nlohmann::ordered_json;
using I = std::int64_t;

const char* type_name(ConfigType t) {
  switch (t) {
    case ConfigType::kBool: return "bool";
    case ConfigType::kInt: return "integer";
    case ConfigType::kNumber: return "number";
    case ConfigType::kString: return "string";
  }
  return "?";
}

I parse_int(const std::string& key, const std::string& text) {
  I v = 0;
  const auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || p != text.data() + text.size()) {
    throw ConfigError("config key " + key + " expects an integer, got \"" + text + "\"");
  }
  return v;
}

double parse_number(const std::string& key, const std::string& text) {
  double v = 0;
  const auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || p != text.data() + text.size()) {
    throw ConfigError("config key " + key + " expects a number, got \"" + text + "\"");
  }
  return v;
}

}  // namespace

const std::vector<ConfigKey>& config_schema() {
  static const std::vector<ConfigKey> schema = {
      {"seed", ConfigType::kInt, I{42}, "run seed; DIAG_SEED overrides the default"},
      {"shift_k", ConfigType::kNumber, 5.0, "timestep shift factor"},
      {"horizon_T", ConfigType::kInt, I{1000}, "pure-noise step"},
      {"warp_enabled", ConfigType::kBool, true, "apply the timestep shift"},
      {"timestep_policy", ConfigType::kString, std::string("linear"),
       "intermediate timesteps between 1000 and 100"},
      {"window_chunks", ConfigType::kInt, I{4}, "rolling cache window in chunks"},
      {"forcing_t", ConfigType::kInt, I{100}, "noise level of cached latents"},
      {"forcing_vp_form", ConfigType::kBool, false, "variance-preserving injection"},
      {"strict_noisy_cache", ConfigType::kBool, true, "reject forcing_t = 0"},
      {"d_model", ConfigType::kInt, I{16}, "toy model width"},
      {"layers", ConfigType::kInt, I{2}, "toy model depth"},
      {"heads", ConfigType::kInt, I{2}, "attention heads"},
      {"frames_per_chunk", ConfigType::kInt, I{3}, "latent frames per chunk"},
      {"channels", ConfigType::kInt, I{4}, "latent channels"},
      {"height", ConfigType::kInt, I{8}, "latent height"},
      {"width", ConfigType::kInt, I{8}, "latent width"},
      {"model_seed", ConfigType::kInt, I{0}, "toy model weight seed"},
      {"flow_repr", ConfigType::kString, std::string("learned"),
       "diff | corr | dct_low | dct_high | learned"},
      {"ema_mu", ConfigType::kNumber, 0.999, "teacher extractor EMA rate"},
      {"c_mid", ConfigType::kInt, I{8}, "extractor hidden channels"},
      {"c_feat", ConfigType::kInt, I{4}, "extractor feature channels"},
  };
  return schema;
}

RunConfig::RunConfig() {
  for (const auto& k : config_schema()) values_[k.name] = k.default_value;
}

const ConfigKey& RunConfig::key(const std::string& name) const {
  for (const auto& k : config_schema()) {
    if (k.name == name) return k;
  }
  throw ConfigError("unknown config key: " + name);
}

void RunConfig::set(const std::string& name, ConfigValue value) {
  const ConfigKey& k = key(name);
  // Integers are accepted where numbers are expected.
  if (k.type == ConfigType::kNumber && std::holds_alternative<I>(value)) {
    value = static_cast<double>(std::get<I>(value));
  }
  if (value.index() != k.default_value.index()) {
    throw ConfigError("config key " + name + " expects a " + type_name(k.type));
  }
  values_[name] = std::move(value);
}

void RunConfig::set_from_string(const std::string& name, const std::string& text) {
  switch (key(name).type) {
    case ConfigType::kBool:
      if (text == "true" || text == "1") return set(name, true);
      if (text == "false" || text == "0") return set(name, false);
      throw ConfigError("config key " + name + " expects true or false, got \"" + text + "\"");
    case ConfigType::kInt: return set(name, parse_int(name, text));
    case ConfigType::kNumber: return set(name, parse_number(name, text));
    case ConfigType::kString: return set(name, text);
  }
}

void RunConfig::merge_json(std::string_view text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const ordered_json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [name, v] : j.items()) {
    if (v.is_boolean()) {
      set(name, v.get<bool>());
    } else if (v.is_number_integer()) {
      set(name, v.get<I>());
    } else if (v.is_number_float()) {
      set(name, v.get<double>());
    } else if (v.is_string()) {
      set(name, v.get<std::string>());
    } else {
      throw ConfigError("config key " + name + " has an unsupported value type");
    }
  }
}

void RunConfig::merge_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file " + path);
  const std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  merge_json(text);
}

void RunConfig::merge_env() {
  if (const char* s = std::getenv("DIAG_SEED"); s != nullptr && *s != '\0') {
    set_from_string("seed", s);
  }
}

bool RunConfig::get_bool(const std::string& name) const {
  key(name);
  return std::get<bool>(values_.at(name));
}
std::int64_t RunConfig::get_int(const std::string& name) const {
  key(name);
  return std::get<I>(values_.at(name));
}
double RunConfig::get_number(const std::string& name) const {
  key(name);
  return std::get<double>(values_.at(name));
}
const std::string& RunConfig::get_string(const std::string& name) const {
  key(name);
  return std::get<std::string>(values_.at(name));
}

std::string RunConfig::to_json() const {
  ordered_json j = ordered_json::object();
  for (const auto& k : config_schema()) {
    std::visit([&](const auto& v) { j[k.name] = v; }, values_.at(k.name));
  }
  return j.dump();
}

NoiseSchedule RunConfig::schedule() const {
  if (get_string("timestep_policy") != "linear") {
    throw ConfigError("timestep_policy supports only \"linear\"");
  }
  NoiseSchedule s;
  s.shift_k = get_number("shift_k");
  s.horizon = static_cast<int>(get_int("horizon_T"));
  s.warp_enabled = get_bool("warp_enabled");
  s.validate();
  return s;
}

ForcingConfig RunConfig::forcing() const {
  return ForcingConfig{static_cast<int>(get_int("forcing_t")), get_bool("forcing_vp_form"),
                       get_bool("strict_noisy_cache")};
}

namespace {
std::size_t positive(const RunConfig& c, const std::string& k) {
  const auto v = c.get_int(k);
  if (v <= 0) throw ConfigError("config key " + k + " must be positive");
  return static_cast<std::size_t>(v);
}
}  // namespace

ToyDiTConfig RunConfig::model() const {
  ToyDiTConfig m;
  m.latent = LatentShape{positive(*this, "frames_per_chunk"), positive(*this, "channels"),
                         positive(*this, "height"), positive(*this, "width")};
  m.d_model = positive(*this, "d_model");
  m.layers = positive(*this, "layers");
  m.heads = positive(*this, "heads");
  m.seed = static_cast<std::uint64_t>(get_int("model_seed"));
  m.validate();
  return m;
}

ExtractorConfig RunConfig::extractor() const {
  ExtractorConfig e;
  e.channels = positive(*this, "channels");
  e.c_mid = positive(*this, "c_mid");
  e.c_feat = positive(*this, "c_feat");
  return e;
}

FlowRepr RunConfig::flow_repr() const { return parse_flow_repr(get_string("flow_repr")); }

}  // namespace diag
