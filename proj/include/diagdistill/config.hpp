// Copyright 2026 The diagdistill Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "diagdistill/denoiser.hpp"
#include "diagdistill/kv_cache.hpp"
#include "diagdistill/motion_flow.hpp"
#include "diagdistill/schedule.hpp"

namespace diag {

using ConfigValue = std::variant<bool, std::int64_t, double, std::string>;

enum class ConfigType { kBool, kInt, kNumber, kString };

struct ConfigKey {
  std::string name;
  ConfigType type;
  ConfigValue default_value;
  std::string help;
};

/// The published schema: every accepted key, its type and default.
const std::vector<ConfigKey>& config_schema();

/// Merged run configuration. Layers apply in order defaults < DIAG_SEED <
/// config file < command-line flags; unknown keys and mistyped values are
/// ConfigErrors.
class RunConfig {
 public:
  RunConfig();

  /// Merge a JSON object of overrides.
  void merge_json(std::string_view text);
  void merge_file(const std::string& path);
  /// Apply DIAG_SEED from the environment when set.
  void merge_env();

  void set(const std::string& key, ConfigValue value);
  /// Parse `text` according to the key's type.
  void set_from_string(const std::string& key, const std::string& text);

  bool get_bool(const std::string& key) const;
  std::int64_t get_int(const std::string& key) const;
  double get_number(const std::string& key) const;
  const std::string& get_string(const std::string& key) const;

  /// All keys in schema order, as a JSON object.
  std::string to_json() const;

  NoiseSchedule schedule() const;
  ForcingConfig forcing() const;
  ToyDiTConfig model() const;
  ExtractorConfig extractor() const;
  FlowRepr flow_repr() const;

 private:
  const ConfigKey& key(const std::string& name) const;
  std::map<std::string, ConfigValue> values_;
};

}  // namespace diag
