#pragma once

// Flat "key = value" run configuration. Blank lines and lines starting with
// '#' are ignored; unknown or repeated keys raise ConfigError naming the key.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "crowding/evalsuite.hpp"
#include "crowding/synth.hpp"
#include "crowding/trainer.hpp"

namespace crowding {

enum class ConfigSection { Common, Synth, Train, Sweep };

struct RunConfig {
  std::uint64_t seed = 1;
  SynthConfig synth;
  TrainConfig train;
  SweepSpec sweep;
};

struct ConfigKey {
  std::string name;
  ConfigSection section;
  std::string type;
  std::string description;
};

// Every accepted key in reference order.
const std::vector<ConfigKey>& config_keys();

// Keys outside `allowed` are rejected like unknown ones. The common section
// (seed) is always allowed; train.seed follows it.
RunConfig parse_run_config(std::string_view text, std::vector<ConfigSection> allowed,
                           std::string_view source = "config");
RunConfig load_run_config(const std::filesystem::path& path, std::vector<ConfigSection> allowed);

// Fully materialised key/value pairs of the allowed sections, in reference order.
ConfigEcho resolved_config(const RunConfig& cfg, std::vector<ConfigSection> allowed);
// The same as "key = value" lines; parse_run_config reads it back unchanged.
std::string format_run_config(const RunConfig& cfg, std::vector<ConfigSection> allowed);

// Markdown table of keys, types, defaults and descriptions.
std::string config_reference();

}  // namespace crowding
