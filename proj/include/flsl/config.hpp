#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "flsl/experiments.hpp"
#include "flsl/imaging.hpp"
#include "flsl/synth.hpp"

namespace flsl {

// Everything one invocation needs. Seeds left unset are derived from
// `seed`, so a config file never depends on the clock.
struct ExperimentConfig {
  Method method = Method::FL;
  std::uint64_t seed = 2022;
  int threads = 1;

  FleetConfig fleet;
  std::optional<std::uint64_t> fleet_seed;
  std::filesystem::path node_types_csv;  // empty: use the per-type counts

  PreprocessConfig preprocess;
  ExperimentSettings settings;
  std::optional<std::uint64_t> init_seed;
  std::optional<std::uint64_t> shuffle_seed;
  std::optional<std::uint64_t> sampling_seed;

  double test_fraction = 0.2;
  std::optional<std::uint64_t> split_seed;

  Averaging average = Averaging::Pooled;
  std::filesystem::path output_dir = "out";

  // Seeds with derivation applied.
  std::uint64_t resolved_fleet_seed() const;
  std::uint64_t resolved_split_seed() const;
  std::uint64_t resolved_init_seed() const;
  std::uint64_t resolved_shuffle_seed() const;
  std::uint64_t resolved_sampling_seed() const;
};

// `section.key = value` pairs in file order. Blank lines and lines starting
// with '#' or ';' are skipped.
using ConfigEntries = std::vector<std::pair<std::string, std::string>>;

ConfigEntries parse_config_text(std::string_view text, const std::string& origin = "config");
ConfigEntries read_config_file(const std::filesystem::path& path);

// Applies entries in order, later ones win. Throws ConfigError naming the key.
void apply_entries(ExperimentConfig& cfg, const ConfigEntries& entries);

// Defaults, then the file (if any), then overrides, then validation.
ExperimentConfig load_config(const std::optional<std::filesystem::path>& path, const ConfigEntries& overrides = {});

void validate(const ExperimentConfig& cfg);

// Fleet profiles: from the node-type CSV when set, otherwise from the counts.
std::vector<NodeProfile> build_fleet(const ExperimentConfig& cfg);

// Settings with all seeds resolved and threads applied.
ExperimentSettings resolved_settings(const ExperimentConfig& cfg);
SplitConfig resolved_split(const ExperimentConfig& cfg);

// Every key with its current value, except the ones that cannot change results
// (threads, output directory).
std::map<std::string, std::string> config_echo(const ExperimentConfig& cfg);
std::map<std::string, std::uint64_t> seed_echo(const ExperimentConfig& cfg);

struct ConfigKeyDoc {
  std::string key;
  std::string default_value;
  std::string description;
};

// All recognised keys with their defaults.
std::vector<ConfigKeyDoc> config_keys();

}  // namespace flsl
