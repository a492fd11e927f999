#include "flsl/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "flsl/error.hpp"
#include "flsl/rng.hpp"

namespace flsl {

std::uint64_t ExperimentConfig::resolved_fleet_seed() const { return fleet_seed.value_or(seed); }
std::uint64_t ExperimentConfig::resolved_split_seed() const {
  return split_seed.value_or(mix_seed(seed, tag_hash("split")));
}
std::uint64_t ExperimentConfig::resolved_init_seed() const {
  return init_seed.value_or(mix_seed(seed, tag_hash("init")));
}
std::uint64_t ExperimentConfig::resolved_shuffle_seed() const {
  return shuffle_seed.value_or(mix_seed(seed, tag_hash("shuffle")));
}
std::uint64_t ExperimentConfig::resolved_sampling_seed() const {
  return sampling_seed.value_or(mix_seed(seed, tag_hash("sampling")));
}

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

template <typename T>
T parse_number(const std::string& key, const std::string& value, const char* what) {
  T out{};
  const char* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (value.empty() || ec != std::errc() || ptr != end) {
    throw ConfigError(key, std::string("expected ") + what + ", got '" + value + "'");
  }
  return out;
}

int to_int(const std::string& key, const std::string& v) { return parse_number<int>(key, v, "an integer"); }
std::uint64_t to_u64(const std::string& key, const std::string& v) {
  return parse_number<std::uint64_t>(key, v, "a non-negative integer");
}
double to_double(const std::string& key, const std::string& v) { return parse_number<double>(key, v, "a number"); }

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key, "expected true or false, got '" + v + "'");
}

std::optional<std::uint64_t> to_opt_u64(const std::string& key, const std::string& v) {
  if (v.empty()) return std::nullopt;
  return to_u64(key, v);
}

std::string num(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string opt(const std::optional<std::uint64_t>& v) { return v ? std::to_string(*v) : std::string(); }
std::string boolean(bool b) { return b ? "true" : "false"; }

std::string mask_text(const std::vector<bool>& mask) {
  std::string out;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (i) out += ',';
    out += mask[i] ? '1' : '0';
  }
  return out;
}

std::vector<bool> to_mask(const std::string& key, const std::string& v) {
  std::vector<bool> out;
  if (v.empty()) return out;
  std::stringstream ss(v);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(to_bool(key, trim(cell)));
  return out;
}

struct KeySpec {
  const char* key;
  const char* description;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  bool affects_results = true;
};

#define FLSL_INT(KEY, FIELD, DESC)                                                   \
  KeySpec {                                                                          \
    KEY, DESC, [](const ExperimentConfig& c) { return std::to_string(c.FIELD); },    \
        [](ExperimentConfig& c, const std::string& v) { c.FIELD = to_int(KEY, v); } \
  }
#define FLSL_REAL(KEY, FIELD, DESC)                                                     \
  KeySpec {                                                                             \
    KEY, DESC, [](const ExperimentConfig& c) { return num(c.FIELD); },                  \
        [](ExperimentConfig& c, const std::string& v) { c.FIELD = to_double(KEY, v); } \
  }
#define FLSL_BOOL(KEY, FIELD, DESC)                                                   \
  KeySpec {                                                                           \
    KEY, DESC, [](const ExperimentConfig& c) { return boolean(c.FIELD); },            \
        [](ExperimentConfig& c, const std::string& v) { c.FIELD = to_bool(KEY, v); } \
  }
#define FLSL_SEED(KEY, FIELD, DESC)                                                       \
  KeySpec {                                                                               \
    KEY, DESC, [](const ExperimentConfig& c) { return opt(c.FIELD); },                    \
        [](ExperimentConfig& c, const std::string& v) { c.FIELD = to_opt_u64(KEY, v); } \
  }

const std::vector<KeySpec>& key_specs() {
  static const std::vector<KeySpec> specs = {
      {"experiment.method", "personalised, centralised, fl, clustered or partial",
       [](const ExperimentConfig& c) { return std::string(to_string(c.method)); },
       [](ExperimentConfig& c, const std::string& v) {
         try {
           c.method = parse_method(v);
         } catch (const InvalidArgument& e) {
           throw ConfigError("experiment.method", e.what());
         }
       }},
      {"experiment.seed", "base seed; unset seeds below derive from it",
       [](const ExperimentConfig& c) { return std::to_string(c.seed); },
       [](ExperimentConfig& c, const std::string& v) { c.seed = to_u64("experiment.seed", v); }},
      {"experiment.threads", "worker threads (results do not depend on it)",
       [](const ExperimentConfig& c) { return std::to_string(c.threads); },
       [](ExperimentConfig& c, const std::string& v) { c.threads = to_int("experiment.threads", v); }, false},

      FLSL_INT("fleet.type0_nodes", fleet.type0_nodes, "nodes with the lamp head in view"),
      FLSL_INT("fleet.type1_nodes", fleet.type1_nodes, "nodes that only see the pole"),
      FLSL_INT("fleet.type2_nodes", fleet.type2_nodes, "nodes occluded by foliage (edge cases)"),
      FLSL_INT("fleet.samples_per_node", fleet.samples_per_node, "frames per node"),
      FLSL_INT("fleet.sunrise_min", fleet.sunrise_min, "earliest sunrise, minute of day"),
      FLSL_INT("fleet.sunrise_max", fleet.sunrise_max, "latest sunrise, minute of day"),
      FLSL_INT("fleet.sunset_min", fleet.sunset_min, "earliest sunset, minute of day"),
      FLSL_INT("fleet.sunset_max", fleet.sunset_max, "latest sunset, minute of day"),
      FLSL_SEED("fleet.seed", fleet_seed, "fleet layout and generator seed (default: experiment.seed)"),
      {"fleet.node_types_csv", "node_id,node_type CSV; overrides the per-type counts when set",
       [](const ExperimentConfig& c) { return c.node_types_csv.string(); },
       [](ExperimentConfig& c, const std::string& v) { c.node_types_csv = v; }},

      FLSL_INT("generator.image_height", fleet.generator.image_height, "raw frame height"),
      FLSL_INT("generator.image_width", fleet.generator.image_width, "raw frame width"),
      FLSL_REAL("generator.contrast", fleet.generator.contrast, "lamp blob peak above background"),
      FLSL_REAL("generator.noise_sigma", fleet.generator.noise_sigma, "per-pixel sensor noise"),
      FLSL_REAL("generator.signal_gain", fleet.generator.signal_gain, "scales the lamp signal"),
      FLSL_REAL("generator.type2_attenuation", fleet.generator.type2_attenuation, "damping of the occluded glow"),

      FLSL_INT("preprocess.crop_side", preprocess.crop_side, "centre crop side, 0 = shorter image side"),
      FLSL_BOOL("preprocess.green_metadata", preprocess.append_green_metadata,
                "append green mean and median (3074 features)"),

      FLSL_INT("model.hidden", settings.hidden, "hidden layer width"),
      FLSL_BOOL("model.residual", settings.residual, "add a projected skip connection"),

      FLSL_REAL("train.learning_rate", settings.fl.train.learning_rate, "SGD step size"),
      FLSL_INT("train.batch_size", settings.fl.train.batch_size, "mini-batch size"),
      FLSL_INT("train.local_epochs", settings.fl.train.local_epochs, "local epochs per FL round"),
      FLSL_SEED("train.init_seed", init_seed, "weight initialisation seed"),
      FLSL_SEED("train.shuffle_seed", shuffle_seed, "mini-batch shuffling seed"),

      FLSL_INT("fl.rounds", settings.fl.rounds, "communication rounds"),
      FLSL_REAL("fl.client_fraction", settings.fl.client_fraction, "share of clients per round, in (0, 1]"),
      {"fl.shared_layers", "comma list of 0/1 per layer for partial FL, empty = default",
       [](const ExperimentConfig& c) { return mask_text(c.settings.fl.shared_layer_mask); },
       [](ExperimentConfig& c, const std::string& v) { c.settings.fl.shared_layer_mask = to_mask("fl.shared_layers", v); }},
      FLSL_INT("fl.cluster_count", settings.fl.cluster_count, "clusters for clustered FL"),
      FLSL_INT("fl.warmup_rounds", settings.fl.warmup_rounds, "FedAvg rounds before clustering, capped at fl.rounds"),
      FLSL_SEED("fl.sampling_seed", sampling_seed, "client sampling and k-means seed"),

      FLSL_INT("centralised.epochs", settings.centralised_epochs, "epochs over the pooled data"),
      FLSL_INT("personalised.epochs", settings.personalised_epochs, "epochs per node-local model"),

      FLSL_REAL("split.test_fraction", test_fraction, "per-node test share, in (0, 1)"),
      FLSL_SEED("split.seed", split_seed, "train/test split seed"),

      {"metrics.positive_class", "class scored by F1: on or off",
       [](const ExperimentConfig& c) { return std::string(to_string(c.settings.positive_class)); },
       [](ExperimentConfig& c, const std::string& v) {
         if (v == "on") {
           c.settings.positive_class = LampState::On;
         } else if (v == "off") {
           c.settings.positive_class = LampState::Off;
         } else {
           throw ConfigError("metrics.positive_class", "expected on or off, got '" + v + "'");
         }
       }},
      {"metrics.average", "headline metrics: pooled or per_node",
       [](const ExperimentConfig& c) { return std::string(to_string(c.average)); },
       [](ExperimentConfig& c, const std::string& v) {
         try {
           c.average = parse_averaging(v);
         } catch (const InvalidArgument& e) {
           throw ConfigError("metrics.average", e.what());
         }
       }},

      {"comm.bytes_per_image", "raw upload size per training image",
       [](const ExperimentConfig& c) { return std::to_string(c.settings.bytes_per_image); },
       [](ExperimentConfig& c, const std::string& v) {
         c.settings.bytes_per_image = to_u64("comm.bytes_per_image", v);
       }},

      {"output.dir", "directory for reports, checkpoints and histories",
       [](const ExperimentConfig& c) { return c.output_dir.string(); },
       [](ExperimentConfig& c, const std::string& v) { c.output_dir = v; }, false},
  };
  return specs;
}

#undef FLSL_INT
#undef FLSL_REAL
#undef FLSL_BOOL
#undef FLSL_SEED

const KeySpec& find_spec(const std::string& key) {
  for (const auto& s : key_specs()) {
    if (key == s.key) return s;
  }
  throw ConfigError(key, "unknown configuration key");
}

}  // namespace

ConfigEntries parse_config_text(std::string_view text, const std::string& origin) {
  ConfigEntries out;
  std::istringstream in{std::string(text)};
  std::string line;
  int row = 0;
  while (std::getline(in, line)) {
    ++row;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(t, origin + ":" + std::to_string(row) + ": expected 'section.key = value'");
    }
    std::string key = trim(std::string_view(t).substr(0, eq));
    std::string value = trim(std::string_view(t).substr(eq + 1));
    if (key.empty()) throw ConfigError("", origin + ":" + std::to_string(row) + ": missing key");
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

ConfigEntries read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config file: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str(), path.string());
}

void apply_entries(ExperimentConfig& cfg, const ConfigEntries& entries) {
  for (const auto& [key, value] : entries) find_spec(key).set(cfg, value);
}

void validate(const ExperimentConfig& cfg) {
  const auto& f = cfg.fleet;
  const auto need = [](bool ok, const char* key, const std::string& msg) {
    if (!ok) throw ConfigError(key, msg);
  };
  need(cfg.threads >= 1, "experiment.threads", "must be at least 1");
  need(f.type0_nodes >= 0, "fleet.type0_nodes", "must be non-negative");
  need(f.type1_nodes >= 0, "fleet.type1_nodes", "must be non-negative");
  need(f.type2_nodes >= 0, "fleet.type2_nodes", "must be non-negative");
  if (cfg.node_types_csv.empty()) {
    need(f.type0_nodes + f.type1_nodes + f.type2_nodes > 0, "fleet.type0_nodes", "fleet has no nodes");
  }
  need(f.samples_per_node >= 2, "fleet.samples_per_node", "must be at least 2");
  need(f.sunrise_min >= 0 && f.sunrise_min < kMinutesPerDay, "fleet.sunrise_min", "must lie in [0, 1440)");
  need(f.sunrise_max >= f.sunrise_min && f.sunrise_max < kMinutesPerDay, "fleet.sunrise_max",
       "must lie in [fleet.sunrise_min, 1440)");
  need(f.sunset_min > f.sunrise_max && f.sunset_min < kMinutesPerDay, "fleet.sunset_min",
       "must lie in (fleet.sunrise_max, 1440)");
  need(f.sunset_max >= f.sunset_min && f.sunset_max < kMinutesPerDay, "fleet.sunset_max",
       "must lie in [fleet.sunset_min, 1440)");
  need(f.generator.image_height >= 2, "generator.image_height", "must be at least 2");
  need(f.generator.image_width >= 2, "generator.image_width", "must be at least 2");
  need(f.generator.contrast >= 0.0, "generator.contrast", "must be non-negative");
  need(f.generator.noise_sigma >= 0.0, "generator.noise_sigma", "must be non-negative");
  need(f.generator.type2_attenuation >= 0.0, "generator.type2_attenuation", "must be non-negative");

  const int min_side = std::min(f.generator.image_height, f.generator.image_width);
  need(cfg.preprocess.crop_side >= 0 && cfg.preprocess.crop_side <= min_side, "preprocess.crop_side",
       "must lie in [0, " + std::to_string(min_side) + "]");

  const auto& s = cfg.settings;
  need(s.hidden >= 1, "model.hidden", "must be at least 1");
  need(s.fl.train.learning_rate >= 0.0, "train.learning_rate", "must be non-negative");
  need(s.fl.train.batch_size >= 1, "train.batch_size", "must be at least 1");
  need(s.fl.train.local_epochs >= 0, "train.local_epochs", "must be non-negative");
  need(s.fl.rounds >= 1, "fl.rounds", "must be at least 1");
  need(s.fl.client_fraction > 0.0 && s.fl.client_fraction <= 1.0, "fl.client_fraction", "must lie in (0, 1]");
  const std::size_t layers = s.residual ? 3 : 2;
  need(s.fl.shared_layer_mask.empty() || s.fl.shared_layer_mask.size() == layers, "fl.shared_layers",
       "needs one flag per layer (" + std::to_string(layers) + ")");
  need(s.fl.cluster_count >= 1, "fl.cluster_count", "must be at least 1");
  need(s.fl.warmup_rounds >= 0, "fl.warmup_rounds", "must be non-negative");
  if (cfg.node_types_csv.empty()) {
    need(s.fl.cluster_count <= f.type0_nodes + f.type1_nodes + f.type2_nodes, "fl.cluster_count",
         "cannot exceed the number of nodes");
  }
  need(s.centralised_epochs >= 0, "centralised.epochs", "must be non-negative");
  need(s.personalised_epochs >= 0, "personalised.epochs", "must be non-negative");
  need(cfg.test_fraction > 0.0 && cfg.test_fraction < 1.0, "split.test_fraction", "must lie in (0, 1)");
  need(s.bytes_per_image >= 1, "comm.bytes_per_image", "must be at least 1");
  need(!cfg.output_dir.empty(), "output.dir", "must not be empty");
}

ExperimentConfig load_config(const std::optional<std::filesystem::path>& path, const ConfigEntries& overrides) {
  ExperimentConfig cfg;
  if (path) apply_entries(cfg, read_config_file(*path));
  apply_entries(cfg, overrides);
  validate(cfg);
  return cfg;
}

std::vector<NodeProfile> build_fleet(const ExperimentConfig& cfg) {
  FleetConfig fc = cfg.fleet;
  fc.seed = cfg.resolved_fleet_seed();
  if (cfg.node_types_csv.empty()) return make_fleet(fc);
  std::vector<NodeProfile> profiles = load_node_types_csv(cfg.node_types_csv);
  if (profiles.empty()) throw ConfigError("fleet.node_types_csv", "CSV lists no nodes");
  fill_profiles(profiles, fc);
  return profiles;
}

ExperimentSettings resolved_settings(const ExperimentConfig& cfg) {
  ExperimentSettings s = cfg.settings;
  s.fl.train.init_seed = cfg.resolved_init_seed();
  s.fl.train.shuffle_seed = cfg.resolved_shuffle_seed();
  s.fl.sampling_seed = cfg.resolved_sampling_seed();
  s.threads = cfg.threads;
  s.fl.threads = cfg.threads;
  return s;
}

SplitConfig resolved_split(const ExperimentConfig& cfg) {
  SplitConfig sc;
  sc.test_fraction = cfg.test_fraction;
  sc.split_seed = cfg.resolved_split_seed();
  return sc;
}

std::map<std::string, std::string> config_echo(const ExperimentConfig& cfg) {
  std::map<std::string, std::string> out;
  for (const auto& s : key_specs()) {
    if (s.affects_results) out[s.key] = s.get(cfg);
  }
  return out;
}

std::map<std::string, std::uint64_t> seed_echo(const ExperimentConfig& cfg) {
  return {{"experiment", cfg.seed},
          {"fleet", cfg.resolved_fleet_seed()},
          {"split", cfg.resolved_split_seed()},
          {"init", cfg.resolved_init_seed()},
          {"shuffle", cfg.resolved_shuffle_seed()},
          {"sampling", cfg.resolved_sampling_seed()}};
}

std::vector<ConfigKeyDoc> config_keys() {
  const ExperimentConfig defaults;
  std::vector<ConfigKeyDoc> out;
  for (const auto& s : key_specs()) out.push_back({s.key, s.get(defaults), s.description});
  return out;
}

}  // namespace flsl
