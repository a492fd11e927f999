#include "flsl/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "flsl/error.hpp"
#include "flsl/parallel.hpp"
#include "flsl/rng.hpp"

namespace flsl {

std::string_view to_string(NodeType t) noexcept {
  switch (t) {
    case NodeType::Type0: return "type0";
    case NodeType::Type1: return "type1";
    case NodeType::Type2: return "type2";
  }
  return "unknown";
}

std::string_view to_string(LampState s) noexcept { return s == LampState::On ? "on" : "off"; }

const ImageBuffer& Sample::image() const {
  if (const auto* img = std::get_if<ImageBuffer>(&payload)) return *img;
  throw InvalidArgument("sample has already been preprocessed into features");
}

const FeatureVector& Sample::features() const {
  if (const auto* f = std::get_if<FeatureVector>(&payload)) return *f;
  throw InvalidArgument("sample has not been preprocessed yet");
}

void validate(const NodeProfile& p) {
  const std::string who = "node " + std::to_string(p.node_id) + ": ";
  if (p.samples_per_node < 2) throw InvalidArgument(who + "samples_per_node must be at least 2");
  if (p.sunrise_minute < 0 || p.sunrise_minute >= kMinutesPerDay || p.sunset_minute < 0 ||
      p.sunset_minute >= kMinutesPerDay) {
    throw InvalidArgument(who + "sunrise/sunset must lie in [0, 1440)");
  }
  if (p.sunrise_minute >= p.sunset_minute) {
    throw InvalidArgument(who + "sunrise must come before sunset");
  }
  if (p.generator.image_height < 2 || p.generator.image_width < 2) {
    throw InvalidArgument(who + "generator image must be at least 2x2");
  }
}

// ---------------------------------------------------------------------------
// Node-type CSV

namespace {

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

bool parse_int(const std::string& text, long long& out) {
  if (text.empty()) return false;
  std::size_t used = 0;
  try {
    out = std::stoll(text, &used);
  } catch (const std::exception&) {
    return false;
  }
  return used == text.size();
}

}  // namespace

std::vector<NodeProfile> load_node_types_csv(const std::filesystem::path& path,
                                             const NodeProfile& defaults) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open node-type CSV: " + path.string());

  std::string line;
  int row = 0;
  bool saw_header = false;
  std::set<NodeId> seen;
  std::vector<NodeProfile> out;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const std::string where = path.string() + ": row " + std::to_string(row) + ": ";
    if (!saw_header) {
      if (trim(line) != "node_id,node_type") {
        throw FormatError(where + "expected header 'node_id,node_type'");
      }
      saw_header = true;
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(trim(cell));
    if (cells.size() != 2) throw FormatError(where + "expected 2 columns, found " + std::to_string(cells.size()));
    long long id = 0;
    long long type = 0;
    if (!parse_int(cells[0], id) || id < 0 || id > static_cast<long long>(UINT32_MAX)) {
      throw FormatError(where + "malformed node_id '" + cells[0] + "'");
    }
    if (!parse_int(cells[1], type)) throw FormatError(where + "malformed node_type '" + cells[1] + "'");
    if (type < 0 || type > 2) {
      throw FormatError(where + "node_type " + cells[1] + " is not one of 0, 1, 2");
    }
    if (!seen.insert(static_cast<NodeId>(id)).second) {
      throw FormatError(where + "duplicate node_id " + cells[0]);
    }
    NodeProfile p = defaults;
    p.node_id = static_cast<NodeId>(id);
    p.node_type = static_cast<NodeType>(type);
    p.generator_seed = mix_seed(defaults.generator_seed, p.node_id);
    out.push_back(p);
  }
  if (!saw_header) throw FormatError(path.string() + ": missing header 'node_id,node_type'");
  return out;
}

void save_node_types_csv(std::span<const NodeProfile> profiles, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write node-type CSV: " + path.string());
  out << "node_id,node_type\n";
  for (const auto& p : profiles) out << p.node_id << ',' << static_cast<int>(p.node_type) << '\n';
  if (!out) throw IoError("failed writing node-type CSV: " + path.string());
}

// ---------------------------------------------------------------------------
// Schedule

LampState expected_state(int t, const NodeProfile& profile) {
  if (t < 0 || t >= kMinutesPerDay) {
    throw InvalidArgument("timestamp " + std::to_string(t) + " outside [0, 1440)");
  }
  const bool evening = t >= profile.sunset_minute - kNightMarginMinutes;
  const bool morning = t <= profile.sunrise_minute + kNightMarginMinutes;
  return (evening || morning) ? LampState::On : LampState::Off;
}

// ---------------------------------------------------------------------------
// Renderer

namespace {

struct Blob {
  double row;
  double col;
  double sigma;
};

struct Ellipse {
  double row;
  double col;
  double radius_r;
  double radius_c;
};

// Node-fixed appearance: scene texture, lamp or glow footprint, foliage.
struct Appearance {
  int height = 0;
  int width = 0;
  std::vector<double> scene;    // H*W*3 base scene before exposure
  std::vector<double> lamp;     // H*W Gaussian footprint of the lamp head
  std::vector<double> glow;     // H*W Gaussian footprint of the off-frame glow
  std::vector<Ellipse> foliage;
  double polarity = 1.0;        // -1 when a slipped camera's exposure inverts the glow
  LampGeometry lamp_head;
  int minute_offset = 0;
};

double gaussian(const Blob& b, double r, double c) {
  const double dr = r - b.row;
  const double dc = c - b.col;
  return std::exp(-(dr * dr + dc * dc) / (2.0 * b.sigma * b.sigma));
}

Appearance make_appearance(const NodeProfile& p) {
  const auto& g = p.generator;
  Rng rng(mix_seed(g.scene_seed != 0 ? g.scene_seed : p.generator_seed, tag_hash("appearance")));
  const int H = g.image_height;
  const int W = g.image_width;
  Appearance a;
  a.height = H;
  a.width = W;

  double base[kChannels];
  double amp[3][kChannels];
  double kr[3];
  double kc[3];
  double phase[3][kChannels];
  for (double& b : base) b = rng.uniform(25.0, 70.0);
  for (int w = 0; w < 3; ++w) {
    kr[w] = rng.uniform(0.05, 0.3);
    kc[w] = rng.uniform(0.05, 0.3);
    for (int c = 0; c < kChannels; ++c) {
      amp[w][c] = rng.uniform(4.0, 14.0);
      phase[w][c] = rng.uniform(0.0, 6.283185307179586);
    }
  }
  // The lamp always sits inside the central square so cropping keeps it.
  const double side = std::min(H, W);
  const double r0 = (H - side) / 2.0;
  const double c0 = (W - side) / 2.0;
  const Blob lamp{r0 + rng.uniform(0.15, 0.45) * side, c0 + rng.uniform(0.2, 0.8) * side, rng.uniform(2.6, 3.2)};
  const Blob glow{rng.uniform(-0.35, -0.1) * H, rng.uniform(0.0, 1.0) * W, rng.uniform(0.4, 0.6) * H};
  for (int k = 0; k < 10; ++k) {
    a.foliage.push_back({rng.uniform(0.0, H), rng.uniform(0.0, W), rng.uniform(0.1, 0.25) * H,
                         rng.uniform(0.1, 0.25) * H});
  }
  a.lamp_head = {lamp.row, lamp.col, lamp.sigma};
  a.minute_offset = static_cast<int>(rng.below(60));
  a.polarity = rng.uniform() < 0.5 ? -1.0 : 1.0;

  const std::size_t plane = static_cast<std::size_t>(H) * W;
  a.scene.resize(plane * kChannels);
  a.lamp.resize(plane);
  a.glow.resize(plane);
  for (int r = 0; r < H; ++r) {
    for (int c = 0; c < W; ++c) {
      const std::size_t k = static_cast<std::size_t>(r) * W + c;
      for (int ch = 0; ch < kChannels; ++ch) {
        double v = base[ch];
        for (int w = 0; w < 3; ++w) v += amp[w][ch] * std::cos(kr[w] * r + kc[w] * c + phase[w][ch]);
        a.scene[k * kChannels + ch] = v;
      }
      a.lamp[k] = std::min(1.0, 1.5 * gaussian(lamp, r, c));  // lamp heads saturate in the core
      a.glow[k] = gaussian(glow, r, c);
    }
  }
  return a;
}

bool inside(const Ellipse& e, double r, double c) {
  const double dr = (r - e.row) / e.radius_r;
  const double dc = (c - e.col) / e.radius_c;
  return dr * dr + dc * dc <= 1.0;
}

constexpr double kWarm[kChannels] = {1.0, 0.92, 0.7};
constexpr double kLampHead[kChannels] = {1.0, 0.97, 0.9};
constexpr double kFiltered[kChannels] = {0.75, 1.0, 0.6};
constexpr double kLeaf[kChannels] = {0.45, 1.0, 0.35};

// Type0: lamp head visible, bright blob when On, faint housing when Off.
// Type1: only the pole is visible, a broad glow from above when On.
// Type2: foliage occludes the view, a weak filtered glow whose sign depends
// on the node's exposure behaviour.
ImageBuffer render(const NodeProfile& p, const Appearance& a, LampState state, Rng& rng) {
  const auto& g = p.generator;
  const int H = a.height;
  const int W = a.width;
  const bool on = (state == LampState::On) != g.inverted_wiring;

  const double exposure = rng.uniform(0.75, 1.25);
  const double offset = rng.uniform(-10.0, 10.0);
  // A drifting low-frequency field (cloud cover, headlights) unrelated to the label.
  const Blob cloud{rng.uniform(0.0, H), rng.uniform(0.0, W), rng.uniform(0.3, 0.7) * H};
  const double cloud_amp = rng.uniform(-14.0, 14.0);

  double lamp_amp = 0.0;
  double glow_amp = 0.0;
  if (p.node_type == NodeType::Type0) {
    lamp_amp = on ? g.contrast * g.signal_gain * rng.uniform(1.4, 1.7) : 20.0 * rng.uniform(0.5, 1.5);
  } else if (p.node_type == NodeType::Type1) {
    glow_amp = on ? 0.35 * g.contrast * g.signal_gain * rng.uniform(0.7, 1.3) : 0.0;
  } else {
    glow_amp = on ? 0.2 * g.contrast * g.type2_attenuation * g.signal_gain * a.polarity * rng.uniform(0.5, 1.5)
                  : 0.0;
  }

  std::vector<Ellipse> leaves;
  if (p.node_type == NodeType::Type2) {
    // Foliage sways by a couple of pixels and loose leaves drift across the frame.
    const double dr = rng.uniform(-2.0, 2.0);
    const double dc = rng.uniform(-2.0, 2.0);
    for (Ellipse e : a.foliage) {
      e.row += dr;
      e.col += dc;
      leaves.push_back(e);
    }
    for (int k = 0; k < 5; ++k) {
      leaves.push_back({rng.uniform(0.0, H), rng.uniform(0.0, W), rng.uniform(0.05, 0.15) * H,
                        rng.uniform(0.05, 0.15) * H});
    }
  }
  const double* tint = p.node_type == NodeType::Type2 ? kFiltered : kWarm;

  ImageBuffer img(H, W);
  auto px = img.pixels();
  for (int r = 0; r < H; ++r) {
    for (int c = 0; c < W; ++c) {
      const std::size_t k = static_cast<std::size_t>(r) * W + c;
      const double cloud_v = cloud_amp * gaussian(cloud, r, c);
      bool covered = false;
      for (const auto& e : leaves) {
        if (inside(e, r, c)) {
          covered = true;
          break;
        }
      }
      const double lamp_v = lamp_amp * a.lamp[k];
      const double glow_v = glow_amp * a.glow[k] * (covered ? 0.5 : 1.0);
      for (int ch = 0; ch < kChannels; ++ch) {
        double v = a.scene[k * kChannels + ch] * exposure + offset + cloud_v;
        if (covered) v = 0.6 * v + 30.0 * kLeaf[ch];
        v += lamp_v * kLampHead[ch] + glow_v * tint[ch];
        v += g.noise_sigma * rng.normal();
        px[k * kChannels + ch] = std::clamp(v, 0.0, 255.0);
      }
    }
  }
  return img;
}

}  // namespace

LampGeometry lamp_geometry(const NodeProfile& profile) { return make_appearance(profile).lamp_head; }

int sample_timestamp(const NodeProfile& profile, int draw_index) {
  const Appearance a = make_appearance(profile);
  return (a.minute_offset + 60 * draw_index) % kMinutesPerDay;
}

Sample generate_sample(const NodeProfile& profile, int timestamp_minute, int draw_index) {
  validate(profile);
  const Appearance a = make_appearance(profile);
  const LampState label = expected_state(timestamp_minute, profile);
  Rng rng(mix_seed(profile.generator_seed, static_cast<std::uint64_t>(timestamp_minute),
                   static_cast<std::uint64_t>(draw_index)));
  Sample s;
  s.node_id = profile.node_id;
  s.timestamp_minute = timestamp_minute;
  s.draw_index = draw_index;
  s.label = label;
  s.payload = render(profile, a, label, rng);
  return s;
}

std::vector<Sample> generate_node_samples(const NodeProfile& profile) {
  validate(profile);
  const Appearance a = make_appearance(profile);
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(profile.samples_per_node));
  for (int i = 0; i < profile.samples_per_node; ++i) {
    const int t = (a.minute_offset + 60 * i) % kMinutesPerDay;
    Sample s;
    s.node_id = profile.node_id;
    s.timestamp_minute = t;
    s.draw_index = i;
    s.label = expected_state(t, profile);
    Rng rng(mix_seed(profile.generator_seed, static_cast<std::uint64_t>(t), static_cast<std::uint64_t>(i)));
    s.payload = render(profile, a, s.label, rng);
    out.push_back(std::move(s));
  }
  return out;
}

Dataset generate_dataset(std::span<const NodeProfile> profiles, int threads) {
  if (profiles.empty()) throw InvalidArgument("generate_dataset needs at least one profile");
  std::set<NodeId> ids;
  for (const auto& p : profiles) {
    validate(p);
    if (!ids.insert(p.node_id).second) {
      throw InvalidArgument("duplicate node_id " + std::to_string(p.node_id) + " in fleet");
    }
  }
  std::vector<std::vector<Sample>> per_node(profiles.size());
  parallel_for(profiles.size(), threads, [&](std::size_t i) { per_node[i] = generate_node_samples(profiles[i]); });
  Dataset out;
  for (std::size_t i = 0; i < profiles.size(); ++i) out.emplace(profiles[i].node_id, std::move(per_node[i]));
  return out;
}

// ---------------------------------------------------------------------------
// Split

std::size_t test_count_for(std::size_t n, double test_fraction) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw InvalidArgument("test_fraction must lie in (0, 1)");
  }
  if (n < 2) throw InvalidArgument("a node needs at least 2 samples to split");
  const auto t = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
  return std::clamp<std::size_t>(t, 1, n - 1);
}

std::pair<std::vector<Sample>, std::vector<Sample>> split_train_test(std::span<const Sample> samples,
                                                                     const SplitConfig& cfg) {
  std::map<NodeId, std::vector<std::size_t>> by_node;
  for (std::size_t i = 0; i < samples.size(); ++i) by_node[samples[i].node_id].push_back(i);

  std::vector<bool> is_test(samples.size(), false);
  for (auto& [node, idx] : by_node) {
    if (idx.size() < 2) {
      throw InvalidArgument("node " + std::to_string(node) + " has fewer than 2 samples to split");
    }
    const std::size_t t = test_count_for(idx.size(), cfg.test_fraction);
    std::vector<std::size_t> order = idx;
    Rng rng(mix_seed(cfg.split_seed, node));
    rng.shuffle(order.begin(), order.end());
    for (std::size_t k = 0; k < t; ++k) is_test[order[k]] = true;
  }
  std::pair<std::vector<Sample>, std::vector<Sample>> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    (is_test[i] ? out.second : out.first).push_back(samples[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fleet

void fill_profiles(std::vector<NodeProfile>& profiles, const FleetConfig& cfg) {
  if (cfg.sunrise_min > cfg.sunrise_max || cfg.sunset_min > cfg.sunset_max) {
    throw InvalidArgument("schedule ranges must have min <= max");
  }
  for (auto& p : profiles) {
    Rng rng(mix_seed(cfg.seed, tag_hash("schedule"), p.node_id));
    p.samples_per_node = cfg.samples_per_node;
    p.sunrise_minute = cfg.sunrise_min + static_cast<int>(rng.below(cfg.sunrise_max - cfg.sunrise_min + 1));
    p.sunset_minute = cfg.sunset_min + static_cast<int>(rng.below(cfg.sunset_max - cfg.sunset_min + 1));
    p.generator_seed = mix_seed(cfg.seed, tag_hash("generator"), p.node_id);
    p.generator = cfg.generator;
    validate(p);
  }
}

std::vector<NodeProfile> make_fleet(const FleetConfig& cfg) {
  if (cfg.type0_nodes < 0 || cfg.type1_nodes < 0 || cfg.type2_nodes < 0) {
    throw InvalidArgument("node counts must be non-negative");
  }
  std::vector<NodeType> types;
  types.insert(types.end(), cfg.type0_nodes, NodeType::Type0);
  types.insert(types.end(), cfg.type1_nodes, NodeType::Type1);
  types.insert(types.end(), cfg.type2_nodes, NodeType::Type2);
  if (types.empty()) throw InvalidArgument("fleet must contain at least one node");
  Rng rng(mix_seed(cfg.seed, tag_hash("fleet-types")));
  rng.shuffle(types.begin(), types.end());

  std::vector<NodeProfile> profiles(types.size());
  for (std::size_t i = 0; i < types.size(); ++i) {
    profiles[i].node_id = static_cast<NodeId>(i);
    profiles[i].node_type = types[i];
  }
  fill_profiles(profiles, cfg);
  return profiles;
}

}  // namespace flsl
