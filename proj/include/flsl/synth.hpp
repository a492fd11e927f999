#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "flsl/imaging.hpp"

namespace flsl {

using NodeId = std::uint32_t;

enum class NodeType : std::uint8_t { Type0 = 0, Type1 = 1, Type2 = 2 };
enum class LampState : std::uint8_t { Off = 0, On = 1 };

std::string_view to_string(NodeType t) noexcept;
std::string_view to_string(LampState s) noexcept;

inline constexpr int kMinutesPerDay = 1440;
inline constexpr int kNightMarginMinutes = 15;

// Knobs of the synthetic renderer. Values are in 8-bit pixel units.
struct GeneratorParams {
  int image_height = 36;
  int image_width = 48;
  double contrast = 150.0;         // lamp blob peak for Type0
  double noise_sigma = 10.0;       // per-pixel sensor noise
  double signal_gain = 1.0;        // multiplies the label-relevant signal; negative inverts it
  double type2_attenuation = 0.5;  // extra damping of the Type2 glow
  // Miswired lamp: burns through the day and is dark at night, while labels
  // still follow the schedule.
  bool inverted_wiring = false;
  // Non-zero: scene layout drawn from this seed, so nodes sharing it look alike.
  std::uint64_t scene_seed = 0;
  bool operator==(const GeneratorParams&) const = default;
};

struct NodeProfile {
  NodeId node_id = 0;
  NodeType node_type = NodeType::Type0;
  int samples_per_node = 200;
  int sunrise_minute = 6 * 60;
  int sunset_minute = 18 * 60;
  std::uint64_t generator_seed = 0;
  GeneratorParams generator;
  bool operator==(const NodeProfile&) const = default;
};

// Throws InvalidArgument if a profile invariant is broken.
void validate(const NodeProfile& profile);

struct Sample {
  NodeId node_id = 0;
  int timestamp_minute = 0;
  int draw_index = 0;
  LampState label = LampState::Off;
  // Raw frame before preprocessing, feature vector after.
  std::variant<ImageBuffer, FeatureVector> payload;

  bool has_image() const noexcept { return std::holds_alternative<ImageBuffer>(payload); }
  bool has_features() const noexcept { return std::holds_alternative<FeatureVector>(payload); }
  const ImageBuffer& image() const;
  const FeatureVector& features() const;
};

struct SplitConfig {
  double test_fraction = 0.2;
  std::uint64_t split_seed = 0;
};

using Dataset = std::map<NodeId, std::vector<Sample>>;

// Rows of the node-type CSV (header "node_id,node_type"). Profile fields
// that the CSV does not carry are taken from `defaults`; generator seeds
// are derived from `defaults.generator_seed` and the node id.
std::vector<NodeProfile> load_node_types_csv(const std::filesystem::path& path,
                                             const NodeProfile& defaults = {});
void save_node_types_csv(std::span<const NodeProfile> profiles, const std::filesystem::path& path);

// On inside the closed window [sunset - 15, 24:00) U [00:00, sunrise + 15].
LampState expected_state(int timestamp_minute, const NodeProfile& profile);

// Deterministic in (generator_seed, timestamp, draw_index).
Sample generate_sample(const NodeProfile& profile, int timestamp_minute, int draw_index);

// Hourly timestamps cycling over the day, starting at a per-node minute offset.
int sample_timestamp(const NodeProfile& profile, int draw_index);

// Where the lamp head sits in the raw frame (used by Type0 renders). Pixels
// within 0.9 sigma of the centre are saturated when the lamp is On.
struct LampGeometry {
  double row = 0.0;
  double col = 0.0;
  double sigma = 0.0;
};
LampGeometry lamp_geometry(const NodeProfile& profile);

std::vector<Sample> generate_node_samples(const NodeProfile& profile);

// threads <= 1 runs serially; the result does not depend on it.
Dataset generate_dataset(std::span<const NodeProfile> profiles, int threads = 1);

// Per-node disjoint split. Test count is round(fraction * n) clamped to [1, n - 1].
std::pair<std::vector<Sample>, std::vector<Sample>> split_train_test(std::span<const Sample> samples,
                                                                     const SplitConfig& cfg);
std::size_t test_count_for(std::size_t n, double test_fraction);

struct FleetConfig {
  int type0_nodes = 80;
  int type1_nodes = 53;
  int type2_nodes = 7;
  int samples_per_node = 200;
  int sunrise_min = 5 * 60 + 30;
  int sunrise_max = 7 * 60 + 30;
  int sunset_min = 17 * 60;
  int sunset_max = 19 * 60;
  std::uint64_t seed = 2022;
  GeneratorParams generator;
};

// Nodes are numbered 0..N-1 with types interleaved deterministically from the seed.
std::vector<NodeProfile> make_fleet(const FleetConfig& cfg);

// Gives schedules, volumes and generator seeds to bare (id, type) rows.
void fill_profiles(std::vector<NodeProfile>& profiles, const FleetConfig& cfg);

}  // namespace flsl
