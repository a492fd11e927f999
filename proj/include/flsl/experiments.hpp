#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "flsl/fl.hpp"
#include "flsl/imaging.hpp"
#include "flsl/metrics.hpp"
#include "flsl/model.hpp"
#include "flsl/synth.hpp"

namespace flsl {

enum class Method { Personalised, Centralised, FL, ClusteredFL, PartialFL };

std::string_view to_string(Method m) noexcept;
Method parse_method(std::string_view name);

// Evaluation strata: normal = types 0 and 1, edge = type 2.
enum class Group { All, Normal, Edge };
std::string_view to_string(Group g) noexcept;
bool in_group(NodeType t, Group g) noexcept;

struct NodeData {
  NodeProfile profile;
  std::vector<Sample> train;
  std::vector<Sample> test;
};

// Preprocessed, split fleet, ordered by node id.
struct PreparedData {
  std::vector<NodeData> nodes;
  std::size_t feature_length = kFeatureLength;

  std::size_t training_images() const noexcept;
};

// Generates each node's frames, runs the preprocessing pipeline and splits.
// Only features are kept, so a full fleet fits in memory.
PreparedData prepare_data(std::span<const NodeProfile> profiles, const SplitConfig& split,
                          const PreprocessConfig& preprocess, int threads = 1);

struct ExperimentSettings {
  int hidden = 64;
  bool residual = false;
  FLConfig fl;
  int centralised_epochs = 10;
  int personalised_epochs = 25;
  std::uint64_t bytes_per_image = kDefaultBytesPerImage;
  LampState positive_class = LampState::On;
  int threads = 1;

  std::vector<int> layer_dims(std::size_t input) const { return {static_cast<int>(input), hidden, 1}; }
};

struct GroupResult {
  Metrics metrics;
  std::uint64_t nodes = 0;
  std::uint64_t train_samples = 0;
  std::uint64_t test_samples = 0;
  // Test samples whose predicted state disagrees with the schedule.
  std::uint64_t faults = 0;
  // Unweighted mean over nodes of per-node accuracy / F1.
  double mean_node_accuracy = 0.0;
  double mean_node_f1 = 0.0;
};

struct RunReport {
  Method method = Method::FL;
  std::map<std::string, GroupResult> groups;  // "all", "normal", "edge"
  std::uint64_t model_count = 0;
  std::uint64_t training_devices = 0;
  CommSummary comm;
  std::map<std::string, std::string> config;
  std::map<std::string, std::uint64_t> seeds;
  std::string history_csv;
};

bool operator==(const GroupResult& a, const GroupResult& b);
bool operator==(const RunReport& a, const RunReport& b);

struct MethodOutcome {
  RunReport report;
  // One model for centralised/FL, one per node for personalised and
  // partial, one per cluster for clustered.
  std::vector<ModelParams> models;
  std::vector<RoundRecord> history;
  std::vector<int> cluster_assignments;
};

// Metrics of each node's model on that node's test split, per group.
// model_for(i) gives the model used for prepared.nodes[i].
std::map<std::string, GroupResult> evaluate_groups(const PreparedData& data,
                                                   const std::function<const ModelParams&(std::size_t)>& model_for,
                                                   LampState positive = LampState::On, int threads = 1);

MethodOutcome run_centralised(const PreparedData& data, const ExperimentSettings& s);
MethodOutcome run_personalised(const PreparedData& data, const ExperimentSettings& s,
                               const SampleAccessHook* hook = nullptr);
MethodOutcome run_federated(const PreparedData& data, const ExperimentSettings& s);
MethodOutcome run_partial(const PreparedData& data, const ExperimentSettings& s);
MethodOutcome run_clustered(const PreparedData& data, const ExperimentSettings& s);
MethodOutcome run_method(Method m, const PreparedData& data, const ExperimentSettings& s);

// Pooled id used when all training data is gathered in one place.
inline constexpr NodeId kPooledNodeId = 0xFFFFFFFFu;

// Canonical JSON: sorted keys, 17 significant digits, LF endings.
std::string report_to_json(const RunReport& report);
RunReport report_from_json(std::string_view text);
void write_report(const RunReport& report, const std::filesystem::path& path);

void write_history_csv(std::span<const RoundRecord> history, const std::filesystem::path& path);

// Headline F1/accuracy: pooled over all test samples, or the unweighted mean of per-node values.
enum class Averaging { Pooled, PerNode };
std::string_view to_string(Averaging a) noexcept;
Averaging parse_averaging(std::string_view name);

struct CompareRow {
  Method method;
  Group group;
  std::uint64_t training_devices = 0;
  std::uint64_t test_devices = 0;
  std::uint64_t models = 0;
  std::uint64_t train_samples = 0;
  std::uint64_t test_samples = 0;
  double accuracy = 0.0;
  double f1 = 0.0;
};

// Personalised, centralised and FL, each on {normal, edge, all}.
std::vector<CompareRow> compare_rows(std::span<const RunReport> reports, Averaging average = Averaging::Pooled);
std::string compare_table(std::span<const CompareRow> rows);
std::string compare_to_json(std::span<const RunReport> reports, Averaging average = Averaging::Pooled);

// Personalised >= centralised >= FL on the all-nodes group.
bool ordering_holds(const RunReport& personalised, const RunReport& centralised, const RunReport& fl);

std::string format_double(double v);

}  // namespace flsl
