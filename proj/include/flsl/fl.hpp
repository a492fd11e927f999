#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <vector>

#include "flsl/metrics.hpp"
#include "flsl/model.hpp"
#include "flsl/synth.hpp"

namespace flsl {

struct ClientState {
  NodeId node_id = 0;
  std::vector<Sample> local_train;
  std::vector<Sample> local_test;
  ModelParams params;
};

struct ClientUpdate {
  NodeId node_id = 0;
  ModelParams params;
  std::size_t sample_count = 0;
  double mean_loss = 0.0;
};

struct FLConfig {
  int rounds = 50;
  double client_fraction = 1.0;
  TrainConfig train;
  // One flag per layer; empty means every layer is shared.
  std::vector<bool> shared_layer_mask;
  int cluster_count = 1;
  int warmup_rounds = 5;
  std::uint64_t sampling_seed = 0;
  // Worker threads for client training and evaluation. Results do not depend on it.
  int threads = 1;
};

void validate(const FLConfig& cfg);

struct RoundTraffic {
  int round = 0;
  std::size_t participants = 0;
  std::uint64_t bytes = 0;
};

// Exact model traffic. bytes_up + bytes_down equals the sum of per_round bytes.
struct CommLedger {
  std::uint64_t bytes_up = 0;
  std::uint64_t bytes_down = 0;
  std::vector<RoundTraffic> per_round;

  void record(int round, std::size_t participants, std::uint64_t down, std::uint64_t up);
  std::uint64_t total() const noexcept { return bytes_up + bytes_down; }
};

struct RoundRecord {
  int round = 0;
  std::size_t participants = 0;
  double train_loss = 0.0;
  double test_accuracy = 0.0;
  double test_f1 = 0.0;
  std::uint64_t bytes = 0;
};

// Observes every training sample read, tagged with the node that trains on it.
using SampleAccessHook = std::function<void(NodeId trainer, const Sample& sample)>;

// Mini-batch SGD from `global` for cfg.local_epochs epochs. Epoch e of this
// call is shuffled with the stream (shuffle_seed, node_id, epoch_offset + e),
// so running E epochs per round for R rounds visits the same batches as
// R * E consecutive epochs.
ClientUpdate local_train(ClientState& client, const ModelParams& global, const TrainConfig& cfg,
                         int epoch_offset = 0, const SampleAccessHook* hook = nullptr);

// Weighted mean with weights n_k / sum n, reduced in ascending node_id order.
ModelParams fedavg_aggregate(std::span<const ClientUpdate> updates);

struct PartialAggregate {
  std::vector<bool> mask;
  // Averaged shared layers; unshared layers are zero placeholders.
  ModelParams shared;
  // Each sender's model after merging the averaged shared layers.
  std::map<NodeId, ModelParams> client_params;
};

PartialAggregate partial_aggregate(std::span<const ClientUpdate> updates, const std::vector<bool>& mask);

// Shared layers from `shared`, the rest from `own`.
ModelParams merge_layers(const ModelParams& shared, const ModelParams& own, const std::vector<bool>& mask);

// Bytes needed to ship the masked-true layers in checkpoint format.
std::size_t transfer_size(const ModelParams& params, const std::vector<bool>& mask);

// ceil(fraction * N) distinct ids keyed on (seed, round), sorted ascending.
std::vector<NodeId> sample_clients(std::span<const NodeId> all, double fraction, int round, std::uint64_t seed);

// One broadcast -> local training -> aggregation cycle over sampled clients.
ModelParams run_round(std::vector<ClientState>& clients, const ModelParams& global, const FLConfig& cfg,
                      int round, CommLedger& ledger, RoundRecord* record = nullptr);

// Pooled metrics of each client's model (or a single model) on its local test split.
Metrics evaluate_clients(const std::vector<ClientState>& clients,
                         const std::function<const ModelParams&(std::size_t)>& model_for, int threads);

struct FLResult {
  ModelParams global;
  std::vector<RoundRecord> history;
  CommLedger ledger;
};

// Clients keep their last locally trained params (with unshared layers this
// is their personalised model).
FLResult run_fl(std::vector<ClientState>& clients, const ModelParams& initial, const FLConfig& cfg);

struct KMeansResult {
  std::vector<int> assignments;
  std::vector<std::vector<double>> centroids;
  // Within-cluster SSE after each Lloyd iteration.
  std::vector<double> sse_history;
  int iterations = 0;
};

KMeansResult kmeans_fit(std::span<const std::vector<double>> vectors, int k, std::uint64_t seed);

struct ClusteredResult {
  std::vector<ModelParams> cluster_models;
  // Cluster index of clients[i].
  std::vector<int> assignments;
  std::vector<RoundRecord> history;
  CommLedger ledger;
};

ClusteredResult run_clustered_fl(std::vector<ClientState>& clients, const ModelParams& initial,
                                 const FLConfig& cfg);

// A newcomer tries every cluster model on its own test data and keeps the
// most accurate one (lowest index on ties).
int assign_joining_client(std::span<const ModelParams> cluster_models, std::span<const Sample> local_test);

inline constexpr std::uint64_t kDefaultBytesPerImage = 428'571;

struct CommSummary {
  std::uint64_t fl_bytes = 0;
  std::uint64_t bytes_up = 0;
  std::uint64_t bytes_down = 0;
  std::uint64_t training_images = 0;
  std::uint64_t bytes_per_image = kDefaultBytesPerImage;
  std::uint64_t centralised_bytes = 0;
  double ratio = 0.0;  // fl_bytes / centralised_bytes
};

CommSummary comm_cost(const CommLedger& ledger, std::uint64_t training_images,
                      std::uint64_t bytes_per_image = kDefaultBytesPerImage);

}  // namespace flsl
