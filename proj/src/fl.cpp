#include "flsl/fl.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "flsl/error.hpp"
#include "flsl/parallel.hpp"
#include "flsl/rng.hpp"

namespace flsl {

void validate(const FLConfig& cfg) {
  if (cfg.rounds <= 0) throw InvalidArgument("rounds must be positive");
  if (!(cfg.client_fraction > 0.0 && cfg.client_fraction <= 1.0)) {
    throw InvalidArgument("client_fraction must lie in (0, 1]");
  }
  if (cfg.cluster_count <= 0) throw InvalidArgument("cluster_count must be positive");
  if (cfg.warmup_rounds < 0) throw InvalidArgument("warmup_rounds must be non-negative");
  validate(cfg.train);
}

void CommLedger::record(int round, std::size_t participants, std::uint64_t down, std::uint64_t up) {
  bytes_down += down;
  bytes_up += up;
  per_round.push_back({round, participants, down + up});
}

// ---------------------------------------------------------------------------
// Local training

ClientUpdate local_train(ClientState& client, const ModelParams& global, const TrainConfig& cfg,
                         int epoch_offset, const SampleAccessHook* hook) {
  validate(cfg);
  if (client.local_train.empty()) {
    throw InvalidArgument("node " + std::to_string(client.node_id) + " has no training samples");
  }
  ModelParams params = global;
  const std::size_t n = client.local_train.size();
  const auto batch_size = static_cast<std::size_t>(cfg.batch_size);
  std::vector<std::size_t> order(n);
  std::vector<const Sample*> batch;
  batch.reserve(batch_size);
  double loss_sum = 0.0;
  std::size_t loss_count = 0;

  for (int e = 0; e < cfg.local_epochs; ++e) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(mix_seed(cfg.shuffle_seed, client.node_id, static_cast<std::uint64_t>(epoch_offset + e)));
    rng.shuffle(order.begin(), order.end());
    for (std::size_t start = 0; start < n; start += batch_size) {
      batch.clear();
      for (std::size_t k = start; k < std::min(n, start + batch_size); ++k) {
        const Sample& s = client.local_train[order[k]];
        if (hook != nullptr && *hook) (*hook)(client.node_id, s);
        batch.push_back(&s);
      }
      const Gradient g = backward(params, std::span<const Sample* const>(batch));
      sgd_step_inplace(params, g.grad, cfg.learning_rate);
      loss_sum += g.mean_loss * static_cast<double>(batch.size());
      loss_count += batch.size();
    }
  }
  client.params = params;
  return {client.node_id, std::move(params), n, loss_count > 0 ? loss_sum / static_cast<double>(loss_count) : 0.0};
}

// ---------------------------------------------------------------------------
// Aggregation

namespace {

std::vector<const ClientUpdate*> sorted_updates(std::span<const ClientUpdate> updates) {
  if (updates.empty()) throw InvalidArgument("aggregation needs at least one update");
  std::vector<const ClientUpdate*> order;
  order.reserve(updates.size());
  std::uint64_t total = 0;
  for (const auto& u : updates) {
    if (!u.params.same_shape(updates.front().params)) {
      throw InvalidArgument("update from node " + std::to_string(u.node_id) + " has a different model shape");
    }
    total += u.sample_count;
    order.push_back(&u);
  }
  if (total == 0) throw InvalidArgument("aggregation weights sum to zero");
  std::sort(order.begin(), order.end(), [](const auto* a, const auto* b) { return a->node_id < b->node_id; });
  for (std::size_t i = 1; i < order.size(); ++i) {
    if (order[i]->node_id == order[i - 1]->node_id) {
      throw InvalidArgument("duplicate update from node " + std::to_string(order[i]->node_id));
    }
  }
  return order;
}

// Running weighted mean m += (p - m) * n_k / N_k, clamped to the segment
// [m, p]. Identical inputs reproduce themselves exactly.
template <typename Dense>
void blend(Dense& mean, const Dense& value, double t) {
  auto m = mean.array();
  const auto p = value.array();
  m = (m + (p - m) * t).max(m.min(p)).min(m.max(p)).eval();
}

ModelParams aggregate_masked(const std::vector<const ClientUpdate*>& order, const std::vector<bool>& mask) {
  ModelParams out(order.front()->params.layer_dims(), order.front()->params.residual_enabled());
  for (std::size_t l = 0; l < out.layers.size(); ++l) {
    if (!mask[l]) continue;
    std::uint64_t cumulative = 0;
    for (const auto* u : order) {
      if (u->sample_count == 0) continue;
      const Layer& src = u->params.layers[l];
      if (cumulative == 0) {
        out.layers[l] = src;
        cumulative = u->sample_count;
        continue;
      }
      cumulative += u->sample_count;
      const double t = static_cast<double>(u->sample_count) / static_cast<double>(cumulative);
      blend(out.layers[l].weights, src.weights, t);
      blend(out.layers[l].bias, src.bias, t);
    }
  }
  return out;
}

std::vector<bool> resolve_mask(const std::vector<bool>& mask, const ModelParams& params) {
  if (mask.empty()) return std::vector<bool>(params.layers.size(), true);
  if (mask.size() != params.layers.size()) {
    throw InvalidArgument("layer mask has " + std::to_string(mask.size()) + " entries but the model has " +
                          std::to_string(params.layers.size()) + " layers");
  }
  return mask;
}

bool all_shared(const std::vector<bool>& mask) {
  return std::all_of(mask.begin(), mask.end(), [](bool b) { return b; });
}

}  // namespace

ModelParams fedavg_aggregate(std::span<const ClientUpdate> updates) {
  const auto order = sorted_updates(updates);
  return aggregate_masked(order, std::vector<bool>(order.front()->params.layers.size(), true));
}

ModelParams merge_layers(const ModelParams& shared, const ModelParams& own, const std::vector<bool>& mask) {
  if (!shared.same_shape(own)) throw InvalidArgument("cannot merge models of different shapes");
  const auto m = resolve_mask(mask, shared);
  ModelParams out = own;
  for (std::size_t l = 0; l < m.size(); ++l) {
    if (m[l]) out.layers[l] = shared.layers[l];
  }
  return out;
}

PartialAggregate partial_aggregate(std::span<const ClientUpdate> updates, const std::vector<bool>& mask) {
  const auto order = sorted_updates(updates);
  if (mask.size() != order.front()->params.layers.size()) {
    throw InvalidArgument("layer mask has " + std::to_string(mask.size()) + " entries but the model has " +
                          std::to_string(order.front()->params.layers.size()) + " layers");
  }
  PartialAggregate out;
  out.mask = mask;
  out.shared = aggregate_masked(order, mask);
  for (const auto* u : order) out.client_params.emplace(u->node_id, merge_layers(out.shared, u->params, mask));
  return out;
}

std::size_t transfer_size(const ModelParams& params, const std::vector<bool>& mask) {
  const auto m = resolve_mask(mask, params);
  std::size_t bytes = 8;
  for (std::size_t l = 0; l < m.size(); ++l) {
    if (m[l]) bytes += 8 + 8 * params.layers[l].parameter_count();
  }
  return bytes;
}

// ---------------------------------------------------------------------------
// Sampling and rounds

std::vector<NodeId> sample_clients(std::span<const NodeId> all, double fraction, int round, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw InvalidArgument("client fraction must lie in (0, 1]");
  if (all.empty()) throw InvalidArgument("no clients to sample from");
  std::vector<NodeId> pool(all.begin(), all.end());
  std::sort(pool.begin(), pool.end());
  if (std::adjacent_find(pool.begin(), pool.end()) != pool.end()) {
    throw InvalidArgument("client ids must be distinct");
  }
  const std::size_t n = pool.size();
  // The small slack keeps e.g. 0.1 * 140 from ceiling to 15.
  auto m = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
  m = std::clamp<std::size_t>(m, 1, n);
  if (m == n) return pool;
  Rng rng(mix_seed(seed, static_cast<std::uint64_t>(round)));
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(m);
  std::sort(pool.begin(), pool.end());
  return pool;
}

namespace {

std::vector<std::size_t> participant_indices(const std::vector<ClientState>& clients, const FLConfig& cfg,
                                             int round) {
  std::vector<NodeId> ids;
  ids.reserve(clients.size());
  for (const auto& c : clients) ids.push_back(c.node_id);
  const auto chosen = sample_clients(ids, cfg.client_fraction, round, cfg.sampling_seed);
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < clients.size(); ++i) {
    if (std::binary_search(chosen.begin(), chosen.end(), clients[i].node_id)) idx.push_back(i);
  }
  return idx;
}

double weighted_loss(std::span<const ClientUpdate> updates) {
  double sum = 0.0;
  double weight = 0.0;
  for (const auto& u : updates) {
    sum += u.mean_loss * static_cast<double>(u.sample_count);
    weight += static_cast<double>(u.sample_count);
  }
  return weight > 0.0 ? sum / weight : 0.0;
}

}  // namespace

ModelParams run_round(std::vector<ClientState>& clients, const ModelParams& global, const FLConfig& cfg, int round,
                      CommLedger& ledger, RoundRecord* record) {
  const auto mask = resolve_mask(cfg.shared_layer_mask, global);
  const bool full = all_shared(mask);
  const auto idx = participant_indices(clients, cfg, round);
  const std::uint64_t model_bytes = transfer_size(global, mask);
  const std::uint64_t traffic = model_bytes * idx.size();
  ledger.record(round, idx.size(), traffic, traffic);

  std::vector<ClientUpdate> updates(idx.size());
  parallel_for(idx.size(), cfg.threads, [&](std::size_t i) {
    ClientState& c = clients[idx[i]];
    const ModelParams start = full ? global : merge_layers(global, c.params, mask);
    updates[i] = local_train(c, start, cfg.train, round * cfg.train.local_epochs);
  });

  ModelParams next;
  if (full) {
    next = fedavg_aggregate(updates);
  } else {
    PartialAggregate pa = partial_aggregate(updates, mask);
    next = merge_layers(pa.shared, global, mask);
    for (std::size_t i : idx) clients[i].params = std::move(pa.client_params.at(clients[i].node_id));
  }
  if (record != nullptr) {
    record->round = round;
    record->participants = idx.size();
    record->train_loss = weighted_loss(updates);
    record->bytes = 2 * traffic;
  }
  return next;
}

Metrics evaluate_clients(const std::vector<ClientState>& clients,
                         const std::function<const ModelParams&(std::size_t)>& model_for, int threads) {
  std::vector<ConfusionCounts> counts(clients.size());
  parallel_for(clients.size(), threads, [&](std::size_t i) {
    const auto& c = clients[i];
    if (c.local_test.empty()) return;
    const ModelParams& model = model_for(i);
    std::vector<const Sample*> ptrs;
    for (const auto& s : c.local_test) ptrs.push_back(&s);
    const Vector p = forward_batch(model, stack_features(ptrs, model.input_dim()));
    std::vector<LampState> pred(ptrs.size());
    std::vector<LampState> truth(ptrs.size());
    for (std::size_t k = 0; k < ptrs.size(); ++k) {
      pred[k] = predict(p(static_cast<Eigen::Index>(k)));
      truth[k] = ptrs[k]->label;
    }
    counts[i] = count_confusion(pred, truth);
  });
  ConfusionCounts total;
  for (const auto& c : counts) total += c;
  return metrics_from_counts(total);
}

FLResult run_fl(std::vector<ClientState>& clients, const ModelParams& initial, const FLConfig& cfg) {
  validate(cfg);
  if (clients.empty()) throw InvalidArgument("run_fl needs at least one client");
  const auto mask = resolve_mask(cfg.shared_layer_mask, initial);
  const bool full = all_shared(mask);
  for (auto& c : clients) c.params = initial;

  FLResult result;
  result.global = initial;
  std::vector<ModelParams> personal;
  for (int r = 0; r < cfg.rounds; ++r) {
    RoundRecord rec;
    result.global = run_round(clients, result.global, cfg, r, result.ledger, &rec);
    Metrics m;
    if (full) {
      m = evaluate_clients(clients, [&](std::size_t) -> const ModelParams& { return result.global; }, cfg.threads);
    } else {
      personal.resize(clients.size());
      for (std::size_t i = 0; i < clients.size(); ++i) personal[i] = merge_layers(result.global, clients[i].params, mask);
      m = evaluate_clients(clients, [&](std::size_t i) -> const ModelParams& { return personal[i]; }, cfg.threads);
    }
    rec.test_accuracy = m.accuracy;
    rec.test_f1 = m.f1;
    result.history.push_back(rec);
  }
  if (!full) {
    for (auto& c : clients) c.params = merge_layers(result.global, c.params, mask);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Clustering

namespace {

double squared_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

int nearest(const std::vector<double>& v, const std::vector<std::vector<double>>& centroids, double* dist = nullptr) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    const double d = squared_distance(v, centroids[c]);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  if (dist != nullptr) *dist = best_d;
  return best;
}

}  // namespace

KMeansResult kmeans_fit(std::span<const std::vector<double>> vectors, int k, std::uint64_t seed) {
  const std::size_t n = vectors.size();
  if (k < 1 || static_cast<std::size_t>(k) > n) {
    throw InvalidArgument("k = " + std::to_string(k) + " must lie in [1, " + std::to_string(n) + "]");
  }
  const std::size_t dim = vectors.front().size();
  for (const auto& v : vectors) {
    if (v.size() != dim) throw InvalidArgument("k-means vectors differ in length");
  }

  // k-means++ seeding.
  Rng rng(seed);
  std::vector<std::vector<double>> centroids;
  centroids.push_back(vectors[rng.below(n)]);
  std::vector<double> d2(n);
  while (centroids.size() < static_cast<std::size_t>(k)) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      nearest(vectors[i], centroids, &d2[i]);
      total += d2[i];
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      const double u = rng.uniform() * total;
      double acc = 0.0;
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        acc += d2[i];
        if (acc > u && d2[i] > 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      rng.uniform();  // keep the stream aligned regardless of the branch taken
    }
    centroids.push_back(vectors[pick]);
  }

  KMeansResult result;
  result.assignments.assign(n, -1);
  std::vector<double> dist(n);
  for (int it = 0; it < 100; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      const int c = nearest(vectors[i], centroids, &dist[i]);
      if (c != result.assignments[i]) {
        result.assignments[i] = c;
        changed = true;
      }
    }
    // An empty cluster takes over the point farthest from its centroid.
    for (int c = 0; c < k; ++c) {
      if (std::find(result.assignments.begin(), result.assignments.end(), c) != result.assignments.end()) continue;
      std::size_t far = 0;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        const bool owner_shared = std::count(result.assignments.begin(), result.assignments.end(),
                                             result.assignments[i]) > 1;
        if (owner_shared && dist[i] > far_d) {
          far_d = dist[i];
          far = i;
        }
      }
      result.assignments[far] = c;
      dist[far] = 0.0;
      changed = true;
    }
    if (!changed && it > 0) break;

    for (int c = 0; c < k; ++c) {
      std::vector<double> sum(dim, 0.0);
      std::size_t members = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (result.assignments[i] != c) continue;
        for (std::size_t d = 0; d < dim; ++d) sum[d] += vectors[i][d];
        ++members;
      }
      for (double& s : sum) s /= static_cast<double>(members);
      centroids[static_cast<std::size_t>(c)] = std::move(sum);
    }
    double sse = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      sse += squared_distance(vectors[i], centroids[static_cast<std::size_t>(result.assignments[i])]);
    }
    result.sse_history.push_back(sse);
    result.iterations = it + 1;
  }
  result.centroids = std::move(centroids);
  return result;
}

ClusteredResult run_clustered_fl(std::vector<ClientState>& clients, const ModelParams& initial, const FLConfig& cfg) {
  validate(cfg);
  if (clients.empty()) throw InvalidArgument("run_clustered_fl needs at least one client");
  if (!all_shared(resolve_mask(cfg.shared_layer_mask, initial))) {
    throw InvalidArgument("clustered FL aggregates whole models; the layer mask must share every layer");
  }
  if (static_cast<std::size_t>(cfg.cluster_count) > clients.size()) {
    throw InvalidArgument("cluster_count exceeds the number of clients");
  }
  for (auto& c : clients) c.params = initial;

  ClusteredResult result;
  ModelParams global = initial;
  const int warmup = std::min(cfg.warmup_rounds, cfg.rounds);
  bool clustered = false;

  const auto form_clusters = [&] {
    std::vector<std::vector<double>> vectors;
    vectors.reserve(clients.size());
    for (const auto& c : clients) vectors.push_back(c.params.flatten());
    const auto km = kmeans_fit(vectors, cfg.cluster_count, mix_seed(cfg.sampling_seed, tag_hash("kmeans")));
    result.assignments = km.assignments;
    result.cluster_models.assign(static_cast<std::size_t>(cfg.cluster_count), global);
    clustered = true;
  };

  for (int r = 0; r < cfg.rounds; ++r) {
    RoundRecord rec;
    if (r < warmup) {
      global = run_round(clients, global, cfg, r, result.ledger, &rec);
      const Metrics m = evaluate_clients(clients, [&](std::size_t) -> const ModelParams& { return global; }, cfg.threads);
      rec.test_accuracy = m.accuracy;
      rec.test_f1 = m.f1;
      result.history.push_back(rec);
      continue;
    }
    if (!clustered) form_clusters();

    const auto idx = participant_indices(clients, cfg, r);
    const std::uint64_t traffic = checkpoint_size(global) * idx.size();
    result.ledger.record(r, idx.size(), traffic, traffic);

    std::vector<ClientUpdate> updates(idx.size());
    parallel_for(idx.size(), cfg.threads, [&](std::size_t i) {
      const auto cluster = static_cast<std::size_t>(result.assignments[idx[i]]);
      updates[i] = local_train(clients[idx[i]], result.cluster_models[cluster], cfg.train, r * cfg.train.local_epochs);
    });
    // Group updates by cluster (participant order preserved) and average each group.
    std::vector<ClientUpdate> grouped;
    grouped.reserve(updates.size());
    std::vector<std::size_t> bounds{0};
    for (std::size_t c = 0; c < result.cluster_models.size(); ++c) {
      for (std::size_t i = 0; i < idx.size(); ++i) {
        if (static_cast<std::size_t>(result.assignments[idx[i]]) == c) grouped.push_back(std::move(updates[i]));
      }
      bounds.push_back(grouped.size());
    }
    for (std::size_t c = 0; c < result.cluster_models.size(); ++c) {
      if (bounds[c + 1] == bounds[c]) continue;
      result.cluster_models[c] =
          fedavg_aggregate(std::span<const ClientUpdate>(grouped).subspan(bounds[c], bounds[c + 1] - bounds[c]));
    }
    updates = std::move(grouped);
    rec.round = r;
    rec.participants = idx.size();
    rec.train_loss = weighted_loss(updates);
    rec.bytes = 2 * traffic;
    const Metrics m = evaluate_clients(
        clients,
        [&](std::size_t i) -> const ModelParams& {
          return result.cluster_models[static_cast<std::size_t>(result.assignments[i])];
        },
        cfg.threads);
    rec.test_accuracy = m.accuracy;
    rec.test_f1 = m.f1;
    result.history.push_back(rec);
  }
  if (!clustered) form_clusters();
  return result;
}

int assign_joining_client(std::span<const ModelParams> cluster_models, std::span<const Sample> local_test) {
  if (cluster_models.empty()) throw InvalidArgument("no cluster models to choose from");
  if (local_test.empty()) throw InvalidArgument("joining client has no local test data");
  std::vector<const Sample*> ptrs;
  for (const auto& s : local_test) ptrs.push_back(&s);
  int best = 0;
  std::uint64_t best_correct = 0;
  for (std::size_t c = 0; c < cluster_models.size(); ++c) {
    const Vector p = forward_batch(cluster_models[c], stack_features(ptrs, cluster_models[c].input_dim()));
    std::uint64_t correct = 0;
    for (std::size_t k = 0; k < ptrs.size(); ++k) {
      if (predict(p(static_cast<Eigen::Index>(k))) == ptrs[k]->label) ++correct;
    }
    if (c == 0 || correct > best_correct) {
      best = static_cast<int>(c);
      best_correct = correct;
    }
  }
  return best;
}

CommSummary comm_cost(const CommLedger& ledger, std::uint64_t training_images, std::uint64_t bytes_per_image) {
  CommSummary s;
  s.bytes_up = ledger.bytes_up;
  s.bytes_down = ledger.bytes_down;
  s.fl_bytes = ledger.total();
  s.training_images = training_images;
  s.bytes_per_image = bytes_per_image;
  s.centralised_bytes = training_images * bytes_per_image;
  s.ratio = s.centralised_bytes > 0 ? static_cast<double>(s.fl_bytes) / static_cast<double>(s.centralised_bytes) : 0.0;
  return s;
}

}  // namespace flsl
