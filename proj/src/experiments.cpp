#include "flsl/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "flsl/error.hpp"
#include "flsl/parallel.hpp"
#include "json.hpp"

namespace flsl {

using nlohmann::json;

std::string_view to_string(Method m) noexcept {
  switch (m) {
    case Method::Personalised: return "personalised";
    case Method::Centralised: return "centralised";
    case Method::FL: return "fl";
    case Method::ClusteredFL: return "clustered";
    case Method::PartialFL: return "partial";
  }
  return "unknown";
}

Method parse_method(std::string_view name) {
  for (Method m : {Method::Personalised, Method::Centralised, Method::FL, Method::ClusteredFL, Method::PartialFL}) {
    if (to_string(m) == name) return m;
  }
  throw InvalidArgument("unknown method '" + std::string(name) +
                        "' (expected personalised, centralised, fl, clustered or partial)");
}

std::string_view to_string(Group g) noexcept {
  switch (g) {
    case Group::All: return "all";
    case Group::Normal: return "normal";
    case Group::Edge: return "edge";
  }
  return "unknown";
}

bool in_group(NodeType t, Group g) noexcept {
  switch (g) {
    case Group::All: return true;
    case Group::Normal: return t != NodeType::Type2;
    case Group::Edge: return t == NodeType::Type2;
  }
  return false;
}

std::size_t PreparedData::training_images() const noexcept {
  std::size_t n = 0;
  for (const auto& node : nodes) n += node.train.size();
  return n;
}

PreparedData prepare_data(std::span<const NodeProfile> profiles, const SplitConfig& split,
                          const PreprocessConfig& pre, int threads) {
  if (profiles.empty()) throw InvalidArgument("fleet is empty");
  std::vector<NodeProfile> sorted(profiles.begin(), profiles.end());
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.node_id < b.node_id; });
  for (std::size_t i = 1; i < sorted.size(); ++i) {
    if (sorted[i].node_id == sorted[i - 1].node_id) {
      throw InvalidArgument("duplicate node_id " + std::to_string(sorted[i].node_id) + " in fleet");
    }
  }
  PreparedData out;
  out.feature_length = feature_length(pre);
  out.nodes.resize(sorted.size());
  parallel_for(sorted.size(), threads, [&](std::size_t i) {
    std::vector<Sample> samples = generate_node_samples(sorted[i]);
    for (auto& s : samples) s.payload = preprocess(s.image(), pre);
    auto [train, test] = split_train_test(samples, split);
    out.nodes[i] = NodeData{sorted[i], std::move(train), std::move(test)};
  });
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

namespace {

struct NodeEval {
  ConfusionCounts counts;
  std::uint64_t faults = 0;
};

NodeEval evaluate_node(const NodeData& node, const ModelParams& model, LampState positive) {
  NodeEval e;
  if (node.test.empty()) return e;
  std::vector<const Sample*> ptrs;
  ptrs.reserve(node.test.size());
  for (const auto& s : node.test) ptrs.push_back(&s);
  const Vector p = forward_batch(model, stack_features(ptrs, model.input_dim()));
  std::vector<LampState> pred(ptrs.size());
  std::vector<LampState> truth(ptrs.size());
  for (std::size_t k = 0; k < ptrs.size(); ++k) {
    pred[k] = predict(p(static_cast<Eigen::Index>(k)));
    truth[k] = ptrs[k]->label;
    if (fault_flag(pred[k], expected_state(ptrs[k]->timestamp_minute, node.profile))) ++e.faults;
  }
  e.counts = count_confusion(pred, truth, positive);
  return e;
}

}  // namespace

std::map<std::string, GroupResult> evaluate_groups(const PreparedData& data,
                                                   const std::function<const ModelParams&(std::size_t)>& model_for,
                                                   LampState positive, int threads) {
  std::vector<NodeEval> evals(data.nodes.size());
  parallel_for(data.nodes.size(), threads,
               [&](std::size_t i) { evals[i] = evaluate_node(data.nodes[i], model_for(i), positive); });

  std::map<std::string, GroupResult> out;
  for (Group g : {Group::All, Group::Normal, Group::Edge}) {
    GroupResult r;
    ConfusionCounts total;
    double acc_sum = 0.0;
    double f1_sum = 0.0;
    std::uint64_t evaluated = 0;
    for (std::size_t i = 0; i < data.nodes.size(); ++i) {
      const auto& node = data.nodes[i];
      if (!in_group(node.profile.node_type, g)) continue;
      ++r.nodes;
      r.train_samples += node.train.size();
      r.test_samples += node.test.size();
      r.faults += evals[i].faults;
      total += evals[i].counts;
      if (evals[i].counts.total() > 0) {
        const Metrics m = metrics_from_counts(evals[i].counts);
        acc_sum += m.accuracy;
        f1_sum += m.f1;
        ++evaluated;
      }
    }
    r.metrics = metrics_from_counts(total);
    if (evaluated > 0) {
      r.mean_node_accuracy = acc_sum / static_cast<double>(evaluated);
      r.mean_node_f1 = f1_sum / static_cast<double>(evaluated);
    }
    out.emplace(std::string(to_string(g)), r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Methods

namespace {

std::vector<ClientState> make_clients(const PreparedData& data) {
  std::vector<ClientState> clients;
  clients.reserve(data.nodes.size());
  for (const auto& node : data.nodes) {
    if (node.train.empty() || node.test.empty()) {
      throw InvalidArgument("node " + std::to_string(node.profile.node_id) + " has an empty split");
    }
    clients.push_back({node.profile.node_id, node.train, node.test, ModelParams{}});
  }
  return clients;
}

ModelParams initial_model(const PreparedData& data, const ExperimentSettings& s) {
  const auto dims = s.layer_dims(data.feature_length);
  return init_params(dims, s.fl.train.init_seed, s.residual);
}

RunReport base_report(Method m, const PreparedData& data) {
  RunReport r;
  r.method = m;
  r.training_devices = data.nodes.size();
  r.comm.training_images = data.training_images();
  return r;
}

}  // namespace

MethodOutcome run_centralised(const PreparedData& data, const ExperimentSettings& s) {
  if (data.nodes.empty() || data.training_images() == 0) throw InvalidArgument("centralised run needs training data");
  ClientState pooled;
  pooled.node_id = kPooledNodeId;
  pooled.local_train.reserve(data.training_images());
  for (const auto& node : data.nodes) pooled.local_train.insert(pooled.local_train.end(), node.train.begin(), node.train.end());

  TrainConfig cfg = s.fl.train;
  cfg.local_epochs = s.centralised_epochs;
  MethodOutcome out;
  out.models.push_back(local_train(pooled, initial_model(data, s), cfg).params);
  pooled.local_train.clear();

  out.report = base_report(Method::Centralised, data);
  out.report.model_count = 1;
  const ModelParams& model = out.models.front();
  out.report.groups = evaluate_groups(
      data, [&](std::size_t) -> const ModelParams& { return model; }, s.positive_class, s.threads);
  out.report.comm = comm_cost(CommLedger{}, data.training_images(), s.bytes_per_image);
  return out;
}

MethodOutcome run_personalised(const PreparedData& data, const ExperimentSettings& s, const SampleAccessHook* hook) {
  if (data.nodes.empty()) throw InvalidArgument("personalised run needs at least one node");
  for (const auto& node : data.nodes) {
    if (node.train.empty() || node.test.empty()) {
      throw InvalidArgument("node " + std::to_string(node.profile.node_id) + " has an empty split");
    }
  }
  TrainConfig cfg = s.fl.train;
  cfg.local_epochs = s.personalised_epochs;
  const ModelParams init = initial_model(data, s);

  MethodOutcome out;
  out.models.resize(data.nodes.size());
  parallel_for(data.nodes.size(), s.threads, [&](std::size_t i) {
    // The client sees only its own node's samples.
    ClientState client{data.nodes[i].profile.node_id, data.nodes[i].train, {}, ModelParams{}};
    out.models[i] = local_train(client, init, cfg, 0, hook).params;
  });

  out.report = base_report(Method::Personalised, data);
  out.report.model_count = data.nodes.size();
  out.report.groups = evaluate_groups(
      data, [&](std::size_t i) -> const ModelParams& { return out.models[i]; }, s.positive_class, s.threads);
  out.report.comm = comm_cost(CommLedger{}, data.training_images(), s.bytes_per_image);
  return out;
}

MethodOutcome run_federated(const PreparedData& data, const ExperimentSettings& s) {
  auto clients = make_clients(data);
  FLConfig cfg = s.fl;
  cfg.shared_layer_mask.clear();
  cfg.threads = s.threads;
  FLResult fl = run_fl(clients, initial_model(data, s), cfg);

  MethodOutcome out;
  out.models.push_back(std::move(fl.global));
  out.history = std::move(fl.history);
  out.report = base_report(Method::FL, data);
  out.report.model_count = 1;
  const ModelParams& model = out.models.front();
  out.report.groups = evaluate_groups(
      data, [&](std::size_t) -> const ModelParams& { return model; }, s.positive_class, s.threads);
  out.report.comm = comm_cost(fl.ledger, data.training_images(), s.bytes_per_image);
  return out;
}

MethodOutcome run_partial(const PreparedData& data, const ExperimentSettings& s) {
  auto clients = make_clients(data);
  FLConfig cfg = s.fl;
  cfg.threads = s.threads;
  const ModelParams init = initial_model(data, s);
  if (cfg.shared_layer_mask.empty()) {
    // Keep the output layer on the device, share everything else.
    cfg.shared_layer_mask.assign(init.layers.size(), true);
    cfg.shared_layer_mask[init.chain_length() - 1] = false;
  }
  FLResult fl = run_fl(clients, init, cfg);

  MethodOutcome out;
  for (auto& c : clients) out.models.push_back(std::move(c.params));
  out.history = std::move(fl.history);
  out.report = base_report(Method::PartialFL, data);
  out.report.model_count = out.models.size();
  out.report.groups = evaluate_groups(
      data, [&](std::size_t i) -> const ModelParams& { return out.models[i]; }, s.positive_class, s.threads);
  out.report.comm = comm_cost(fl.ledger, data.training_images(), s.bytes_per_image);
  return out;
}

MethodOutcome run_clustered(const PreparedData& data, const ExperimentSettings& s) {
  auto clients = make_clients(data);
  FLConfig cfg = s.fl;
  cfg.shared_layer_mask.clear();
  cfg.threads = s.threads;
  ClusteredResult cr = run_clustered_fl(clients, initial_model(data, s), cfg);

  MethodOutcome out;
  out.models = std::move(cr.cluster_models);
  out.cluster_assignments = cr.assignments;
  out.history = std::move(cr.history);
  out.report = base_report(Method::ClusteredFL, data);
  out.report.model_count = out.models.size();
  out.report.groups = evaluate_groups(
      data,
      [&](std::size_t i) -> const ModelParams& {
        return out.models[static_cast<std::size_t>(out.cluster_assignments[i])];
      },
      s.positive_class, s.threads);
  out.report.comm = comm_cost(cr.ledger, data.training_images(), s.bytes_per_image);
  return out;
}

MethodOutcome run_method(Method m, const PreparedData& data, const ExperimentSettings& s) {
  switch (m) {
    case Method::Personalised: return run_personalised(data, s);
    case Method::Centralised: return run_centralised(data, s);
    case Method::FL: return run_federated(data, s);
    case Method::ClusteredFL: return run_clustered(data, s);
    case Method::PartialFL: return run_partial(data, s);
  }
  throw InvalidArgument("unknown method");
}

// ---------------------------------------------------------------------------
// Reports

std::string format_double(double v) {
  if (!std::isfinite(v)) throw InvalidArgument("reports cannot hold non-finite numbers");
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

namespace {

void dump_canonical(const json& j, std::string& out, int indent) {
  const std::string pad(static_cast<std::size_t>(indent) * 2, ' ');
  const std::string inner(static_cast<std::size_t>(indent + 1) * 2, ' ');
  switch (j.type()) {
    case json::value_t::object: {
      if (j.empty()) {
        out += "{}";
        return;
      }
      out += "{\n";
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {  // std::map order: sorted keys
        if (!first) out += ",\n";
        first = false;
        out += inner + json(it.key()).dump() + ": ";
        dump_canonical(it.value(), out, indent + 1);
      }
      out += "\n" + pad + "}";
      return;
    }
    case json::value_t::array: {
      if (j.empty()) {
        out += "[]";
        return;
      }
      out += "[\n";
      for (std::size_t i = 0; i < j.size(); ++i) {
        if (i > 0) out += ",\n";
        out += inner;
        dump_canonical(j[i], out, indent + 1);
      }
      out += "\n" + pad + "]";
      return;
    }
    case json::value_t::number_float: out += format_double(j.get<double>()); return;
    default: out += j.dump(); return;
  }
}

std::string canonical(const json& j) {
  std::string out;
  dump_canonical(j, out, 0);
  out += "\n";
  return out;
}

json group_to_json(const GroupResult& g) {
  return json{{"accuracy", g.metrics.accuracy},
              {"error_rate", g.metrics.error_rate},
              {"f1", g.metrics.f1},
              {"tp", g.metrics.counts.tp},
              {"fp", g.metrics.counts.fp},
              {"tn", g.metrics.counts.tn},
              {"fn", g.metrics.counts.fn},
              {"nodes", g.nodes},
              {"train_samples", g.train_samples},
              {"test_samples", g.test_samples},
              {"faults", g.faults},
              {"mean_node_accuracy", g.mean_node_accuracy},
              {"mean_node_f1", g.mean_node_f1}};
}

json report_json(const RunReport& r) {
  json groups = json::object();
  for (const auto& [name, g] : r.groups) groups[name] = group_to_json(g);
  json config = json::object();
  for (const auto& [k, v] : r.config) config[k] = v;
  json seeds = json::object();
  for (const auto& [k, v] : r.seeds) seeds[k] = v;
  return json{{"method", std::string(to_string(r.method))},
              {"model_count", r.model_count},
              {"training_devices", r.training_devices},
              {"groups", groups},
              {"comm",
               {{"fl_bytes", r.comm.fl_bytes},
                {"bytes_up", r.comm.bytes_up},
                {"bytes_down", r.comm.bytes_down},
                {"training_images", r.comm.training_images},
                {"bytes_per_image", r.comm.bytes_per_image},
                {"centralised_bytes", r.comm.centralised_bytes},
                {"ratio", r.comm.ratio}}},
              {"config", config},
              {"seeds", seeds},
              {"history_csv", r.history_csv}};
}

}  // namespace

std::string report_to_json(const RunReport& report) { return canonical(report_json(report)); }

RunReport report_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
    RunReport r;
    r.method = parse_method(j.at("method").get<std::string>());
    r.model_count = j.at("model_count").get<std::uint64_t>();
    r.training_devices = j.at("training_devices").get<std::uint64_t>();
    for (const auto& [name, g] : j.at("groups").items()) {
      GroupResult gr;
      gr.metrics.accuracy = g.at("accuracy").get<double>();
      gr.metrics.error_rate = g.at("error_rate").get<double>();
      gr.metrics.f1 = g.at("f1").get<double>();
      gr.metrics.counts = {g.at("tp").get<std::uint64_t>(), g.at("fp").get<std::uint64_t>(),
                           g.at("tn").get<std::uint64_t>(), g.at("fn").get<std::uint64_t>()};
      gr.nodes = g.at("nodes").get<std::uint64_t>();
      gr.train_samples = g.at("train_samples").get<std::uint64_t>();
      gr.test_samples = g.at("test_samples").get<std::uint64_t>();
      gr.faults = g.at("faults").get<std::uint64_t>();
      gr.mean_node_accuracy = g.at("mean_node_accuracy").get<double>();
      gr.mean_node_f1 = g.at("mean_node_f1").get<double>();
      r.groups.emplace(name, gr);
    }
    const auto& c = j.at("comm");
    r.comm.fl_bytes = c.at("fl_bytes").get<std::uint64_t>();
    r.comm.bytes_up = c.at("bytes_up").get<std::uint64_t>();
    r.comm.bytes_down = c.at("bytes_down").get<std::uint64_t>();
    r.comm.training_images = c.at("training_images").get<std::uint64_t>();
    r.comm.bytes_per_image = c.at("bytes_per_image").get<std::uint64_t>();
    r.comm.centralised_bytes = c.at("centralised_bytes").get<std::uint64_t>();
    r.comm.ratio = c.at("ratio").get<double>();
    for (const auto& [k, v] : j.at("config").items()) r.config[k] = v.get<std::string>();
    for (const auto& [k, v] : j.at("seeds").items()) r.seeds[k] = v.get<std::uint64_t>();
    r.history_csv = j.at("history_csv").get<std::string>();
    return r;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed report: ") + e.what());
  }
}

bool operator==(const GroupResult& a, const GroupResult& b) {
  return a.metrics.counts == b.metrics.counts && a.metrics.accuracy == b.metrics.accuracy &&
         a.metrics.f1 == b.metrics.f1 && a.metrics.error_rate == b.metrics.error_rate && a.nodes == b.nodes &&
         a.train_samples == b.train_samples && a.test_samples == b.test_samples && a.faults == b.faults &&
         a.mean_node_accuracy == b.mean_node_accuracy && a.mean_node_f1 == b.mean_node_f1;
}

bool operator==(const RunReport& a, const RunReport& b) {
  return a.method == b.method && a.groups == b.groups && a.model_count == b.model_count &&
         a.training_devices == b.training_devices && a.comm.fl_bytes == b.comm.fl_bytes &&
         a.comm.bytes_up == b.comm.bytes_up && a.comm.bytes_down == b.comm.bytes_down &&
         a.comm.training_images == b.comm.training_images && a.comm.bytes_per_image == b.comm.bytes_per_image &&
         a.comm.centralised_bytes == b.comm.centralised_bytes && a.comm.ratio == b.comm.ratio &&
         a.config == b.config && a.seeds == b.seeds && a.history_csv == b.history_csv;
}

namespace {

void write_text(const std::string& text, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace

void write_report(const RunReport& report, const std::filesystem::path& path) {
  write_text(report_to_json(report), path);
}

void write_history_csv(std::span<const RoundRecord> history, const std::filesystem::path& path) {
  std::ostringstream out;
  out << "round,participants,train_loss,test_accuracy,test_f1,bytes\n";
  for (const auto& r : history) {
    out << r.round << ',' << r.participants << ',' << format_double(r.train_loss) << ','
        << format_double(r.test_accuracy) << ',' << format_double(r.test_f1) << ',' << r.bytes << '\n';
  }
  write_text(out.str(), path);
}

// ---------------------------------------------------------------------------
// Comparison

std::string_view to_string(Averaging a) noexcept { return a == Averaging::Pooled ? "pooled" : "per_node"; }

Averaging parse_averaging(std::string_view name) {
  if (name == "pooled") return Averaging::Pooled;
  if (name == "per_node") return Averaging::PerNode;
  throw InvalidArgument("unknown averaging '" + std::string(name) + "' (expected pooled or per_node)");
}

std::vector<CompareRow> compare_rows(std::span<const RunReport> reports, Averaging average) {
  std::vector<CompareRow> rows;
  for (Method m : {Method::Personalised, Method::Centralised, Method::FL}) {
    const auto it = std::find_if(reports.begin(), reports.end(), [m](const auto& r) { return r.method == m; });
    if (it == reports.end()) throw InvalidArgument("comparison is missing method " + std::string(to_string(m)));
    for (Group g : {Group::Normal, Group::Edge, Group::All}) {
      const GroupResult& gr = it->groups.at(std::string(to_string(g)));
      CompareRow row{m, g};
      row.training_devices = m == Method::Personalised ? gr.nodes : it->training_devices;
      row.test_devices = gr.nodes;
      row.models = m == Method::Personalised ? gr.nodes : it->model_count;
      const auto& all = it->groups.at("all");
      row.train_samples = m == Method::Personalised ? gr.train_samples : all.train_samples;
      row.test_samples = gr.test_samples;
      const bool pooled = average == Averaging::Pooled;
      row.accuracy = pooled ? gr.metrics.accuracy : gr.mean_node_accuracy;
      row.f1 = pooled ? gr.metrics.f1 : gr.mean_node_f1;
      rows.push_back(row);
    }
  }
  return rows;
}

std::string compare_table(std::span<const CompareRow> rows) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof(line), "%-13s %-7s %9s %9s %7s %10s %9s %10s %7s\n", "method", "group", "train_dev",
                "test_dev", "models", "train_n", "test_n", "accuracy%", "f1");
  out << line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof(line), "%-13s %-7s %9llu %9llu %7llu %10llu %9llu %10.2f %7.3f\n",
                  std::string(to_string(r.method)).c_str(), std::string(to_string(r.group)).c_str(),
                  static_cast<unsigned long long>(r.training_devices), static_cast<unsigned long long>(r.test_devices),
                  static_cast<unsigned long long>(r.models), static_cast<unsigned long long>(r.train_samples),
                  static_cast<unsigned long long>(r.test_samples), 100.0 * r.accuracy, r.f1);
    out << line;
  }
  return out.str();
}

bool ordering_holds(const RunReport& personalised, const RunReport& centralised, const RunReport& fl) {
  const double p = personalised.groups.at("all").metrics.accuracy;
  const double c = centralised.groups.at("all").metrics.accuracy;
  const double f = fl.groups.at("all").metrics.accuracy;
  return p >= c && c >= f;
}

std::string compare_to_json(std::span<const RunReport> reports, Averaging average) {
  json rows = json::array();
  for (const auto& r : compare_rows(reports, average)) {
    rows.push_back(json{{"method", std::string(to_string(r.method))},
                        {"group", std::string(to_string(r.group))},
                        {"training_devices", r.training_devices},
                        {"test_devices", r.test_devices},
                        {"models", r.models},
                        {"train_samples", r.train_samples},
                        {"test_samples", r.test_samples},
                        {"accuracy", r.accuracy},
                        {"f1", r.f1}});
  }
  const auto find = [&](Method m) -> const RunReport& {
    return *std::find_if(reports.begin(), reports.end(), [m](const auto& r) { return r.method == m; });
  };
  const RunReport& fl = find(Method::FL);
  json j{{"rows", rows},
         {"average", std::string(to_string(average))},
         {"ordering_personalised_ge_centralised_ge_fl",
          ordering_holds(find(Method::Personalised), find(Method::Centralised), fl)},
         {"comm",
          {{"fl_bytes", fl.comm.fl_bytes},
           {"centralised_bytes", fl.comm.centralised_bytes},
           {"ratio", fl.comm.ratio}}}};
  return canonical(j);
}

}  // namespace flsl
