#include "flsl/cli.hpp"

#include <fstream>
#include <iostream>
#include <new>
#include <sstream>

#include "CLI11.hpp"
#include "flsl/error.hpp"

namespace flsl {

namespace {

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

PreparedData prepare(const ExperimentConfig& cfg, std::ostream& log) {
  const auto profiles = build_fleet(cfg);
  log << "fleet: " << profiles.size() << " nodes, " << cfg.fleet.samples_per_node << " frames each\n";
  return prepare_data(profiles, resolved_split(cfg), cfg.preprocess, cfg.threads);
}

std::string history_name(Method m) { return "history_" + std::string(to_string(m)) + ".csv"; }

RunReport finish_report(MethodOutcome& outcome, const ExperimentConfig& cfg, Method m) {
  ExperimentConfig echo = cfg;
  echo.method = m;
  outcome.report.config = config_echo(echo);
  outcome.report.seeds = seed_echo(echo);
  outcome.report.history_csv = outcome.history.empty() ? "" : history_name(m);
  return outcome.report;
}

void write_outcome(const MethodOutcome& outcome, const ExperimentConfig& cfg, Method m, bool checkpoints) {
  const auto& dir = cfg.output_dir;
  const std::string name(to_string(m));
  write_report(outcome.report, dir / ("report_" + name + ".json"));
  if (!outcome.history.empty()) write_history_csv(outcome.history, dir / history_name(m));
  if (!checkpoints) return;
  ensure_dir(dir / "checkpoints");
  for (std::size_t k = 0; k < outcome.models.size(); ++k) {
    save_params(outcome.models[k], dir / "checkpoints" / (name + "_" + std::to_string(k) + ".flsl"));
  }
}

void log_summary(const RunReport& r, std::ostream& log) {
  char line[160];
  for (const char* g : {"normal", "edge", "all"}) {
    const auto it = r.groups.find(g);
    if (it == r.groups.end()) continue;
    std::snprintf(line, sizeof(line), "%-13s %-7s accuracy %.4f  f1 %.4f  error %.4f\n",
                  std::string(to_string(r.method)).c_str(), g, it->second.metrics.accuracy, it->second.metrics.f1,
                  it->second.metrics.error_rate);
    log << line;
  }
  if (r.comm.fl_bytes > 0) {
    std::snprintf(line, sizeof(line), "traffic: fl %llu bytes, centralised estimate %llu bytes, ratio %.6f\n",
                  static_cast<unsigned long long>(r.comm.fl_bytes),
                  static_cast<unsigned long long>(r.comm.centralised_bytes), r.comm.ratio);
    log << line;
  }
}

}  // namespace

void synth_command(const ExperimentConfig& cfg, std::ostream& log) {
  const auto profiles = build_fleet(cfg);
  ensure_dir(cfg.output_dir);
  save_node_types_csv(profiles, cfg.output_dir / "node_types.csv");
  const Dataset data = generate_dataset(profiles, cfg.threads);
  const auto split = resolved_split(cfg);

  std::ostringstream index;
  index << "node_id,draw_index,timestamp_minute,label,split,file\n";
  for (const auto& [node, samples] : data) {
    const auto node_dir = cfg.output_dir / "frames" / ("node_" + std::to_string(node));
    ensure_dir(node_dir);
    auto [train, test] = split_train_test(samples, split);
    std::vector<std::uint8_t> is_test(samples.size(), 0);
    for (const auto& s : test) is_test[static_cast<std::size_t>(s.draw_index)] = 1;
    for (const auto& s : samples) {
      const std::string file = "frame_" + std::to_string(s.draw_index) + ".ppm";
      save_ppm(s.image(), node_dir / file);
      index << node << ',' << s.draw_index << ',' << s.timestamp_minute << ',' << to_string(s.label) << ','
            << (is_test[static_cast<std::size_t>(s.draw_index)] ? "test" : "train") << ",frames/node_" << node
            << '/' << file << '\n';
    }
  }
  write_file(cfg.output_dir / "samples.csv", index.str());
  log << "wrote " << profiles.size() << " nodes to " << cfg.output_dir.string() << "\n";
}

RunReport run_command(const ExperimentConfig& cfg, std::ostream& log) {
  ensure_dir(cfg.output_dir);
  const PreparedData data = prepare(cfg, log);
  MethodOutcome outcome = run_method(cfg.method, data, resolved_settings(cfg));
  const RunReport report = finish_report(outcome, cfg, cfg.method);
  write_outcome(outcome, cfg, cfg.method, true);
  log_summary(report, log);
  return report;
}

RunReport eval_command(const ExperimentConfig& cfg, const std::filesystem::path& checkpoint,
                       const std::string& split, std::ostream& log) {
  if (split != "test" && split != "train") throw ConfigError("--split", "expected test or train, got '" + split + "'");
  if (!std::filesystem::exists(checkpoint)) throw IoError("checkpoint not found: " + checkpoint.string());
  const ModelParams model = load_params(checkpoint);
  PreparedData data = prepare(cfg, log);
  if (static_cast<std::size_t>(model.input_dim()) != data.feature_length) {
    throw InvalidArgument("checkpoint " + checkpoint.string() + " expects " + std::to_string(model.input_dim()) +
                          " features but the pipeline produces " + std::to_string(data.feature_length));
  }
  if (split == "train") {
    for (auto& node : data.nodes) std::swap(node.train, node.test);
  }
  RunReport report;
  report.method = cfg.method;
  report.model_count = 1;
  report.groups = evaluate_groups(
      data, [&](std::size_t) -> const ModelParams& { return model; }, cfg.settings.positive_class, cfg.threads);
  report.config = config_echo(cfg);
  report.config["eval.split"] = split;
  report.seeds = seed_echo(cfg);
  ensure_dir(cfg.output_dir);
  write_report(report, cfg.output_dir / "eval.json");
  log_summary(report, log);
  return report;
}

std::vector<RunReport> compare_command(const ExperimentConfig& cfg, std::ostream& log) {
  ensure_dir(cfg.output_dir);
  const PreparedData data = prepare(cfg, log);
  const ExperimentSettings settings = resolved_settings(cfg);
  std::vector<RunReport> reports;
  for (Method m : {Method::Personalised, Method::Centralised, Method::FL}) {
    MethodOutcome outcome = run_method(m, data, settings);
    reports.push_back(finish_report(outcome, cfg, m));
    write_outcome(outcome, cfg, m, false);
    log_summary(reports.back(), log);
  }
  const auto rows = compare_rows(reports, cfg.average);
  const std::string table = compare_table(rows);
  write_file(cfg.output_dir / "compare.txt", table);
  write_file(cfg.output_dir / "compare.json", compare_to_json(reports, cfg.average));
  log << table;
  log << "ordering personalised >= centralised >= fl: "
      << (ordering_holds(reports[0], reports[1], reports[2]) ? "yes" : "no") << "\n";
  return reports;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return kExitConfig;
  if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const FormatError*>(&e)) return kExitIo;
  if (dynamic_cast<const std::filesystem::filesystem_error*>(&e)) return kExitIo;
  return kExitRuntime;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Street-lamp state classification: personalised, centralised and federated training"};
  app.require_subcommand(1);

  std::optional<std::string> config_path;
  std::optional<std::string> method;
  std::optional<std::uint64_t> seed;
  std::optional<int> rounds;
  std::optional<std::string> out_dir;
  std::optional<int> threads;
  std::vector<std::string> sets;
  std::string checkpoint;
  std::string split = "test";
  bool list_keys = false;

  const auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "section.key = value file");
    sub->add_option("--method", method, "personalised|centralised|fl|clustered|partial");
    sub->add_option("--seed", seed, "base seed");
    sub->add_option("--rounds", rounds, "FL rounds");
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--threads", threads, "worker threads");
    sub->add_option("--set", sets, "override one key, e.g. --set fl.client_fraction=0.5");
  };
  CLI::App* synth = app.add_subcommand("synth", "write the fleet CSV and its frames");
  CLI::App* run = app.add_subcommand("run", "train and evaluate one method");
  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  CLI::App* compare = app.add_subcommand("compare", "personalised vs centralised vs fl");
  CLI::App* keys = app.add_subcommand("keys", "list configuration keys and defaults");
  for (CLI::App* sub : {synth, run, eval, compare}) common(sub);
  eval->add_option("--checkpoint", checkpoint, "FLSL checkpoint")->required();
  eval->add_option("--split", split, "test or train");
  keys->callback([&] { list_keys = true; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }

  if (list_keys) {
    for (const auto& k : config_keys()) out << k.key << " = " << k.default_value << "    # " << k.description << "\n";
    return kExitOk;
  }

  try {
    ConfigEntries overrides;
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError(s, "--set expects key=value");
      overrides.emplace_back(s.substr(0, eq), s.substr(eq + 1));
    }
    if (method) overrides.emplace_back("experiment.method", *method);
    if (seed) overrides.emplace_back("experiment.seed", std::to_string(*seed));
    if (rounds) overrides.emplace_back("fl.rounds", std::to_string(*rounds));
    if (out_dir) overrides.emplace_back("output.dir", *out_dir);
    if (threads) overrides.emplace_back("experiment.threads", std::to_string(*threads));
    std::optional<std::filesystem::path> path;
    if (config_path) path = *config_path;
    const ExperimentConfig cfg = load_config(path, overrides);

    if (*synth) {
      synth_command(cfg, out);
    } else if (*run) {
      run_command(cfg, out);
    } else if (*eval) {
      eval_command(cfg, checkpoint, split, out);
    } else if (*compare) {
      compare_command(cfg, out);
    }
    return kExitOk;
  } catch (const std::bad_alloc&) {
    err << "error: out of memory\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
}

}  // namespace flsl
