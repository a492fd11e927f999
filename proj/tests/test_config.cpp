#include <sstream>

#include "doctest.h"
#include "flsl/cli.hpp"
#include "flsl/config.hpp"
#include "flsl/error.hpp"
#include "flsl/rng.hpp"
#include "support.hpp"

using namespace flsl;

namespace {

std::string key_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    return e.key();
  }
  return "<no error>";
}

const char* kTinyFleet =
    "fleet.type0_nodes = 2\n"
    "fleet.type1_nodes = 1\n"
    "fleet.type2_nodes = 1\n"
    "fleet.samples_per_node = 10\n"
    "model.hidden = 4\n"
    "fl.rounds = 2\n"
    "centralised.epochs = 2\n"
    "personalised.epochs = 2\n";

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult cli(std::vector<std::string> args) {
  args.insert(args.begin(), "flsl");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out;
  std::ostringstream err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

}  // namespace

TEST_CASE("empty file gives the defaults") {
  TempDir dir("cfg_empty");
  write_bytes(dir / "empty.cfg", "");
  const ExperimentConfig c = load_config(dir / "empty.cfg");
  const ExperimentConfig d;
  CHECK(config_echo(c) == config_echo(d));
  CHECK(c.fleet.type0_nodes == 80);
  CHECK(c.fleet.type1_nodes == 53);
  CHECK(c.fleet.type2_nodes == 7);
  CHECK(c.test_fraction == 0.2);
  CHECK(c.settings.positive_class == LampState::On);
  CHECK(c.average == Averaging::Pooled);
  CHECK(config_echo(load_config(std::nullopt)) == config_echo(d));
}

TEST_CASE("parsing") {
  const auto e = parse_config_text("# comment\n; other\n\n  fl.rounds = 7  \ntrain.learning_rate=0.01\n");
  REQUIRE(e.size() == 2);
  CHECK(e[0] == std::pair<std::string, std::string>{"fl.rounds", "7"});
  CHECK(e[1].second == "0.01");
  CHECK_THROWS_AS(parse_config_text("no equals sign\n"), ConfigError);
  CHECK_THROWS_AS(read_config_file("/nonexistent/flsl.cfg"), IoError);

  ExperimentConfig c;
  apply_entries(c, e);
  CHECK(c.settings.fl.rounds == 7);
  CHECK(c.settings.fl.train.learning_rate == 0.01);
  apply_entries(c, {{"fl.rounds", "3"}, {"fl.rounds", "4"}});
  CHECK(c.settings.fl.rounds == 4);
  apply_entries(c, {{"fl.shared_layers", "1,0"}, {"metrics.positive_class", "off"}, {"model.residual", "true"}});
  CHECK(c.settings.fl.shared_layer_mask == std::vector<bool>{true, false});
  CHECK(c.settings.positive_class == LampState::Off);
  CHECK(c.settings.residual);
}

TEST_CASE("errors name the key") {
  TempDir dir("cfg_err");
  write_bytes(dir / "frac.cfg", "fl.client_fraction = 1.5\n");
  CHECK(key_of([&] { load_config(dir / "frac.cfg"); }) == "fl.client_fraction");
  CHECK_THROWS_WITH(load_config(dir / "frac.cfg"), doctest::Contains("fl.client_fraction"));

  write_bytes(dir / "unknown.cfg", "fl.roundz = 5\n");
  CHECK(key_of([&] { load_config(dir / "unknown.cfg"); }) == "fl.roundz");

  write_bytes(dir / "type.cfg", "fl.rounds = many\n");
  CHECK(key_of([&] { load_config(dir / "type.cfg"); }) == "fl.rounds");
  write_bytes(dir / "trail.cfg", "fl.rounds = 5x\n");
  CHECK(key_of([&] { load_config(dir / "trail.cfg"); }) == "fl.rounds");
  write_bytes(dir / "real.cfg", "train.learning_rate = fast\n");
  CHECK(key_of([&] { load_config(dir / "real.cfg"); }) == "train.learning_rate");
  write_bytes(dir / "bool.cfg", "model.residual = maybe\n");
  CHECK(key_of([&] { load_config(dir / "bool.cfg"); }) == "model.residual");
  write_bytes(dir / "method.cfg", "experiment.method = gossip\n");
  CHECK(key_of([&] { load_config(dir / "method.cfg"); }) == "experiment.method");
  write_bytes(dir / "mask.cfg", "fl.shared_layers = 1,1,1\n");
  CHECK(key_of([&] { load_config(dir / "mask.cfg"); }) == "fl.shared_layers");
  write_bytes(dir / "mask3.cfg", "fl.shared_layers = 1,1,1\nmodel.residual = true\n");
  CHECK_NOTHROW(load_config(dir / "mask3.cfg"));

  CHECK(key_of([] { load_config(std::nullopt, {{"train.batch_size", "0"}}); }) == "train.batch_size");
  CHECK(key_of([] { load_config(std::nullopt, {{"fl.rounds", "0"}}); }) == "fl.rounds");
  CHECK(key_of([] { load_config(std::nullopt, {{"split.test_fraction", "1"}}); }) == "split.test_fraction");
  CHECK(key_of([] { load_config(std::nullopt, {{"fl.cluster_count", "0"}}); }) == "fl.cluster_count");
  CHECK_NOTHROW(load_config(std::nullopt, {{"train.learning_rate", "0"}}));
}

TEST_CASE("overrides beat the file") {
  TempDir dir("cfg_override");
  write_bytes(dir / "a.cfg", "fl.rounds = 9\nexperiment.seed = 4\n");
  const ExperimentConfig c = load_config(dir / "a.cfg", {{"fl.rounds", "3"}});
  CHECK(c.settings.fl.rounds == 3);
  CHECK(c.seed == 4);
}

TEST_CASE("seed derivation") {
  ExperimentConfig c;
  c.seed = 42;
  CHECK(c.resolved_fleet_seed() == 42);
  CHECK(c.resolved_split_seed() == mix_seed(42, tag_hash("split")));
  CHECK(c.resolved_init_seed() == mix_seed(42, tag_hash("init")));
  CHECK(c.resolved_shuffle_seed() == mix_seed(42, tag_hash("shuffle")));
  CHECK(c.resolved_sampling_seed() == mix_seed(42, tag_hash("sampling")));
  c.init_seed = 7;
  CHECK(c.resolved_init_seed() == 7);
  const ExperimentSettings s = resolved_settings(c);
  CHECK(s.fl.train.init_seed == 7);
  CHECK(s.fl.sampling_seed == c.resolved_sampling_seed());
  CHECK(resolved_split(c).split_seed == c.resolved_split_seed());

  const auto seeds = seed_echo(c);
  CHECK(seeds.at("init") == 7);
  CHECK(seeds.at("experiment") == 42);

  ExperimentConfig t = c;
  t.threads = 8;
  t.output_dir = "elsewhere";
  CHECK(config_echo(t) == config_echo(c));
  CHECK(config_echo(t).count("experiment.threads") == 0);
}

TEST_CASE("every key is documented and round-trips") {
  const ExperimentConfig d;
  const auto echo = config_echo(d);
  for (const auto& k : config_keys()) {
    CAPTURE(k.key);
    CHECK_FALSE(k.description.empty());
    ExperimentConfig c;
    CHECK_NOTHROW(apply_entries(c, {{k.key, k.default_value}}));
    if (echo.count(k.key)) CHECK(echo.at(k.key) == k.default_value);
  }
}

TEST_CASE("fleet from csv") {
  TempDir dir("cfg_fleet");
  write_bytes(dir / "types.csv", "node_id,node_type\n0,2\n1,0\n5,1\n");
  ExperimentConfig c = load_config(std::nullopt, {{"fleet.node_types_csv", (dir / "types.csv").string()},
                                                  {"fleet.samples_per_node", "12"}});
  const auto fleet = build_fleet(c);
  REQUIRE(fleet.size() == 3);
  CHECK(fleet[0].node_type == NodeType::Type2);
  CHECK(fleet[2].node_id == 5);
  CHECK(fleet[2].samples_per_node == 12);

  c.fleet.type0_nodes = 4;
  c.node_types_csv.clear();
  c.fleet.type1_nodes = 0;
  c.fleet.type2_nodes = 0;
  CHECK(build_fleet(c).size() == 4);
}

TEST_CASE("cli exit codes") {
  TempDir dir("cli");
  write_bytes(dir / "tiny.cfg", kTinyFleet);
  const std::string cfg = (dir / "tiny.cfg").string();
  const std::string out = (dir / "out").string();

  CHECK(cli({}).code == kExitConfig);
  CHECK(cli({"frobnicate"}).code == kExitConfig);
  CHECK(cli({"run", "--seed", "abc"}).code == kExitConfig);
  CHECK(cli({"run", "--config", (dir / "missing.cfg").string()}).code == kExitIo);
  CHECK(cli({"keys"}).code == kExitOk);
  CHECK(cli({"keys"}).out.find("fl.client_fraction") != std::string::npos);

  const CliResult bad = cli({"run", "--config", cfg, "--set", "fl.client_fraction=1.5", "--out", out});
  CHECK(bad.code == kExitConfig);
  CHECK(bad.err.find("fl.client_fraction") != std::string::npos);
  CHECK(cli({"run", "--config", cfg, "--method", "gossip", "--out", out}).code == kExitConfig);

  const CliResult ok = cli({"run", "--config", cfg, "--method", "fl", "--rounds", "1", "--out", out});
  CHECK(ok.code == kExitOk);
  CHECK(std::filesystem::exists(dir / "out" / "report_fl.json"));
  CHECK(std::filesystem::exists(dir / "out" / "history_fl.csv"));
  CHECK(std::filesystem::exists(dir / "out" / "checkpoints" / "fl_0.flsl"));
  // --rounds beats the file's fl.rounds
  CHECK(read_bytes(dir / "out" / "report_fl.json").find("\"fl.rounds\": \"1\"") != std::string::npos);

  const std::string ckpt = (dir / "out" / "checkpoints" / "fl_0.flsl").string();
  CHECK(cli({"eval", "--config", cfg, "--checkpoint", ckpt, "--out", out}).code == kExitOk);
  CHECK(std::filesystem::exists(dir / "out" / "eval.json"));

  const std::string missing = (dir / "nope.flsl").string();
  const CliResult gone = cli({"eval", "--config", cfg, "--checkpoint", missing, "--out", out});
  CHECK(gone.code == kExitIo);
  CHECK(gone.err.find(missing) != std::string::npos);

  write_bytes(dir / "junk.flsl", "JUNKJUNKJUNK");
  CHECK(cli({"eval", "--config", cfg, "--checkpoint", (dir / "junk.flsl").string(), "--out", out}).code == kExitIo);

  const CliResult meta = cli({"eval", "--config", cfg, "--checkpoint", ckpt, "--set", "preprocess.green_metadata=true",
                              "--out", out});
  CHECK(meta.code == kExitRuntime);

  CHECK(cli({"eval", "--config", cfg, "--out", out}).code == kExitConfig);
}

TEST_CASE("exit code mapping") {
  CHECK(exit_code_for(ConfigError("k", "m")) == kExitConfig);
  CHECK(exit_code_for(IoError("m")) == kExitIo);
  CHECK(exit_code_for(FormatError("m")) == kExitIo);
  CHECK(exit_code_for(InvalidArgument("m")) == kExitRuntime);
  CHECK(exit_code_for(std::runtime_error("m")) == kExitRuntime);
}
