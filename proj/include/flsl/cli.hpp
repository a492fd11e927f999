#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "flsl/config.hpp"

namespace flsl {

enum ExitCode : int { kExitOk = 0, kExitConfig = 1, kExitRuntime = 2, kExitIo = 3 };

// Writes <out>/node_types.csv, one PPM per frame and <out>/samples.csv.
void synth_command(const ExperimentConfig& cfg, std::ostream& log);

// Runs cfg.method; writes report_<method>.json, history_<method>.csv and
// checkpoints/<method>_<k>.flsl under the output directory.
RunReport run_command(const ExperimentConfig& cfg, std::ostream& log);

// Evaluates one checkpoint on every node's train or test split and writes
// eval.json.
RunReport eval_command(const ExperimentConfig& cfg, const std::filesystem::path& checkpoint,
                       const std::string& split, std::ostream& log);

// Personalised, centralised and FL on one prepared fleet; writes each
// report plus compare.json and compare.txt.
std::vector<RunReport> compare_command(const ExperimentConfig& cfg, std::ostream& log);

// Maps a thrown exception to an exit code.
int exit_code_for(const std::exception& e);

// Command-line entry point: `flsl <synth|run|eval|compare> [flags]`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace flsl
