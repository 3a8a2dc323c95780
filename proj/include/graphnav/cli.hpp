#pragma once

#include <optional>
#include <string>

#include "graphnav/config.hpp"

// Experiment orchestration: world/dataset generation, pre-training,
// fine-tuning, evaluation, and the ablation sweeps, all driven by one
// config file. Commands return process exit codes.

namespace graphnav::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;         // unexpected failure
inline constexpr int kExitConfig = 2;        // config error / hash mismatch
inline constexpr int kExitMissingInput = 3;  // absent or incompatible artifact
inline constexpr int kExitNumerical = 4;     // NaN/Inf tripwire
inline constexpr int kExitExists = 5;        // output exists, no --force

int cmd_gen(const config::ExperimentConfig& cfg, bool force);
int cmd_pretrain(const config::ExperimentConfig& cfg, bool force,
                 const std::string& resume_checkpoint);
int cmd_finetune(const config::ExperimentConfig& cfg, bool force,
                 const std::string& init_checkpoint);
int cmd_eval(const config::ExperimentConfig& cfg, bool force, const std::string& checkpoint,
             bool expert_replay);
int cmd_ablate(const config::ExperimentConfig& cfg, bool force, const std::string& sweep);

// Parses argv, loads the config, applies --seed/--out overrides, dispatches,
// and maps exceptions onto the exit codes above.
int run_cli(int argc, const char* const* argv);

}  // namespace graphnav::cli
