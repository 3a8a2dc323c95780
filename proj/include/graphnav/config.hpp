#pragma once

#include <string>
#include <vector>

#include "graphnav/decoder.hpp"
#include "graphnav/env.hpp"
#include "graphnav/train.hpp"

// One config file drives every stage. Parsing is strict: unknown keys are
// rejected, every section is optional but every present key must be known.
// Two hashes derive from the canonical form: the semantic hash (everything
// but paths) stamps logs and datasets; the model hash (env + embed +
// decoder) guards checkpoint compatibility.

namespace graphnav::config {

struct EnvSection {
  int n_train_graphs = 8;
  int n_unseen_graphs = 2;
  int n_viewpoints = 50;
  double target_degree = 3.0;
  uint64_t world_seed = 1;
  env::DatasetParams dataset;
};

struct EmbedSection {
  int d_enc = 64;
  uint64_t encoder_seed = 5;
};

struct AblateSection {
  int n_seeds = 1;
  std::vector<int> block_sweep = {3, 5, 9, 12};
};

struct PathsSection {
  std::string out_dir = "runs/default";

  std::string world_file() const { return out_dir + "/world.json"; }
  std::string dataset_file() const { return out_dir + "/dataset.jsonl"; }
  std::string checkpoint_dir() const { return out_dir + "/checkpoints"; }
  std::string report_dir() const { return out_dir + "/reports"; }
  std::string log_dir() const { return out_dir + "/logs"; }
};

struct ExperimentConfig {
  EnvSection env;
  EmbedSection embed;
  decoder::DecoderConfig decoder;
  uint64_t decoder_init_seed = 6;
  train::PretrainConfig pretrain;
  train::FinetuneConfig finetune;
  AblateSection ablate;
  PathsSection paths;

  static ExperimentConfig from_file(const std::string& path);
  static ExperimentConfig from_json_text(const std::string& text);

  // Canonical serialization (sorted keys, all fields explicit).
  std::string to_json_text() const;

  uint64_t semantic_hash() const;
  uint64_t model_hash() const;
  // Hash of the env section alone; stamps world/dataset files.
  uint64_t env_hash() const;
  void validate() const;
};

}  // namespace graphnav::config
