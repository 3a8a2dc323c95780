#include "graphnav/config.hpp"

#include <fstream>
#include <json.hpp>
#include <set>

#include "graphnav/errors.hpp"
#include "graphnav/hash.hpp"
#include "graphnav/version.hpp"

namespace graphnav::config {

using json = nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::string& section,
                    const std::set<std::string>& known) {
  if (!j.is_object()) throw ConfigError("config section '" + section + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (!known.count(key))
      throw ConfigError("unknown key '" + key + "' in config section '" + section + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

json env_to_json(const EnvSection& e) {
  const auto& d = e.dataset;
  return json{{"n_train_graphs", e.n_train_graphs},
              {"n_unseen_graphs", e.n_unseen_graphs},
              {"n_viewpoints", e.n_viewpoints},
              {"target_degree", e.target_degree},
              {"world_seed", e.world_seed},
              {"episode_seed", d.episode_seed},
              {"instruction_seed", d.instruction_seed},
              {"feature_seed", d.feature_seed},
              {"episodes_per_graph", d.episodes_per_graph},
              {"val_seen_per_graph", d.val_seen_per_graph},
              {"unseen_episodes_per_graph", d.unseen_episodes_per_graph},
              {"min_path_edges", d.min_path_edges},
              {"max_path_edges", d.max_path_edges},
              {"step_budget", d.step_budget},
              {"reward_bonus", d.reward.bonus},
              {"success_threshold", d.reward.success_threshold},
              {"d_raw", d.features.d_raw},
              {"n_landmarks", d.features.n_landmarks},
              {"landmark_gain", d.features.landmark_gain},
              {"self_gain", d.features.self_gain},
              {"heading_gain", d.features.heading_gain},
              {"noise_gain", d.features.noise_gain},
              {"filler_prob", d.instruction.filler_prob}};
}

void env_from_json(const json& j, EnvSection& e) {
  reject_unknown(j, "env",
                 {"n_train_graphs", "n_unseen_graphs", "n_viewpoints", "target_degree",
                  "world_seed", "episode_seed", "instruction_seed", "feature_seed",
                  "episodes_per_graph", "val_seen_per_graph", "unseen_episodes_per_graph",
                  "min_path_edges", "max_path_edges", "step_budget", "reward_bonus",
                  "success_threshold", "d_raw", "n_landmarks", "landmark_gain", "self_gain",
                  "heading_gain", "noise_gain", "filler_prob"});
  read(j, "n_train_graphs", e.n_train_graphs);
  read(j, "n_unseen_graphs", e.n_unseen_graphs);
  read(j, "n_viewpoints", e.n_viewpoints);
  read(j, "target_degree", e.target_degree);
  read(j, "world_seed", e.world_seed);
  auto& d = e.dataset;
  read(j, "episode_seed", d.episode_seed);
  read(j, "instruction_seed", d.instruction_seed);
  read(j, "feature_seed", d.feature_seed);
  read(j, "episodes_per_graph", d.episodes_per_graph);
  read(j, "val_seen_per_graph", d.val_seen_per_graph);
  read(j, "unseen_episodes_per_graph", d.unseen_episodes_per_graph);
  read(j, "min_path_edges", d.min_path_edges);
  read(j, "max_path_edges", d.max_path_edges);
  read(j, "step_budget", d.step_budget);
  read(j, "reward_bonus", d.reward.bonus);
  read(j, "success_threshold", d.reward.success_threshold);
  read(j, "d_raw", d.features.d_raw);
  read(j, "n_landmarks", d.features.n_landmarks);
  read(j, "landmark_gain", d.features.landmark_gain);
  read(j, "self_gain", d.features.self_gain);
  read(j, "heading_gain", d.features.heading_gain);
  read(j, "noise_gain", d.features.noise_gain);
  read(j, "filler_prob", d.instruction.filler_prob);
}

}  // namespace

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingInputError("cannot open config file: " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return from_json_text(text);
}

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError("config is not valid JSON: " + std::string(e.what()));
  }
  reject_unknown(j, "<root>", {"format_version", "env", "embed", "decoder", "pretrain",
                               "finetune", "ablate", "paths"});
  if (j.contains("format_version") && j.at("format_version").get<int>() != kFileFormatVersion)
    throw ConfigError("config format_version is not supported");

  ExperimentConfig cfg;
  if (j.contains("env")) env_from_json(j.at("env"), cfg.env);
  if (j.contains("embed")) {
    const auto& e = j.at("embed");
    reject_unknown(e, "embed", {"d_enc", "encoder_seed"});
    read(e, "d_enc", cfg.embed.d_enc);
    read(e, "encoder_seed", cfg.embed.encoder_seed);
  }
  if (j.contains("decoder")) {
    const auto& d = j.at("decoder");
    reject_unknown(d, "decoder",
                   {"n_blocks", "n_heads", "d_model", "max_timesteps", "context_timesteps",
                    "dropout", "init_seed"});
    read(d, "n_blocks", cfg.decoder.n_blocks);
    read(d, "n_heads", cfg.decoder.n_heads);
    read(d, "d_model", cfg.decoder.d_model);
    read(d, "max_timesteps", cfg.decoder.max_timesteps);
    read(d, "context_timesteps", cfg.decoder.context_timesteps);
    read(d, "dropout", cfg.decoder.dropout);
    read(d, "init_seed", cfg.decoder_init_seed);
  }
  if (j.contains("pretrain")) {
    const auto& p = j.at("pretrain");
    reject_unknown(p, "pretrain",
                   {"iterations", "batch_size", "learning_rate", "eval_every", "seed"});
    read(p, "iterations", cfg.pretrain.iterations);
    read(p, "batch_size", cfg.pretrain.batch_size);
    read(p, "learning_rate", cfg.pretrain.learning_rate);
    read(p, "eval_every", cfg.pretrain.eval_every);
    read(p, "seed", cfg.pretrain.seed);
  }
  if (j.contains("finetune")) {
    const auto& f = j.at("finetune");
    reject_unknown(f, "finetune",
                   {"iterations", "learning_rate", "batch_size", "replay_capacity",
                    "rollouts_per_iteration", "target_entropy", "entropy_lr", "lambda_init",
                    "target_return_scale", "temperature", "eval_every", "seed"});
    read(f, "iterations", cfg.finetune.iterations);
    read(f, "learning_rate", cfg.finetune.learning_rate);
    read(f, "batch_size", cfg.finetune.batch_size);
    read(f, "replay_capacity", cfg.finetune.replay_capacity);
    read(f, "rollouts_per_iteration", cfg.finetune.rollouts_per_iteration);
    read(f, "target_entropy", cfg.finetune.target_entropy);
    read(f, "entropy_lr", cfg.finetune.entropy_lr);
    read(f, "lambda_init", cfg.finetune.lambda_init);
    read(f, "target_return_scale", cfg.finetune.target_return_scale);
    read(f, "temperature", cfg.finetune.temperature);
    read(f, "eval_every", cfg.finetune.eval_every);
    read(f, "seed", cfg.finetune.seed);
  }
  if (j.contains("ablate")) {
    const auto& a = j.at("ablate");
    reject_unknown(a, "ablate", {"n_seeds", "block_sweep"});
    read(a, "n_seeds", cfg.ablate.n_seeds);
    read(a, "block_sweep", cfg.ablate.block_sweep);
  }
  if (j.contains("paths")) {
    const auto& p = j.at("paths");
    reject_unknown(p, "paths", {"out_dir"});
    read(p, "out_dir", cfg.paths.out_dir);
  }
  cfg.decoder.d_enc = cfg.embed.d_enc;
  cfg.validate();
  return cfg;
}

std::string ExperimentConfig::to_json_text() const {
  json j;
  j["format_version"] = kFileFormatVersion;
  j["env"] = env_to_json(env);
  j["embed"] = json{{"d_enc", embed.d_enc}, {"encoder_seed", embed.encoder_seed}};
  j["decoder"] = json{{"n_blocks", decoder.n_blocks},
                      {"n_heads", decoder.n_heads},
                      {"d_model", decoder.d_model},
                      {"max_timesteps", decoder.max_timesteps},
                      {"context_timesteps", decoder.context_timesteps},
                      {"dropout", decoder.dropout},
                      {"init_seed", decoder_init_seed}};
  j["pretrain"] = json{{"iterations", pretrain.iterations},
                       {"batch_size", pretrain.batch_size},
                       {"learning_rate", pretrain.learning_rate},
                       {"eval_every", pretrain.eval_every},
                       {"seed", pretrain.seed}};
  j["finetune"] = json{{"iterations", finetune.iterations},
                       {"learning_rate", finetune.learning_rate},
                       {"batch_size", finetune.batch_size},
                       {"replay_capacity", finetune.replay_capacity},
                       {"rollouts_per_iteration", finetune.rollouts_per_iteration},
                       {"target_entropy", finetune.target_entropy},
                       {"entropy_lr", finetune.entropy_lr},
                       {"lambda_init", finetune.lambda_init},
                       {"target_return_scale", finetune.target_return_scale},
                       {"temperature", finetune.temperature},
                       {"eval_every", finetune.eval_every},
                       {"seed", finetune.seed}};
  j["ablate"] = json{{"n_seeds", ablate.n_seeds}, {"block_sweep", ablate.block_sweep}};
  j["paths"] = json{{"out_dir", paths.out_dir}};
  return j.dump(2);
}

uint64_t ExperimentConfig::semantic_hash() const {
  json j = json::parse(to_json_text());
  j.erase("paths");
  return fnv1a(j.dump());
}

uint64_t ExperimentConfig::model_hash() const {
  json j = json::parse(to_json_text());
  json m;
  m["env"] = j.at("env");
  m["embed"] = j.at("embed");
  m["decoder"] = j.at("decoder");
  return fnv1a(m.dump());
}

uint64_t ExperimentConfig::env_hash() const {
  return fnv1a(env_to_json(env).dump());
}

void ExperimentConfig::validate() const {
  if (env.n_train_graphs < 1 || env.n_unseen_graphs < 1)
    throw ConfigError("env: need at least one train graph and one unseen graph");
  if (env.n_viewpoints < 2) throw ConfigError("env: n_viewpoints must be >= 2");
  if (env.target_degree < 1.0) throw ConfigError("env: target_degree must be >= 1");
  const auto& d = env.dataset;
  if (d.episodes_per_graph < 1 || d.val_seen_per_graph < 1 ||
      d.unseen_episodes_per_graph < 1)
    throw ConfigError("env: episode counts must be positive");
  if (d.min_path_edges < 1 || d.max_path_edges < d.min_path_edges)
    throw ConfigError("env: bad expert path-length window");
  if (d.max_path_edges + 1 > d.step_budget)
    throw ConfigError("env: step budget too small for the longest expert path");
  if (d.reward.success_threshold <= 0) throw ConfigError("env: success_threshold must be > 0");
  if (d.features.d_raw < 1 || d.features.n_landmarks < 2)
    throw ConfigError("env: d_raw must be >= 1 and n_landmarks >= 2");
  if (d.instruction.filler_prob < 0 || d.instruction.filler_prob >= 1)
    throw ConfigError("env: filler_prob must be in [0, 1)");
  if (embed.d_enc < 1) throw ConfigError("embed: d_enc must be >= 1");
  decoder.validate();
  if (d.step_budget > decoder.max_timesteps)
    throw ConfigError("decoder: max_timesteps must cover the env step budget");
  pretrain.validate();
  finetune.validate();
  if (ablate.n_seeds < 1) throw ConfigError("ablate: n_seeds must be >= 1");
  if (ablate.block_sweep.empty()) throw ConfigError("ablate: block_sweep must be nonempty");
  if (paths.out_dir.empty()) throw ConfigError("paths: out_dir must be nonempty");
}

}  // namespace graphnav::config
