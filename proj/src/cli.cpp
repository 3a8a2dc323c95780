#include "graphnav/cli.hpp"

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "graphnav/env_io.hpp"
#include "graphnav/hash.hpp"
#include "graphnav/train.hpp"
#include "graphnav/version.hpp"

namespace graphnav::cli {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr uint64_t kSeenTag = 0x7365656eULL;    // "seen"
constexpr uint64_t kUnseenTag = 0x756e7365ULL;  // "unse"

void require_outputs_free(const std::vector<std::string>& paths, bool force) {
  if (force) return;
  for (const auto& p : paths)
    if (fs::exists(p))
      throw ExistsError("output already exists (pass --force to overwrite): " + p);
}

std::ofstream open_log(const std::string& path) {
  fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open log file: " + path);
  return out;
}

void write_report(const std::string& path, const json& body) {
  fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write report: " + path);
  out << body.dump(2) << "\n";
}

json report_stamp(const config::ExperimentConfig& cfg, uint64_t seed) {
  return json{{"format_version", kFileFormatVersion},
              {"config_hash", hex64(cfg.semantic_hash())},
              {"model_hash", hex64(cfg.model_hash())},
              {"seed", seed},
              {"code_version", kCodeVersion}};
}

env::Dataset load_run_dataset(const config::ExperimentConfig& cfg) {
  uint64_t stamped = 0;
  auto ds = env::load_dataset(cfg.paths.dataset_file(), cfg.paths.world_file(), &stamped);
  if (stamped != cfg.env_hash())
    throw MissingInputError(
        "dataset was generated under a different env config (hash " + hex64(stamped) +
        ", expected " + hex64(cfg.env_hash()) + "); re-run gen");
  return ds;
}

embed::SyntheticEncoders make_encoders(const config::ExperimentConfig& cfg,
                                       const env::Dataset& ds) {
  return embed::SyntheticEncoders(cfg.embed.d_enc, ds.params.features.d_raw,
                                  ds.vocab.size(), cfg.embed.encoder_seed);
}

json metrics_to_json(const metrics::MetricsReport& r) {
  return json{{"n", r.n_episodes}, {"tl", r.tl}, {"ne", r.ne}, {"sr", r.sr}, {"spl", r.spl}};
}

}  // namespace

int cmd_gen(const config::ExperimentConfig& cfg, bool force) {
  const std::string world_path = cfg.paths.world_file();
  const std::string dataset_path = cfg.paths.dataset_file();
  require_outputs_free({world_path, dataset_path}, force);

  std::vector<env::NavGraph> seen, unseen;
  char namebuf[16];
  for (int i = 0; i < cfg.env.n_train_graphs; ++i) {
    auto g = env::generate_world(seed_combine(cfg.env.world_seed, kSeenTag, i),
                                 cfg.env.n_viewpoints, cfg.env.target_degree);
    std::snprintf(namebuf, sizeof(namebuf), "g%03d", i);
    g.id = namebuf;
    seen.push_back(std::move(g));
  }
  for (int i = 0; i < cfg.env.n_unseen_graphs; ++i) {
    auto g = env::generate_world(seed_combine(cfg.env.world_seed, kUnseenTag, i),
                                 cfg.env.n_viewpoints, cfg.env.target_degree);
    std::snprintf(namebuf, sizeof(namebuf), "u%03d", i);
    g.id = namebuf;
    unseen.push_back(std::move(g));
  }
  auto ds = env::make_dataset(seen, unseen, cfg.env.dataset);

  env::WorldFile world;
  world.graphs = ds.graphs;
  world.config_hash = cfg.env_hash();
  for (int i = 0; i < cfg.env.n_train_graphs; ++i) world.roles.push_back("seen");
  for (int i = 0; i < cfg.env.n_unseen_graphs; ++i) world.roles.push_back("unseen");
  env::save_world(world_path, world, force);
  env::save_dataset(dataset_path, ds, cfg.env_hash(), force);

  double len_sum = 0, len_min = 1e300, len_max = 0;
  for (const auto& rec : ds.records) {
    len_sum += rec.spec.expert_length;
    len_min = std::min(len_min, rec.spec.expert_length);
    len_max = std::max(len_max, rec.spec.expert_length);
  }
  std::printf("world: %zu graphs -> %s\n", ds.graphs.size(), world_path.c_str());
  std::printf("dataset: train=%zu val_seen=%zu val_unseen=%zu -> %s\n",
              ds.split("train").size(), ds.split("val_seen").size(),
              ds.split("val_unseen").size(), dataset_path.c_str());
  std::printf("expert length (m): mean=%.2f min=%.2f max=%.2f\n",
              len_sum / static_cast<double>(ds.records.size()), len_min, len_max);
  return kExitOk;
}

int cmd_pretrain(const config::ExperimentConfig& cfg, bool force,
                 const std::string& resume_checkpoint) {
  const std::string best_path = cfg.paths.checkpoint_dir() + "/pretrain_best.ckpt";
  const std::string resume_path = cfg.paths.checkpoint_dir() + "/pretrain_resume.ckpt";
  const std::string log_path = cfg.paths.log_dir() + "/pretrain.jsonl";
  const std::string report_path = cfg.paths.report_dir() + "/pretrain.json";
  // A resumed run owns its earlier outputs; fresh runs must not clobber.
  if (resume_checkpoint.empty())
    require_outputs_free({best_path, resume_path, log_path, report_path}, force);

  auto ds = load_run_dataset(cfg);
  auto enc = make_encoders(cfg, ds);
  decoder::DecoderModel model(cfg.decoder, cfg.decoder_init_seed);

  auto log_file = open_log(log_path);
  train::PretrainOptions opts;
  opts.model_hash = cfg.model_hash();
  opts.semantic_hash = cfg.semantic_hash();
  opts.best_checkpoint_path = best_path;
  opts.resume_checkpoint_path = resume_path;
  opts.resume_from = resume_checkpoint;
  opts.log = [&](const std::string& line) {
    std::puts(line.c_str());
    log_file << line << "\n";
    log_file.flush();
  };

  auto res = train::pretrain(ds, enc, model, cfg.pretrain, opts);

  json curve = json::array();
  for (const auto& pt : res.curve)
    curve.push_back(json{{"iteration", pt.iteration},
                         {"loss", pt.loss},
                         {"sap_acc_seen", pt.acc_seen},
                         {"sap_acc_unseen", pt.acc_unseen}});
  json report = report_stamp(cfg, cfg.pretrain.seed);
  report["stage"] = "pretrain";
  report["curve"] = std::move(curve);
  report["best"] = json{{"iteration", res.best_iteration},
                        {"sap_acc_unseen", res.best_unseen_acc},
                        {"checkpoint", best_path}};
  write_report(report_path, report);
  std::printf("pretrain done: best unseen SAP %.4f at iteration %d\n", res.best_unseen_acc,
              res.best_iteration);
  return kExitOk;
}

int cmd_finetune(const config::ExperimentConfig& cfg, bool force,
                 const std::string& init_checkpoint) {
  const std::string best_path = cfg.paths.checkpoint_dir() + "/finetune_best.ckpt";
  const std::string log_path = cfg.paths.log_dir() + "/finetune.jsonl";
  const std::string report_path = cfg.paths.report_dir() + "/finetune.json";
  require_outputs_free({best_path, log_path, report_path}, force);

  auto ds = load_run_dataset(cfg);
  auto enc = make_encoders(cfg, ds);
  decoder::DecoderModel model(cfg.decoder, cfg.decoder_init_seed);
  // Without a starting checkpoint this is the FT-only ablation arm.
  const std::string arm = init_checkpoint.empty() ? "FT-only" : "PT+FT";
  if (!init_checkpoint.empty())
    tensor::load_checkpoint(init_checkpoint, model.params(), cfg.model_hash());

  auto log_file = open_log(log_path);
  train::FinetuneOptions opts;
  opts.model_hash = cfg.model_hash();
  opts.best_checkpoint_path = best_path;
  opts.log = [&](const std::string& line) {
    std::puts(line.c_str());
    log_file << line << "\n";
    log_file.flush();
  };

  auto res = train::finetune(ds, enc, model, cfg.finetune, opts);

  json curve = json::array();
  for (const auto& pt : res.curve)
    curve.push_back(json{{"iteration", pt.iteration},
                         {"loss", pt.loss},
                         {"entropy", pt.entropy},
                         {"lambda", pt.lambda},
                         {"sr_seen", pt.sr_seen},
                         {"spl_seen", pt.spl_seen},
                         {"sr_unseen", pt.sr_unseen},
                         {"spl_unseen", pt.spl_unseen}});
  json report = report_stamp(cfg, cfg.finetune.seed);
  report["stage"] = "finetune";
  report["arm"] = arm;
  report["curve"] = std::move(curve);
  report["best"] = json{{"iteration", res.best_iteration},
                        {"sr_unseen", res.best_unseen_sr},
                        {"checkpoint", best_path}};
  write_report(report_path, report);
  std::printf("finetune (%s) done: best unseen SR %.2f at iteration %d\n", arm.c_str(),
              res.best_unseen_sr, res.best_iteration);
  return kExitOk;
}

int cmd_eval(const config::ExperimentConfig& cfg, bool force, const std::string& checkpoint,
             bool expert_replay) {
  const std::string report_path = cfg.paths.report_dir() + "/eval.json";
  require_outputs_free({report_path}, force);
  auto ds = load_run_dataset(cfg);

  metrics::MetricsReport seen, unseen;
  std::string mode;
  if (expert_replay) {
    mode = "expert_replay";
    seen = train::evaluate_expert_replay(ds, "val_seen");
    unseen = train::evaluate_expert_replay(ds, "val_unseen");
  } else {
    if (checkpoint.empty())
      throw MissingInputError("eval needs --checkpoint (or --expert-replay)");
    mode = "checkpoint";
    auto enc = make_encoders(cfg, ds);
    decoder::DecoderModel model(cfg.decoder, cfg.decoder_init_seed);
    tensor::load_checkpoint(checkpoint, model.params(), cfg.model_hash());
    seen = train::evaluate(model, enc, ds, "val_seen", cfg.finetune.target_return_scale);
    unseen = train::evaluate(model, enc, ds, "val_unseen", cfg.finetune.target_return_scale);
  }

  std::fputs(
      metrics::format_table({{"val_seen", seen}, {"val_unseen", unseen}}).c_str(), stdout);
  json report = report_stamp(cfg, cfg.pretrain.seed);
  report["stage"] = "eval";
  report["mode"] = mode;
  report["checkpoint"] = checkpoint;
  report["splits"] =
      json{{"val_seen", metrics_to_json(seen)}, {"val_unseen", metrics_to_json(unseen)}};
  write_report(report_path, report);
  return kExitOk;
}

int cmd_ablate(const config::ExperimentConfig& cfg, bool force, const std::string& sweep) {
  if (sweep != "seq_len" && sweep != "n_blocks")
    throw ConfigError("unknown sweep '" + sweep + "' (expected seq_len or n_blocks)");
  const std::string report_path = cfg.paths.report_dir() + "/ablate_" + sweep + ".json";
  const std::string log_path = cfg.paths.log_dir() + "/ablate_" + sweep + ".jsonl";
  require_outputs_free({report_path, log_path}, force);

  auto ds = load_run_dataset(cfg);
  auto enc = make_encoders(cfg, ds);
  auto log_file = open_log(log_path);

  struct Arm {
    std::string name;
    config::ExperimentConfig cfg;
  };
  std::vector<Arm> arms;
  if (sweep == "seq_len") {
    auto full = cfg;
    full.decoder.context_timesteps = 0;
    auto one = cfg;
    one.decoder.context_timesteps = 1;
    arms.push_back({"K_full", full});
    arms.push_back({"K_1", one});
  } else {
    for (int blocks : cfg.ablate.block_sweep) {
      auto arm = cfg;
      arm.decoder.n_blocks = blocks;
      arms.push_back({"L" + std::to_string(blocks), arm});
    }
  }

  json rows = json::array();
  std::vector<std::pair<std::string, metrics::MetricsReport>> table;
  for (const auto& arm : arms) {
    double sr_seen = 0, spl_seen = 0, sr_unseen = 0, spl_unseen = 0;
    for (int s = 0; s < cfg.ablate.n_seeds; ++s) {
      auto run_cfg = arm.cfg;
      run_cfg.pretrain.seed = seed_combine(cfg.pretrain.seed, fnv1a(arm.name), s);
      decoder::DecoderModel model(run_cfg.decoder,
                                  seed_combine(cfg.decoder_init_seed, fnv1a(arm.name), s));
      train::PretrainOptions opts;
      opts.log = [&](const std::string& line) {
        log_file << "{\"arm\":\"" << arm.name << "\",\"seed_index\":" << s
                 << ",\"inner\":" << line << "}\n";
        log_file.flush();
      };
      auto res = train::pretrain(ds, enc, model, run_cfg.pretrain, opts);
      res.restore_best(model);
      auto seen = train::evaluate(model, enc, ds, "val_seen",
                                  run_cfg.finetune.target_return_scale);
      auto unseen = train::evaluate(model, enc, ds, "val_unseen",
                                    run_cfg.finetune.target_return_scale);
      sr_seen += seen.sr;
      spl_seen += seen.spl;
      sr_unseen += unseen.sr;
      spl_unseen += unseen.spl;
    }
    const double n = cfg.ablate.n_seeds;
    rows.push_back(json{{"arm", arm.name},
                        {"n_seeds", cfg.ablate.n_seeds},
                        {"sr_seen", sr_seen / n},
                        {"spl_seen", spl_seen / n},
                        {"sr_unseen", sr_unseen / n},
                        {"spl_unseen", spl_unseen / n}});
    std::printf("%-8s seen SR %.2f SPL %.2f | unseen SR %.2f SPL %.2f (over %d seed%s)\n",
                arm.name.c_str(), sr_seen / n, spl_seen / n, sr_unseen / n, spl_unseen / n,
                cfg.ablate.n_seeds, cfg.ablate.n_seeds == 1 ? "" : "s");
  }

  json report = report_stamp(cfg, cfg.pretrain.seed);
  report["stage"] = "ablate";
  report["sweep"] = sweep;
  report["rows"] = std::move(rows);
  write_report(report_path, report);
  return kExitOk;
}

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"graph-world navigation transformer: offline pre-training and online "
               "fine-tuning on synthetic instruction-following tasks"};
  app.require_subcommand(1);

  std::string config_path, checkpoint, out_dir, sweep;
  bool force = false, expert_replay = false;
  std::optional<uint64_t> seed;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "experiment config file (JSON)")->required();
    sub->add_flag("--force", force, "overwrite existing outputs");
    sub->add_option("--seed", seed, "override the stage seed");
    sub->add_option("--out", out_dir, "override paths.out_dir");
  };

  auto* gen = app.add_subcommand("gen", "generate worlds and the episode dataset");
  add_common(gen);
  auto* pre = app.add_subcommand("pretrain", "offline imitation pre-training");
  add_common(pre);
  pre->add_option("--checkpoint", checkpoint, "resume from a pretrain resume checkpoint");
  auto* fin = app.add_subcommand("finetune", "online entropy-regularized fine-tuning");
  add_common(fin);
  fin->add_option("--checkpoint", checkpoint,
                  "initialize from a pre-trained checkpoint (absent: FT-only arm)");
  auto* ev = app.add_subcommand("eval", "greedy evaluation with full metrics");
  add_common(ev);
  ev->add_option("--checkpoint", checkpoint, "model checkpoint to evaluate");
  ev->add_flag("--expert-replay", expert_replay, "score the expert trajectories instead");
  auto* ab = app.add_subcommand("ablate", "run an ablation sweep");
  add_common(ab);
  ab->add_option("--sweep", sweep, "seq_len | n_blocks")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    auto cfg = config::ExperimentConfig::from_file(config_path);
    if (!out_dir.empty()) cfg.paths.out_dir = out_dir;
    if (seed) {
      // The override rebinds the seed of the stage being run.
      if (gen->parsed()) cfg.env.world_seed = *seed;
      if (pre->parsed() || ab->parsed()) {
        cfg.pretrain.seed = *seed;
        cfg.decoder_init_seed = seed_combine(*seed, 1);
      }
      if (fin->parsed()) cfg.finetune.seed = *seed;
    }
    cfg.validate();

    if (gen->parsed()) return cmd_gen(cfg, force);
    if (pre->parsed()) return cmd_pretrain(cfg, force, checkpoint);
    if (fin->parsed()) return cmd_finetune(cfg, force, checkpoint);
    if (ev->parsed()) return cmd_eval(cfg, force, checkpoint, expert_replay);
    if (ab->parsed()) return cmd_ablate(cfg, force, sweep);
    return kExitError;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const MissingInputError& e) {
    std::fprintf(stderr, "missing input: %s\n", e.what());
    return kExitMissingInput;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kExitNumerical;
  } catch (const ExistsError& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return kExitExists;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitError;
  }
}

}  // namespace graphnav::cli
