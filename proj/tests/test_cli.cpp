#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "graphnav/cli.hpp"
#include "graphnav/env_io.hpp"
#include "graphnav/errors.hpp"

using namespace graphnav;
namespace fs = std::filesystem;

namespace {

// Small enough to run the full pipeline in seconds.
const char* kTinyConfig = R"({
  "env": {
    "n_train_graphs": 2, "n_unseen_graphs": 1, "n_viewpoints": 24,
    "episodes_per_graph": 6, "val_seen_per_graph": 3, "unseen_episodes_per_graph": 4,
    "min_path_edges": 2, "max_path_edges": 4
  },
  "embed": { "d_enc": 16 },
  "decoder": { "n_blocks": 1, "n_heads": 2, "d_model": 16, "dropout": 0.0 },
  "pretrain": { "iterations": 40, "batch_size": 4, "learning_rate": 1e-3, "eval_every": 20 },
  "finetune": { "iterations": 4, "batch_size": 3, "replay_capacity": 6,
                "rollouts_per_iteration": 2, "learning_rate": 1e-4, "eval_every": 2 },
  "ablate": { "n_seeds": 1, "block_sweep": [1, 2] }
})";

struct TempRun {
  fs::path dir;
  std::string config_path;
  config::ExperimentConfig cfg;

  explicit TempRun(const std::string& name) {
    dir = fs::temp_directory_path() / ("graphnav_cli_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    config_path = (dir / "config.json").string();
    std::ofstream out(config_path);
    out << kTinyConfig;
    out.close();
    cfg = config::ExperimentConfig::from_file(config_path);
    cfg.paths.out_dir = (dir / "run").string();
  }
  ~TempRun() { fs::remove_all(dir); }
};

}  // namespace

TEST_CASE("config: unknown keys are rejected, hashes are stable") {
  CHECK_THROWS_AS(config::ExperimentConfig::from_json_text(R"({"envv":{}})"), ConfigError);
  CHECK_THROWS_AS(config::ExperimentConfig::from_json_text(R"({"env":{"bogus_key":1}})"),
                  ConfigError);
  CHECK_THROWS_AS(config::ExperimentConfig::from_json_text("not json"), ConfigError);

  auto a = config::ExperimentConfig::from_json_text("{}");
  auto b = config::ExperimentConfig::from_json_text(R"({"paths":{"out_dir":"elsewhere"}})");
  CHECK(a.semantic_hash() == b.semantic_hash());  // paths excluded
  CHECK(a.model_hash() == b.model_hash());

  auto c = config::ExperimentConfig::from_json_text(R"({"decoder":{"n_blocks":2}})");
  CHECK(a.model_hash() != c.model_hash());
  auto d = config::ExperimentConfig::from_json_text(R"({"pretrain":{"iterations":7}})");
  CHECK(a.model_hash() == d.model_hash());  // training section not in the model hash
  CHECK(a.semantic_hash() != d.semantic_hash());

  CHECK_THROWS_AS(
      config::ExperimentConfig::from_json_text(R"({"decoder":{"d_model":15,"n_heads":2}})"),
      ConfigError);
  CHECK_THROWS_AS(config::ExperimentConfig::from_json_text(
                      R"({"env":{"step_budget":4,"max_path_edges":6,"min_path_edges":3}})"),
                  ConfigError);
}

TEST_CASE("world and dataset files round-trip bit-exactly") {
  TempRun run("roundtrip");
  REQUIRE(cli::cmd_gen(run.cfg, false) == cli::kExitOk);

  auto world = env::load_world(run.cfg.paths.world_file());
  CHECK(world.graphs.size() == 3);
  CHECK(world.config_hash == run.cfg.env_hash());
  for (const auto& g : world.graphs) CHECK_NOTHROW(g.validate());

  uint64_t stamped = 0;
  auto ds = env::load_dataset(run.cfg.paths.dataset_file(), run.cfg.paths.world_file(),
                              &stamped);
  CHECK(stamped == run.cfg.env_hash());
  CHECK(ds.split("train").size() == 12);
  CHECK(ds.split("val_seen").size() == 6);
  CHECK(ds.split("val_unseen").size() == 4);

  // Rebuild the dataset in memory: the reloaded copy must match bitwise.
  std::vector<env::NavGraph> seen{world.graphs[0], world.graphs[1]};
  std::vector<env::NavGraph> unseen{world.graphs[2]};
  auto fresh = env::make_dataset(seen, unseen, run.cfg.env.dataset);
  REQUIRE(fresh.records.size() == ds.records.size());
  for (size_t i = 0; i < fresh.records.size(); ++i) {
    const auto& a = fresh.records[i];
    const auto& b = ds.records[i];
    CHECK(a.episode_id == b.episode_id);
    CHECK(a.spec.instruction == b.spec.instruction);
    CHECK(a.spec.expert_length == b.spec.expert_length);
    REQUIRE(a.trajectory.steps.size() == b.trajectory.steps.size());
    for (size_t t = 0; t < a.trajectory.steps.size(); ++t) {
      CHECK(a.trajectory.steps[t].return_to_go == b.trajectory.steps[t].return_to_go);
      CHECK(a.trajectory.steps[t].reward == b.trajectory.steps[t].reward);
      for (int v = 0; v < env::kNumViews; ++v)
        CHECK(a.trajectory.steps[t].observation.views[static_cast<size_t>(v)].feature ==
              b.trajectory.steps[t].observation.views[static_cast<size_t>(v)].feature);
    }
  }

  // Same seed, second gen: byte-identical files.
  auto copy_of = [](const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)),
                       std::istreambuf_iterator<char>());
  };
  const auto world_bytes = copy_of(run.cfg.paths.world_file());
  const auto ds_bytes = copy_of(run.cfg.paths.dataset_file());
  REQUIRE(cli::cmd_gen(run.cfg, true) == cli::kExitOk);
  CHECK(copy_of(run.cfg.paths.world_file()) == world_bytes);
  CHECK(copy_of(run.cfg.paths.dataset_file()) == ds_bytes);
}

TEST_CASE("gen refuses to overwrite without force") {
  TempRun run("force");
  REQUIRE(cli::cmd_gen(run.cfg, false) == cli::kExitOk);
  CHECK_THROWS_AS(cli::cmd_gen(run.cfg, false), ExistsError);
  CHECK(cli::cmd_gen(run.cfg, true) == cli::kExitOk);
}

TEST_CASE("full pipeline: gen, pretrain, finetune, eval, ablate") {
  TempRun run("pipeline");
  REQUIRE(cli::cmd_gen(run.cfg, false) == cli::kExitOk);
  REQUIRE(cli::cmd_pretrain(run.cfg, false, "") == cli::kExitOk);
  const std::string best = run.cfg.paths.checkpoint_dir() + "/pretrain_best.ckpt";
  CHECK(fs::exists(best));
  CHECK(fs::exists(run.cfg.paths.report_dir() + "/pretrain.json"));
  CHECK(fs::exists(run.cfg.paths.log_dir() + "/pretrain.jsonl"));

  REQUIRE(cli::cmd_finetune(run.cfg, false, best) == cli::kExitOk);
  CHECK(fs::exists(run.cfg.paths.checkpoint_dir() + "/finetune_best.ckpt"));

  REQUIRE(cli::cmd_eval(run.cfg, false, best, false) == cli::kExitOk);
  CHECK(fs::exists(run.cfg.paths.report_dir() + "/eval.json"));

  REQUIRE(cli::cmd_eval(run.cfg, true, "", true) == cli::kExitOk);  // expert replay

  REQUIRE(cli::cmd_ablate(run.cfg, false, "seq_len") == cli::kExitOk);
  CHECK(fs::exists(run.cfg.paths.report_dir() + "/ablate_seq_len.json"));
  CHECK_THROWS_AS(cli::cmd_ablate(run.cfg, true, "bogus"), ConfigError);
}

TEST_CASE("checkpoint/config mismatches surface as typed errors") {
  TempRun run("mismatch");
  REQUIRE(cli::cmd_gen(run.cfg, false) == cli::kExitOk);
  REQUIRE(cli::cmd_pretrain(run.cfg, false, "") == cli::kExitOk);
  const std::string best = run.cfg.paths.checkpoint_dir() + "/pretrain_best.ckpt";

  auto other = run.cfg;
  other.decoder.n_heads = 4;  // different model hash
  CHECK_THROWS_AS(cli::cmd_eval(other, true, best, false), ConfigError);

  auto missing = run.cfg;
  missing.paths.out_dir = (run.dir / "nowhere").string();
  CHECK_THROWS_AS(cli::cmd_pretrain(missing, false, ""), MissingInputError);
}

TEST_CASE("run_cli maps errors to exit codes") {
  TempRun run("codes");
  std::string bad_cfg = (run.dir / "bad.json").string();
  {
    std::ofstream out(bad_cfg);
    out << R"({"env":{"nope":1}})";
  }
  const char* argv_bad[] = {"graphnav", "gen", "--config", bad_cfg.c_str()};
  CHECK(cli::run_cli(4, argv_bad) == cli::kExitConfig);

  std::string missing_cfg = (run.dir / "absent.json").string();
  const char* argv_missing[] = {"graphnav", "gen", "--config", missing_cfg.c_str()};
  CHECK(cli::run_cli(4, argv_missing) == cli::kExitMissingInput);

  const std::string out_dir = (run.dir / "cli_run").string();
  const char* argv_gen[] = {"graphnav", "gen",   "--config", run.config_path.c_str(),
                            "--out",    out_dir.c_str()};
  CHECK(cli::run_cli(6, argv_gen) == cli::kExitOk);
  CHECK(cli::run_cli(6, argv_gen) == cli::kExitExists);  // second run, no --force
}
