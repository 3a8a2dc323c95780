#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "graphnav/decoder.hpp"
#include "graphnav/embed.hpp"
#include "graphnav/env.hpp"
#include "graphnav/metrics.hpp"

// Offline imitation pre-training on expert trajectories and online
// entropy-regularized fine-tuning with a return-prioritized replay buffer,
// plus greedy evaluation against the metrics module.

namespace graphnav::train {

struct PretrainConfig {
  int iterations = 5000;
  int batch_size = 64;
  double learning_rate = 5e-5;
  int eval_every = 250;
  uint64_t seed = 7;
  void validate() const;
};

struct FinetuneConfig {
  int iterations = 10000;
  double learning_rate = 1e-5;
  int batch_size = 8;
  int replay_capacity = 256;
  int rollouts_per_iteration = 2;
  double target_entropy = 0.6931471805599453;  // ln 2
  double entropy_lr = 0.01;
  double lambda_init = 0.0;
  double target_return_scale = 1.0;
  double temperature = 1.0;
  int eval_every = 100;
  uint64_t seed = 8;
  void validate() const;
};

// Lagrange multiplier for the entropy constraint: the policy objective
// carries -lambda * H and lambda ascends on (beta - H), projected to >= 0.
struct EntropyState {
  double lambda = 0.0;
  double beta = 0.6931471805599453;

  void update(double measured_entropy, double lr) {
    lambda = std::max(0.0, lambda + lr * (beta - measured_entropy));
  }
};

// A rollout stored for replay: featurized steps with hindsight-relabeled
// returns, plus bookkeeping.
struct StoredTrajectory {
  std::vector<decoder::ModelStep> steps;
  double total_return = 0;
  bool success = false;
};

// Bounded trajectory store. Insertion beyond capacity evicts the
// lowest-return member (oldest among ties), so the minimum stored return
// never decreases under insertion pressure.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(int capacity);
  void insert(StoredTrajectory traj);
  size_t size() const { return items_.size(); }
  int capacity() const { return capacity_; }
  double min_return() const;
  const StoredTrajectory& sample(Rng& rng) const;

 private:
  int capacity_;
  uint64_t next_stamp_ = 0;
  struct Item {
    StoredTrajectory traj;
    uint64_t stamp;
  };
  std::vector<Item> items_;
};

// Featurized view of a dataset record, teacher-forced.
struct PreparedEpisode {
  const env::DatasetRecord* record = nullptr;
  std::vector<decoder::ModelStep> steps;
};

std::vector<decoder::ModelStep> to_model_steps(const embed::SyntheticEncoders& enc,
                                               const std::vector<int>& instruction,
                                               const env::Trajectory& traj);

std::vector<PreparedEpisode> prepare_split(const env::Dataset& ds,
                                           const embed::SyntheticEncoders& enc,
                                           const std::string& split);

// Teacher-forced action-prediction accuracy (argmax vs expert).
double sap_accuracy(const decoder::DecoderModel& model,
                    const std::vector<PreparedEpisode>& episodes);

// Mean over trajectories of (1/T) sum_t H[pi(. | window)], teacher-forced.
double policy_entropy(const decoder::DecoderModel& model,
                      const std::vector<std::vector<decoder::ModelStep>>& batch);

using LogSink = std::function<void(const std::string& jsonl_line)>;

struct PretrainOptions {
  uint64_t model_hash = 0;     // stamped into best checkpoints
  uint64_t semantic_hash = 0;  // stamped into resume checkpoints
  std::string best_checkpoint_path;    // empty: keep best in memory only
  std::string resume_checkpoint_path;  // empty: no resume snapshots
  std::string resume_from;             // load training state and continue
  LogSink log;
};

struct PretrainResult {
  struct Point {
    int iteration = 0;
    double loss = 0;
    double acc_seen = 0;
    double acc_unseen = 0;
  };
  std::vector<Point> curve;
  int best_iteration = 0;
  double best_unseen_acc = 0;
  std::vector<std::vector<double>> best_values;  // parameter snapshot

  void restore_best(decoder::DecoderModel& model) const;
};

// Minimizes the summed action NLL over expert trajectories with Adam;
// evaluates SAP accuracy on val splits every eval_every iterations and
// snapshots the best-unseen model.
PretrainResult pretrain(const env::Dataset& ds, const embed::SyntheticEncoders& enc,
                        decoder::DecoderModel& model, const PretrainConfig& cfg,
                        const PretrainOptions& opts = {});

// Return-conditioned rollout. The conditioning return starts at
// target_return and decreases by observed rewards; the stored steps are
// relabeled with the realized returns-to-go afterward.
struct RolloutResult {
  env::Trajectory trajectory;
  std::vector<decoder::ModelStep> steps;
};

RolloutResult rollout(const decoder::DecoderModel& model,
                      const embed::SyntheticEncoders& enc, const env::NavGraph& g,
                      const env::EpisodeSpec& spec, const env::DatasetParams& envp,
                      double target_return, decoder::SampleMode mode, double temperature,
                      Rng& rng);

struct FinetuneOptions {
  uint64_t model_hash = 0;  // stamped into best checkpoints
  std::string best_checkpoint_path;
  LogSink log;
};

struct FinetuneResult {
  struct Point {
    int iteration = 0;
    double loss = 0;
    double entropy = 0;
    double lambda = 0;
    double sr_seen = 0, spl_seen = 0;
    double sr_unseen = 0, spl_unseen = 0;
  };
  std::vector<Point> curve;
  int best_iteration = 0;
  double best_unseen_sr = -1;
  std::vector<std::vector<double>> best_values;

  void restore_best(decoder::DecoderModel& model) const;
};

// Online loop: collect sampled rollouts on the seen graphs into the replay
// buffer, descend NLL - lambda * H on replay batches, ascend lambda toward
// the entropy target, and periodically evaluate greedily on both val splits.
FinetuneResult finetune(const env::Dataset& ds, const embed::SyntheticEncoders& enc,
                        decoder::DecoderModel& model, const FinetuneConfig& cfg,
                        const FinetuneOptions& opts = {});

// Greedy evaluation of one split; never mutates the model.
metrics::MetricsReport evaluate(const decoder::DecoderModel& model,
                                const embed::SyntheticEncoders& enc, const env::Dataset& ds,
                                const std::string& split, double target_return_scale);

// Oracle replay of the expert trajectories (no model involved).
metrics::MetricsReport evaluate_expert_replay(const env::Dataset& ds,
                                              const std::string& split);

}  // namespace graphnav::train
