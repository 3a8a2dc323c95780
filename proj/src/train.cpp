#include "graphnav/train.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "graphnav/errors.hpp"
#include "graphnav/hash.hpp"
#include "graphnav/kernels.hpp"

namespace graphnav::train {

using json = nlohmann::json;

namespace {
constexpr uint64_t kPretrainTag = 0x7074726eULL;  // "ptrn"
constexpr uint64_t kFinetuneTag = 0x66746e65ULL;  // "ftne"
constexpr uint64_t kRolloutTag = 0x726f6c6cULL;   // "roll"
constexpr uint64_t kWarmupTag = 0x7761726dULL;    // "warm"
constexpr uint64_t kEvalTag = 0x6576616cULL;      // "eval"
}  // namespace

void PretrainConfig::validate() const {
  if (iterations < 1 || batch_size < 1 || eval_every < 1 || learning_rate <= 0)
    throw ConfigError("pretrain: iterations, batch_size, eval_every, learning_rate must be positive");
}

void FinetuneConfig::validate() const {
  if (iterations < 1 || batch_size < 1 || eval_every < 1 || learning_rate <= 0 ||
      rollouts_per_iteration < 1 || temperature <= 0)
    throw ConfigError("finetune: iterations, batch_size, eval_every, learning_rate, "
                      "rollouts_per_iteration, temperature must be positive");
  if (replay_capacity < batch_size)
    throw ConfigError("finetune: replay_capacity must be >= batch_size");
  if (target_entropy < 0) throw ConfigError("finetune: target_entropy must be >= 0");
  if (entropy_lr < 0 || lambda_init < 0)
    throw ConfigError("finetune: entropy_lr and lambda_init must be >= 0");
}

// --- replay buffer -----------------------------------------------------------

ReplayBuffer::ReplayBuffer(int capacity) : capacity_(capacity) {
  if (capacity < 1) throw std::invalid_argument("ReplayBuffer: capacity must be >= 1");
}

void ReplayBuffer::insert(StoredTrajectory traj) {
  items_.push_back({std::move(traj), next_stamp_++});
  if (static_cast<int>(items_.size()) > capacity_) {
    size_t worst = 0;
    for (size_t i = 1; i < items_.size(); ++i) {
      const auto& a = items_[i];
      const auto& b = items_[worst];
      if (a.traj.total_return < b.traj.total_return ||
          (a.traj.total_return == b.traj.total_return && a.stamp < b.stamp))
        worst = i;
    }
    items_.erase(items_.begin() + static_cast<long>(worst));
  }
}

double ReplayBuffer::min_return() const {
  if (items_.empty()) throw std::logic_error("ReplayBuffer::min_return on empty buffer");
  double m = items_.front().traj.total_return;
  for (const auto& it : items_) m = std::min(m, it.traj.total_return);
  return m;
}

const StoredTrajectory& ReplayBuffer::sample(Rng& rng) const {
  if (items_.empty()) throw std::logic_error("ReplayBuffer::sample on empty buffer");
  const auto idx = rng.uniform_int(0, static_cast<int64_t>(items_.size()) - 1);
  return items_[static_cast<size_t>(idx)].traj;
}

// --- featurization -----------------------------------------------------------

std::vector<decoder::ModelStep> to_model_steps(const embed::SyntheticEncoders& enc,
                                               const std::vector<int>& instruction,
                                               const env::Trajectory& traj) {
  const auto x_cls = enc.embed_instruction(instruction);
  std::vector<decoder::ModelStep> steps;
  steps.reserve(traj.steps.size());
  for (size_t t = 0; t < traj.steps.size(); ++t) {
    const auto& st = traj.steps[t];
    decoder::ModelStep ms;
    ms.rtg = st.return_to_go;
    ms.timestep = static_cast<int>(t);
    ms.features = embed::featurize_step(enc, x_cls, st.observation);
    if (st.action_index < 0 ||
        st.action_index >= static_cast<int>(ms.features.candidates.size()))
      throw std::invalid_argument("to_model_steps: stored action outside candidate set");
    ms.action_index = st.action_index;
    steps.push_back(std::move(ms));
  }
  return steps;
}

std::vector<PreparedEpisode> prepare_split(const env::Dataset& ds,
                                           const embed::SyntheticEncoders& enc,
                                           const std::string& split) {
  auto records = ds.split(split);
  std::vector<PreparedEpisode> out(records.size());
  std::exception_ptr failure;
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) if (kernels::max_threads() > 1)
#endif
  for (size_t i = 0; i < records.size(); ++i) {
    try {
      out[i].record = records[i];
      out[i].steps = to_model_steps(enc, records[i]->spec.instruction, records[i]->trajectory);
    } catch (...) {
#ifdef _OPENMP
#pragma omp critical
#endif
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

double sap_accuracy(const decoder::DecoderModel& model,
                    const std::vector<PreparedEpisode>& episodes) {
  if (episodes.empty()) throw std::invalid_argument("sap_accuracy: no episodes");
  long long hits = 0, total = 0;
  std::vector<long long> per_ep_hits(episodes.size(), 0);
  std::exception_ptr failure;
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) if (kernels::max_threads() > 1)
#endif
  for (size_t i = 0; i < episodes.size(); ++i) {
    try {
      const auto& steps = episodes[i].steps;
      const int T = static_cast<int>(steps.size());
      long long h = 0;
      auto argmax = [](const std::vector<double>& v) {
        int best = 0;
        for (int j = 1; j < static_cast<int>(v.size()); ++j)
          if (v[static_cast<size_t>(j)] > v[static_cast<size_t>(best)]) best = j;
        return best;
      };
      if (T <= model.config().effective_context()) {
        // One teacher-forced pass; by causality this matches prefix passes.
        tensor::Graph g(false);
        auto hidden = model.forward_hidden(g, steps, true, false, nullptr);
        for (int t = 0; t < T; ++t) {
          auto logits = model.action_logits(g, hidden, t,
                                            steps[static_cast<size_t>(t)].features.candidates);
          h += argmax(logits->value) == steps[static_cast<size_t>(t)].action_index;
        }
      } else {
        for (int t = 0; t < T; ++t) {
          std::vector<decoder::ModelStep> prefix(steps.begin(), steps.begin() + t + 1);
          prefix.back().action_index = -1;
          auto dist = model.action_distribution(prefix);
          h += argmax(dist.logits) == steps[static_cast<size_t>(t)].action_index;
        }
      }
      per_ep_hits[i] = h;
    } catch (...) {
#ifdef _OPENMP
#pragma omp critical
#endif
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  for (size_t i = 0; i < episodes.size(); ++i) {
    hits += per_ep_hits[i];
    total += static_cast<long long>(episodes[i].steps.size());
  }
  return static_cast<double>(hits) / static_cast<double>(total);
}

double policy_entropy(const decoder::DecoderModel& model,
                      const std::vector<std::vector<decoder::ModelStep>>& batch) {
  if (batch.empty()) throw std::invalid_argument("policy_entropy: empty batch");
  double mean = 0.0;
  for (const auto& steps : batch) {
    tensor::Graph g(false);
    auto sl = model.sequence_losses(g, steps, false, nullptr, true);
    mean += sl.entropy->value[0] / static_cast<double>(steps.size());
  }
  return mean / static_cast<double>(batch.size());
}

// --- snapshots ----------------------------------------------------------------

namespace {

std::vector<std::vector<double>> snapshot_values(const tensor::ParameterStore& store) {
  std::vector<std::vector<double>> out;
  out.reserve(store.size());
  for (const auto& e : store.entries()) out.push_back(e.t->value);
  return out;
}

void restore_values(decoder::DecoderModel& model,
                    const std::vector<std::vector<double>>& values) {
  auto& entries = model.params().entries_mut();
  if (values.size() != entries.size())
    throw std::invalid_argument("restore: snapshot does not match the model");
  for (size_t i = 0; i < entries.size(); ++i) {
    if (values[i].size() != entries[i].t->value.size())
      throw std::invalid_argument("restore: snapshot shape mismatch");
    entries[i].t->value = values[i];
  }
}

void emit(const LogSink& log, const json& j) {
  if (log) log(j.dump());
}

}  // namespace

void PretrainResult::restore_best(decoder::DecoderModel& model) const {
  restore_values(model, best_values);
}
void FinetuneResult::restore_best(decoder::DecoderModel& model) const {
  restore_values(model, best_values);
}

// --- pretraining ----------------------------------------------------------------

PretrainResult pretrain(const env::Dataset& ds, const embed::SyntheticEncoders& enc,
                        decoder::DecoderModel& model, const PretrainConfig& cfg,
                        const PretrainOptions& opts) {
  cfg.validate();
  auto train_eps = prepare_split(ds, enc, "train");
  auto seen_eps = prepare_split(ds, enc, "val_seen");
  auto unseen_eps = prepare_split(ds, enc, "val_unseen");
  if (train_eps.empty()) throw MissingInputError("pretrain: empty train split");

  Rng rng(seed_combine(cfg.seed, kPretrainTag));
  int start_iteration = 0;
  PretrainResult res;
  res.best_unseen_acc = -1.0;

  if (!opts.resume_from.empty()) {
    auto meta =
        tensor::load_checkpoint(opts.resume_from, model.params(), opts.semantic_hash);
    if (meta.kv.count("stage") && meta.kv.at("stage") != "pretrain_resume")
      throw ConfigError("pretrain: checkpoint is not a pretrain resume point");
    start_iteration = std::stoi(meta.kv.at("iteration"));
    rng.deserialize(meta.kv.at("rng"));
    res.best_unseen_acc = std::stod(meta.kv.at("best_unseen_acc"));
    res.best_iteration = std::stoi(meta.kv.at("best_iteration"));
  }

  auto save_best = [&](int iteration, double acc_unseen, double acc_seen) {
    res.best_iteration = iteration;
    res.best_unseen_acc = acc_unseen;
    res.best_values = snapshot_values(model.params());
    if (!opts.best_checkpoint_path.empty()) {
      tensor::CheckpointMeta meta;
      meta.config_hash = opts.model_hash;
      meta.kv["stage"] = "pretrain";
      meta.kv["iteration"] = std::to_string(iteration);
      meta.kv["acc_unseen"] = std::to_string(acc_unseen);
      meta.kv["acc_seen"] = std::to_string(acc_seen);
      tensor::save_checkpoint(opts.best_checkpoint_path, model.params(), meta, true);
    }
  };

  double loss_sum = 0.0;
  long long loss_steps = 0;
  const int n_train = static_cast<int>(train_eps.size());
  for (int it = start_iteration; it < cfg.iterations; ++it) {
    // Assemble the minibatch, then normalize by its total step count so the
    // logged loss is a per-step NLL.
    std::vector<const PreparedEpisode*> batch;
    batch.reserve(static_cast<size_t>(cfg.batch_size));
    long long batch_steps = 0;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const auto& ep = train_eps[static_cast<size_t>(rng.uniform_int(0, n_train - 1))];
      batch.push_back(&ep);
      batch_steps += static_cast<long long>(ep.steps.size());
    }
    const double inv_steps = 1.0 / static_cast<double>(batch_steps);
    for (const auto* ep : batch) {
      tensor::Graph g;
      auto nll = model.sequence_nll(g, ep->steps, true, &rng);
      loss_sum += nll->value[0];
      g.backward(g.scale(nll, inv_steps));
    }
    loss_steps += batch_steps;
    model.params().adam_step(cfg.learning_rate);

    const int iteration = it + 1;
    if (iteration % cfg.eval_every == 0 || iteration == cfg.iterations) {
      PretrainResult::Point pt;
      pt.iteration = iteration;
      pt.loss = loss_sum / static_cast<double>(loss_steps);
      pt.acc_seen = sap_accuracy(model, seen_eps);
      pt.acc_unseen = sap_accuracy(model, unseen_eps);
      res.curve.push_back(pt);
      loss_sum = 0.0;
      loss_steps = 0;
      emit(opts.log, json{{"stage", "pretrain"},
                          {"iteration", pt.iteration},
                          {"split", "val"},
                          {"loss", pt.loss},
                          {"sap_acc_seen", pt.acc_seen},
                          {"sap_acc_unseen", pt.acc_unseen}});
      if (pt.acc_unseen > res.best_unseen_acc) save_best(iteration, pt.acc_unseen, pt.acc_seen);
      if (!opts.resume_checkpoint_path.empty()) {
        tensor::CheckpointMeta meta;
        meta.config_hash = opts.semantic_hash;
        meta.kv["stage"] = "pretrain_resume";
        meta.kv["iteration"] = std::to_string(iteration);
        meta.kv["rng"] = rng.serialize();
        meta.kv["best_unseen_acc"] = std::to_string(res.best_unseen_acc);
        meta.kv["best_iteration"] = std::to_string(res.best_iteration);
        tensor::save_checkpoint(opts.resume_checkpoint_path, model.params(), meta, true);
      }
    }
  }
  if (res.best_values.empty()) res.best_values = snapshot_values(model.params());
  return res;
}

// --- rollouts -------------------------------------------------------------------

RolloutResult rollout(const decoder::DecoderModel& model,
                      const embed::SyntheticEncoders& enc, const env::NavGraph& g,
                      const env::EpisodeSpec& spec, const env::DatasetParams& envp,
                      double target_return, decoder::SampleMode mode, double temperature,
                      Rng& rng) {
  if (!std::isfinite(target_return))
    throw std::invalid_argument("rollout: target return must be finite");
  if (envp.step_budget > model.config().max_timesteps)
    throw std::invalid_argument("rollout: step budget exceeds the timestep table");
  const auto x_cls = enc.embed_instruction(spec.instruction);
  env::Episode ep(g, spec.start, spec.goal, envp.feature_seed, envp.features, envp.reward,
                  envp.step_budget);
  RolloutResult out;
  double rtg = target_return;
  for (int t = 0; !ep.done(); ++t) {
    decoder::ModelStep ms;
    ms.rtg = rtg;
    ms.timestep = t;
    ms.features = embed::featurize_step(enc, x_cls, ep.observation());
    ms.action_index = -1;
    out.steps.push_back(std::move(ms));

    const int action = model.sample_action(out.steps, temperature, mode, rng);
    out.steps.back().action_index = action;

    env::TrajectoryStep ts;
    ts.observation = ep.observation();
    ts.action_index = action;
    const auto r = ep.step(action);
    ts.reward = r.reward;
    out.trajectory.steps.push_back(std::move(ts));
    rtg -= r.reward;
    if (r.done) {
      out.trajectory.final_viewpoint = ep.current();
      out.trajectory.final_distance = r.distance_to_goal;
      out.trajectory.success = r.distance_to_goal <= envp.reward.success_threshold;
    }
  }
  out.trajectory.recompute_returns();
  // Hindsight relabel: stored steps carry the realized returns-to-go so the
  // trajectory invariants hold for replay training.
  for (size_t t = 0; t < out.steps.size(); ++t)
    out.steps[t].rtg = out.trajectory.steps[t].return_to_go;
  return out;
}

// --- evaluation -----------------------------------------------------------------

namespace {

std::vector<const env::NavGraph*> seen_graphs(const env::Dataset& ds) {
  std::vector<const env::NavGraph*> out;
  for (const auto& g : ds.graphs) {
    for (const auto& rec : ds.records) {
      if (rec.split == "train" && rec.spec.graph_id == g.id) {
        out.push_back(&g);
        break;
      }
    }
  }
  return out;
}

}  // namespace

metrics::MetricsReport evaluate(const decoder::DecoderModel& model,
                                const embed::SyntheticEncoders& enc, const env::Dataset& ds,
                                const std::string& split, double target_return_scale) {
  auto records = ds.split(split);
  if (records.empty()) throw MissingInputError("evaluate: empty split " + split);
  const double target = target_return_scale * ds.max_expert_return();
  std::vector<metrics::EpisodeResult> results(records.size());
  std::exception_ptr failure;
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) if (kernels::max_threads() > 1)
#endif
  for (size_t i = 0; i < records.size(); ++i) {
    try {
      const auto& rec = *records[i];
      const auto& g = ds.graph_by_id(rec.spec.graph_id);
      Rng rng(seed_combine(kEvalTag, static_cast<uint64_t>(i)));  // greedy: unused draws
      auto ro = rollout(model, enc, g, rec.spec, ds.params, target,
                        decoder::SampleMode::kGreedy, 1.0, rng);
      results[i] = metrics::score_episode(rec.episode_id, ro.trajectory, rec.spec, g,
                                          ds.params.reward.success_threshold);
    } catch (...) {
#ifdef _OPENMP
#pragma omp critical
#endif
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return metrics::aggregate(std::move(results));
}

metrics::MetricsReport evaluate_expert_replay(const env::Dataset& ds,
                                              const std::string& split) {
  auto records = ds.split(split);
  if (records.empty()) throw MissingInputError("evaluate_expert_replay: empty split");
  std::vector<metrics::EpisodeResult> results;
  results.reserve(records.size());
  for (const auto* rec : records) {
    const auto& g = ds.graph_by_id(rec->spec.graph_id);
    results.push_back(metrics::score_episode(rec->episode_id, rec->trajectory, rec->spec, g,
                                             ds.params.reward.success_threshold));
  }
  return metrics::aggregate(std::move(results));
}

// --- fine-tuning -----------------------------------------------------------------

FinetuneResult finetune(const env::Dataset& ds, const embed::SyntheticEncoders& enc,
                        decoder::DecoderModel& model, const FinetuneConfig& cfg,
                        const FinetuneOptions& opts) {
  cfg.validate();
  const auto graphs = seen_graphs(ds);
  if (graphs.empty()) throw MissingInputError("finetune: no seen graphs in dataset");
  const double target = cfg.target_return_scale * ds.max_expert_return();

  Rng rng(seed_combine(cfg.seed, kFinetuneTag));
  ReplayBuffer replay(cfg.replay_capacity);
  EntropyState entropy_state;
  entropy_state.beta = cfg.target_entropy;
  entropy_state.lambda = cfg.lambda_init;

  FinetuneResult res;
  res.best_unseen_sr = -1.0;

  auto collect = [&](uint64_t tag, int round) {
    std::vector<StoredTrajectory> fresh(static_cast<size_t>(cfg.rollouts_per_iteration));
    std::exception_ptr failure;
    // Per-rollout RNG streams derive from (seed, round, slot); parallel
    // collection with a serialized, slot-ordered insertion point.
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) if (kernels::max_threads() > 1)
#endif
    for (int s = 0; s < cfg.rollouts_per_iteration; ++s) {
      try {
        Rng slot_rng(seed_combine(cfg.seed, tag, static_cast<uint64_t>(round),
                                  static_cast<uint64_t>(s)));
        const auto& g = *graphs[static_cast<size_t>(
            slot_rng.uniform_int(0, static_cast<int64_t>(graphs.size()) - 1))];
        auto spec = env::sample_episode(g, slot_rng, ds.params, ds.vocab);
        auto ro = rollout(model, enc, g, spec, ds.params, target,
                          decoder::SampleMode::kSample, cfg.temperature, slot_rng);
        StoredTrajectory st;
        st.steps = std::move(ro.steps);
        st.total_return = ro.trajectory.total_return();
        st.success = ro.trajectory.success;
        fresh[static_cast<size_t>(s)] = std::move(st);
      } catch (...) {
#ifdef _OPENMP
#pragma omp critical
#endif
        if (!failure) failure = std::current_exception();
      }
    }
    if (failure) std::rethrow_exception(failure);
    for (auto& st : fresh) replay.insert(std::move(st));
  };

  // Replay must cover a batch before the first gradient step.
  for (int round = 0; static_cast<int>(replay.size()) < cfg.batch_size; ++round)
    collect(kWarmupTag, round);

  auto save_best = [&](int iteration, const metrics::MetricsReport& unseen) {
    res.best_iteration = iteration;
    res.best_unseen_sr = unseen.sr;
    res.best_values = snapshot_values(model.params());
    if (!opts.best_checkpoint_path.empty()) {
      tensor::CheckpointMeta meta;
      meta.config_hash = opts.model_hash;
      meta.kv["stage"] = "finetune";
      meta.kv["iteration"] = std::to_string(iteration);
      meta.kv["sr_unseen"] = std::to_string(unseen.sr);
      tensor::save_checkpoint(opts.best_checkpoint_path, model.params(), meta, true);
    }
  };

  double loss_sum = 0.0, entropy_sum = 0.0;
  int accum_count = 0;
  for (int it = 0; it < cfg.iterations; ++it) {
    collect(kRolloutTag, it);

    std::vector<const StoredTrajectory*> batch;
    long long batch_steps = 0;
    for (int b = 0; b < cfg.batch_size; ++b) {
      batch.push_back(&replay.sample(rng));
      batch_steps += static_cast<long long>(batch.back()->steps.size());
    }
    const double inv_steps = 1.0 / static_cast<double>(batch_steps);
    const double inv_batch = 1.0 / static_cast<double>(cfg.batch_size);
    double batch_loss = 0.0, batch_entropy = 0.0;
    for (const auto* traj : batch) {
      tensor::Graph g;
      auto sl = model.sequence_losses(g, traj->steps, true, &rng, true);
      const double t_inv = 1.0 / static_cast<double>(traj->steps.size());
      // theta-step objective: NLL - lambda * H (per-step and per-trajectory
      // normalized respectively).
      auto nll_term = g.scale(sl.nll, inv_steps);
      auto ent_term = g.scale(sl.entropy, -entropy_state.lambda * t_inv * inv_batch);
      auto loss = g.add(nll_term, ent_term);
      batch_loss += loss->value[0];
      batch_entropy += sl.entropy->value[0] * t_inv * inv_batch;
      g.backward(loss);
    }
    model.params().adam_step(cfg.learning_rate);
    entropy_state.update(batch_entropy, cfg.entropy_lr);
    loss_sum += batch_loss;
    entropy_sum += batch_entropy;
    accum_count += 1;

    const int iteration = it + 1;
    if (iteration % cfg.eval_every == 0 || iteration == cfg.iterations) {
      auto rep_seen = evaluate(model, enc, ds, "val_seen", cfg.target_return_scale);
      auto rep_unseen = evaluate(model, enc, ds, "val_unseen", cfg.target_return_scale);
      FinetuneResult::Point pt;
      pt.iteration = iteration;
      pt.loss = loss_sum / accum_count;
      pt.entropy = entropy_sum / accum_count;
      pt.lambda = entropy_state.lambda;
      pt.sr_seen = rep_seen.sr;
      pt.spl_seen = rep_seen.spl;
      pt.sr_unseen = rep_unseen.sr;
      pt.spl_unseen = rep_unseen.spl;
      res.curve.push_back(pt);
      loss_sum = entropy_sum = 0.0;
      accum_count = 0;
      emit(opts.log, json{{"stage", "finetune"},
                          {"iteration", iteration},
                          {"loss", pt.loss},
                          {"entropy", pt.entropy},
                          {"lambda", pt.lambda},
                          {"sr_seen", pt.sr_seen},
                          {"spl_seen", pt.spl_seen},
                          {"sr_unseen", pt.sr_unseen},
                          {"spl_unseen", pt.spl_unseen},
                          {"replay_size", replay.size()},
                          {"replay_min_return", replay.min_return()}});
      if (pt.sr_unseen > res.best_unseen_sr) save_best(iteration, rep_unseen);
    }
  }
  if (res.best_values.empty()) res.best_values = snapshot_values(model.params());
  return res;
}

}  // namespace graphnav::train
