#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "graphnav/errors.hpp"
#include "graphnav/rng.hpp"

// Synthetic navigation world: connected graphs of viewpoints in 3-space,
// panoramic 36-view observations, an episode simulator with STOP semantics
// and dense geodesic-progress rewards, a shortest-path expert, and a
// templated instruction generator.

namespace graphnav::env {

constexpr int kNumViews = 36;
constexpr int kStopAction = 0;

struct Vec3 {
  double x = 0, y = 0, z = 0;
};

double distance(const Vec3& a, const Vec3& b);

struct Viewpoint {
  int id = 0;
  Vec3 pos;
};

struct Edge {
  int a = 0, b = 0;
  double length = 0;
};

struct NavGraph {
  std::string id;
  uint64_t seed = 0;
  std::vector<Viewpoint> viewpoints;
  std::vector<Edge> edges;

  bool has_viewpoint(int vid) const { return adjacency_.count(vid) > 0; }
  const Vec3& position(int vid) const;
  // Neighbors sorted by id, with edge lengths.
  const std::vector<std::pair<int, double>>& neighbors(int vid) const;
  int n_viewpoints() const { return static_cast<int>(viewpoints.size()); }
  double mean_degree() const;

  // Checks connectivity, edge-length consistency (1e-9), no self-loops, no
  // duplicate edges. Throws std::invalid_argument on violation.
  void validate() const;
  // Must be called after mutating viewpoints/edges by hand (the generator
  // and loaders call it for you).
  void rebuild_adjacency();

 private:
  std::map<int, std::vector<std::pair<int, double>>> adjacency_;
};

// Deterministic world generator: geometric spanning tree plus the shortest
// remaining candidate edges until the edge budget round(n * degree / 2) is
// met. Mean degree lands within 1 of the target.
NavGraph generate_world(uint64_t seed, int n_viewpoints, double target_degree);

// --- observations ----------------------------------------------------------

struct View {
  int heading = 0;  // 0..35, 10-degree bins
  std::vector<double> feature;
};

struct Observation {
  int viewpoint_id = 0;
  std::vector<View> views;      // exactly kNumViews
  std::map<int, int> navigable;  // view index -> neighbor viewpoint id
};

// Knobs for the synthetic raw view features. Views that lead to a neighbor
// carry that neighbor's landmark signature; the rest carry the current
// node's landmark, so the pooled state identifies where the agent stands.
struct FeatureParams {
  int d_raw = 32;
  int n_landmarks = 12;
  double landmark_gain = 1.0;
  double self_gain = 1.0;
  double heading_gain = 0.4;
  double noise_gain = 0.25;
};

int landmark_of(uint64_t graph_seed, int viewpoint_id, int n_landmarks);

Observation observe(const NavGraph& g, int viewpoint_id, uint64_t feature_seed,
                    const FeatureParams& fp);

// Ordered action list; index 0 is STOP, indices 1..k are the navigable view
// indices of the observation in ascending order.
struct ActionSet {
  std::vector<int> view_indices;
  int size() const { return 1 + static_cast<int>(view_indices.size()); }
  // Maps an action index (>0) to the observation's view index.
  int view_of(int action_index) const;
};

ActionSet action_set(const Observation& o);

// --- shortest paths and geodesics ------------------------------------------

// Geodesic distance from `source` to every viewpoint (keyed by id).
std::map<int, double> geodesic_from(const NavGraph& g, int source);

// Metrically shortest path; ties broken toward the lexicographically
// smallest viewpoint-id sequence. Length is the exact sum of edge lengths.
std::pair<std::vector<int>, double> shortest_path(const NavGraph& g, int a, int b);

// --- episode simulation ------------------------------------------------------

struct RewardParams {
  double bonus = 2.0;              // +-B terminal bonus on STOP
  double success_threshold = 3.0;  // meters, inclusive
};

struct StepResult {
  std::optional<Observation> next_observation;  // empty when done
  double reward = 0;
  bool done = false;
  double distance_to_goal = 0;
};

// Single-episode simulator; one instance per concurrent episode.
class Episode {
 public:
  Episode(const NavGraph& g, int start, int goal, uint64_t feature_seed,
          const FeatureParams& fp, const RewardParams& rp, int step_budget);

  const Observation& observation() const { return obs_; }
  const ActionSet& actions() const { return actions_; }
  bool done() const { return done_; }
  int current() const { return current_; }
  int goal() const { return goal_; }
  int steps_taken() const { return steps_taken_; }
  double distance_to_goal() const { return dist_.at(current_); }
  double distance_to_goal(int vid) const { return dist_.at(vid); }

  // Applies an action from the current ActionSet. Shaped reward: geodesic
  // progress toward the goal, plus +-bonus when STOP lands inside/outside
  // the success threshold. A budget-exhausted move carries no bonus.
  StepResult step(int action_index);

 private:
  const NavGraph& g_;
  int current_, goal_;
  uint64_t feature_seed_;
  FeatureParams fp_;
  RewardParams rp_;
  int step_budget_;
  int steps_taken_ = 0;
  bool done_ = false;
  std::map<int, double> dist_;  // geodesic to goal
  Observation obs_;
  ActionSet actions_;
};

// One-shot convenience wrapper over Episode for a single transition.
StepResult step(const NavGraph& g, int current_viewpoint, int action_index, int goal,
                uint64_t feature_seed, const FeatureParams& fp, const RewardParams& rp);

// --- instructions ------------------------------------------------------------

struct Vocabulary {
  std::vector<std::string> names;
  int go = 0, goal = 1, then = 2;
  int head_base = 3;         // 8 compass octants for the first motion
  int turn_base = 11;        // 8 relative-turn tokens
  int landmark_base = 19;    // n_landmarks landmark tokens
  int size() const { return static_cast<int>(names.size()); }
};

Vocabulary build_vocabulary(int n_landmarks);

struct InstructionParams {
  double filler_prob = 0.25;  // chance of a [THEN] between steps
};

// Ordered motion primitives for an expert path: initial compass octant, then
// per edge a relative-turn token and the landmark of the node it reaches,
// bracketed by [GO]/[GOAL]. Deterministic in (path, seed).
std::vector<int> generate_instruction(const NavGraph& g, const std::vector<int>& expert_path,
                                      uint64_t seed, const Vocabulary& vocab,
                                      const FeatureParams& fp,
                                      const InstructionParams& ip);

// --- episodes, trajectories, datasets ---------------------------------------

struct EpisodeSpec {
  std::string graph_id;
  int start = 0, goal = 0;
  std::vector<int> instruction;
  std::vector<int> expert_path;
  double expert_length = 0;
};

struct TrajectoryStep {
  double return_to_go = 0;
  Observation observation;
  int action_index = 0;  // index into the step's ActionSet
  double reward = 0;
};

struct Trajectory {
  std::vector<TrajectoryStep> steps;
  bool success = false;
  double final_distance = 0;
  int final_viewpoint = 0;

  // rtg[t] = rtg[t+1] + reward[t], computed backward so it holds bitwise.
  void recompute_returns();
  double total_return() const { return steps.empty() ? 0.0 : steps.front().return_to_go; }
  int length() const { return static_cast<int>(steps.size()); }
};

struct DatasetRecord {
  std::string episode_id;
  std::string split;  // train | val_seen | val_unseen
  EpisodeSpec spec;
  Trajectory trajectory;
};

struct DatasetParams {
  int episodes_per_graph = 60;      // train episodes on each seen graph
  int val_seen_per_graph = 10;      // held-out episodes on seen graphs
  int unseen_episodes_per_graph = 30;
  int min_path_edges = 3;
  int max_path_edges = 6;
  int step_budget = 15;
  uint64_t episode_seed = 4;
  uint64_t instruction_seed = 3;
  uint64_t feature_seed = 2;
  FeatureParams features;
  RewardParams reward;
  InstructionParams instruction;
};

struct Dataset {
  std::vector<NavGraph> graphs;  // seen graphs first, then unseen
  Vocabulary vocab;
  DatasetParams params;
  std::vector<DatasetRecord> records;

  const NavGraph& graph_by_id(const std::string& id) const;
  std::vector<const DatasetRecord*> split(const std::string& name) const;
  double max_expert_return() const;
};

// Expert rollout along the shortest path; the resulting trajectory satisfies
// the return-to-go recurrence exactly and ends with STOP at the goal.
Trajectory expert_trajectory(const NavGraph& g, const EpisodeSpec& spec,
                             const DatasetParams& p);

// One fresh episode spec on g: uniform start, goal drawn from the path-length
// window with a winnable neighborhood. Used by online fine-tuning.
EpisodeSpec sample_episode(const NavGraph& g, Rng& rng, const DatasetParams& p,
                           const Vocabulary& vocab);

// Builds train / val_seen splits over `seen` graphs and val_unseen over
// `unseen` graphs. Requires at least one graph on each side. Per-graph work
// is independent and runs in parallel when OpenMP threads are available.
Dataset make_dataset(const std::vector<NavGraph>& seen,
                     const std::vector<NavGraph>& unseen, const DatasetParams& p);

}  // namespace graphnav::env
