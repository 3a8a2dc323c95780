#pragma once

#include <string>
#include <vector>

#include "graphnav/env.hpp"

// The four standard navigation metrics over completed trajectories:
// trajectory length, navigation error, success rate, and success weighted by
// path length. Navigation error is geodesic: straight-line distance through
// walls means nothing in a graph world.

namespace graphnav::metrics {

struct EpisodeResult {
  std::string episode_id;
  double trajectory_length = 0;  // meters
  double navigation_error = 0;   // meters, geodesic
  bool success = false;
  double spl = 0;  // in [0, 1]
};

struct MetricsReport {
  int n_episodes = 0;
  double tl = 0;   // mean meters
  double ne = 0;   // mean meters
  double sr = 0;   // percent
  double spl = 0;  // percent
  std::vector<EpisodeResult> episodes;
};

// Sum of traversed edge lengths; STOP contributes nothing.
double trajectory_length(const env::Trajectory& traj, const env::NavGraph& g);

// Geodesic distance between the final viewpoint and the goal.
double navigation_error(int final_viewpoint, int goal, const env::NavGraph& g);

// Inclusive at the boundary: NE == threshold counts as success.
bool success(int final_viewpoint, int goal, const env::NavGraph& g, double threshold);

// S * l / max(p, l); zero on failure. Requires l > 0.
double spl(bool success, double shortest_length, double agent_path_length);

EpisodeResult score_episode(const std::string& episode_id, const env::Trajectory& traj,
                            const env::EpisodeSpec& spec, const env::NavGraph& g,
                            double threshold);

MetricsReport aggregate(std::vector<EpisodeResult> episodes);

// Fixed-width table in the usual TL / NE / SR / SPL column layout, one row
// per (split, report) pair.
std::string format_table(const std::vector<std::pair<std::string, MetricsReport>>& rows);

}  // namespace graphnav::metrics
