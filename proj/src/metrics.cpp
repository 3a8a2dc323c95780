#include "graphnav/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace graphnav::metrics {

double trajectory_length(const env::Trajectory& traj, const env::NavGraph& g) {
  double total = 0.0;
  for (const auto& st : traj.steps) {
    if (st.action_index == env::kStopAction) continue;
    const auto as = env::action_set(st.observation);
    const int view = as.view_of(st.action_index);
    const int next = st.observation.navigable.at(view);
    bool found = false;
    for (const auto& [nid, w] : g.neighbors(st.observation.viewpoint_id)) {
      if (nid == next) {
        total += w;
        found = true;
        break;
      }
    }
    if (!found)
      throw std::invalid_argument("trajectory_length: traversed edge not in graph");
  }
  return total;
}

double navigation_error(int final_viewpoint, int goal, const env::NavGraph& g) {
  return env::geodesic_from(g, goal).at(final_viewpoint);
}

bool success(int final_viewpoint, int goal, const env::NavGraph& g, double threshold) {
  if (threshold <= 0) throw std::invalid_argument("success: threshold must be positive");
  return navigation_error(final_viewpoint, goal, g) <= threshold;
}

double spl(bool success, double shortest_length, double agent_path_length) {
  if (shortest_length <= 0) throw std::invalid_argument("spl: shortest length must be > 0");
  if (agent_path_length < 0) throw std::invalid_argument("spl: negative path length");
  if (!success) return 0.0;
  return shortest_length / std::max(agent_path_length, shortest_length);
}

EpisodeResult score_episode(const std::string& episode_id, const env::Trajectory& traj,
                            const env::EpisodeSpec& spec, const env::NavGraph& g,
                            double threshold) {
  EpisodeResult r;
  r.episode_id = episode_id;
  r.trajectory_length = trajectory_length(traj, g);
  r.navigation_error = navigation_error(traj.final_viewpoint, spec.goal, g);
  r.success = r.navigation_error <= threshold;
  r.spl = spl(r.success, spec.expert_length, r.trajectory_length);
  return r;
}

MetricsReport aggregate(std::vector<EpisodeResult> episodes) {
  MetricsReport rep;
  rep.n_episodes = static_cast<int>(episodes.size());
  if (!episodes.empty()) {
    for (const auto& e : episodes) {
      rep.tl += e.trajectory_length;
      rep.ne += e.navigation_error;
      rep.sr += e.success ? 1.0 : 0.0;
      rep.spl += e.spl;
    }
    const double n = static_cast<double>(rep.n_episodes);
    rep.tl /= n;
    rep.ne /= n;
    rep.sr = rep.sr * 100.0 / n;
    rep.spl = rep.spl * 100.0 / n;
  }
  rep.episodes = std::move(episodes);
  return rep;
}

std::string format_table(const std::vector<std::pair<std::string, MetricsReport>>& rows) {
  std::string out;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-14s %8s %8s %8s %8s %8s\n", "split", "n", "TL",
                "NE(v)", "SR(^)", "SPL(^)");
  out += buf;
  for (const auto& [name, rep] : rows) {
    std::snprintf(buf, sizeof(buf), "%-14s %8d %8.2f %8.2f %8.2f %8.2f\n", name.c_str(),
                  rep.n_episodes, rep.tl, rep.ne, rep.sr, rep.spl);
    out += buf;
  }
  return out;
}

}  // namespace graphnav::metrics
