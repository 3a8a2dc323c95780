#include "graphnav/env.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <set>
#include <unordered_set>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "graphnav/kernels.hpp"

namespace graphnav::env {

namespace {

constexpr uint64_t kWorldTag = 0x776f726c64ULL;      // "world"
constexpr uint64_t kLandmarkTag = 0x6c616e64ULL;     // "land"
constexpr uint64_t kHeadingTag = 0x68656164ULL;      // "head"
constexpr uint64_t kNoiseTag = 0x6e6f697365ULL;      // "noise"
constexpr uint64_t kInstrTag = 0x696e737472ULL;      // "instr"
constexpr uint64_t kEpisodeTag = 0x657069ULL;        // "epi"

double bearing_deg(const Vec3& from, const Vec3& to) {
  const double ang = std::atan2(to.y - from.y, to.x - from.x) * 180.0 / M_PI;
  return ang < 0 ? ang + 360.0 : ang;
}

int heading_bin(const Vec3& from, const Vec3& to) {
  int b = static_cast<int>(bearing_deg(from, to) / 10.0);
  return b >= kNumViews ? kNumViews - 1 : b;  // guard the 360.0 edge
}

}  // namespace

double distance(const Vec3& a, const Vec3& b) {
  const double dx = a.x - b.x, dy = a.y - b.y, dz = a.z - b.z;
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

const Vec3& NavGraph::position(int vid) const {
  for (const auto& v : viewpoints)
    if (v.id == vid) return v.pos;
  throw std::invalid_argument("unknown viewpoint id " + std::to_string(vid));
}

const std::vector<std::pair<int, double>>& NavGraph::neighbors(int vid) const {
  auto it = adjacency_.find(vid);
  if (it == adjacency_.end())
    throw std::invalid_argument("unknown viewpoint id " + std::to_string(vid));
  return it->second;
}

double NavGraph::mean_degree() const {
  return viewpoints.empty() ? 0.0 : 2.0 * static_cast<double>(edges.size()) / viewpoints.size();
}

void NavGraph::rebuild_adjacency() {
  adjacency_.clear();
  for (const auto& v : viewpoints) adjacency_[v.id];
  for (const auto& e : edges) {
    adjacency_.at(e.a).emplace_back(e.b, e.length);
    adjacency_.at(e.b).emplace_back(e.a, e.length);
  }
  for (auto& [id, nb] : adjacency_) std::sort(nb.begin(), nb.end());
}

void NavGraph::validate() const {
  if (viewpoints.size() < 2) throw std::invalid_argument("graph needs >= 2 viewpoints");
  std::set<int> ids;
  for (const auto& v : viewpoints)
    if (!ids.insert(v.id).second) throw std::invalid_argument("duplicate viewpoint id");
  std::set<std::pair<int, int>> seen;
  for (const auto& e : edges) {
    if (e.a == e.b) throw std::invalid_argument("self-loop edge");
    if (!ids.count(e.a) || !ids.count(e.b))
      throw std::invalid_argument("edge references unknown viewpoint");
    auto key = std::minmax(e.a, e.b);
    if (!seen.insert({key.first, key.second}).second)
      throw std::invalid_argument("duplicate edge");
    const double want = distance(position(e.a), position(e.b));
    if (std::fabs(e.length - want) > 1e-9)
      throw std::invalid_argument("edge length disagrees with endpoint distance");
  }
  // BFS connectivity
  std::set<int> reached;
  std::queue<int> q;
  q.push(viewpoints.front().id);
  reached.insert(viewpoints.front().id);
  while (!q.empty()) {
    const int u = q.front();
    q.pop();
    for (const auto& [v, w] : neighbors(u)) {
      (void)w;
      if (reached.insert(v).second) q.push(v);
    }
  }
  if (reached.size() != viewpoints.size())
    throw std::invalid_argument("graph is not connected");
}

NavGraph generate_world(uint64_t seed, int n_viewpoints, double target_degree) {
  if (n_viewpoints < 2) throw std::invalid_argument("generate_world: n_viewpoints must be >= 2");
  if (target_degree < 1.0) throw std::invalid_argument("generate_world: target_degree must be >= 1");

  NavGraph g;
  g.seed = seed;
  Rng rng(seed_combine(seed, kWorldTag));
  // Scale keeps nearest neighbors a couple of meters apart so the default
  // 3 m success threshold is reachable from at least one adjacent node.
  const double side = 2.2 * std::sqrt(static_cast<double>(n_viewpoints));
  g.viewpoints.reserve(static_cast<size_t>(n_viewpoints));
  for (int i = 0; i < n_viewpoints; ++i) {
    Vec3 p{rng.uniform(0.0, side), rng.uniform(0.0, side), rng.uniform(0.0, 1.0)};
    g.viewpoints.push_back({i, p});
  }

  // Minimum spanning tree (Prim). The MST contains each node's edge to its
  // nearest neighbor, which keeps every node within one short hop of the
  // rest of the world.
  std::set<std::pair<int, int>> used;
  auto add_edge = [&](int a, int b) {
    auto key = std::minmax(a, b);
    if (!used.insert({key.first, key.second}).second) return false;
    g.edges.push_back({key.first, key.second,
                       distance(g.viewpoints[static_cast<size_t>(key.first)].pos,
                                g.viewpoints[static_cast<size_t>(key.second)].pos)});
    return true;
  };
  {
    std::vector<bool> in_tree(static_cast<size_t>(n_viewpoints), false);
    std::vector<double> best_d(static_cast<size_t>(n_viewpoints),
                               std::numeric_limits<double>::infinity());
    std::vector<int> anchor(static_cast<size_t>(n_viewpoints), 0);
    in_tree[0] = true;
    for (int j = 1; j < n_viewpoints; ++j)
      best_d[static_cast<size_t>(j)] =
          distance(g.viewpoints[static_cast<size_t>(j)].pos, g.viewpoints[0].pos);
    for (int added = 1; added < n_viewpoints; ++added) {
      int pick = -1;
      for (int j = 1; j < n_viewpoints; ++j)
        if (!in_tree[static_cast<size_t>(j)] &&
            (pick < 0 || best_d[static_cast<size_t>(j)] < best_d[static_cast<size_t>(pick)]))
          pick = j;
      in_tree[static_cast<size_t>(pick)] = true;
      add_edge(pick, anchor[static_cast<size_t>(pick)]);
      for (int j = 1; j < n_viewpoints; ++j) {
        if (in_tree[static_cast<size_t>(j)]) continue;
        const double d = distance(g.viewpoints[static_cast<size_t>(j)].pos,
                                  g.viewpoints[static_cast<size_t>(pick)].pos);
        if (d < best_d[static_cast<size_t>(j)]) {
          best_d[static_cast<size_t>(j)] = d;
          anchor[static_cast<size_t>(j)] = pick;
        }
      }
    }
  }

  // Densify with the shortest unused pairs until the edge budget is met.
  const long long max_edges = 1LL * n_viewpoints * (n_viewpoints - 1) / 2;
  long long budget = std::llround(n_viewpoints * target_degree / 2.0);
  budget = std::clamp(budget, static_cast<long long>(n_viewpoints - 1), max_edges);
  if (budget > static_cast<long long>(g.edges.size())) {
    struct Cand {
      double d;
      int a, b;
    };
    std::vector<Cand> cands;
    cands.reserve(static_cast<size_t>(max_edges));
    for (int i = 0; i < n_viewpoints; ++i)
      for (int j = i + 1; j < n_viewpoints; ++j)
        if (!used.count({i, j}))
          cands.push_back({distance(g.viewpoints[static_cast<size_t>(i)].pos,
                                    g.viewpoints[static_cast<size_t>(j)].pos),
                           i, j});
    std::sort(cands.begin(), cands.end(), [](const Cand& x, const Cand& y) {
      return std::tie(x.d, x.a, x.b) < std::tie(y.d, y.a, y.b);
    });
    for (const auto& c : cands) {
      if (static_cast<long long>(g.edges.size()) >= budget) break;
      add_edge(c.a, c.b);
    }
  }

  g.rebuild_adjacency();
  g.validate();
  return g;
}

// --- observations ----------------------------------------------------------

int landmark_of(uint64_t graph_seed, int viewpoint_id, int n_landmarks) {
  return static_cast<int>(seed_combine(graph_seed, kLandmarkTag,
                                        static_cast<uint64_t>(viewpoint_id)) %
                          static_cast<uint64_t>(n_landmarks));
}

namespace {

std::vector<double> signature(uint64_t stream_seed, int d) {
  Rng rng(stream_seed);
  std::vector<double> v(static_cast<size_t>(d));
  for (auto& x : v) x = rng.normal();
  return v;
}

std::vector<double> landmark_signature(uint64_t feature_seed, int landmark, int d) {
  return signature(seed_combine(feature_seed, kLandmarkTag, static_cast<uint64_t>(landmark)), d);
}

std::vector<double> heading_signature(uint64_t feature_seed, int bin, int d) {
  return signature(seed_combine(feature_seed, kHeadingTag, static_cast<uint64_t>(bin)), d);
}

}  // namespace

Observation observe(const NavGraph& g, int viewpoint_id, uint64_t feature_seed,
                    const FeatureParams& fp) {
  if (!g.has_viewpoint(viewpoint_id))
    throw std::invalid_argument("observe: unknown viewpoint " + std::to_string(viewpoint_id));

  const auto& nbrs = g.neighbors(viewpoint_id);
  if (nbrs.size() > static_cast<size_t>(kNumViews))
    throw std::invalid_argument("observe: viewpoint has more neighbors than views");

  Observation o;
  o.viewpoint_id = viewpoint_id;

  // Assign each neighbor the view bin of its bearing; collisions probe
  // outward to the nearest free bin, deterministically.
  std::vector<int> owner(kNumViews, -1);
  const Vec3& here = g.position(viewpoint_id);
  for (const auto& [nid, w] : nbrs) {
    (void)w;
    const int want = heading_bin(here, g.position(nid));
    int chosen = -1;
    for (int off = 0; off < kNumViews && chosen < 0; ++off) {
      for (int sign : {+1, -1}) {
        const int bin = ((want + sign * off) % kNumViews + kNumViews) % kNumViews;
        if (owner[static_cast<size_t>(bin)] < 0) {
          chosen = bin;
          break;
        }
        if (off == 0) break;  // +0 and -0 are the same bin
      }
    }
    owner[static_cast<size_t>(chosen)] = nid;
    o.navigable[chosen] = nid;
  }

  const int self_lm = landmark_of(g.seed, viewpoint_id, fp.n_landmarks);
  o.views.resize(kNumViews);
  for (int bin = 0; bin < kNumViews; ++bin) {
    View& view = o.views[static_cast<size_t>(bin)];
    view.heading = bin;
    const int nid = owner[static_cast<size_t>(bin)];
    const int lm = nid >= 0 ? landmark_of(g.seed, nid, fp.n_landmarks) : self_lm;
    const double lm_gain = nid >= 0 ? fp.landmark_gain : fp.self_gain;
    auto lm_sig = landmark_signature(feature_seed, lm, fp.d_raw);
    auto hd_sig = heading_signature(feature_seed, bin, fp.d_raw);
    Rng noise(seed_combine(feature_seed, kNoiseTag, g.seed,
                           static_cast<uint64_t>(viewpoint_id), static_cast<uint64_t>(bin)));
    view.feature.resize(static_cast<size_t>(fp.d_raw));
    for (int j = 0; j < fp.d_raw; ++j)
      view.feature[static_cast<size_t>(j)] = lm_gain * lm_sig[static_cast<size_t>(j)] +
                                             fp.heading_gain * hd_sig[static_cast<size_t>(j)] +
                                             fp.noise_gain * noise.normal();
  }
  return o;
}

int ActionSet::view_of(int action_index) const {
  if (action_index <= 0 || action_index > static_cast<int>(view_indices.size()))
    throw std::invalid_argument("ActionSet: action index out of range");
  return view_indices[static_cast<size_t>(action_index - 1)];
}

ActionSet action_set(const Observation& o) {
  ActionSet s;
  s.view_indices.reserve(o.navigable.size());
  for (const auto& [view_idx, nid] : o.navigable) {
    (void)nid;
    s.view_indices.push_back(view_idx);  // std::map iterates in ascending order
  }
  return s;
}

// --- shortest paths ----------------------------------------------------------

std::map<int, double> geodesic_from(const NavGraph& g, int source) {
  if (!g.has_viewpoint(source))
    throw std::invalid_argument("geodesic_from: unknown viewpoint");
  std::map<int, double> dist;
  for (const auto& v : g.viewpoints) dist[v.id] = std::numeric_limits<double>::infinity();
  dist[source] = 0.0;
  using Item = std::pair<double, int>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
  pq.push({0.0, source});
  while (!pq.empty()) {
    auto [d, u] = pq.top();
    pq.pop();
    if (d > dist[u]) continue;
    for (const auto& [v, w] : g.neighbors(u)) {
      const double nd = d + w;
      if (nd < dist[v]) {
        dist[v] = nd;
        pq.push({nd, v});
      }
    }
  }
  return dist;
}

std::pair<std::vector<int>, double> shortest_path(const NavGraph& g, int a, int b) {
  if (!g.has_viewpoint(a) || !g.has_viewpoint(b))
    throw std::invalid_argument("shortest_path: unknown endpoint");
  if (a == b) return {{a}, 0.0};
  const auto dist_to_b = geodesic_from(g, b);
  // Walk from a, always taking the smallest-id neighbor that stays on a
  // shortest path; this yields the lexicographically smallest id sequence.
  std::vector<int> path{a};
  double length = 0.0;
  int u = a;
  while (u != b) {
    const double du = dist_to_b.at(u);
    int next = -1;
    double next_w = 0.0;
    for (const auto& [v, w] : g.neighbors(u)) {
      const double via = w + dist_to_b.at(v);
      if (std::fabs(via - du) <= 1e-9 * std::max(1.0, du)) {
        next = v;
        next_w = w;
        break;  // neighbors are id-sorted
      }
    }
    if (next < 0) throw std::logic_error("shortest_path: walk failed (disconnected?)");
    length += next_w;
    path.push_back(next);
    u = next;
  }
  return {path, length};
}

// --- episode simulation --------------------------------------------------------

Episode::Episode(const NavGraph& g, int start, int goal, uint64_t feature_seed,
                 const FeatureParams& fp, const RewardParams& rp, int step_budget)
    : g_(g),
      current_(start),
      goal_(goal),
      feature_seed_(feature_seed),
      fp_(fp),
      rp_(rp),
      step_budget_(step_budget) {
  if (!g.has_viewpoint(start) || !g.has_viewpoint(goal))
    throw std::invalid_argument("Episode: unknown start or goal");
  if (step_budget < 1) throw std::invalid_argument("Episode: step budget must be >= 1");
  dist_ = geodesic_from(g, goal);
  obs_ = observe(g_, current_, feature_seed_, fp_);
  actions_ = action_set(obs_);
}

StepResult Episode::step(int action_index) {
  if (done_) throw std::logic_error("Episode::step after done");
  if (action_index < 0 || action_index >= actions_.size())
    throw std::invalid_argument("Episode::step: action index out of range");

  StepResult r;
  steps_taken_ += 1;
  if (action_index == kStopAction) {
    const double d = dist_.at(current_);
    r.reward = d <= rp_.success_threshold ? rp_.bonus : -rp_.bonus;
    r.done = true;
    r.distance_to_goal = d;
    done_ = true;
    return r;
  }

  const int view_idx = actions_.view_of(action_index);
  const int next_vp = obs_.navigable.at(view_idx);
  const double d_prev = dist_.at(current_);
  const double d_next = dist_.at(next_vp);
  current_ = next_vp;
  r.reward = d_prev - d_next;
  r.distance_to_goal = d_next;
  if (steps_taken_ >= step_budget_) {
    r.done = true;
    done_ = true;
  } else {
    obs_ = observe(g_, current_, feature_seed_, fp_);
    actions_ = action_set(obs_);
    r.next_observation = obs_;
  }
  return r;
}

StepResult step(const NavGraph& g, int current_viewpoint, int action_index, int goal,
                uint64_t feature_seed, const FeatureParams& fp, const RewardParams& rp) {
  Episode ep(g, current_viewpoint, goal, feature_seed, fp, rp, /*step_budget=*/1 << 20);
  return ep.step(action_index);
}

// --- instructions ----------------------------------------------------------------

Vocabulary build_vocabulary(int n_landmarks) {
  Vocabulary v;
  v.names = {"[GO]", "[GOAL]", "[THEN]"};
  for (const char* o : {"N", "NE", "E", "SE", "S", "SW", "W", "NW"})
    v.names.push_back(std::string("HEAD_") + o);
  for (const char* t : {"STRAIGHT", "SLIGHT_RIGHT", "RIGHT", "SHARP_RIGHT", "BACK",
                        "SHARP_LEFT", "LEFT", "SLIGHT_LEFT"})
    v.names.push_back(std::string("TURN_") + t);
  for (int k = 0; k < n_landmarks; ++k) v.names.push_back("LM_" + std::to_string(k));
  return v;
}

namespace {

int octant_of(double deg) {  // 8 bins centered on the compass directions
  return static_cast<int>(std::fmod(deg + 22.5, 360.0) / 45.0) % 8;
}

int turn_class(double delta_deg) {  // delta wrapped to (-180, 180]
  double d = std::fmod(delta_deg + 540.0, 360.0) - 180.0;  // (-180, 180]
  const int cls = static_cast<int>(std::floor((d + 22.5) / 45.0));
  return ((cls % 8) + 8) % 8;  // 0 straight, 1..3 right, 4 back, 5..7 left
}

}  // namespace

std::vector<int> generate_instruction(const NavGraph& g, const std::vector<int>& expert_path,
                                      uint64_t seed, const Vocabulary& vocab,
                                      const FeatureParams& fp, const InstructionParams& ip) {
  if (expert_path.empty())
    throw std::invalid_argument("generate_instruction: empty path");

  uint64_t path_digest = 0;
  for (int v : expert_path) path_digest = seed_combine(path_digest, static_cast<uint64_t>(v));
  Rng rng(seed_combine(seed, kInstrTag, g.seed, path_digest));

  std::vector<int> tokens{vocab.go};
  double prev_bearing = 0.0;
  for (size_t i = 0; i + 1 < expert_path.size(); ++i) {
    const Vec3& from = g.position(expert_path[i]);
    const Vec3& to = g.position(expert_path[i + 1]);
    const double bearing = bearing_deg(from, to);
    if (i == 0) {
      tokens.push_back(vocab.head_base + octant_of(bearing));
    } else {
      tokens.push_back(vocab.turn_base + turn_class(bearing - prev_bearing));
    }
    prev_bearing = bearing;
    tokens.push_back(vocab.landmark_base +
                     landmark_of(g.seed, expert_path[i + 1], fp.n_landmarks));
    if (i + 2 < expert_path.size() && rng.uniform() < ip.filler_prob)
      tokens.push_back(vocab.then);
  }
  tokens.push_back(vocab.goal);
  return tokens;
}

// --- trajectories and datasets -----------------------------------------------------

void Trajectory::recompute_returns() {
  double acc = 0.0;
  for (auto it = steps.rbegin(); it != steps.rend(); ++it) {
    acc += it->reward;
    it->return_to_go = acc;
  }
}

const NavGraph& Dataset::graph_by_id(const std::string& id) const {
  for (const auto& g : graphs)
    if (g.id == id) return g;
  throw std::invalid_argument("unknown graph id: " + id);
}

std::vector<const DatasetRecord*> Dataset::split(const std::string& name) const {
  std::vector<const DatasetRecord*> out;
  for (const auto& r : records)
    if (r.split == name) out.push_back(&r);
  return out;
}

double Dataset::max_expert_return() const {
  double best = 0.0;
  for (const auto& r : records)
    if (r.split == "train") best = std::max(best, r.trajectory.total_return());
  return best;
}

Trajectory expert_trajectory(const NavGraph& g, const EpisodeSpec& spec,
                             const DatasetParams& p) {
  Episode ep(g, spec.start, spec.goal, p.feature_seed, p.features, p.reward, p.step_budget);
  Trajectory traj;
  for (size_t i = 1; i <= spec.expert_path.size(); ++i) {
    TrajectoryStep st;
    st.observation = ep.observation();
    int action = kStopAction;
    if (i < spec.expert_path.size()) {
      // Find the action whose view leads to the next path node.
      const auto& as = ep.actions();
      for (int ai = 1; ai < as.size(); ++ai) {
        if (ep.observation().navigable.at(as.view_of(ai)) == spec.expert_path[i]) {
          action = ai;
          break;
        }
      }
      if (action == kStopAction)
        throw std::logic_error("expert_trajectory: path edge missing from action set");
    }
    st.action_index = action;
    const StepResult r = ep.step(action);
    st.reward = r.reward;
    traj.steps.push_back(std::move(st));
    if (r.done) {
      traj.final_distance = r.distance_to_goal;
      traj.final_viewpoint = ep.current();
      traj.success = r.distance_to_goal <= p.reward.success_threshold;
    }
  }
  traj.recompute_returns();
  return traj;
}

namespace {

// Samples episode specs on one graph; dedup is per-graph across splits so
// val_seen never replicates a train episode.
std::vector<EpisodeSpec> sample_episodes(const NavGraph& g, int count, Rng& rng,
                                         const DatasetParams& p,
                                         std::set<std::pair<int, int>>& taken,
                                         const Vocabulary& vocab) {
  std::vector<EpisodeSpec> out;
  const int n = g.n_viewpoints();
  int attempts = 0;
  const int max_attempts = count * 200;
  while (static_cast<int>(out.size()) < count && attempts++ < max_attempts) {
    const int start = g.viewpoints[static_cast<size_t>(rng.uniform_int(0, n - 1))].id;
    const auto dist = geodesic_from(g, start);
    // Enumerate goals whose shortest path falls inside the edge-count window.
    // A goal must also be winnable from a non-goal node: its nearest other
    // node (= shortest incident edge) has to sit inside the threshold.
    std::vector<int> goals;
    for (const auto& v : g.viewpoints) {
      if (v.id == start) continue;
      if (dist.at(v.id) <= p.reward.success_threshold) continue;  // trivially done
      if (taken.count({start, v.id})) continue;
      double nearest = std::numeric_limits<double>::infinity();
      for (const auto& [nid, w] : g.neighbors(v.id)) {
        (void)nid;
        nearest = std::min(nearest, w);
      }
      if (nearest > p.reward.success_threshold) continue;
      const auto [path, len] = shortest_path(g, start, v.id);
      (void)len;
      const int edges = static_cast<int>(path.size()) - 1;
      if (edges >= p.min_path_edges && edges <= p.max_path_edges &&
          edges + 1 <= p.step_budget)
        goals.push_back(v.id);
    }
    if (goals.empty()) continue;
    const int goal = goals[static_cast<size_t>(rng.uniform_int(
        0, static_cast<int64_t>(goals.size()) - 1))];
    taken.insert({start, goal});
    EpisodeSpec spec;
    spec.graph_id = g.id;
    spec.start = start;
    spec.goal = goal;
    auto [path, len] = shortest_path(g, start, goal);
    spec.expert_path = std::move(path);
    spec.expert_length = len;
    spec.instruction = generate_instruction(g, spec.expert_path, p.instruction_seed, vocab,
                                            p.features, p.instruction);
    out.push_back(std::move(spec));
  }
  if (static_cast<int>(out.size()) < count)
    throw std::runtime_error("sample_episodes: graph " + g.id +
                             " cannot supply the requested episode count");
  return out;
}

}  // namespace

EpisodeSpec sample_episode(const NavGraph& g, Rng& rng, const DatasetParams& p,
                           const Vocabulary& vocab) {
  std::set<std::pair<int, int>> none;
  return sample_episodes(g, 1, rng, p, none, vocab).front();
}

Dataset make_dataset(const std::vector<NavGraph>& seen,
                     const std::vector<NavGraph>& unseen, const DatasetParams& p) {
  if (seen.empty() || unseen.empty())
    throw std::invalid_argument(
        "make_dataset: need at least one seen and one unseen graph");
  Dataset ds;
  ds.params = p;
  ds.vocab = build_vocabulary(p.features.n_landmarks);
  ds.graphs = seen;
  ds.graphs.insert(ds.graphs.end(), unseen.begin(), unseen.end());

  struct GraphPlan {
    const NavGraph* g;
    bool is_seen;
    size_t order;
  };
  std::vector<GraphPlan> plans;
  for (size_t i = 0; i < seen.size(); ++i) plans.push_back({&seen[i], true, i});
  for (size_t i = 0; i < unseen.size(); ++i) plans.push_back({&unseen[i], false, i});

  std::vector<std::vector<DatasetRecord>> per_graph(plans.size());
  std::exception_ptr failure;
  // Per-graph synthesis is pure given (graph, seeds), so graphs fan out
  // across threads; results are stitched back in graph order.
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) if (kernels::max_threads() > 1)
#endif
  for (size_t gi = 0; gi < plans.size(); ++gi) {
    try {
      const auto& plan = plans[gi];
      const NavGraph& g = *plan.g;
      Rng rng(seed_combine(p.episode_seed, kEpisodeTag, g.seed));
      std::set<std::pair<int, int>> taken;
      auto make_records = [&](const std::string& split, int count, int id_base) {
        auto specs = sample_episodes(g, count, rng, p, taken, ds.vocab);
        for (size_t i = 0; i < specs.size(); ++i) {
          DatasetRecord rec;
          rec.episode_id =
              g.id + "_" + split + "_" + std::to_string(id_base + static_cast<int>(i));
          rec.split = split;
          rec.spec = std::move(specs[i]);
          rec.trajectory = expert_trajectory(g, rec.spec, p);
          per_graph[gi].push_back(std::move(rec));
        }
      };
      if (plan.is_seen) {
        make_records("train", p.episodes_per_graph, 0);
        make_records("val_seen", p.val_seen_per_graph, p.episodes_per_graph);
      } else {
        make_records("val_unseen", p.unseen_episodes_per_graph, 0);
      }
    } catch (...) {
#ifdef _OPENMP
#pragma omp critical
#endif
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  for (auto& chunk : per_graph)
    for (auto& rec : chunk) ds.records.push_back(std::move(rec));
  return ds;
}

}  // namespace graphnav::env
