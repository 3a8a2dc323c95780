#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "graphnav/env.hpp"

using namespace graphnav;
using namespace graphnav::env;

namespace {

NavGraph line_graph(const std::vector<double>& xs) {
  NavGraph g;
  g.id = "line";
  g.seed = 99;
  for (size_t i = 0; i < xs.size(); ++i)
    g.viewpoints.push_back({static_cast<int>(i), {xs[i], 0.0, 0.0}});
  for (size_t i = 0; i + 1 < xs.size(); ++i)
    g.edges.push_back({static_cast<int>(i), static_cast<int>(i + 1),
                       std::fabs(xs[i + 1] - xs[i])});
  g.rebuild_adjacency();
  return g;
}

NavGraph square_graph() {
  // Two equal-length routes 0->3; lexicographic tie-break must pick 0,1,3.
  NavGraph g;
  g.id = "square";
  g.seed = 7;
  g.viewpoints = {{0, {0, 0, 0}}, {1, {1, 0, 0}}, {2, {0, 1, 0}}, {3, {1, 1, 0}}};
  g.edges = {{0, 1, 1.0}, {0, 2, 1.0}, {1, 3, 1.0}, {2, 3, 1.0}};
  g.rebuild_adjacency();
  return g;
}

// Exhaustive simple-path enumeration; the independent oracle for shortest_path.
void all_paths_min(const NavGraph& g, int u, int target, std::vector<bool>& visited,
                   double len, double& best) {
  if (u == target) {
    best = std::min(best, len);
    return;
  }
  for (const auto& [v, w] : g.neighbors(u)) {
    if (visited[static_cast<size_t>(v)]) continue;
    visited[static_cast<size_t>(v)] = true;
    all_paths_min(g, v, target, visited, len + w, best);
    visited[static_cast<size_t>(v)] = false;
  }
}

double brute_force_shortest(const NavGraph& g, int a, int b) {
  std::vector<bool> visited(static_cast<size_t>(g.n_viewpoints()), false);
  visited[static_cast<size_t>(a)] = true;
  double best = std::numeric_limits<double>::infinity();
  all_paths_min(g, a, b, visited, 0.0, best);
  return best;
}

// Independent BFS reachability check.
bool bfs_all_reachable(const NavGraph& g) {
  std::set<int> seen{g.viewpoints.front().id};
  std::vector<int> stack{g.viewpoints.front().id};
  while (!stack.empty()) {
    int u = stack.back();
    stack.pop_back();
    for (const auto& [v, w] : g.neighbors(u)) {
      (void)w;
      if (seen.insert(v).second) stack.push_back(v);
    }
  }
  return seen.size() == g.viewpoints.size();
}

}  // namespace

TEST_CASE("generate_world: minimal two-node world") {
  auto g = generate_world(7, 2, 1.0);
  CHECK(g.n_viewpoints() == 2);
  CHECK(g.edges.size() == 1);
  CHECK(bfs_all_reachable(g));
}

TEST_CASE("generate_world: rejects n < 2 and degree < 1") {
  CHECK_THROWS_AS(generate_world(7, 1, 3.0), std::invalid_argument);
  CHECK_THROWS_AS(generate_world(7, 10, 0.5), std::invalid_argument);
}

TEST_CASE("generate_world: deterministic, connected, near target degree") {
  auto g1 = generate_world(7, 50, 3.0);
  auto g2 = generate_world(7, 50, 3.0);
  REQUIRE(g1.n_viewpoints() == g2.n_viewpoints());
  for (int i = 0; i < g1.n_viewpoints(); ++i) {
    CHECK(g1.viewpoints[static_cast<size_t>(i)].pos.x == g2.viewpoints[static_cast<size_t>(i)].pos.x);
    CHECK(g1.viewpoints[static_cast<size_t>(i)].pos.y == g2.viewpoints[static_cast<size_t>(i)].pos.y);
    CHECK(g1.viewpoints[static_cast<size_t>(i)].pos.z == g2.viewpoints[static_cast<size_t>(i)].pos.z);
  }
  REQUIRE(g1.edges.size() == g2.edges.size());
  for (size_t i = 0; i < g1.edges.size(); ++i) {
    CHECK(g1.edges[i].a == g2.edges[i].a);
    CHECK(g1.edges[i].b == g2.edges[i].b);
    CHECK(g1.edges[i].length == g2.edges[i].length);
  }
  CHECK(bfs_all_reachable(g1));
  CHECK(std::fabs(g1.mean_degree() - 3.0) <= 1.0);

  for (uint64_t seed : {1ULL, 2ULL, 3ULL, 4ULL}) {
    auto g = generate_world(seed, 40, 3.0);
    CHECK(bfs_all_reachable(g));
    CHECK(std::fabs(g.mean_degree() - 3.0) <= 1.0);
    CHECK_NOTHROW(g.validate());
  }
}

TEST_CASE("observe: isolated node yields STOP-only action set") {
  NavGraph g;
  g.id = "frag";
  g.seed = 5;
  g.viewpoints = {{0, {0, 0, 0}}, {1, {2, 0, 0}}, {2, {9, 9, 0}}};
  g.edges = {{0, 1, 2.0}};
  g.rebuild_adjacency();  // node 2 is isolated; validate() would reject this
  auto o = observe(g, 2, 11, FeatureParams{});
  CHECK(o.navigable.empty());
  CHECK(action_set(o).size() == 1);
}

TEST_CASE("observe: navigable map is a bijection onto graph neighbors") {
  auto g = generate_world(21, 40, 3.0);
  FeatureParams fp;
  for (const auto& vp : g.viewpoints) {
    auto o = observe(g, vp.id, 11, fp);
    CHECK(o.views.size() == static_cast<size_t>(kNumViews));
    std::set<int> mapped;
    for (const auto& [view_idx, nid] : o.navigable) {
      CHECK(view_idx >= 0);
      CHECK(view_idx < kNumViews);
      mapped.insert(nid);
    }
    std::set<int> expected;
    for (const auto& [nid, w] : g.neighbors(vp.id)) {
      (void)w;
      expected.insert(nid);
    }
    CHECK(mapped == expected);
    CHECK(action_set(o).size() == static_cast<int>(expected.size()) + 1);
  }
}

TEST_CASE("observe: deterministic features, distinct across neighbors") {
  auto g = generate_world(22, 30, 3.0);
  FeatureParams fp;
  auto o1 = observe(g, 4, 11, fp);
  auto o2 = observe(g, 4, 11, fp);
  for (int i = 0; i < kNumViews; ++i)
    CHECK(o1.views[static_cast<size_t>(i)].feature == o2.views[static_cast<size_t>(i)].feature);

  // Pairwise distinct embeddings for the navigable views of each node.
  for (const auto& vp : g.viewpoints) {
    auto o = observe(g, vp.id, 11, fp);
    std::vector<std::vector<double>> feats;
    for (const auto& [view_idx, nid] : o.navigable) {
      (void)nid;
      feats.push_back(o.views[static_cast<size_t>(view_idx)].feature);
    }
    for (size_t i = 0; i < feats.size(); ++i)
      for (size_t j = i + 1; j < feats.size(); ++j) CHECK(feats[i] != feats[j]);
  }
  CHECK_THROWS_AS(observe(g, 12345, 11, fp), std::invalid_argument);
}

TEST_CASE("step: STOP at goal pays the bonus") {
  auto g = line_graph({0.0, 2.0, 5.0});
  RewardParams rp;  // bonus 2.0, threshold 3.0
  auto r = step(g, 2, kStopAction, 2, 11, FeatureParams{}, rp);
  CHECK(r.reward == rp.bonus);
  CHECK(r.done);
  CHECK(r.distance_to_goal == 0.0);
}

TEST_CASE("step: geodesic progress is the shaped reward") {
  // d(0, goal=2) = 5, d(1, goal=2) = 3: moving 0 -> 1 is worth 2.0.
  auto g = line_graph({0.0, 2.0, 5.0});
  Episode ep(g, 0, 2, 11, FeatureParams{}, RewardParams{}, 15);
  const auto& as = ep.actions();
  REQUIRE(as.size() == 2);  // STOP + single neighbor
  auto r = ep.step(1);
  CHECK(r.reward == doctest::Approx(2.0).epsilon(1e-12));
  CHECK_FALSE(r.done);
  CHECK_THROWS_AS(ep.step(99), std::invalid_argument);
}

TEST_CASE("step: STOP outside the threshold pays -bonus") {
  auto g = line_graph({0.0, 2.0, 5.0, 9.0});
  RewardParams rp;
  auto r = step(g, 0, kStopAction, 3, 11, FeatureParams{}, rp);
  CHECK(r.reward == -rp.bonus);
  CHECK(r.done);
}

TEST_CASE("step: expert rollout reward telescopes to d(start,goal) + bonus") {
  // Integer edge lengths make the telescoped sum exact in doubles.
  auto g = line_graph({0.0, 1.0, 3.0, 6.0, 8.0});
  DatasetParams p;
  EpisodeSpec spec;
  spec.graph_id = g.id;
  spec.start = 0;
  spec.goal = 4;
  auto [path, len] = shortest_path(g, 0, 4);
  spec.expert_path = path;
  spec.expert_length = len;
  auto traj = expert_trajectory(g, spec, p);
  double total = 0.0;
  for (const auto& st : traj.steps) total += st.reward;
  CHECK(total == 8.0 + p.reward.bonus);
  CHECK(traj.total_return() == 8.0 + p.reward.bonus);
  CHECK(traj.success);
  CHECK(traj.final_distance == 0.0);
  CHECK(traj.steps.back().action_index == kStopAction);
}

TEST_CASE("step budget terminates episodes without a bonus") {
  auto g = line_graph({0.0, 1.0, 2.0, 3.0});
  Episode ep(g, 0, 3, 11, FeatureParams{}, RewardParams{}, 2);
  auto r1 = ep.step(1);
  CHECK_FALSE(r1.done);
  int forward = -1;  // the action that moves right, toward node 2
  for (int ai = 1; ai < ep.actions().size(); ++ai)
    if (ep.observation().navigable.at(ep.actions().view_of(ai)) == 2) forward = ai;
  REQUIRE(forward > 0);
  auto r2 = ep.step(forward);
  CHECK(r2.done);
  CHECK(ep.done());
  CHECK(r2.reward == doctest::Approx(1.0));  // progress only, no bonus
  CHECK_THROWS_AS(ep.step(0), std::logic_error);
}

TEST_CASE("shortest_path: identity and two-node cases") {
  auto g = line_graph({0.0, 4.0});
  auto [p0, l0] = shortest_path(g, 1, 1);
  CHECK(p0 == std::vector<int>{1});
  CHECK(l0 == 0.0);
  auto [p1, l1] = shortest_path(g, 0, 1);
  CHECK(p1 == std::vector<int>{0, 1});
  CHECK(l1 == 4.0);
}

TEST_CASE("shortest_path: lexicographic tie-break") {
  auto g = square_graph();
  auto [p, l] = shortest_path(g, 0, 3);
  CHECK(l == doctest::Approx(2.0));
  CHECK(p == std::vector<int>{0, 1, 3});
}

TEST_CASE("shortest_path: matches exhaustive enumeration on a small world") {
  auto g = generate_world(31, 10, 3.0);
  for (int a = 0; a < g.n_viewpoints(); ++a)
    for (int b = 0; b < g.n_viewpoints(); ++b) {
      auto [p, l] = shortest_path(g, a, b);
      const double want = brute_force_shortest(g, a, b);
      CHECK(l == doctest::Approx(want).epsilon(1e-12));
      // Path validity: consecutive nodes adjacent, length adds up.
      double sum = 0.0;
      for (size_t i = 0; i + 1 < p.size(); ++i) {
        bool adjacent = false;
        for (const auto& [v, w] : g.neighbors(p[i]))
          if (v == p[i + 1]) {
            adjacent = true;
            sum += w;
          }
        CHECK(adjacent);
      }
      CHECK(sum == doctest::Approx(l).epsilon(1e-12));
    }
}

TEST_CASE("generate_instruction: nonempty, deterministic, needs a path") {
  auto g = line_graph({0.0, 2.0});
  auto vocab = build_vocabulary(12);
  FeatureParams fp;
  InstructionParams ip;
  auto t1 = generate_instruction(g, {0, 1}, 3, vocab, fp, ip);
  CHECK(!t1.empty());
  auto t2 = generate_instruction(g, {0, 1}, 3, vocab, fp, ip);
  CHECK(t1 == t2);
  CHECK_THROWS_AS(generate_instruction(g, {}, 3, vocab, fp, ip), std::invalid_argument);
  for (int tok : t1) {
    CHECK(tok >= 0);
    CHECK(tok < vocab.size());
  }
}

TEST_CASE("make_dataset: requires an unseen graph") {
  std::vector<NavGraph> seen{generate_world(1, 20, 3.0)};
  seen[0].id = "g0";
  CHECK_THROWS_AS(make_dataset(seen, {}, DatasetParams{}), std::invalid_argument);
}

TEST_CASE("make_dataset: expert trajectories satisfy every invariant") {
  std::vector<NavGraph> seen{generate_world(41, 40, 3.0), generate_world(42, 40, 3.0)};
  seen[0].id = "g0";
  seen[1].id = "g1";
  std::vector<NavGraph> unseen{generate_world(43, 40, 3.0)};
  unseen[0].id = "u0";
  DatasetParams p;
  p.episodes_per_graph = 12;
  p.val_seen_per_graph = 4;
  p.unseen_episodes_per_graph = 6;
  auto ds = make_dataset(seen, unseen, p);

  CHECK(ds.split("train").size() == 24);
  CHECK(ds.split("val_seen").size() == 8);
  CHECK(ds.split("val_unseen").size() == 6);

  for (const auto& rec : ds.records) {
    const auto& g = ds.graph_by_id(rec.spec.graph_id);
    // Expert optimality: length equals the shortest-path length.
    auto [path, len] = shortest_path(g, rec.spec.start, rec.spec.goal);
    CHECK(rec.spec.expert_path == path);
    CHECK(rec.spec.expert_length == doctest::Approx(len).epsilon(1e-12));
    CHECK(rec.spec.start != rec.spec.goal);
    CHECK(rec.spec.expert_length > 0.0);
    // Final action is STOP at the goal, success with zero error.
    CHECK(rec.trajectory.steps.back().action_index == kStopAction);
    CHECK(rec.trajectory.final_viewpoint == rec.spec.goal);
    CHECK(rec.trajectory.success);
    CHECK(rec.trajectory.final_distance == 0.0);
    CHECK(rec.trajectory.length() <= p.step_budget);
    // Return-to-go recurrence holds bitwise at every index.
    const auto& steps = rec.trajectory.steps;
    for (size_t i = 0; i + 1 < steps.size(); ++i)
      CHECK(steps[i].return_to_go == steps[i + 1].return_to_go + steps[i].reward);
    CHECK(steps.back().return_to_go == steps.back().reward);
    // rtg[0] telescopes to d(start, goal) + bonus.
    CHECK(rec.trajectory.total_return() ==
          doctest::Approx(rec.spec.expert_length + p.reward.bonus).epsilon(1e-9));
    // Action indices are valid for each step's action set.
    for (const auto& st : steps) {
      const auto as = action_set(st.observation);
      CHECK(st.action_index >= 0);
      CHECK(st.action_index < as.size());
    }
  }
}

TEST_CASE("make_dataset: deterministic and instruction-discriminating") {
  std::vector<NavGraph> seen{generate_world(51, 36, 3.0)};
  seen[0].id = "g0";
  std::vector<NavGraph> unseen{generate_world(52, 36, 3.0)};
  unseen[0].id = "u0";
  DatasetParams p;
  p.episodes_per_graph = 20;
  p.val_seen_per_graph = 5;
  p.unseen_episodes_per_graph = 8;
  auto d1 = make_dataset(seen, unseen, p);
  auto d2 = make_dataset(seen, unseen, p);
  REQUIRE(d1.records.size() == d2.records.size());
  for (size_t i = 0; i < d1.records.size(); ++i) {
    CHECK(d1.records[i].episode_id == d2.records[i].episode_id);
    CHECK(d1.records[i].spec.instruction == d2.records[i].spec.instruction);
    CHECK(d1.records[i].trajectory.total_return() == d2.records[i].trajectory.total_return());
    for (size_t s = 0; s < d1.records[i].trajectory.steps.size(); ++s) {
      const auto& a = d1.records[i].trajectory.steps[s];
      const auto& b = d2.records[i].trajectory.steps[s];
      CHECK(a.observation.views[0].feature == b.observation.views[0].feature);
    }
  }

  // Episodes sharing (graph, start) but with different goals must carry
  // distinct instructions.
  for (size_t i = 0; i < d1.records.size(); ++i)
    for (size_t j = i + 1; j < d1.records.size(); ++j) {
      const auto& a = d1.records[i];
      const auto& b = d1.records[j];
      if (a.spec.graph_id == b.spec.graph_id && a.spec.start == b.spec.start &&
          a.spec.goal != b.spec.goal)
        CHECK(a.spec.instruction != b.spec.instruction);
    }

  // Success threshold is satisfiable from at least one non-goal node.
  for (const auto& rec : d1.records) {
    const auto& g = d1.graph_by_id(rec.spec.graph_id);
    auto dist = geodesic_from(g, rec.spec.goal);
    bool satisfiable = false;
    for (const auto& [vid, d] : dist)
      if (vid != rec.spec.goal && d <= p.reward.success_threshold) satisfiable = true;
    CHECK(satisfiable);
  }
}
