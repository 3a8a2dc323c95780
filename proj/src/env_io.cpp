#include "graphnav/env_io.hpp"

#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "graphnav/errors.hpp"
#include "graphnav/hash.hpp"
#include "graphnav/version.hpp"

namespace graphnav::env {

using json = nlohmann::json;

namespace {

void require_writable(const std::string& path, bool overwrite) {
  if (!overwrite && std::filesystem::exists(path))
    throw ExistsError("refusing to overwrite existing file: " + path);
  std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
}

json params_to_json(const DatasetParams& p) {
  return json{{"episodes_per_graph", p.episodes_per_graph},
              {"val_seen_per_graph", p.val_seen_per_graph},
              {"unseen_episodes_per_graph", p.unseen_episodes_per_graph},
              {"min_path_edges", p.min_path_edges},
              {"max_path_edges", p.max_path_edges},
              {"step_budget", p.step_budget},
              {"episode_seed", p.episode_seed},
              {"instruction_seed", p.instruction_seed},
              {"feature_seed", p.feature_seed},
              {"d_raw", p.features.d_raw},
              {"n_landmarks", p.features.n_landmarks},
              {"landmark_gain", p.features.landmark_gain},
              {"self_gain", p.features.self_gain},
              {"heading_gain", p.features.heading_gain},
              {"noise_gain", p.features.noise_gain},
              {"reward_bonus", p.reward.bonus},
              {"success_threshold", p.reward.success_threshold},
              {"filler_prob", p.instruction.filler_prob}};
}

DatasetParams params_from_json(const json& j) {
  DatasetParams p;
  p.episodes_per_graph = j.at("episodes_per_graph").get<int>();
  p.val_seen_per_graph = j.at("val_seen_per_graph").get<int>();
  p.unseen_episodes_per_graph = j.at("unseen_episodes_per_graph").get<int>();
  p.min_path_edges = j.at("min_path_edges").get<int>();
  p.max_path_edges = j.at("max_path_edges").get<int>();
  p.step_budget = j.at("step_budget").get<int>();
  p.episode_seed = j.at("episode_seed").get<uint64_t>();
  p.instruction_seed = j.at("instruction_seed").get<uint64_t>();
  p.feature_seed = j.at("feature_seed").get<uint64_t>();
  p.features.d_raw = j.at("d_raw").get<int>();
  p.features.n_landmarks = j.at("n_landmarks").get<int>();
  p.features.landmark_gain = j.at("landmark_gain").get<double>();
  p.features.self_gain = j.at("self_gain").get<double>();
  p.features.heading_gain = j.at("heading_gain").get<double>();
  p.features.noise_gain = j.at("noise_gain").get<double>();
  p.reward.bonus = j.at("reward_bonus").get<double>();
  p.reward.success_threshold = j.at("success_threshold").get<double>();
  p.instruction.filler_prob = j.at("filler_prob").get<double>();
  return p;
}

json observation_to_json(const Observation& o) {
  json views = json::array();
  for (const auto& v : o.views) views.push_back(json::array({v.heading, v.feature}));
  json nav = json::array();
  for (const auto& [view_idx, nid] : o.navigable) nav.push_back(json::array({view_idx, nid}));
  return json{{"vp", o.viewpoint_id}, {"views", std::move(views)}, {"nav", std::move(nav)}};
}

Observation observation_from_json(const json& j) {
  Observation o;
  o.viewpoint_id = j.at("vp").get<int>();
  for (const auto& v : j.at("views")) {
    View view;
    view.heading = v.at(0).get<int>();
    view.feature = v.at(1).get<std::vector<double>>();
    o.views.push_back(std::move(view));
  }
  for (const auto& n : j.at("nav")) o.navigable[n.at(0).get<int>()] = n.at(1).get<int>();
  return o;
}

}  // namespace

void save_world(const std::string& path, const WorldFile& world, bool overwrite) {
  if (world.graphs.size() != world.roles.size())
    throw std::invalid_argument("save_world: graphs and roles disagree");
  require_writable(path, overwrite);
  json graphs = json::array();
  for (size_t i = 0; i < world.graphs.size(); ++i) {
    const auto& g = world.graphs[i];
    json vps = json::array();
    for (const auto& v : g.viewpoints)
      vps.push_back(json::array({v.id, json::array({v.pos.x, v.pos.y, v.pos.z})}));
    json edges = json::array();
    for (const auto& e : g.edges) edges.push_back(json::array({e.a, e.b, e.length}));
    graphs.push_back(json{{"id", g.id},
                          {"seed", g.seed},
                          {"role", world.roles[i]},
                          {"viewpoints", std::move(vps)},
                          {"edges", std::move(edges)}});
  }
  json doc{{"format_version", kFileFormatVersion},
           {"config_hash", hex64(world.config_hash)},
           {"code_version", kCodeVersion},
           {"graphs", std::move(graphs)}};
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write world file: " + path);
  out << doc.dump() << "\n";
}

WorldFile load_world(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingInputError("cannot open world file: " + path);
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw MissingInputError("world file is not valid JSON: " + std::string(e.what()));
  }
  if (doc.value("format_version", -1) != kFileFormatVersion)
    throw MissingInputError("world file has an unsupported format version");
  WorldFile world;
  world.config_hash = std::stoull(doc.at("config_hash").get<std::string>(), nullptr, 16);
  for (const auto& gj : doc.at("graphs")) {
    NavGraph g;
    g.id = gj.at("id").get<std::string>();
    g.seed = gj.at("seed").get<uint64_t>();
    for (const auto& vj : gj.at("viewpoints")) {
      Viewpoint v;
      v.id = vj.at(0).get<int>();
      v.pos = {vj.at(1).at(0).get<double>(), vj.at(1).at(1).get<double>(),
               vj.at(1).at(2).get<double>()};
      g.viewpoints.push_back(v);
    }
    for (const auto& ej : gj.at("edges"))
      g.edges.push_back({ej.at(0).get<int>(), ej.at(1).get<int>(), ej.at(2).get<double>()});
    g.rebuild_adjacency();
    g.validate();
    world.graphs.push_back(std::move(g));
    world.roles.push_back(gj.at("role").get<std::string>());
  }
  return world;
}

void save_dataset(const std::string& path, const Dataset& ds, uint64_t config_hash,
                  bool overwrite) {
  require_writable(path, overwrite);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write dataset file: " + path);

  json splits;
  for (const char* s : {"train", "val_seen", "val_unseen"})
    splits[s] = ds.split(s).size();
  json header{{"type", "header"},
              {"format_version", kFileFormatVersion},
              {"config_hash", hex64(config_hash)},
              {"code_version", kCodeVersion},
              {"vocab", ds.vocab.names},
              {"params", params_to_json(ds.params)},
              {"splits", std::move(splits)}};
  out << header.dump() << "\n";

  for (const auto& rec : ds.records) {
    json steps = json::array();
    for (const auto& st : rec.trajectory.steps)
      steps.push_back(json{{"rtg", st.return_to_go},
                           {"obs", observation_to_json(st.observation)},
                           {"action", st.action_index},
                           {"reward", st.reward}});
    json line{{"type", "episode"},
              {"id", rec.episode_id},
              {"split", rec.split},
              {"graph_id", rec.spec.graph_id},
              {"start", rec.spec.start},
              {"goal", rec.spec.goal},
              {"instruction", rec.spec.instruction},
              {"expert_path", rec.spec.expert_path},
              {"expert_length", rec.spec.expert_length},
              {"steps", std::move(steps)},
              {"success", rec.trajectory.success},
              {"final_distance", rec.trajectory.final_distance},
              {"final_viewpoint", rec.trajectory.final_viewpoint}};
    out << line.dump() << "\n";
  }
}

Dataset load_dataset(const std::string& dataset_path, const std::string& world_path,
                     uint64_t* config_hash_out) {
  auto world = load_world(world_path);
  std::ifstream in(dataset_path);
  if (!in) throw MissingInputError("cannot open dataset file: " + dataset_path);

  Dataset ds;
  ds.graphs = std::move(world.graphs);

  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw MissingInputError("dataset line is not valid JSON: " + std::string(e.what()));
    }
    const std::string type = j.value("type", "");
    if (type == "header") {
      if (j.value("format_version", -1) != kFileFormatVersion)
        throw MissingInputError("dataset file has an unsupported format version");
      if (config_hash_out)
        *config_hash_out = std::stoull(j.at("config_hash").get<std::string>(), nullptr, 16);
      ds.params = params_from_json(j.at("params"));
      ds.vocab = build_vocabulary(ds.params.features.n_landmarks);
      if (ds.vocab.names != j.at("vocab").get<std::vector<std::string>>())
        throw MissingInputError("dataset vocabulary does not match this build");
      have_header = true;
    } else if (type == "episode") {
      if (!have_header) throw MissingInputError("dataset file is missing its header line");
      DatasetRecord rec;
      rec.episode_id = j.at("id").get<std::string>();
      rec.split = j.at("split").get<std::string>();
      rec.spec.graph_id = j.at("graph_id").get<std::string>();
      rec.spec.start = j.at("start").get<int>();
      rec.spec.goal = j.at("goal").get<int>();
      rec.spec.instruction = j.at("instruction").get<std::vector<int>>();
      rec.spec.expert_path = j.at("expert_path").get<std::vector<int>>();
      rec.spec.expert_length = j.at("expert_length").get<double>();
      for (const auto& sj : j.at("steps")) {
        TrajectoryStep st;
        st.return_to_go = sj.at("rtg").get<double>();
        st.observation = observation_from_json(sj.at("obs"));
        st.action_index = sj.at("action").get<int>();
        st.reward = sj.at("reward").get<double>();
        rec.trajectory.steps.push_back(std::move(st));
      }
      rec.trajectory.success = j.at("success").get<bool>();
      rec.trajectory.final_distance = j.at("final_distance").get<double>();
      rec.trajectory.final_viewpoint = j.at("final_viewpoint").get<int>();
      ds.records.push_back(std::move(rec));
    } else {
      throw MissingInputError("dataset file contains an unknown record type");
    }
  }
  if (!have_header) throw MissingInputError("dataset file is empty");
  return ds;
}

}  // namespace graphnav::env
