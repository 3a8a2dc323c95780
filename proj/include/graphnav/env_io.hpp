#pragma once

#include <string>
#include <vector>

#include "graphnav/env.hpp"

// World and dataset persistence. Both formats are line-oriented structured
// text (JSON), carry a format-version field, and embed the run's config hash
// and code version. Doubles survive the round trip bit-exactly.

namespace graphnav::env {

struct WorldFile {
  std::vector<NavGraph> graphs;
  std::vector<std::string> roles;  // "seen" / "unseen", parallel to graphs
  uint64_t config_hash = 0;
};

void save_world(const std::string& path, const WorldFile& world, bool overwrite);
WorldFile load_world(const std::string& path);

// One JSON record per line: a header line first, then one line per episode.
void save_dataset(const std::string& path, const Dataset& ds, uint64_t config_hash,
                  bool overwrite);
// Graphs come from the world file; the dataset file carries everything else.
Dataset load_dataset(const std::string& dataset_path, const std::string& world_path,
                     uint64_t* config_hash_out = nullptr);

}  // namespace graphnav::env
