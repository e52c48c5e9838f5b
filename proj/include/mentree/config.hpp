#ifndef MENTREE_CONFIG_HPP_
#define MENTREE_CONFIG_HPP_

#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "mentree/corpus.hpp"
#include "mentree/error.hpp"
#include "mentree/neural.hpp"
#include "mentree/rl.hpp"
#include "mentree/supervised.hpp"

namespace mentree {

// One file, one section per module:
//   { "labels": [...], "features": {...}, "environment": {...},
//     "learner": {...}, "supervised": {...}, "seed": 1,
//     "embeddings": {"path": ..., "seed": ...}, "gazetteers": [paths] }
struct ExperimentConfig {
  std::vector<std::string> labels;  // mention labels; empty = infer from data
  FeatureConfig features;
  LearnerConfig learner;
  SupervisedConfig supervised;
  std::optional<std::string> embeddings;
  std::vector<std::string> gazetteers;
};

inline const std::set<std::string>& environment_keys() {
  static const std::set<std::string> keys{"mode", "pool", "min_count", "partial_reward", "left_context"};
  return keys;
}

inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw config_error("config must be a JSON object");
  ExperimentConfig c;
  c.learner.curriculum.clear();
  try {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const auto& k = it.key();
      const auto& v = *it;
      if (k == "labels") {
        c.labels = v.get<std::vector<std::string>>();
      } else if (k == "features") {
        c.features = v.get<FeatureConfig>();
      } else if (k == "environment") {
        for (auto jt = v.begin(); jt != v.end(); ++jt)
          if (!environment_keys().count(jt.key())) throw config_error("unknown environment key '" + jt.key() + "'");
        update_from_json(c.learner, v);
      } else if (k == "learner") {
        for (auto jt = v.begin(); jt != v.end(); ++jt)
          if (environment_keys().count(jt.key()))
            throw config_error("key '" + jt.key() + "' belongs in the environment section");
        update_from_json(c.learner, v);
      } else if (k == "supervised") {
        update_from_json(c.supervised, v);
      } else if (k == "seed") {
        c.learner.seed = c.supervised.seed = v.get<std::uint64_t>();
      } else if (k == "embeddings") {
        c.embeddings = v.get<std::string>();
      } else if (k == "gazetteers") {
        c.gazetteers = v.get<std::vector<std::string>>();
      } else {
        throw config_error("unknown config key '" + k + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw config_error(std::string("config: ") + e.what());
  }
  // A section-level seed wins over the top-level one.
  if (j.contains("learner") && j["learner"].contains("seed")) c.learner.seed = j["learner"]["seed"].get<std::uint64_t>();
  if (j.contains("supervised") && j["supervised"].contains("seed"))
    c.supervised.seed = j["supervised"]["seed"].get<std::uint64_t>();
  c.features.validate();
  c.learner.validate();
  c.supervised.validate();
  return c;
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json learner = to_json(c.learner);
  nlohmann::json env;
  for (const auto& k : environment_keys()) {
    env[k] = learner[k];
    learner.erase(k);
  }
  nlohmann::json j = {{"labels", c.labels},
                      {"features", c.features},
                      {"environment", env},
                      {"learner", learner},
                      {"supervised", to_json(c.supervised)},
                      {"gazetteers", c.gazetteers}};
  if (c.embeddings) j["embeddings"] = *c.embeddings;
  return j;
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw config_error(path + ": " + e.what());
  }
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  return experiment_config_from_json(read_json_file(path));
}

// Mention labels named by the B-/I- tags of a CoNLL file, in first-seen
// order.
inline std::vector<std::string> infer_labels(std::istream& in) {
  std::vector<std::string> out;
  std::set<std::string> seen;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto cols = split_ws(line);
    if (cols.empty() || cols[0] == "-DOCSTART-") continue;
    const std::string& tag = cols.back();
    if (tag == "O") continue;
    if (tag.size() < 3 || (tag[0] != 'B' && tag[0] != 'I') || tag[1] != '-')
      throw parse_error("malformed tag '" + tag + "'", number);
    const std::string label = tag.substr(2);
    if (seen.insert(label).second) out.push_back(label);
  }
  return out;
}

inline std::vector<std::string> infer_labels_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open " + path);
  return infer_labels(in);
}

}  // namespace mentree

#endif  // MENTREE_CONFIG_HPP_
