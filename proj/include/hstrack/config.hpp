#pragma once

#include <map>
#include <string>

#include "hstrack/synthdata.hpp"
#include "hstrack/tracker.hpp"

namespace hstrack {

/// Plain-text key=value store ('#' comments, blank lines ignored).
class KeyValues {
 public:
  static KeyValues parse_text(const std::string& text);
  static KeyValues parse_file(const std::string& path);

  bool has(const std::string& key) const { return kv_.count(key) > 0; }
  std::string get(const std::string& key, const std::string& fallback) const;
  double get(const std::string& key, double fallback) const;
  int get(const std::string& key, int fallback) const;
  bool get(const std::string& key, bool fallback) const;
  uint64_t get(const std::string& key, uint64_t fallback) const;

  void set(const std::string& key, const std::string& value) { kv_[key] = value; }
  const std::map<std::string, std::string>& entries() const { return kv_; }

 private:
  std::map<std::string, std::string> kv_;
};

struct TrainConfig {
  TrackerConfig model;
  int epochs = 3;
  int pairs_per_epoch = 288;
  int batch_size = 16;
  int max_steps = 0;         // >0 caps the total step count
  double lr = 4e-5;
  double weight_decay = 1e-4;
  double lr_drop_frac = 0.94;  // lr x0.1 after this fraction of the run
  bool frozen_backbone = false;
  LossWeights weights;
  int warmup_steps = 100;    // gt-driven relevance mask before this step
  uint64_t seed = 0;
};

TrainConfig train_config_from(const KeyValues& kv);
TrainConfig parse_train_config(const std::string& path);
std::string serialize_train_config(const TrainConfig& cfg);

/// Scene specs use the same key=value format; `sequences` selects how many
/// sequences `gen` writes (per-sequence seeds derive from the master seed).
SceneSpec scene_spec_from(const KeyValues& kv);
SceneSpec parse_scene_spec(const std::string& path);

}  // namespace hstrack
