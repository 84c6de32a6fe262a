#pragma once

#include <string>
#include <vector>

#include "hypermae/losses.hpp"
#include "hypermae/model.hpp"

namespace hypermae {

struct StageSpec {
  std::string name;
  std::string sensors;         // comma-separated sensor keys; empty = all
  std::size_t per_sensor = 0;  // cap per sensor key; 0 = all
  std::size_t epochs = 20;
  std::size_t warmup = 2;
};

struct TrainConfig {
  std::uint64_t seed = 42;
  std::string precision = "f32";  // f32 | f64
  double lr_base = 1.5e-4;
  double lr_min = 1e-5;
  std::size_t batch = 8;
  double mask_ratio = 0.75;
  double name_dropout = 0.10;
  std::size_t accum_steps = 1;
  std::size_t workers = 1;
  std::size_t shards = 1;
  std::size_t band_window = 100;
  std::size_t band_stride = 32;
  std::size_t max_steps = 0;  // 0 = no cap; used by determinism checks
  LossConfig loss;
  ModelConfig model;
  std::vector<StageSpec> stages;
  std::string data_dir = "data";
  std::string out_dir = "runs";
  std::string text_table;  // optional text-embedding table file

  void validate() const;
};

/// Desk-scale defaults with the three-stage progressive plan.
TrainConfig default_config();

/// Strict key-value parser ('key = value' lines, '#' comments). Unknown keys
/// are rejected by name.
TrainConfig parse_config_text(const std::string& text);
TrainConfig parse_config_file(const std::string& path);
std::string serialize_config(const TrainConfig& cfg);

/// Canonical text for everything that determines parameter shapes; embedded
/// in checkpoints and compared on load.
std::string model_signature(const ModelConfig& cfg);
ModelConfig parse_model_signature(const std::string& text);

}  // namespace hypermae
