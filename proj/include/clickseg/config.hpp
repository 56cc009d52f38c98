#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "clickseg/class_split.hpp"
#include "clickseg/click_synthesis.hpp"
#include "clickseg/dataset.hpp"
#include "clickseg/geometry.hpp"

namespace clickseg {

/// Residual encoder + atrous pyramid + decoder with a low-level skip.
struct ModelConfig {
  int in_channels = 5;
  int out_classes = 2;
  std::string backbone = "resnet50";
  /// Bottleneck blocks (expansion 4) when true, basic 3x3 pairs otherwise.
  bool bottleneck = true;
  int stem_width = 64;
  std::vector<int> stage_blocks{3, 4, 6, 3};
  std::vector<int> stage_widths{64, 128, 256, 512};
  int output_stride = 8;
  std::vector<int> aspp_dilations{1, 12, 24, 36};
  int aspp_channels = 512;
  int low_level_channels = 48;
  double dropout = 0.1;

  void validate() const;
  /// Reference recipe: ResNet-50 style encoder, output stride 8.
  static ModelConfig resnet50();
  /// Reduced depth and width for CPU runs.
  static ModelConfig desk();
  static ModelConfig preset(std::string_view name);
};

struct TrainConfig {
  std::string optimizer = "sgd";  // sgd | adam
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  /// lr(t) = (lr - min_lr) * (1 - t / T)^power + min_lr
  double poly_power = 0.9;
  double min_lr = 1e-4;
  int iterations = 90000;
  int batch_size = 32;
  std::uint64_t seed = 0;
  int checkpoint_every = 10000;
  int log_every = 50;
  int workers = 1;

  void validate() const;
};

struct DatasetSource {
  std::filesystem::path annotations;
  std::filesystem::path image_root;
  /// Pre-computed JSON-lines interactions; synthesized from `clicks` when absent.
  std::optional<std::filesystem::path> interactions;
};

struct BackendConfig {
  std::string id = "maskclip";  // maskclip | stub | annotation_stub | gradcam | transformer_explainability
  std::optional<std::filesystem::path> cache_dir;
  bool softmax = false;
  /// Backbone variant looked up in the weights registry.
  std::string variant = "ViT-B/16";
  std::filesystem::path registry = "assets/backends.json";
  std::string prompt_template = "a photo of a {}";
  /// annotation_stub: Gaussian width as a fraction of sqrt(instance area).
  double sigma_scale = 0.5;
};

struct ExperimentConfig {
  std::string name = "experiment";
  DatasetName dataset_name = DatasetName::custom;
  std::filesystem::path split;
  DatasetSource train_data;
  DatasetSource eval_data;
  ClickConfig clicks;
  BackendConfig backend;
  int height = 512;
  int width = 512;
  bool use_text = true;
  bool use_clicks = true;
  NormalizeRange range = NormalizeRange::minus_one_one;
  /// Truncation distance of the click distance maps, in grid pixels.
  float distance_cap = kDefaultDistanceCap;
  bool resample_clicks_per_epoch = false;
  /// Train on a random mix of interaction conditions (see ExampleBuilder).
  std::vector<InteractionSpec> interaction_mix;
  ModelConfig model;
  TrainConfig train;
  std::filesystem::path out_dir = "runs/experiment";

  void validate() const;
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const BackendConfig& c);
BackendConfig backend_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& c);

/// Relative paths resolve against `base_dir`. Unknown keys are errors.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

}  // namespace clickseg
