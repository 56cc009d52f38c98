#pragma once

#include <filesystem>

#include <nlohmann/json.hpp>

#include "clickseg/config.hpp"
#include "clickseg/nn/model.hpp"
#include "clickseg/revision.hpp"

namespace clickseg {

/// Everything needed to re-run the producing experiment: the full config
/// echo, split file hash, backend identity, revision and iteration.
nlohmann::json make_training_manifest(const ExperimentConfig& cfg, int iteration);

struct Checkpoint {
  std::filesystem::path weights;
  std::filesystem::path manifest_path;
  nlohmann::json manifest;
};

/// Writes <stem>.pt (weights and buffers) and <stem>.json (manifest).
Checkpoint save_checkpoint(SegmentationNet& net, const nlohmann::json& manifest, const std::filesystem::path& stem);

struct LoadedModel {
  SegmentationNet net{nullptr};
  nlohmann::json manifest;
  ModelConfig model;
  AssembleConfig assemble;
  std::string backend_id;
};

/// Accepts either the .pt or the .json path of a checkpoint. The network is
/// returned in eval mode.
LoadedModel load_checkpoint(const std::filesystem::path& path);

AssembleConfig assemble_config_of(const ExperimentConfig& cfg);

}  // namespace clickseg
