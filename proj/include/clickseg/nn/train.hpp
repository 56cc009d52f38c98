#pragma once

#include <functional>
#include <optional>

#include "clickseg/nn/checkpoint.hpp"

namespace clickseg {

struct TrainProgress {
  int iteration = 0;
  double loss = 0.0;
  double lr = 0.0;
};

struct TrainOptions {
  std::function<void(const TrainProgress&)> on_step;
  /// Write periodic and final checkpoints plus loss.csv under cfg.out_dir.
  bool save = true;
};

struct TrainResult {
  SegmentationNet net{nullptr};
  std::optional<Checkpoint> checkpoint;
  std::vector<double> losses;
};

double poly_lr(const TrainConfig& cfg, int iteration);

/// Masked cross-entropy training over the loader's items for
/// cfg.train.iterations steps, cycling epochs. A non-finite loss aborts with
/// diagnostics.json (batch ids, per-channel statistics) in cfg.out_dir.
TrainResult train_model(const ExperimentConfig& cfg, const Loader& loader, const ExampleBuilder& builder,
                        const TrainOptions& options = {});

}  // namespace clickseg
