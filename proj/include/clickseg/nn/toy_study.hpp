#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "clickseg/dataset.hpp"

namespace clickseg {

struct ToyStudyOptions {
  int train_images = 48;
  int eval_images = 32;
  int iterations = 600;
  /// Same-class disks touching the target disk (see make_two_shape_toy).
  int distractors = 0;
  /// Training conditions for the sweep study; the evaluated specs when empty.
  std::vector<InteractionSpec> train_mix;
};

/// Two models on the two-shape toy (disk seen, square held out), one with the
/// saliency channel and one with it zeroed, scored on unseen squares of a
/// separately generated eval set with one click plus the class name.
struct TextAblationOutcome {
  std::uint64_t seed = 0;
  double unseen_miou_text = 0.0;
  double unseen_miou_zeroed = 0.0;
};

TextAblationOutcome run_text_ablation_study(const std::filesystem::path& work, std::uint64_t seed,
                                            const ToyStudyOptions& options = {});

/// One model trained on a random mix of interaction conditions on the tile
/// toy, then evaluated (overall mIoU) under each of `specs` with paired
/// clicks.
struct SweepOutcome {
  std::uint64_t seed = 0;
  std::vector<InteractionSpec> specs;
  std::vector<double> overall_miou;
  std::vector<double> seen_miou;
  std::vector<double> unseen_miou;
};

SweepOutcome run_interaction_sweep_study(const std::filesystem::path& work, std::uint64_t seed,
                                         const std::vector<InteractionSpec>& specs,
                                         const ToyStudyOptions& options = {});

}  // namespace clickseg
