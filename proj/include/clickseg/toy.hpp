#pragma once

#include <cstdint>
#include <filesystem>

#include "clickseg/config.hpp"

namespace clickseg {

/// Paths of a generated synthetic dataset (COCO layout plus split file).
struct ToyDataset {
  std::filesystem::path annotations;
  std::filesystem::path image_root;
  std::filesystem::path split;
};

struct ToyOptions {
  int images = 40;
  int size = 64;
  std::uint64_t seed = 0;
  /// Extra disks of the same colour touching the first one (two-shape toy).
  int distractors = 0;
};

/// Each image holds a disk ("disk", seen) and a square ("square", unseen)
/// of one colour, touching, on a noisy background. A click inside either
/// shape alone does not say where the object ends. With `distractors`, more
/// same-class disks touch the first, so the class name alone does not say
/// which disk is meant either.
ToyDataset make_two_shape_toy(const std::filesystem::path& dir, const ToyOptions& options);

/// Rows of 2-3 touching "tile" rectangles of one colour: the seams between
/// instances are invisible, so one click does not say where its tile ends.
/// One tile carries a differently coloured "badge" whose pixels belong to
/// both instances, so a click on it does not say which one is meant.
ToyDataset make_tile_toy(const std::filesystem::path& dir, const ToyOptions& options);

/// A "person" body with a "tie" nested inside it; both classes are seen.
/// The same click on the tie is a valid click for either instance.
ToyDataset make_person_tie_toy(const std::filesystem::path& dir, const ToyOptions& options);

/// Desk-preset run on a toy dataset: 64x64 inputs, click constraints scaled
/// to the image size, annotation-derived saliency, Adam.
ExperimentConfig toy_experiment_config(const ToyDataset& data, const std::filesystem::path& out_dir);

}  // namespace clickseg
