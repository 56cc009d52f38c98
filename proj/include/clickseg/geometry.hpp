#pragma once

#include <optional>
#include <span>
#include <vector>

#include "clickseg/grid.hpp"
#include "clickseg/types.hpp"

namespace clickseg {

inline constexpr float kDefaultDistanceCap = 255.0f;

/// Per-pixel Euclidean distance to the nearest click of one polarity,
/// truncated at `cap`. With no clicks every value equals `cap`.
struct DistanceMap {
  FloatGrid values;
  float cap = kDefaultDistanceCap;
};

/// Exact squared Euclidean distance from every pixel to the nearest seed
/// (separable lower-envelope transform). Pixels with no reachable seed get
/// +infinity.
Grid<double> squared_distance_to_seeds(const Mask& seeds);

DistanceMap euclidean_distance_map(std::span<const Point> clicks, int height, int width,
                                   float cap = kDefaultDistanceCap);

/// Positive proximity minus negative proximity: (cap - pos) - (cap - neg),
/// or just (cap - pos) without negatives. One channel for any click mix.
FloatGrid merge_polarity_maps(const DistanceMap& pos, const std::optional<DistanceMap>& neg);

enum class NormalizeRange { minus_one_one, zero_one };

/// Affine min-max map onto [-1, 1] (or [0, 1]). A zero-range input maps to
/// all zeros. Throws numerical on NaN/Inf.
FloatGrid normalize_channel(const FloatGrid& values, NormalizeRange range = NormalizeRange::minus_one_one);

/// Same, but the min/max are taken over pixels where `region` is set and
/// pixels outside keep `outside`.
FloatGrid normalize_channel(const FloatGrid& values, const Mask& region, float outside,
                            NormalizeRange range = NormalizeRange::minus_one_one);

/// |a ∩ b| / |a ∪ b|, 1.0 when both are empty.
double iou(const Mask& pred, const Mask& gt);
double iou(const InstanceMask& pred, const InstanceMask& gt);

/// Foreground pixels whose Euclidean distance to the nearest background
/// pixel (the frame counts as background) is at most `d`.
Mask boundary_band(const Mask& mask, double d);

/// IoU of the two masks' contour bands of width `d`.
double boundary_iou(const Mask& pred, const Mask& gt, double d);
double boundary_iou(const InstanceMask& pred, const InstanceMask& gt, double d);

/// Two percent of the image diagonal, rounded, at least one pixel.
double default_boundary_width(int height, int width);

/// Foreground pixels 4-adjacent to background or to the frame edge, in
/// row-major order. Throws on an empty mask.
std::vector<Point> mask_boundary(const Mask& mask);
std::vector<Point> mask_boundary(const InstanceMask& mask);

/// Distance from each foreground pixel to the nearest boundary pixel
/// (boundary pixels are 0). Background pixels get -1.
FloatGrid interior_distance(const Mask& mask);

}  // namespace clickseg
