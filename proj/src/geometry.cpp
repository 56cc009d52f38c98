#include "clickseg/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace clickseg {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Lower envelope of parabolas (q - p)^2 + f[p] over the finite entries of f.
// `f` and `out` are strided views of length n.
void distance_1d(const double* f, std::size_t f_stride, double* out, std::size_t out_stride, int n,
                 std::vector<int>& v, std::vector<double>& z) {
  v.resize(n);
  z.resize(n + 1);
  int k = -1;
  for (int q = 0; q < n; ++q) {
    const double fq = f[q * f_stride];
    if (!std::isfinite(fq)) continue;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      continue;
    }
    const auto intersect = [&](int p) {
      return ((fq + double(q) * q) - (f[p * f_stride] + double(p) * p)) / (2.0 * q - 2.0 * p);
    };
    double s = intersect(v[k]);
    while (s <= z[k]) {  // z[0] is -inf, so this stops at k == 0
      --k;
      s = intersect(v[k]);
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  if (k < 0) {
    for (int q = 0; q < n; ++q) out[q * out_stride] = kInf;
    return;
  }
  int j = 0;
  for (int q = 0; q < n; ++q) {
    while (z[j + 1] < q) ++j;
    const double d = double(q) - v[j];
    out[q * out_stride] = d * d + f[v[j] * f_stride];
  }
}

}  // namespace

Grid<double> squared_distance_to_seeds(const Mask& seeds) {
  const int h = seeds.height();
  const int w = seeds.width();
  Grid<double> f(h, w, kInf);
  for (std::size_t i = 0; i < seeds.size(); ++i)
    if (seeds[i]) f[i] = 0.0;
  Grid<double> tmp(h, w, kInf);
  std::vector<int> v;
  std::vector<double> z;
  for (int x = 0; x < w; ++x) distance_1d(f.data() + x, w, tmp.data() + x, w, h, v, z);
  for (int y = 0; y < h; ++y) {
    distance_1d(tmp.data() + std::size_t(y) * w, 1, f.data() + std::size_t(y) * w, 1, w, v, z);
  }
  return f;
}

DistanceMap euclidean_distance_map(std::span<const Point> clicks, int height, int width, float cap) {
  if (height <= 0 || width <= 0) throw Error(ErrorCode::invalid_argument, "distance map: shape must be positive");
  if (!(cap > 0.0f)) throw Error(ErrorCode::invalid_argument, "distance map: cap must be positive");
  Mask seeds(height, width, 0);
  for (std::size_t i = 0; i < clicks.size(); ++i) {
    const auto& c = clicks[i];
    if (!seeds.contains(c.y, c.x)) {
      throw Error(ErrorCode::out_of_range, "distance map: click " + std::to_string(i) + " at (" +
                                               std::to_string(c.x) + "," + std::to_string(c.y) +
                                               ") is outside the " + std::to_string(width) + "x" +
                                               std::to_string(height) + " frame");
    }
    seeds(c.y, c.x) = 1;
  }
  DistanceMap out{FloatGrid(height, width, cap), cap};
  if (clicks.empty()) return out;
  const auto sq = squared_distance_to_seeds(seeds);
  for (std::size_t i = 0; i < sq.size(); ++i) {
    out.values[i] = static_cast<float>(std::min<double>(std::sqrt(sq[i]), cap));
  }
  return out;
}

FloatGrid merge_polarity_maps(const DistanceMap& pos, const std::optional<DistanceMap>& neg) {
  FloatGrid out(pos.values.height(), pos.values.width());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pos.cap - pos.values[i];
  if (neg) {
    require_same_shape(pos.values, neg->values, "merge_polarity_maps");
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= neg->cap - neg->values[i];
  }
  return out;
}

namespace {

void check_finite(const FloatGrid& values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw Error(ErrorCode::numerical, "normalize_channel: non-finite value at (" +
                                            std::to_string(i / std::max(1, values.width())) + "," +
                                            std::to_string(i % std::max(1, values.width())) + ")");
    }
  }
}

float affine(float v, float lo, float hi, NormalizeRange range) {
  const double t = (double(v) - lo) / (double(hi) - lo);
  if (range == NormalizeRange::zero_one) return static_cast<float>(std::clamp(t, 0.0, 1.0));
  return static_cast<float>(std::clamp(2.0 * t - 1.0, -1.0, 1.0));
}

}  // namespace

FloatGrid normalize_channel(const FloatGrid& values, NormalizeRange range) {
  check_finite(values);
  FloatGrid out(values.height(), values.width(), 0.0f);
  if (values.empty()) return out;
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const float lo = *lo_it, hi = *hi_it;
  if (!(hi > lo)) return out;
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = affine(values[i], lo, hi, range);
  return out;
}

FloatGrid normalize_channel(const FloatGrid& values, const Mask& region, float outside, NormalizeRange range) {
  require_same_shape(values, region, "normalize_channel");
  FloatGrid out(values.height(), values.width(), outside);
  float lo = std::numeric_limits<float>::infinity();
  float hi = -lo;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!region[i]) continue;
    if (!std::isfinite(values[i])) throw Error(ErrorCode::numerical, "normalize_channel: non-finite value");
    lo = std::min(lo, values[i]);
    hi = std::max(hi, values[i]);
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!region[i]) continue;
    out[i] = hi > lo ? affine(values[i], lo, hi, range) : 0.0f;
  }
  return out;
}

double iou(const Mask& pred, const Mask& gt) {
  require_same_shape(pred, gt, "iou");
  std::int64_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool a = pred[i] != 0, b = gt[i] != 0;
    inter += a && b;
    uni += a || b;
  }
  return uni == 0 ? 1.0 : double(inter) / double(uni);
}

double iou(const InstanceMask& pred, const InstanceMask& gt) { return iou(pred.decode(), gt.decode()); }

Mask boundary_band(const Mask& mask, double d) {
  const int h = mask.height(), w = mask.width();
  Mask background(h + 2, w + 2, 1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) background(y + 1, x + 1) = mask(y, x) ? 0 : 1;
  const auto sq = squared_distance_to_seeds(background);
  const double limit = d * d;
  Mask band(h, w, 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) band(y, x) = mask(y, x) && sq(y + 1, x + 1) <= limit;
  return band;
}

double boundary_iou(const Mask& pred, const Mask& gt, double d) {
  require_same_shape(pred, gt, "boundary_iou");
  if (!(d >= 1.0)) throw Error(ErrorCode::invalid_argument, "boundary_iou: band width must be >= 1");
  return iou(boundary_band(pred, d), boundary_band(gt, d));
}

double boundary_iou(const InstanceMask& pred, const InstanceMask& gt, double d) {
  return boundary_iou(pred.decode(), gt.decode(), d);
}

double default_boundary_width(int height, int width) {
  const double diag = std::sqrt(double(height) * height + double(width) * width);
  return std::max(1.0, std::round(0.02 * diag));
}

std::vector<Point> mask_boundary(const Mask& mask) {
  std::vector<Point> out;
  const int h = mask.height(), w = mask.width();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!mask(y, x)) continue;
      const bool edge = y == 0 || x == 0 || y == h - 1 || x == w - 1 || !mask(y - 1, x) || !mask(y + 1, x) ||
                        !mask(y, x - 1) || !mask(y, x + 1);
      if (edge) out.push_back({x, y});
    }
  }
  if (out.empty()) throw Error(ErrorCode::invalid_argument, "mask_boundary: mask is empty");
  return out;
}

std::vector<Point> mask_boundary(const InstanceMask& mask) { return mask_boundary(mask.decode()); }

FloatGrid interior_distance(const Mask& mask) {
  const auto boundary = mask_boundary(mask);
  Mask seeds(mask.height(), mask.width(), 0);
  for (const auto& p : boundary) seeds(p.y, p.x) = 1;
  const auto sq = squared_distance_to_seeds(seeds);
  FloatGrid out(mask.height(), mask.width(), -1.0f);
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) out[i] = static_cast<float>(std::sqrt(sq[i]));
  return out;
}

}  // namespace clickseg
