#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "clickseg/grid.hpp"

namespace clickseg {

/// 8-bit RGB pixels, interleaved, row-major.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;

  RgbImage() = default;
  RgbImage(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, 0) {}

  std::uint8_t& at(int y, int x, int c) { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  std::uint8_t at(int y, int x, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  bool empty() const noexcept { return data.empty(); }
};

/// Decodes PNG/JPEG bytes. Throws parse_error on undecodable or truncated
/// input (a PNG must end with IEND, a JPEG with the EOI marker).
RgbImage decode_image(std::span<const std::uint8_t> bytes);
RgbImage load_image(const std::filesystem::path& path);
void save_png(const RgbImage& image, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_png(const RgbImage& image);

/// Writes a binary mask as an 8-bit PNG (0 / 255).
void save_mask_png(const Mask& mask, const std::filesystem::path& path);
Mask load_mask_png(const std::filesystem::path& path);

/// Reads only width/height from a PNG or JPEG header.
std::pair<int, int> probe_image_size(std::span<const std::uint8_t> bytes);

/// Bilinear resample (half-pixel centers) of a float grid.
FloatGrid resize_bilinear(const FloatGrid& src, int height, int width);
/// Nearest-neighbour resample of a mask.
Mask resize_nearest(const Mask& src, int height, int width);
RgbImage resize_rgb(const RgbImage& src, int width, int height);

}  // namespace clickseg
