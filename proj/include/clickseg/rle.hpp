#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "clickseg/grid.hpp"

namespace clickseg {

/// Uncompressed run-length encoding of a binary mask.
///
/// Runs are taken in row-major order and alternate background/foreground,
/// always starting with a (possibly zero-length) background run. The counts
/// sum to height * width.
struct Rle {
  int height = 0;
  int width = 0;
  std::vector<std::uint32_t> counts;

  friend bool operator==(const Rle&, const Rle&) = default;
};

Rle rle_encode(const Mask& mask);
Mask rle_decode(const Rle& rle);

/// Number of foreground pixels, computed from the runs without decoding.
std::int64_t rle_area(const Rle& rle);

/// Throws when counts do not cover exactly height * width pixels.
void rle_validate(const Rle& rle);

/// COCO annotation files store runs in column-major order. These convert
/// between that layout and ours.
Mask decode_coco_counts(int height, int width, const std::vector<std::uint32_t>& column_major_counts);
std::vector<std::uint32_t> encode_coco_counts(const Mask& mask);

/// Decodes the compact LEB128-style string form used by pycocotools into
/// column-major counts.
std::vector<std::uint32_t> decode_coco_count_string(std::string_view s);

}  // namespace clickseg
