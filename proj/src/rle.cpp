#include "clickseg/rle.hpp"

#include <numeric>

namespace clickseg {

Rle rle_encode(const Mask& mask) {
  Rle rle{mask.height(), mask.width(), {}};
  std::uint8_t current = 0;
  std::uint32_t run = 0;
  for (auto v : mask) {
    const std::uint8_t bit = v != 0;
    if (bit != current) {
      rle.counts.push_back(run);
      run = 0;
      current = bit;
    }
    ++run;
  }
  rle.counts.push_back(run);
  return rle;
}

void rle_validate(const Rle& rle) {
  if (rle.height < 0 || rle.width < 0) throw Error(ErrorCode::invalid_argument, "rle: negative dimensions");
  std::uint64_t total = 0;
  for (auto c : rle.counts) total += c;
  const auto expected = static_cast<std::uint64_t>(rle.height) * static_cast<std::uint64_t>(rle.width);
  if (total != expected) {
    throw Error(ErrorCode::parse_error, "rle: counts sum to " + std::to_string(total) + ", expected " +
                                            std::to_string(expected));
  }
}

Mask rle_decode(const Rle& rle) {
  rle_validate(rle);
  Mask mask(rle.height, rle.width, 0);
  std::size_t pos = 0;
  std::uint8_t value = 0;
  for (auto c : rle.counts) {
    if (value) std::fill_n(mask.data() + pos, c, std::uint8_t{1});
    pos += c;
    value ^= 1;
  }
  return mask;
}

std::int64_t rle_area(const Rle& rle) {
  std::int64_t area = 0;
  for (std::size_t i = 1; i < rle.counts.size(); i += 2) area += rle.counts[i];
  return area;
}

Mask decode_coco_counts(int height, int width, const std::vector<std::uint32_t>& column_major_counts) {
  // Decode as a width x height row-major mask, then transpose.
  const Mask transposed = rle_decode(Rle{width, height, column_major_counts});
  Mask mask(height, width, 0);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) mask(y, x) = transposed(x, y);
  return mask;
}

std::vector<std::uint32_t> encode_coco_counts(const Mask& mask) {
  Mask transposed(mask.width(), mask.height(), 0);
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x) transposed(x, y) = mask(y, x);
  return rle_encode(transposed).counts;
}

std::vector<std::uint32_t> decode_coco_count_string(std::string_view s) {
  // pycocotools rleFrString: 5 payload bits per char offset by 48, bit 0x20
  // marks continuation, bit 0x10 of the last char is the sign; from the third
  // count on, values are deltas against the count two positions back.
  std::vector<std::uint32_t> counts;
  std::size_t p = 0;
  while (p < s.size()) {
    std::int64_t x = 0;
    int k = 0;
    bool more = true;
    while (more) {
      if (p >= s.size()) throw Error(ErrorCode::parse_error, "coco rle string truncated");
      const std::int64_t c = static_cast<std::int64_t>(s[p]) - 48;
      if (c < 0 || c > 63) throw Error(ErrorCode::parse_error, "coco rle string: invalid character");
      x |= (c & 0x1f) << (5 * k);
      more = (c & 0x20) != 0;
      ++p;
      ++k;
      if (!more && (c & 0x10)) x |= -1LL << (5 * k);
    }
    if (counts.size() > 2) x += counts[counts.size() - 2];
    if (x < 0) throw Error(ErrorCode::parse_error, "coco rle string: negative run");
    counts.push_back(static_cast<std::uint32_t>(x));
  }
  return counts;
}

}  // namespace clickseg
