#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "clickseg/error.hpp"

namespace clickseg {

/// Pixel coordinate. `x` is the column, `y` the row.
struct Point {
  int x = 0;
  int y = 0;

  friend bool operator==(const Point&, const Point&) = default;
  friend auto operator<=>(const Point&, const Point&) = default;
};

/// Dense row-major H x W grid indexed as (y, x). Every map in the library
/// (masks, distance maps, channels, saliency) uses this layout.
template <typename T>
class Grid {
 public:
  Grid() = default;
  Grid(int height, int width, T fill = T{}) : height_(height), width_(width) {
    if (height < 0 || width < 0) {
      throw Error(ErrorCode::invalid_argument, "grid dimensions must be non-negative");
    }
    data_.assign(static_cast<std::size_t>(height) * static_cast<std::size_t>(width), fill);
  }
  Grid(int height, int width, std::vector<T> values) : height_(height), width_(width), data_(std::move(values)) {
    if (data_.size() != static_cast<std::size_t>(height) * static_cast<std::size_t>(width)) {
      throw Error(ErrorCode::shape_mismatch, "grid buffer size does not match " + std::to_string(height) + "x" +
                                                 std::to_string(width));
    }
  }

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  bool contains(int y, int x) const noexcept { return y >= 0 && x >= 0 && y < height_ && x < width_; }
  template <typename U>
  bool same_shape(const Grid<U>& other) const noexcept {
    return height_ == other.height() && width_ == other.width();
  }

  T& operator()(int y, int x) noexcept { return data_[index(y, x)]; }
  const T& operator()(int y, int x) const noexcept { return data_[index(y, x)]; }
  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }

  auto begin() noexcept { return data_.begin(); }
  auto end() noexcept { return data_.end(); }
  auto begin() const noexcept { return data_.begin(); }
  auto end() const noexcept { return data_.end(); }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  std::size_t index(int y, int x) const noexcept {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x);
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<T> data_;
};

/// Binary mask, 0 = background, 1 = foreground.
using Mask = Grid<std::uint8_t>;
using FloatGrid = Grid<float>;

inline std::int64_t count_foreground(const Mask& mask) {
  std::int64_t n = 0;
  for (auto v : mask) n += v != 0;
  return n;
}

inline void require_same_shape(const auto& a, const auto& b, const char* what) {
  if (a.height() != b.height() || a.width() != b.width()) {
    throw Error(ErrorCode::shape_mismatch, std::string(what) + ": shape mismatch (" + std::to_string(a.height()) +
                                               "x" + std::to_string(a.width()) + " vs " + std::to_string(b.height()) +
                                               "x" + std::to_string(b.width()) + ")");
  }
}

}  // namespace clickseg
