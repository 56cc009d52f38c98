#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "clickseg/grid.hpp"
#include "clickseg/rle.hpp"

namespace clickseg {

struct ImageSample {
  std::string image_id;
  int width = 0;
  int height = 0;
  std::string uri;
};

/// Instances below this area are kept but flagged; click synthesis falls back
/// to its degenerate-mask path for them.
inline constexpr std::int64_t kSmallInstanceArea = 25;

class InstanceMask {
 public:
  InstanceMask() = default;
  InstanceMask(std::string image_id, std::string instance_id, std::string class_name, Rle rle);
  InstanceMask(std::string image_id, std::string instance_id, std::string class_name, const Mask& mask);

  const std::string& image_id() const noexcept { return image_id_; }
  const std::string& instance_id() const noexcept { return instance_id_; }
  const std::string& class_name() const noexcept { return class_name_; }
  const Rle& rle() const noexcept { return rle_; }
  std::int64_t area() const noexcept { return area_; }
  int height() const noexcept { return rle_.height; }
  int width() const noexcept { return rle_.width; }
  bool is_small() const noexcept { return area_ < kSmallInstanceArea; }

  Mask decode() const { return rle_decode(rle_); }

 private:
  std::string image_id_;
  std::string instance_id_;
  std::string class_name_;
  Rle rle_;
  std::int64_t area_ = 0;
};

enum class Polarity { positive, negative };

std::string_view to_string(Polarity p);
Polarity parse_polarity(std::string_view s);

struct Click {
  int x = 0;
  int y = 0;
  Polarity polarity = Polarity::positive;

  Point point() const noexcept { return {x, y}; }
  friend bool operator==(const Click&, const Click&) = default;
};

struct InteractionSet {
  std::string instance_id;
  std::vector<Click> clicks;
  std::optional<std::string> text;

  int positive_count() const noexcept;
  int negative_count() const noexcept;
  bool has_text() const noexcept { return text.has_value() && !text->empty(); }

  std::vector<Point> points(Polarity p) const;

  /// Requires at least one click or a non-empty text phrase, and every click
  /// inside a height x width frame.
  void validate(int height, int width) const;

  friend bool operator==(const InteractionSet&, const InteractionSet&) = default;
};

}  // namespace clickseg
