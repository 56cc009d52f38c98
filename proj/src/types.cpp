#include "clickseg/types.hpp"

namespace clickseg {

InstanceMask::InstanceMask(std::string image_id, std::string instance_id, std::string class_name, Rle rle)
    : image_id_(std::move(image_id)),
      instance_id_(std::move(instance_id)),
      class_name_(std::move(class_name)),
      rle_(std::move(rle)) {
  rle_validate(rle_);
  area_ = rle_area(rle_);
}

InstanceMask::InstanceMask(std::string image_id, std::string instance_id, std::string class_name, const Mask& mask)
    : InstanceMask(std::move(image_id), std::move(instance_id), std::move(class_name), rle_encode(mask)) {}

std::string_view to_string(Polarity p) { return p == Polarity::positive ? "positive" : "negative"; }

Polarity parse_polarity(std::string_view s) {
  if (s == "positive" || s == "+" || s == "pos") return Polarity::positive;
  if (s == "negative" || s == "-" || s == "neg") return Polarity::negative;
  throw Error(ErrorCode::parse_error, "unknown click polarity '" + std::string(s) + "'");
}

int InteractionSet::positive_count() const noexcept {
  int n = 0;
  for (const auto& c : clicks) n += c.polarity == Polarity::positive;
  return n;
}

int InteractionSet::negative_count() const noexcept {
  return static_cast<int>(clicks.size()) - positive_count();
}

std::vector<Point> InteractionSet::points(Polarity p) const {
  std::vector<Point> out;
  for (const auto& c : clicks)
    if (c.polarity == p) out.push_back(c.point());
  return out;
}

void InteractionSet::validate(int height, int width) const {
  if (clicks.empty() && !has_text()) {
    throw Error(ErrorCode::invalid_argument, "interaction set needs at least one click or a text phrase");
  }
  for (std::size_t i = 0; i < clicks.size(); ++i) {
    const auto& c = clicks[i];
    if (c.x < 0 || c.y < 0 || c.x >= width || c.y >= height) {
      throw Error(ErrorCode::out_of_range, "click " + std::to_string(i) + " at (" + std::to_string(c.x) + "," +
                                               std::to_string(c.y) + ") lies outside the " + std::to_string(width) +
                                               "x" + std::to_string(height) + " image");
    }
  }
}

}  // namespace clickseg
