#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include "clickseg/image.hpp"

namespace clickseg::fixture {

/// Fresh scratch directory under the system temp dir, removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("clickseg_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline RgbImage noise_image(int w, int h, unsigned seed) {
  std::mt19937 gen(seed);
  RgbImage img(w, h);
  for (auto& v : img.data) v = static_cast<std::uint8_t>(gen() & 0xff);
  return img;
}

inline void write_json(const std::filesystem::path& p, const nlohmann::json& j) {
  std::ofstream(p) << j.dump(2);
}

inline nlohmann::json read_json(const std::filesystem::path& p) {
  std::ifstream in(p);
  return nlohmann::json::parse(in);
}

inline nlohmann::json rect_polygon(double x0, double y0, double x1, double y1) {
  return nlohmann::json::array({nlohmann::json::array({x0, y0, x1, y0, x1, y1, x0, y1})});
}

/// Three images, five instances, two categories ("cat" seen, "dog" unseen in
/// the matching split). Image 3 holds only dogs.
inline nlohmann::json three_image_coco(const std::filesystem::path& root) {
  using nlohmann::json;
  json images = json::array();
  const int sizes[3][2] = {{40, 30}, {32, 32}, {48, 24}};
  for (int i = 0; i < 3; ++i) {
    const std::string name = "img" + std::to_string(i + 1) + ".png";
    save_png(noise_image(sizes[i][0], sizes[i][1], i), root / name);
    images.push_back({{"id", i + 1}, {"file_name", name}, {"width", sizes[i][0]}, {"height", sizes[i][1]}});
  }
  json anns = json::array();
  anns.push_back({{"id", 10}, {"image_id", 1}, {"category_id", 1}, {"segmentation", rect_polygon(2, 2, 12, 12)}});
  anns.push_back({{"id", 11}, {"image_id", 1}, {"category_id", 2}, {"segmentation", rect_polygon(20, 5, 35, 25)}});
  anns.push_back({{"id", 12}, {"image_id", 2}, {"category_id", 1}, {"segmentation", rect_polygon(4, 4, 28, 28)}});
  anns.push_back({{"id", 13}, {"image_id", 3}, {"category_id", 2}, {"segmentation", rect_polygon(1, 1, 20, 20)}});
  anns.push_back({{"id", 14}, {"image_id", 3}, {"category_id", 2}, {"segmentation", rect_polygon(25, 2, 45, 22)}});
  json cats = json::array({{{"id", 1}, {"name", "cat"}}, {{"id", 2}, {"name", "dog"}}});
  return {{"images", images}, {"annotations", anns}, {"categories", cats}};
}

}  // namespace clickseg::fixture
