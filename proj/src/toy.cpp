#include "clickseg/toy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "clickseg/class_split.hpp"
#include "clickseg/error.hpp"
#include "clickseg/image.hpp"
#include "clickseg/rle.hpp"
#include "clickseg/rng.hpp"

namespace clickseg {

using nlohmann::json;

namespace {

int uniform_int(Rng& rng, int lo, int hi) { return lo + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(hi - lo + 1))); }

struct Writer {
  std::filesystem::path dir;
  json images = json::array();
  json annotations = json::array();
  json categories = json::array();
  int next_ann = 1;

  Writer(const std::filesystem::path& d, const std::vector<std::string>& classes) : dir(d) {
    std::filesystem::create_directories(dir / "images");
    for (std::size_t i = 0; i < classes.size(); ++i) categories.push_back({{"id", i + 1}, {"name", classes[i]}});
  }

  void add_image(int id, const RgbImage& img) {
    const std::string name = "img_" + std::to_string(id) + ".png";
    save_png(img, dir / "images" / name);
    images.push_back({{"id", id}, {"file_name", name}, {"width", img.width}, {"height", img.height}});
  }

  void add_instance(int image_id, int category, const Mask& m) {
    annotations.push_back({{"id", next_ann++},
                           {"image_id", image_id},
                           {"category_id", category},
                           {"iscrowd", 0},
                           {"segmentation", {{"size", {m.height(), m.width()}}, {"counts", encode_coco_counts(m)}}}});
  }

  ToyDataset finish(const ClassSplit& split) {
    ToyDataset out{dir / "annotations.json", dir / "images", dir / "split.json"};
    std::ofstream(out.annotations) << json{{"images", images}, {"annotations", annotations}, {"categories", categories}}.dump()
                                   << '\n';
    save_split(split, out.split);
    return out;
  }
};

RgbImage noisy_background(Rng& rng, int size) {
  RgbImage img(size, size);
  const int base = uniform_int(rng, 40, 110);
  for (auto& v : img.data) v = static_cast<std::uint8_t>(base + uniform_int(rng, -30, 30));
  return img;
}

void paint(RgbImage& img, const Mask& m, const int color[3], Rng& rng) {
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x)
      if (m(y, x))
        for (int c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<std::uint8_t>(std::clamp(color[c] + uniform_int(rng, -12, 12), 0, 255));
}

void check(const ToyOptions& o) {
  if (o.images < 1 || o.size < 32) throw Error(ErrorCode::invalid_argument, "toy datasets need >= 1 image of size >= 32");
}

}  // namespace

ToyDataset make_two_shape_toy(const std::filesystem::path& dir, const ToyOptions& options) {
  check(options);
  Writer w(dir, {"disk", "square"});
  Rng rng(derive_seed(options.seed, 0x70, 1));
  const int n = options.size;
  const double s = n / 64.0;
  for (int i = 1; i <= options.images; ++i) {
    RgbImage img = noisy_background(rng, n);
    const int r = static_cast<int>(uniform_int(rng, 8, 12) * s);
    const int side = static_cast<int>(uniform_int(rng, 14, 20) * s);
    // Disk on the left or right half, square glued to its flank.
    const bool disk_left = rng.uniform_index(2) == 0;
    const int cy = uniform_int(rng, r + 2, n - r - 3);
    const int cx = disk_left ? uniform_int(rng, r + 2, n / 2 - 2) : uniform_int(rng, n / 2 + 1, n - r - 3);
    const int sy0 = std::clamp(cy - side / 2 + uniform_int(rng, -side / 4, side / 4), 0, n - side);
    const int sx0 = disk_left ? std::min(cx + r - 1, n - side) : std::max(cx - r + 1 - side, 0);
    Mask disk(n, n, 0), square(n, n, 0);
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        const double dx = x - cx, dy = y - cy;
        if (dx * dx + dy * dy <= r * r) disk(y, x) = 1;
      }
    for (int y = sy0; y < sy0 + side; ++y)
      for (int x = sx0; x < sx0 + side; ++x)
        if (!disk(y, x)) square(y, x) = 1;
    std::vector<Mask> disks{disk};
    Mask taken = disk;
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) taken(y, x) |= square(y, x);
    for (int k = 0, tries = 0; k < options.distractors && tries < 200; ++tries) {
      const int r2 = static_cast<int>(uniform_int(rng, 6, 10) * s);
      const double angle = rng.uniform_real() * 6.283185307179586;
      const int dx = static_cast<int>(std::lround(std::cos(angle) * (r + r2 - 1)));
      const int dy = static_cast<int>(std::lround(std::sin(angle) * (r + r2 - 1)));
      const int ex = cx + dx, ey = cy + dy;
      if (ex - r2 < 0 || ey - r2 < 0 || ex + r2 >= n || ey + r2 >= n) continue;
      Mask extra(n, n, 0);
      std::int64_t area = 0, overlap = 0;
      for (int y = ey - r2; y <= ey + r2; ++y)
        for (int x = ex - r2; x <= ex + r2; ++x)
          if ((x - ex) * (x - ex) + (y - ey) * (y - ey) <= r2 * r2) {
            ++area;
            if (taken(y, x)) ++overlap;
            else extra(y, x) = 1;
          }
      if (overlap * 5 > area) continue;
      for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) taken(y, x) |= extra(y, x);
      disks.push_back(std::move(extra));
      ++k;
    }
    int color[3];
    for (int& c : color) c = uniform_int(rng, 150, 250);
    for (const auto& d : disks) paint(img, d, color, rng);
    paint(img, square, color, rng);
    w.add_image(i, img);
    for (const auto& d : disks) w.add_instance(i, 1, d);
    w.add_instance(i, 2, square);
  }
  return w.finish(ClassSplit(DatasetName::custom, {"disk"}, {"square"}));
}

ToyDataset make_tile_toy(const std::filesystem::path& dir, const ToyOptions& options) {
  check(options);
  Writer w(dir, {"tile", "badge"});
  Rng rng(derive_seed(options.seed, 0x72, 1));
  const int n = options.size;
  const double s = n / 64.0;
  for (int i = 1; i <= options.images; ++i) {
    RgbImage img = noisy_background(rng, n);
    const int count = uniform_int(rng, 2, 3);
    const bool horizontal = rng.uniform_index(2) == 0;
    const int across = static_cast<int>(uniform_int(rng, 14, 24) * s);
    std::vector<int> lengths(static_cast<std::size_t>(count));
    for (int& l : lengths) l = static_cast<int>(uniform_int(rng, 10, count == 2 ? 24 : 17) * s);
    int total = 0;
    for (int l : lengths) total += l;
    const int a0 = uniform_int(rng, 2, n - total - 2), b0 = uniform_int(rng, 2, n - across - 2);
    int color[3], badge_color[3];
    for (int& c : color) c = uniform_int(rng, 150, 250);
    for (int c = 0; c < 3; ++c) badge_color[c] = std::clamp(color[c] - uniform_int(rng, 50, 90), 0, 255);
    const int holder = uniform_int(rng, 0, count - 1);
    auto rect = [&](int a_lo, int a_hi, int b_lo, int b_hi) {
      Mask m(n, n, 0);
      for (int u = a_lo; u < a_hi; ++u)
        for (int v = b_lo; v < b_hi; ++v) {
          if (horizontal) m(v, u) = 1;
          else m(u, v) = 1;
        }
      return m;
    };
    Mask badge;
    for (int k = 0, a = a0; k < count; a += lengths[static_cast<std::size_t>(k)], ++k) {
      const int len = lengths[static_cast<std::size_t>(k)];
      Mask tile = rect(a, a + len, b0, b0 + across);
      paint(img, tile, color, rng);
      w.add_instance(i, 1, tile);
      if (k == holder) {
        const int bl = std::max(3, len / 2), bw = std::max(3, across / 2);
        const int ba = a + uniform_int(rng, 1, len - bl - 1), bb = b0 + uniform_int(rng, 1, across - bw - 1);
        badge = rect(ba, ba + bl, bb, bb + bw);
      }
    }
    paint(img, badge, badge_color, rng);
    w.add_instance(i, 2, badge);
    w.add_image(i, img);
  }
  return w.finish(ClassSplit(DatasetName::custom, {"tile", "badge"}, {}));
}

ToyDataset make_person_tie_toy(const std::filesystem::path& dir, const ToyOptions& options) {
  check(options);
  Writer w(dir, {"person", "tie"});
  Rng rng(derive_seed(options.seed, 0x71, 1));
  const int n = options.size;
  const double s = n / 64.0;
  for (int i = 1; i <= options.images; ++i) {
    RgbImage img = noisy_background(rng, n);
    const int bw = static_cast<int>(uniform_int(rng, 24, 32) * s), bh = static_cast<int>(uniform_int(rng, 34, 44) * s);
    const int x0 = uniform_int(rng, 2, n - bw - 2), y0 = uniform_int(rng, 2, n - bh - 2);
    const int head = bw / 3;
    Mask person(n, n, 0), tie(n, n, 0);
    // Head disk on top of a torso rectangle.
    const int hx = x0 + bw / 2, hy = y0 + head / 2;
    for (int y = y0; y < y0 + bh; ++y)
      for (int x = x0; x < x0 + bw; ++x) {
        const bool in_head = (x - hx) * (x - hx) + (y - hy) * (y - hy) <= (head / 2) * (head / 2);
        const bool in_torso = y >= y0 + head;
        if (in_head || in_torso) person(y, x) = 1;
      }
    const int tw = std::max(3, static_cast<int>(uniform_int(rng, 4, 6) * s));
    const int tx = hx - tw / 2 + uniform_int(rng, -2, 2);
    const int ty0 = y0 + head + 1, ty1 = y0 + head + (bh - head) * 2 / 3;
    for (int y = ty0; y < ty1; ++y)
      for (int x = tx; x < tx + tw; ++x) tie(y, x) = 1;
    int body[3], tie_color[3];
    for (int& c : body) c = uniform_int(rng, 140, 230);
    for (int c = 0; c < 3; ++c) tie_color[c] = std::clamp(body[c] + uniform_int(rng, -60, 60), 0, 255);
    paint(img, person, body, rng);
    paint(img, tie, tie_color, rng);
    w.add_image(i, img);
    w.add_instance(i, 1, person);
    w.add_instance(i, 2, tie);
  }
  return w.finish(ClassSplit(DatasetName::custom, {"person", "tie"}, {}));
}

ExperimentConfig toy_experiment_config(const ToyDataset& data, const std::filesystem::path& out_dir) {
  ExperimentConfig cfg;
  cfg.name = "toy";
  cfg.split = data.split;
  cfg.train_data = {data.annotations, data.image_root, std::nullopt};
  cfg.eval_data = cfg.train_data;
  cfg.clicks.d_border = 3.0;
  cfg.clicks.d_between = 12.0;
  cfg.clicks.ring_radius = 6.0;
  cfg.backend.id = "annotation_stub";
  cfg.height = 64;
  cfg.width = 64;
  cfg.distance_cap = 10.0f;
  cfg.model = ModelConfig::desk();
  cfg.train.optimizer = "adam";
  cfg.train.lr = 2e-3;
  cfg.train.weight_decay = 0.0;
  cfg.train.min_lr = 1e-5;
  cfg.train.iterations = 300;
  cfg.train.batch_size = 8;
  cfg.train.checkpoint_every = 0;
  cfg.out_dir = out_dir;
  return cfg;
}

}  // namespace clickseg
