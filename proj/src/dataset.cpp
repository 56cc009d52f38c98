#include "clickseg/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <atomic>
#include <cassert>
#include <cmath>
#include <exception>
#include <fstream>
#include <set>
#include <thread>

#include <spdlog/spdlog.h>

#include "clickseg/error.hpp"
#include "clickseg/rle.hpp"
#include "clickseg/rng.hpp"

namespace clickseg {

using nlohmann::json;

std::size_t ValidationReport::count(std::string_view kind) const {
  return static_cast<std::size_t>(
      std::count_if(issues.begin(), issues.end(), [&](const ValidationIssue& i) { return i.kind == kind; }));
}

json ValidationReport::to_json() const {
  json out = json::array();
  for (const auto& i : issues) out.push_back({{"kind", i.kind}, {"id", i.id}, {"message", i.message}});
  return {{"ok", ok()}, {"issues", out}};
}

std::string ValidationReport::summary(std::size_t max_lines) const {
  if (ok()) return "no validation issues";
  std::string out = std::to_string(issues.size()) + " validation issue(s):";
  for (std::size_t i = 0; i < issues.size() && i < max_lines; ++i)
    out += "\n  [" + issues[i].kind + "] " + issues[i].id + ": " + issues[i].message;
  if (issues.size() > max_lines) out += "\n  ...";
  return out;
}

// ---- manifest ---------------------------------------------------------------

void DatasetManifest::index() {
  image_lookup_.clear();
  by_image_.clear();
  for (std::size_t i = 0; i < images.size(); ++i) image_lookup_.emplace(images[i].sample.image_id, i);
  for (std::size_t i = 0; i < instances.size(); ++i) by_image_[instances[i].image_id()].push_back(i);
}

std::optional<std::size_t> DatasetManifest::find_image(std::string_view image_id) const {
  auto it = image_lookup_.find(std::string(image_id));
  if (it == image_lookup_.end()) return std::nullopt;
  return it->second;
}

const ImageRecord& DatasetManifest::image(std::string_view image_id) const {
  auto i = find_image(image_id);
  if (!i) throw Error(ErrorCode::not_found, "unknown image id " + std::string(image_id));
  return images[*i];
}

const std::vector<std::size_t>& DatasetManifest::instances_in(std::string_view image_id) const {
  static const std::vector<std::size_t> none;
  auto it = by_image_.find(std::string(image_id));
  return it == by_image_.end() ? none : it->second;
}

int DatasetManifest::same_class_count(std::size_t instance_index) const {
  const auto& inst = instances.at(instance_index);
  const auto cls = normalize_class_name(inst.class_name());
  int n = 0;
  for (auto j : instances_in(inst.image_id())) n += normalize_class_name(instances[j].class_name()) == cls;
  return n;
}

std::vector<Mask> DatasetManifest::same_class_others(std::size_t instance_index) const {
  const auto& inst = instances.at(instance_index);
  const auto cls = normalize_class_name(inst.class_name());
  std::vector<Mask> out;
  for (auto j : instances_in(inst.image_id()))
    if (j != instance_index && normalize_class_name(instances[j].class_name()) == cls)
      out.push_back(instances[j].decode());
  return out;
}

std::map<std::string, int> DatasetManifest::class_counts() const {
  std::map<std::string, int> counts;
  for (const auto& inst : instances) ++counts[normalize_class_name(inst.class_name())];
  return counts;
}

json DatasetManifest::summary_json() const {
  json files = json::array();
  for (const auto& f : annotation_files) files.push_back(f.string());
  return {{"dataset_name", to_string(dataset_name)},
          {"annotation_files", files},
          {"image_root", image_root.string()},
          {"split_file", split_file ? json(split_file->string()) : json(nullptr)},
          {"images", images.size()},
          {"instances", instances.size()},
          {"class_counts", class_counts()}};
}

// ---- polygons -------------------------------------------------------------

double shoelace_area(const Polygon& polygon) {
  const std::size_t n = polygon.size() / 2;
  double twice = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t j = (i + 1) % n;
    twice += polygon[2 * i] * polygon[2 * j + 1] - polygon[2 * j] * polygon[2 * i + 1];
  }
  return std::abs(twice) / 2;
}

Mask rasterize_polygons(std::span<const Polygon> polygons, int height, int width) {
  Mask out(height, width, 0);
  std::vector<double> xs;
  std::vector<std::uint8_t> row(static_cast<std::size_t>(std::max(width, 0)));
  for (const auto& poly : polygons) {
    if (poly.size() < 6 || poly.size() % 2) throw Error(ErrorCode::parse_error, "polygon needs >= 3 (x, y) pairs");
    const std::size_t n = poly.size() / 2;
    for (int y = 0; y < height; ++y) {
      const double yc = y + 0.5;
      xs.clear();
      for (std::size_t i = 0; i < n; ++i) {
        std::size_t j = (i + 1) % n;
        double x0 = poly[2 * i], y0 = poly[2 * i + 1], x1 = poly[2 * j], y1 = poly[2 * j + 1];
        if ((y0 <= yc) != (y1 <= yc)) xs.push_back(x0 + (yc - y0) * (x1 - x0) / (y1 - y0));
      }
      std::sort(xs.begin(), xs.end());
      std::fill(row.begin(), row.end(), 0);
      for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
        // centres x + 0.5 in [xa, xb)
        int lo = std::max(0, static_cast<int>(std::ceil(xs[k] - 0.5)));
        int hi = std::min(width, static_cast<int>(std::ceil(xs[k + 1] - 0.5)));
        for (int x = lo; x < hi; ++x) row[static_cast<std::size_t>(x)] ^= 1;
      }
      for (int x = 0; x < width; ++x) out(y, x) |= row[static_cast<std::size_t>(x)];
    }
  }
  return out;
}

// ---- ingest ---------------------------------------------------------------

namespace {

std::string id_string(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<std::int64_t>());
  throw Error(ErrorCode::parse_error, "ids must be integers or strings, got " + v.dump());
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Mask decode_segmentation(const json& seg, int height, int width) {
  if (seg.is_array()) {
    std::vector<Polygon> polys;
    for (const auto& p : seg) polys.push_back(p.get<Polygon>());
    return rasterize_polygons(polys, height, width);
  }
  if (seg.is_object()) {
    auto size = seg.at("size").get<std::vector<int>>();
    if (size.size() != 2 || size[0] != height || size[1] != width)
      throw Error(ErrorCode::shape_mismatch, "RLE size " + seg.at("size").dump() + " differs from image " +
                                                 std::to_string(height) + "x" + std::to_string(width));
    const auto& counts = seg.at("counts");
    std::vector<std::uint32_t> c = counts.is_string() ? decode_coco_count_string(counts.get<std::string>())
                                                      : counts.get<std::vector<std::uint32_t>>();
    return decode_coco_counts(height, width, c);
  }
  throw Error(ErrorCode::parse_error, "segmentation must be a polygon list or an RLE object");
}

}  // namespace

IngestResult ingest_coco_json(const json& coco, const std::filesystem::path& image_root, const IngestOptions& options) {
  IngestResult result;
  auto& m = result.manifest;
  auto& report = result.report;
  m.dataset_name = options.dataset_name;
  m.image_root = image_root;
  auto issue = [&](std::string kind, std::string id, std::string msg) {
    report.issues.push_back({std::move(kind), std::move(id), std::move(msg)});
  };

  for (const char* key : {"images", "annotations", "categories"})
    if (!coco.contains(key) || !coco.at(key).is_array())
      throw Error(ErrorCode::parse_error, std::string("COCO file lacks a '") + key + "' array");

  std::map<std::string, std::string> categories;
  for (const auto& c : coco.at("categories")) categories[id_string(c.at("id"))] = c.at("name").get<std::string>();

  std::set<std::string> image_ids;
  for (const auto& im : coco.at("images")) {
    ImageRecord rec;
    rec.sample.image_id = id_string(im.at("id"));
    rec.sample.width = im.at("width").get<int>();
    rec.sample.height = im.at("height").get<int>();
    const auto file = im.at("file_name").get<std::string>();
    rec.path = image_root / file;
    rec.sample.uri = rec.path.string();
    if (!image_ids.insert(rec.sample.image_id).second) {
      issue("duplicate_image", rec.sample.image_id, "image id appears twice");
      continue;
    }
    if (!std::filesystem::exists(rec.path)) {
      issue("missing_image_file", rec.sample.image_id, "file not found: " + rec.path.string());
      continue;
    }
    try {
      int w = 0, h = 0;
      if (options.verify_decode) {
        auto img = load_image(rec.path);
        w = img.width;
        h = img.height;
      } else {
        auto bytes = read_file(rec.path);
        std::tie(w, h) = probe_image_size(bytes);
      }
      if (w != rec.sample.width || h != rec.sample.height) {
        issue("size_mismatch", rec.sample.image_id,
              "declared " + std::to_string(rec.sample.width) + "x" + std::to_string(rec.sample.height) + ", file is " +
                  std::to_string(w) + "x" + std::to_string(h));
        continue;
      }
    } catch (const Error& e) {
      issue("undecodable_image", rec.sample.image_id, e.what());
      continue;
    }
    m.images.push_back(std::move(rec));
  }
  m.index();

  for (const auto& ann : coco.at("annotations")) {
    const std::string ann_id = id_string(ann.at("id"));
    const std::string image_id = id_string(ann.at("image_id"));
    if (ann.value("iscrowd", 0) != 0) continue;
    auto cat = categories.find(id_string(ann.at("category_id")));
    if (cat == categories.end()) {
      issue("dangling_category", ann_id, "category id " + ann.at("category_id").dump() + " is not defined");
      continue;
    }
    auto img = m.find_image(image_id);
    if (!img) {
      issue(image_ids.count(image_id) ? "invalid_image" : "dangling_image", ann_id,
            "references image " + image_id + (image_ids.count(image_id) ? " which failed validation" : " which is absent"));
      continue;
    }
    const auto& sample = m.images[*img].sample;
    try {
      if (!ann.contains("segmentation")) throw Error(ErrorCode::parse_error, "annotation has no segmentation");
      Mask mask = decode_segmentation(ann.at("segmentation"), sample.height, sample.width);
      if (count_foreground(mask) == 0) {
        issue("zero_area", ann_id, "mask is empty");
        continue;
      }
      m.instances.emplace_back(image_id, ann_id, cat->second, mask);
    } catch (const Error& e) {
      issue("bad_segmentation", ann_id, e.what());
    } catch (const json::exception& e) {
      issue("bad_segmentation", ann_id, e.what());
    }
  }
  m.index();

  if (options.strict && !report.ok())
    throw Error(ErrorCode::invalid_argument, "strict ingest failed: " + report.summary());
  if (!report.ok()) spdlog::warn("ingest: {}", report.summary());
  return result;
}

IngestResult ingest_coco(const std::filesystem::path& annotation_path, const std::filesystem::path& image_root,
                         const IngestOptions& options) {
  std::ifstream in(annotation_path);
  if (!in) throw Error(ErrorCode::not_found, "cannot open annotations " + annotation_path.string());
  json coco;
  try {
    coco = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse_error, annotation_path.string() + ": " + e.what());
  }
  auto result = ingest_coco_json(coco, image_root, options);
  result.manifest.annotation_files.push_back(annotation_path);
  return result;
}

// ---- letterbox ------------------------------------------------------------

Letterbox make_letterbox(int src_height, int src_width, int dst_height, int dst_width) {
  if (src_height <= 0 || src_width <= 0 || dst_height <= 0 || dst_width <= 0)
    throw Error(ErrorCode::invalid_argument, "letterbox dimensions must be positive");
  Letterbox lb{src_height, src_width, dst_height, dst_width, 0, 0, 1.0};
  lb.scale = std::min(static_cast<double>(dst_height) / src_height, static_cast<double>(dst_width) / src_width);
  lb.content_height = std::clamp(static_cast<int>(std::lround(src_height * lb.scale)), 1, dst_height);
  lb.content_width = std::clamp(static_cast<int>(std::lround(src_width * lb.scale)), 1, dst_width);
  return lb;
}

Point Letterbox::to_grid(Point p) const {
  int x = static_cast<int>(std::floor((p.x + 0.5) * content_width / src_width));
  int y = static_cast<int>(std::floor((p.y + 0.5) * content_height / src_height));
  return {std::clamp(x, 0, content_width - 1), std::clamp(y, 0, content_height - 1)};
}

Mask Letterbox::content_mask() const {
  Mask m(dst_height, dst_width, 0);
  for (int y = 0; y < content_height; ++y)
    for (int x = 0; x < content_width; ++x) m(y, x) = 1;
  return m;
}

FloatGrid letterbox_grid(const FloatGrid& src, const Letterbox& lb, float pad) {
  if (src.height() != lb.src_height || src.width() != lb.src_width)
    throw Error(ErrorCode::shape_mismatch, "grid does not match letterbox source shape");
  FloatGrid content = resize_bilinear(src, lb.content_height, lb.content_width);
  FloatGrid out(lb.dst_height, lb.dst_width, pad);
  for (int y = 0; y < lb.content_height; ++y)
    for (int x = 0; x < lb.content_width; ++x) out(y, x) = content(y, x);
  return out;
}

Mask letterbox_mask(const Mask& src, const Letterbox& lb) {
  if (src.height() != lb.src_height || src.width() != lb.src_width)
    throw Error(ErrorCode::shape_mismatch, "mask does not match letterbox source shape");
  Mask content = resize_nearest(src, lb.content_height, lb.content_width);
  Mask out(lb.dst_height, lb.dst_width, 0);
  for (int y = 0; y < lb.content_height; ++y)
    for (int x = 0; x < lb.content_width; ++x) out(y, x) = content(y, x);
  return out;
}

RgbImage letterbox_rgb(const RgbImage& src, const Letterbox& lb) {
  RgbImage content = resize_rgb(src, lb.content_width, lb.content_height);
  RgbImage out(lb.dst_width, lb.dst_height);
  for (int y = 0; y < lb.content_height; ++y)
    std::copy_n(&content.at(y, 0, 0), static_cast<std::size_t>(lb.content_width) * 3, &out.at(y, 0, 0));
  return out;
}

Mask unletterbox_mask(const Mask& grid_mask, const Letterbox& lb) {
  if (grid_mask.height() != lb.dst_height || grid_mask.width() != lb.dst_width)
    throw Error(ErrorCode::shape_mismatch, "mask does not match letterbox grid shape");
  FloatGrid content(lb.content_height, lb.content_width, 0.0f);
  for (int y = 0; y < lb.content_height; ++y)
    for (int x = 0; x < lb.content_width; ++x) content(y, x) = grid_mask(y, x) ? 1.0f : 0.0f;
  FloatGrid up = resize_bilinear(content, lb.src_height, lb.src_width);
  Mask out(lb.src_height, lb.src_width, 0);
  for (std::size_t i = 0; i < up.size(); ++i) out.data()[i] = up.data()[i] >= 0.5f;
  return out;
}

// ---- assembly -------------------------------------------------------------

FloatGrid ExampleInputs::channel(int c) const {
  FloatGrid g(height, width, 0.0f);
  std::copy_n(channels.begin() + static_cast<std::ptrdiff_t>(c) * height * width, g.size(), g.data());
  return g;
}

ExampleInputs assemble_inputs(const RgbImage& image, const InteractionSet& interactions,
                              const std::optional<SaliencyMap>& saliency, const AssembleConfig& cfg) {
  if (image.empty()) throw Error(ErrorCode::invalid_argument, "empty image");
  interactions.validate(image.height, image.width);
  ExampleInputs in;
  in.height = cfg.height;
  in.width = cfg.width;
  in.letterbox = make_letterbox(image.height, image.width, cfg.height, cfg.width);
  in.valid = in.letterbox.content_mask();
  in.channels.assign(static_cast<std::size_t>(kInputChannels) * cfg.height * cfg.width, 0.0f);
  const auto& lb = in.letterbox;
  const bool unit = cfg.range == NormalizeRange::zero_one;
  const float far = unit ? 0.0f : -1.0f;

  RgbImage content = resize_rgb(image, lb.content_width, lb.content_height);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < lb.content_height; ++y)
      for (int x = 0; x < lb.content_width; ++x) {
        float v = content.at(y, x, c);
        in.at(c, y, x) = unit ? v / 255.0f : v / 127.5f - 1.0f;
      }

  std::vector<Point> pos, neg;
  if (cfg.use_clicks) {
    for (const auto& p : interactions.points(Polarity::positive)) pos.push_back(lb.to_grid(p));
    for (const auto& p : interactions.points(Polarity::negative)) neg.push_back(lb.to_grid(p));
  }
  auto pos_map = euclidean_distance_map(pos, cfg.height, cfg.width, cfg.distance_cap);
  std::optional<DistanceMap> neg_map;
  if (!neg.empty()) neg_map = euclidean_distance_map(neg, cfg.height, cfg.width, cfg.distance_cap);
  FloatGrid clickmap = normalize_channel(merge_polarity_maps(pos_map, neg_map), in.valid, far, cfg.range);
  std::copy(clickmap.begin(), clickmap.end(), in.channels.begin() + static_cast<std::ptrdiff_t>(kClickmap) * cfg.height * cfg.width);

  if (cfg.use_text && interactions.has_text()) {
    if (!saliency)
      throw Error(ErrorCode::invalid_argument, "interaction has text but no saliency map was supplied");
    if (saliency->values.height() != image.height || saliency->values.width() != image.width)
      throw Error(ErrorCode::shape_mismatch, "saliency map shape differs from image shape");
    FloatGrid sal = normalize_channel(letterbox_grid(saliency->values, lb, 0.0f), in.valid, 0.0f, cfg.range);
    std::copy(sal.begin(), sal.end(), in.channels.begin() + static_cast<std::ptrdiff_t>(kSaliency) * cfg.height * cfg.width);
  }

#ifndef NDEBUG
  for (float v : in.channels) assert(v >= -1.0f && v <= 1.0f);
#endif
  return in;
}

TrainingExample assemble_example(const RgbImage& image, const InstanceMask& instance,
                                 const InteractionSet& interactions, const std::optional<SaliencyMap>& saliency,
                                 const AssembleConfig& cfg) {
  if (instance.height() != image.height || instance.width() != image.width)
    throw Error(ErrorCode::shape_mismatch, "instance " + instance.instance_id() + " is " +
                                               std::to_string(instance.width()) + "x" +
                                               std::to_string(instance.height()) + " but its image is " +
                                               std::to_string(image.width) + "x" + std::to_string(image.height));
  if (!interactions.instance_id.empty() && interactions.instance_id != instance.instance_id())
    throw Error(ErrorCode::invalid_argument, "interactions reference instance " + interactions.instance_id +
                                                 ", expected " + instance.instance_id());
  TrainingExample ex;
  ex.inputs = assemble_inputs(image, interactions, saliency, cfg);
  ex.target = letterbox_mask(instance.decode(), ex.inputs.letterbox);
  ex.instance_id = instance.instance_id();
  ex.class_name = instance.class_name();
  return ex;
}

// ---- loaders --------------------------------------------------------------

Loader::Loader(const DatasetManifest& manifest, const ClassSplit& split, LoaderMode mode, LoaderConfig cfg)
    : mode_(mode), cfg_(cfg) {
  if (cfg_.batch_size < 1) throw Error(ErrorCode::invalid_argument, "batch_size must be >= 1");
  if (cfg_.samples_per_instance < 1) throw Error(ErrorCode::invalid_argument, "samples_per_instance must be >= 1");
  std::set<std::string> seen_images;
  for (std::size_t i = 0; i < manifest.instances.size(); ++i) {
    const auto& inst = manifest.instances[i];
    const bool seen = split.classify(inst.class_name()) == Membership::seen;
    if (mode == LoaderMode::train && !seen) continue;
    for (int s = 0; s < cfg_.samples_per_instance; ++s) items_.push_back({i, s});
    if (seen_images.insert(inst.image_id()).second) image_ids_.push_back(inst.image_id());
  }
  if (items_.empty())
    throw Error(ErrorCode::invalid_argument,
                std::string("no eligible instances for ") + (mode == LoaderMode::train ? "train" : "eval") +
                    " mode after split filtering");
}

std::size_t Loader::batches_per_epoch() const {
  const std::size_t b = static_cast<std::size_t>(cfg_.batch_size);
  return cfg_.drop_last ? items_.size() / b : (items_.size() + b - 1) / b;
}

std::vector<std::vector<LoaderItem>> Loader::epoch(int epoch_index) const {
  std::vector<LoaderItem> order = items_;
  if (mode_ == LoaderMode::train && cfg_.shuffle) {
    Rng rng(derive_seed(cfg_.seed, 0x5eed, static_cast<std::uint64_t>(epoch_index)));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.uniform_index(i)]);
  }
  std::vector<std::vector<LoaderItem>> batches;
  const std::size_t b = static_cast<std::size_t>(cfg_.batch_size);
  for (std::size_t start = 0; start < order.size(); start += b) {
    std::size_t end = std::min(order.size(), start + b);
    if (cfg_.drop_last && end - start < b) break;
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

Loader make_loader(const DatasetManifest& manifest, const ClassSplit& split, LoaderMode mode, const LoaderConfig& cfg) {
  return Loader(manifest, split, mode, cfg);
}

void check_no_leakage(const DatasetManifest& manifest, const ClassSplit& split, const Loader& train_loader) {
  for (const auto& item : train_loader.items()) {
    const auto& inst = manifest.instances.at(item.instance_index);
    if (!split.is_seen(inst.class_name()))
      throw Error(ErrorCode::invalid_argument, "train loader leaks unseen instance " + inst.instance_id() + " (" +
                                                   inst.class_name() + ")");
  }
}

InteractionTable synthesize_interaction_table(const DatasetManifest& manifest, std::span<const std::size_t> instances,
                                              const ClickConfig& cfg, SynthesisMode) {
  cfg.validate();
  InteractionTable table;
  for (auto i : instances) {
    const auto& inst = manifest.instances.at(i);
    std::vector<Mask> others;
    if (cfg.n_neg > 0) others = manifest.same_class_others(i);
    auto& slot = table[inst.instance_id()];
    for (int s = 0; s < cfg.samples_per_instance; ++s)
      slot.push_back(synthesize_instance(inst, others, cfg, derive_seed(cfg.rng_seed, i, s), s).interactions);
  }
  return table;
}

InteractionTable interaction_table_from_records(std::span<const InteractionRecord> records) {
  InteractionTable table;
  for (const auto& r : records) {
    auto& slot = table[r.interactions.instance_id];
    if (static_cast<int>(slot.size()) <= r.sample_index) slot.resize(static_cast<std::size_t>(r.sample_index) + 1);
    slot[static_cast<std::size_t>(r.sample_index)] = r.interactions;
  }
  return table;
}

std::string InteractionSpec::label() const {
  return std::string(text ? "text" : "no-text") + "," + std::to_string(pclicks) + "," + std::to_string(nclicks);
}

void InteractionSpec::validate() const {
  if (pclicks < 0 || nclicks < 0) throw Error(ErrorCode::invalid_argument, "click counts must be >= 0");
  if (!text && pclicks + nclicks == 0)
    throw Error(ErrorCode::invalid_argument, "interaction spec needs text or at least one click");
}

InteractionSpec parse_interaction_spec(std::string_view s) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      parts.push_back(cur);
      cur.clear();
    } else if (!std::isspace(static_cast<unsigned char>(c))) {
      cur.push_back(c);
    }
  }
  parts.push_back(cur);
  auto bad = [&] {
    return Error(ErrorCode::parse_error, "bad interaction spec \"" + std::string(s) + "\" (expected text|no-text,P,N)");
  };
  if (parts.size() != 3) throw bad();
  InteractionSpec spec;
  if (parts[0] == "text") spec.text = true;
  else if (parts[0] == "no-text" || parts[0] == "notext") spec.text = false;
  else throw bad();
  try {
    std::size_t used = 0;
    spec.pclicks = std::stoi(parts[1], &used);
    if (used != parts[1].size()) throw bad();
    spec.nclicks = std::stoi(parts[2], &used);
    if (used != parts[2].size()) throw bad();
  } catch (const std::logic_error&) {
    throw bad();
  }
  spec.validate();
  return spec;
}

InteractionSet synthesize_for_spec(const DatasetManifest& manifest, std::size_t instance_index, const ClickConfig& base,
                                   const InteractionSpec& spec, std::uint64_t seed) {
  spec.validate();
  ClickConfig cfg = base;
  cfg.n_pos = spec.pclicks;
  cfg.n_neg = spec.nclicks;
  cfg.text_only = spec.pclicks + spec.nclicks == 0;
  const auto& inst = manifest.instances.at(instance_index);
  std::vector<Mask> others;
  if (cfg.n_neg > 0) others = manifest.same_class_others(instance_index);
  InteractionSet out = synthesize_instance(inst, others, cfg, seed).interactions;
  if (!spec.text) out.text.reset();
  return out;
}

ExampleBuilder::ExampleBuilder(const DatasetManifest& manifest, ClassSplit split, BuilderConfig cfg,
                               std::shared_ptr<SaliencyBackend> backend, InteractionTable interactions)
    : manifest_(manifest),
      split_(std::move(split)),
      cfg_(std::move(cfg)),
      backend_(std::move(backend)),
      interactions_(std::move(interactions)) {}

const InteractionSet& ExampleBuilder::interactions_for(const LoaderItem& item) const {
  const auto& inst = manifest_.instances.at(item.instance_index);
  auto it = interactions_.find(inst.instance_id());
  if (it == interactions_.end() || static_cast<int>(it->second.size()) <= item.sample_index ||
      (it->second[static_cast<std::size_t>(item.sample_index)].clicks.empty() &&
       !it->second[static_cast<std::size_t>(item.sample_index)].has_text()))
    throw Error(ErrorCode::not_found, "no interactions for instance " + inst.instance_id() + " sample " +
                                          std::to_string(item.sample_index));
  return it->second[static_cast<std::size_t>(item.sample_index)];
}

std::shared_ptr<const RgbImage> ExampleBuilder::pixels(std::string_view image_id) const {
  const std::string key(image_id);
  {
    std::lock_guard lock(cache_mutex_);
    if (auto it = images_.find(key); it != images_.end()) return it->second;
  }
  auto img = std::make_shared<const RgbImage>(load_image(manifest_.image(image_id).path));
  std::lock_guard lock(cache_mutex_);
  if (images_.size() >= cfg_.image_cache_entries) images_.clear();
  images_.emplace(key, img);
  return img;
}

TrainingExample ExampleBuilder::build(const LoaderItem& item, int epoch) const {
  const auto& inst = manifest_.instances.at(item.instance_index);
  const auto& record = manifest_.image(inst.image_id());
  auto img = pixels(inst.image_id());

  InteractionSet interactions;
  if (!cfg_.interaction_mix.empty()) {
    const auto step = static_cast<std::uint64_t>(epoch) * static_cast<std::uint64_t>(cfg_.clicks.samples_per_instance) +
                      static_cast<std::uint64_t>(item.sample_index);
    const auto seed = derive_seed(cfg_.clicks.rng_seed ^ 0x6d6978ULL, item.instance_index, step);
    Rng pick(seed);
    const auto& spec = cfg_.interaction_mix[pick.uniform_index(cfg_.interaction_mix.size())];
    interactions = synthesize_for_spec(manifest_, item.instance_index, cfg_.clicks, spec, mix_seed(seed));
  } else if (cfg_.resample_clicks_per_epoch && epoch > 0) {
    std::vector<Mask> others;
    if (cfg_.clicks.n_neg > 0) others = manifest_.same_class_others(item.instance_index);
    auto step = static_cast<std::uint64_t>(epoch) * static_cast<std::uint64_t>(cfg_.clicks.samples_per_instance) +
                static_cast<std::uint64_t>(item.sample_index);
    interactions = synthesize_instance(inst, others, cfg_.clicks, derive_seed(cfg_.clicks.rng_seed, item.instance_index, step),
                                       item.sample_index)
                       .interactions;
  } else {
    interactions = interactions_for(item);
  }

  std::optional<SaliencyMap> saliency;
  if (cfg_.assemble.use_text && interactions.has_text()) {
    if (!backend_) throw Error(ErrorCode::unavailable, "text-conditioned run without a saliency backend");
    saliency = compute_saliency(*backend_, record.sample, *img, *interactions.text, cfg_.saliency);
  }
  auto ex = assemble_example(*img, inst, interactions, saliency, cfg_.assemble);
  ex.seen = split_.contains(inst.class_name()) && split_.is_seen(inst.class_name());
  return ex;
}

std::vector<TrainingExample> ExampleBuilder::build_batch(std::span<const LoaderItem> items, int epoch) const {
  std::vector<TrainingExample> out(items.size());
  const int workers = std::max(1, std::min<int>(cfg_.workers, static_cast<int>(items.size())));
  if (workers == 1) {
    for (std::size_t i = 0; i < items.size(); ++i) out[i] = build(items[i], epoch);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < items.size();) {
        try {
          out[i] = build(items[i], epoch);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return out;
}

}  // namespace clickseg
