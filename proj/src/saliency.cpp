#include "clickseg/saliency.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <spdlog/spdlog.h>

#include "clickseg/class_split.hpp"
#include "clickseg/error.hpp"
#include "clickseg/hash.hpp"
#include "clickseg/npy.hpp"

namespace clickseg {
namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

[[noreturn]] void bad_spec(std::string_view spec, const std::string& why) {
  throw Error(ErrorCode::parse_error, "bad saliency blob spec \"" + std::string(spec) + "\": " + why);
}

template <typename T>
T parse_number(std::string_view text, std::string_view spec, std::string_view field) {
  T value{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size())
    bad_spec(spec, "field " + std::string(field) + " is not a number");
  return value;
}

void softmax_in_place(FloatGrid& g) {
  if (g.size() == 0) return;
  float peak = *std::max_element(g.begin(), g.end());
  double total = 0;
  for (float& v : g) {
    v = std::exp(v - peak);
    total += v;
  }
  for (float& v : g) v = static_cast<float>(v / total);
}

}  // namespace

SaliencyMap compute_saliency(SaliencyBackend& backend, const ImageSample& sample, const RgbImage& image,
                             std::string_view text, const SaliencyOptions& options) {
  if (trim(text).empty()) throw Error(ErrorCode::invalid_argument, "saliency text must be non-empty");
  if (image.empty()) throw Error(ErrorCode::invalid_argument, "saliency image is empty");
  if ((sample.width && sample.width != image.width) || (sample.height && sample.height != image.height))
    throw Error(ErrorCode::shape_mismatch, "image sample " + sample.image_id + " declares " +
                                               std::to_string(sample.width) + "x" + std::to_string(sample.height) +
                                               " but pixels are " + std::to_string(image.width) + "x" +
                                               std::to_string(image.height));
  SaliencyMap map = backend.compute(sample, image, text);
  if (map.values.height() != image.height || map.values.width() != image.width)
    throw Error(ErrorCode::shape_mismatch, "backend " + backend.id() + " returned " +
                                               std::to_string(map.values.width()) + "x" +
                                               std::to_string(map.values.height()) + " for a " +
                                               std::to_string(image.width) + "x" + std::to_string(image.height) +
                                               " image");
  for (float v : map.values)
    if (!std::isfinite(v)) throw Error(ErrorCode::numerical, "backend " + backend.id() + " produced non-finite saliency");
  if (options.softmax) softmax_in_place(map.values);
  map.text = std::string(text);
  map.backend_id = backend.id();
  return map;
}

std::vector<GaussianBlob> parse_blob_spec(std::string_view spec) {
  std::vector<GaussianBlob> blobs;
  if (trim(spec).ends_with(';')) bad_spec(spec, "empty blob");
  std::string_view rest = spec;
  while (!rest.empty()) {
    auto semi = rest.find(';');
    std::string_view part = trim(rest.substr(0, semi));
    rest = semi == std::string_view::npos ? std::string_view{} : rest.substr(semi + 1);
    if (part.empty()) bad_spec(spec, "empty blob");
    if (part.starts_with("blob:")) {
      part.remove_prefix(5);
    } else if (blobs.empty()) {
      bad_spec(spec, "expected prefix 'blob:'");
    }
    GaussianBlob blob;
    bool have_x = false, have_y = false, have_s = false;
    while (!part.empty()) {
      auto comma = part.find(',');
      std::string_view kv = trim(part.substr(0, comma));
      part = comma == std::string_view::npos ? std::string_view{} : part.substr(comma + 1);
      auto eq = kv.find('=');
      if (eq == std::string_view::npos) bad_spec(spec, "expected key=value, got '" + std::string(kv) + "'");
      std::string_view key = trim(kv.substr(0, eq));
      std::string_view value = trim(kv.substr(eq + 1));
      if (key == "cx") {
        blob.cx = parse_number<int>(value, spec, key);
        have_x = true;
      } else if (key == "cy") {
        blob.cy = parse_number<int>(value, spec, key);
        have_y = true;
      } else if (key == "s") {
        blob.sigma = parse_number<double>(value, spec, key);
        have_s = true;
      } else {
        bad_spec(spec, "unknown key '" + std::string(key) + "'");
      }
    }
    if (!have_x || !have_y || !have_s) bad_spec(spec, "each blob needs cx, cy and s");
    if (!(blob.sigma > 0) || !std::isfinite(blob.sigma)) bad_spec(spec, "s must be positive");
    blobs.push_back(blob);
  }
  if (blobs.empty()) bad_spec(spec, "no blobs");
  return blobs;
}

std::string format_blob_spec(std::span<const GaussianBlob> blobs) {
  std::ostringstream out;
  for (std::size_t i = 0; i < blobs.size(); ++i) {
    if (i) out << ';';
    out << "blob:cx=" << std::lround(blobs[i].cx) << ",cy=" << std::lround(blobs[i].cy) << ",s=" << blobs[i].sigma;
  }
  return out.str();
}

namespace {

FloatGrid render_blobs(int height, int width, std::span<const GaussianBlob> blobs) {
  FloatGrid out(height, width, 0.0f);
  for (const auto& b : blobs) {
    double inv = 1.0 / (2.0 * b.sigma * b.sigma);
    for (int y = 0; y < height; ++y) {
      double dy = y - b.cy;
      for (int x = 0; x < width; ++x) {
        double dx = x - b.cx;
        out(y, x) += static_cast<float>(std::exp(-(dx * dx + dy * dy) * inv));
      }
    }
  }
  return out;
}

}  // namespace

SaliencyMap stub_saliency(int height, int width, std::string_view spec) {
  if (height <= 0 || width <= 0) throw Error(ErrorCode::invalid_argument, "stub saliency shape must be positive");
  auto blobs = parse_blob_spec(spec);
  return {render_blobs(height, width, blobs), std::string(spec), "stub"};
}

SaliencyMap StubBackend::compute(const ImageSample&, const RgbImage& image, std::string_view text) {
  return stub_saliency(image.height, image.width, text);
}

AnnotationStubBackend::AnnotationStubBackend(std::span<const InstanceMask> instances, double sigma_scale) {
  if (!(sigma_scale > 0)) throw Error(ErrorCode::invalid_argument, "sigma_scale must be positive");
  for (const auto& inst : instances) {
    if (inst.area() == 0) continue;
    Mask m = inst.decode();
    double sx = 0, sy = 0;
    for (int y = 0; y < m.height(); ++y)
      for (int x = 0; x < m.width(); ++x)
        if (m(y, x)) {
          sx += x;
          sy += y;
        }
    double n = static_cast<double>(inst.area());
    GaussianBlob blob{std::round(sx / n), std::round(sy / n), sigma_scale * std::sqrt(n)};
    by_image_[inst.image_id()].push_back({normalize_class_name(inst.class_name()), blob});
  }
}

std::string AnnotationStubBackend::blob_spec(std::string_view image_id, std::string_view text) const {
  std::vector<GaussianBlob> blobs;
  auto it = by_image_.find(image_id);
  std::string cls = normalize_class_name(text);
  if (it != by_image_.end())
    for (const auto& e : it->second)
      if (e.class_name == cls) blobs.push_back(e.blob);
  return format_blob_spec(blobs);
}

SaliencyMap AnnotationStubBackend::compute(const ImageSample& sample, const RgbImage& image, std::string_view text) {
  std::vector<GaussianBlob> blobs;
  std::string cls = normalize_class_name(text);
  if (auto it = by_image_.find(sample.image_id); it != by_image_.end())
    for (const auto& e : it->second)
      if (e.class_name == cls) blobs.push_back(e.blob);
  return {render_blobs(image.height, image.width, blobs), std::string(text), id()};
}

SaliencyMap PlaceholderBackend::compute(const ImageSample&, const RgbImage&, std::string_view) {
  throw Error(ErrorCode::not_implemented, "saliency backend '" + id_ + "' is an interface placeholder; use maskclip");
}

std::string image_content_hash(const RgbImage& image) {
  std::string header = std::to_string(image.width) + "x" + std::to_string(image.height) + ":";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  bytes.insert(bytes.end(), image.data.begin(), image.data.end());
  return sha256_hex(bytes);
}

SaliencyCache::SaliencyCache(std::optional<std::filesystem::path> directory) : directory_(std::move(directory)) {}

std::string SaliencyCache::key(const std::string& backend_id, const std::string& image_hash, const std::string& text) {
  return backend_id + '\n' + image_hash + '\n' + text;
}

std::filesystem::path SaliencyCache::file_for(const std::string& backend_id, const std::string& image_hash,
                                              const std::string& text) const {
  if (!directory_) throw Error(ErrorCode::invalid_argument, "saliency cache has no directory");
  return *directory_ / backend_id / image_hash / (sha256_hex(std::string_view(text)) + ".npy");
}

std::optional<FloatGrid> SaliencyCache::find(const std::string& backend_id, const std::string& image_hash,
                                             const std::string& text) const {
  auto k = key(backend_id, image_hash, text);
  {
    std::shared_lock lock(mutex_);
    if (auto it = entries_.find(k); it != entries_.end()) return it->second;
  }
  if (!directory_) return std::nullopt;
  auto path = file_for(backend_id, image_hash, text);
  if (!std::filesystem::exists(path)) return std::nullopt;
  FloatGrid values = load_npy(path);
  std::unique_lock lock(mutex_);
  entries_.emplace(k, values);
  return values;
}

void SaliencyCache::store(const std::string& backend_id, const std::string& image_hash, const std::string& text,
                          const FloatGrid& values) {
  {
    std::unique_lock lock(mutex_);
    entries_.insert_or_assign(key(backend_id, image_hash, text), values);
  }
  if (!directory_) return;
  auto path = file_for(backend_id, image_hash, text);
  std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  save_npy(values, tmp);
  std::filesystem::rename(tmp, path);
}

std::size_t SaliencyCache::memory_entries() const {
  std::shared_lock lock(mutex_);
  return entries_.size();
}

CachedBackend::CachedBackend(std::shared_ptr<SaliencyBackend> inner, std::shared_ptr<SaliencyCache> cache)
    : inner_(std::move(inner)), cache_(std::move(cache)) {
  if (!inner_ || !cache_) throw Error(ErrorCode::invalid_argument, "cached backend needs a backend and a cache");
}

SaliencyMap CachedBackend::compute(const ImageSample& sample, const RgbImage& image, std::string_view text) {
  std::string image_hash = image_content_hash(image);
  if (inner_->capabilities().keyed_by_image_id)
    image_hash = sha256_hex(std::string_view(sample.image_id + ":" + image_hash));
  std::string phrase(text);
  if (auto hit = cache_->find(inner_->id(), image_hash, phrase)) return {std::move(*hit), phrase, inner_->id()};

  std::lock_guard lock(compute_mutex_);
  if (auto hit = cache_->find(inner_->id(), image_hash, phrase)) return {std::move(*hit), phrase, inner_->id()};
  SaliencyMap map = inner_->compute(sample, image, text);
  ++calls_;
  cache_->store(inner_->id(), image_hash, phrase, map.values);
  return map;
}

}  // namespace clickseg
