#pragma once

#include <atomic>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "clickseg/grid.hpp"
#include "clickseg/image.hpp"
#include "clickseg/types.hpp"

namespace clickseg {

/// Text-to-pixel relevance over the full image resolution.
struct SaliencyMap {
  FloatGrid values;
  std::string text;
  std::string backend_id;
};

struct BackendCapabilities {
  bool supports_batching = false;
  bool uses_device = false;
  /// Output depends on the image identifier rather than the pixels (the
  /// annotation-driven stub); caches must key on it.
  bool keyed_by_image_id = false;
};

/// Converts (image, phrase) into a single-channel map. Implementations must
/// be deterministic for a given input within one process.
class SaliencyBackend {
 public:
  virtual ~SaliencyBackend() = default;
  virtual std::string id() const = 0;
  virtual BackendCapabilities capabilities() const { return {}; }
  virtual SaliencyMap compute(const ImageSample& sample, const RgbImage& image, std::string_view text) = 0;
};

struct SaliencyOptions {
  /// Replace raw similarities by a softmax over all pixels of the map.
  bool softmax = false;
};

/// Runs a backend and enforces the shape and finiteness contract.
SaliencyMap compute_saliency(SaliencyBackend& backend, const ImageSample& sample, const RgbImage& image,
                             std::string_view text, const SaliencyOptions& options = {});

struct GaussianBlob {
  double cx = 0;
  double cy = 0;
  double sigma = 1;
};

/// Parses "blob:cx=<int>,cy=<int>,s=<float>", several blobs joined by ';'.
std::vector<GaussianBlob> parse_blob_spec(std::string_view spec);
std::string format_blob_spec(std::span<const GaussianBlob> blobs);

/// Sum of unit-peak Gaussians exp(-r^2 / 2 s^2).
SaliencyMap stub_saliency(int height, int width, std::string_view spec);

/// Analytic backend: the text *is* a blob specification.
class StubBackend final : public SaliencyBackend {
 public:
  std::string id() const override { return "stub"; }
  SaliencyMap compute(const ImageSample& sample, const RgbImage& image, std::string_view text) override;
};

/// Stand-in for an open-vocabulary model on synthetic data: the map for a
/// class phrase is a Gaussian at each annotated instance of that class in
/// the image, with sigma proportional to sqrt(area). Unknown phrases give an
/// all-zero map.
class AnnotationStubBackend final : public SaliencyBackend {
 public:
  explicit AnnotationStubBackend(std::span<const InstanceMask> instances, double sigma_scale = 0.5);

  std::string id() const override { return "annotation_stub"; }
  BackendCapabilities capabilities() const override { return {false, false, true}; }
  SaliencyMap compute(const ImageSample& sample, const RgbImage& image, std::string_view text) override;

  /// The blob spec the backend would render for (image, phrase).
  std::string blob_spec(std::string_view image_id, std::string_view text) const;

 private:
  struct Entry {
    std::string class_name;
    GaussianBlob blob;
  };
  std::map<std::string, std::vector<Entry>, std::less<>> by_image_;
};

/// Interface-compatible saliency methods that are not implemented; compute
/// throws not_implemented.
class PlaceholderBackend final : public SaliencyBackend {
 public:
  explicit PlaceholderBackend(std::string id) : id_(std::move(id)) {}
  std::string id() const override { return id_; }
  SaliencyMap compute(const ImageSample& sample, const RgbImage& image, std::string_view text) override;

 private:
  std::string id_;
};

/// Hash of the pixels plus dimensions; the image part of cache keys.
std::string image_content_hash(const RgbImage& image);

/// Read-mostly cache keyed by (image hash, text, backend id), optionally
/// persisted as cache/<backend>/<image_hash>/<text_hash>.npy.
class SaliencyCache {
 public:
  explicit SaliencyCache(std::optional<std::filesystem::path> directory = std::nullopt);

  std::optional<FloatGrid> find(const std::string& backend_id, const std::string& image_hash,
                                const std::string& text) const;
  void store(const std::string& backend_id, const std::string& image_hash, const std::string& text,
             const FloatGrid& values);

  std::filesystem::path file_for(const std::string& backend_id, const std::string& image_hash,
                                 const std::string& text) const;
  std::size_t memory_entries() const;

 private:
  static std::string key(const std::string& backend_id, const std::string& image_hash, const std::string& text);

  std::optional<std::filesystem::path> directory_;
  mutable std::shared_mutex mutex_;
  mutable std::unordered_map<std::string, FloatGrid> entries_;
};

/// Wraps a backend with a cache. Backend calls are serialized; cache hits
/// are served concurrently.
class CachedBackend final : public SaliencyBackend {
 public:
  CachedBackend(std::shared_ptr<SaliencyBackend> inner, std::shared_ptr<SaliencyCache> cache);

  std::string id() const override { return inner_->id(); }
  BackendCapabilities capabilities() const override { return inner_->capabilities(); }
  SaliencyMap compute(const ImageSample& sample, const RgbImage& image, std::string_view text) override;

  std::size_t backend_calls() const noexcept { return calls_; }

 private:
  std::shared_ptr<SaliencyBackend> inner_;
  std::shared_ptr<SaliencyCache> cache_;
  std::mutex compute_mutex_;
  std::atomic<std::size_t> calls_ = 0;
};

}  // namespace clickseg
