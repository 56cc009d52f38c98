#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "clickseg/class_split.hpp"
#include "clickseg/click_synthesis.hpp"
#include "clickseg/geometry.hpp"
#include "clickseg/image.hpp"
#include "clickseg/saliency.hpp"
#include "clickseg/types.hpp"

namespace clickseg {

// ---- ingest ---------------------------------------------------------------

struct ImageRecord {
  ImageSample sample;
  std::filesystem::path path;
};

struct ValidationIssue {
  std::string kind;  // missing_image_file, undecodable_image, dangling_image, dangling_category, zero_area, ...
  std::string id;
  std::string message;
};

struct ValidationReport {
  std::vector<ValidationIssue> issues;

  bool ok() const noexcept { return issues.empty(); }
  std::size_t count(std::string_view kind) const;
  nlohmann::json to_json() const;
  std::string summary(std::size_t max_lines = 10) const;
};

class DatasetManifest {
 public:
  DatasetName dataset_name = DatasetName::custom;
  std::vector<std::filesystem::path> annotation_files;
  std::filesystem::path image_root;
  std::optional<std::filesystem::path> split_file;
  std::vector<ImageRecord> images;
  std::vector<InstanceMask> instances;

  /// Rebuilds the lookup tables; call after editing images/instances.
  void index();

  const ImageRecord& image(std::string_view image_id) const;
  std::optional<std::size_t> find_image(std::string_view image_id) const;
  /// Indices into `instances` for one image, in annotation order.
  const std::vector<std::size_t>& instances_in(std::string_view image_id) const;
  /// Number of instances of the same (normalized) class in the same image,
  /// the instance itself included.
  int same_class_count(std::size_t instance_index) const;
  /// Decoded masks of the other same-class instances in the instance's image.
  std::vector<Mask> same_class_others(std::size_t instance_index) const;
  std::map<std::string, int> class_counts() const;

  nlohmann::json summary_json() const;

 private:
  std::unordered_map<std::string, std::size_t> image_lookup_;
  std::unordered_map<std::string, std::vector<std::size_t>> by_image_;
};

struct IngestOptions {
  DatasetName dataset_name = DatasetName::custom;
  /// Abort on the first validation report with issues.
  bool strict = false;
  /// Fully decode every image (otherwise only existence and header size).
  bool verify_decode = true;
};

struct IngestResult {
  DatasetManifest manifest;
  ValidationReport report;
};

/// Reads a COCO-style annotation file. Polygons are rasterized to row-major
/// RLE, COCO RLE (list or compressed string) is converted. Invalid entries
/// are dropped and listed in the report; strict mode throws instead.
IngestResult ingest_coco(const std::filesystem::path& annotation_path, const std::filesystem::path& image_root,
                         const IngestOptions& options = {});
IngestResult ingest_coco_json(const nlohmann::json& coco, const std::filesystem::path& image_root,
                              const IngestOptions& options = {});

using Polygon = std::vector<double>;  // x0, y0, x1, y1, ...

/// Pixel (x, y) is set when its centre (x + 0.5, y + 0.5) lies inside the
/// union of the polygons, each filled under the even-odd rule.
Mask rasterize_polygons(std::span<const Polygon> polygons, int height, int width);
double shoelace_area(const Polygon& polygon);

// ---- example assembly ----------------------------------------------------

/// Aspect-preserving resize into a fixed grid. Content sits at the top-left;
/// padding fills the right and bottom.
struct Letterbox {
  int src_height = 0;
  int src_width = 0;
  int dst_height = 0;
  int dst_width = 0;
  int content_height = 0;
  int content_width = 0;
  double scale = 1.0;

  Point to_grid(Point p) const;
  Mask content_mask() const;
};

Letterbox make_letterbox(int src_height, int src_width, int dst_height, int dst_width);

FloatGrid letterbox_grid(const FloatGrid& src, const Letterbox& lb, float pad);
Mask letterbox_mask(const Mask& src, const Letterbox& lb);
RgbImage letterbox_rgb(const RgbImage& src, const Letterbox& lb);
/// Crops the content region of a grid-resolution mask and resizes it back
/// to the source resolution (bilinear on 0/1, kept where >= 0.5).
Mask unletterbox_mask(const Mask& grid_mask, const Letterbox& lb);

struct AssembleConfig {
  int height = 512;
  int width = 512;
  /// False for the click-only baseline: the saliency channel is all zeros.
  bool use_text = true;
  /// False for text-only ablations: clicks are ignored and the content
  /// region of the clickmap is zero.
  bool use_clicks = true;
  NormalizeRange range = NormalizeRange::minus_one_one;
  float distance_cap = kDefaultDistanceCap;
};

inline constexpr int kInputChannels = 5;
enum Channel : int { kRed = 0, kGreen = 1, kBlue = 2, kClickmap = 3, kSaliency = 4 };

/// Network input: channel-major 5 x H x W values plus the validity mask.
struct ExampleInputs {
  int height = 0;
  int width = 0;
  std::vector<float> channels;
  Mask valid;
  Letterbox letterbox;

  float at(int c, int y, int x) const {
    return channels[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  float& at(int c, int y, int x) { return channels[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  FloatGrid channel(int c) const;
};

struct TrainingExample {
  ExampleInputs inputs;
  Mask target;
  std::string instance_id;
  std::string class_name;
  bool seen = false;
};

ExampleInputs assemble_inputs(const RgbImage& image, const InteractionSet& interactions,
                              const std::optional<SaliencyMap>& saliency, const AssembleConfig& cfg);

TrainingExample assemble_example(const RgbImage& image, const InstanceMask& instance,
                                 const InteractionSet& interactions, const std::optional<SaliencyMap>& saliency,
                                 const AssembleConfig& cfg);

// ---- loaders -------------------------------------------------------------

enum class LoaderMode { train, eval };

struct LoaderConfig {
  int batch_size = 32;
  std::uint64_t seed = 0;
  /// Reshuffle every epoch (train mode only; eval order is fixed).
  bool shuffle = true;
  bool drop_last = false;
  /// Interaction samples per instance; each sample is one loader item.
  int samples_per_instance = 1;
};

struct LoaderItem {
  std::size_t instance_index = 0;
  int sample_index = 0;

  friend bool operator==(const LoaderItem&, const LoaderItem&) = default;
};

/// Which instances a run may touch, and in which order they are visited.
class Loader {
 public:
  Loader(const DatasetManifest& manifest, const ClassSplit& split, LoaderMode mode, LoaderConfig cfg);

  LoaderMode mode() const noexcept { return mode_; }
  const LoaderConfig& config() const noexcept { return cfg_; }
  /// Eligible items in canonical (annotation) order.
  const std::vector<LoaderItem>& items() const noexcept { return items_; }
  /// Images that contain at least one eligible instance.
  const std::vector<std::string>& image_ids() const noexcept { return image_ids_; }
  std::size_t batches_per_epoch() const;
  std::vector<std::vector<LoaderItem>> epoch(int epoch_index) const;

 private:
  LoaderMode mode_;
  LoaderConfig cfg_;
  std::vector<LoaderItem> items_;
  std::vector<std::string> image_ids_;
};

Loader make_loader(const DatasetManifest& manifest, const ClassSplit& split, LoaderMode mode,
                   const LoaderConfig& cfg);

/// Throws if any train item is an unseen-class instance.
void check_no_leakage(const DatasetManifest& manifest, const ClassSplit& split, const Loader& train_loader);

/// Interactions per instance id, sample index order.
using InteractionTable = std::unordered_map<std::string, std::vector<InteractionSet>>;

InteractionTable synthesize_interaction_table(const DatasetManifest& manifest, std::span<const std::size_t> instances,
                                              const ClickConfig& cfg, SynthesisMode mode);
InteractionTable interaction_table_from_records(std::span<const InteractionRecord> records);

/// One interaction condition: text on/off plus positive and negative click
/// counts, written "text,2,1" or "no-text,1,0".
struct InteractionSpec {
  bool text = true;
  int pclicks = 1;
  int nclicks = 0;

  std::string label() const;
  void validate() const;
  friend bool operator==(const InteractionSpec&, const InteractionSpec&) = default;
};

InteractionSpec parse_interaction_spec(std::string_view s);

/// Clicks for one instance under `spec`, drawn with `base` constraints and
/// the given seed; text is the class name when the spec asks for it.
InteractionSet synthesize_for_spec(const DatasetManifest& manifest, std::size_t instance_index, const ClickConfig& base,
                                   const InteractionSpec& spec, std::uint64_t seed);

struct BuilderConfig {
  AssembleConfig assemble;
  ClickConfig clicks;
  /// When non-empty, every (item, epoch) draws one of these conditions at
  /// random and fresh clicks for it, instead of the interaction table.
  std::vector<InteractionSpec> interaction_mix;
  /// Draw fresh clicks every epoch instead of reusing the per-instance set.
  bool resample_clicks_per_epoch = false;
  SaliencyOptions saliency;
  int workers = 1;
  std::size_t image_cache_entries = 512;
};

/// Turns loader items into examples: loads pixels, looks up (or resamples)
/// interactions, fetches saliency and assembles the channels.
class ExampleBuilder {
 public:
  ExampleBuilder(const DatasetManifest& manifest, ClassSplit split, BuilderConfig cfg,
                 std::shared_ptr<SaliencyBackend> backend, InteractionTable interactions);

  TrainingExample build(const LoaderItem& item, int epoch = 0) const;
  std::vector<TrainingExample> build_batch(std::span<const LoaderItem> items, int epoch = 0) const;

  const InteractionSet& interactions_for(const LoaderItem& item) const;
  std::shared_ptr<const RgbImage> pixels(std::string_view image_id) const;
  const BuilderConfig& config() const noexcept { return cfg_; }

 private:
  const DatasetManifest& manifest_;
  ClassSplit split_;
  BuilderConfig cfg_;
  std::shared_ptr<SaliencyBackend> backend_;
  InteractionTable interactions_;
  mutable std::mutex cache_mutex_;
  mutable std::unordered_map<std::string, std::shared_ptr<const RgbImage>> images_;
};

}  // namespace clickseg
