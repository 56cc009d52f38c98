#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "clickseg/dataset.hpp"

namespace clickseg {

/// Anything that turns (image, interactions) into a binary mask at the
/// image's native resolution.
class InstancePredictor {
 public:
  virtual ~InstancePredictor() = default;
  virtual Mask predict_mask(const ImageSample& sample, const RgbImage& image, const InteractionSet& interactions) = 0;
};

struct EvalRow {
  std::string instance_id;
  std::string image_id;
  std::string class_name;
  bool seen = false;
  double iou = 0.0;
  double boundary_iou = 0.0;
  int n_same_class_in_image = 1;
  /// Set when prediction failed; the row then carries iou = 0.
  std::optional<std::string> error;
};

struct Aggregates {
  double overall_miou = 0.0;
  double seen_miou = 0.0;
  double unseen_miou = 0.0;
  double overall_boundary_iou = 0.0;
  double seen_boundary_iou = 0.0;
  double unseen_boundary_iou = 0.0;
  std::size_t n_overall = 0;
  std::size_t n_seen = 0;
  std::size_t n_unseen = 0;
  std::size_t n_errors = 0;
};

enum class Averaging { instance, class_macro };

/// Means over rows (instance averaging) or over per-class means
/// (class_macro). Empty partitions give 0.
Aggregates aggregate(std::span<const EvalRow> rows, Averaging averaging = Averaging::instance);

struct DistractorBucket {
  double mean_iou = 0.0;
  std::size_t count = 0;
};

/// Unseen-class rows grouped by the number of same-class instances in their
/// image.
std::map<int, DistractorBucket> distractor_analysis(std::span<const EvalRow> rows);

struct EvalReport {
  std::vector<EvalRow> rows;
  Aggregates aggregates;
  std::map<int, DistractorBucket> distractor_buckets;
  Averaging averaging = Averaging::instance;
  nlohmann::json config;
};

/// Recomputes aggregates and buckets from the rows; throws numerical on any
/// difference.
void verify_report(const EvalReport& report);

struct EvalOptions {
  ClickConfig clicks;
  InteractionSpec spec;
  std::uint64_t seed = 2024;
  /// Boundary band width; default is two percent of each image diagonal.
  std::optional<double> boundary_width;
  Averaging averaging = Averaging::instance;
  int workers = 1;
  /// Extra fields echoed into the report config.
  nlohmann::json extra = nlohmann::json::object();
};

/// One prediction per instance of the split, in manifest order. Clicks for
/// instance i are drawn from derive_seed(seed, i), so reports with different
/// specs are paired instance by instance.
EvalReport evaluate(InstancePredictor& predictor, const DatasetManifest& manifest, const ClassSplit& split,
                    const EvalOptions& options);

std::vector<EvalReport> interaction_sweep(InstancePredictor& predictor, const DatasetManifest& manifest,
                                          const ClassSplit& split, std::span<const InteractionSpec> specs,
                                          const EvalOptions& base);

nlohmann::ordered_json report_to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& j);
std::string report_rows_csv(const EvalReport& report);

/// Writes <stem>.json and <stem>.csv after verify_report.
void write_report(const EvalReport& report, const std::filesystem::path& stem);

/// Bar chart of distractor buckets (mean IoU per same-class count) as PNG.
void write_distractor_chart(const std::map<int, DistractorBucket>& buckets, const std::filesystem::path& png,
                            const std::string& title = "unseen-class mIoU by same-class count");

}  // namespace clickseg
