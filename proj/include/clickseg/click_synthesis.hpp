#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "clickseg/class_split.hpp"
#include "clickseg/grid.hpp"
#include "clickseg/rng.hpp"
#include "clickseg/types.hpp"

namespace clickseg {

enum class NegativeStrategy { other_instance, outer_boundary };

std::string_view to_string(NegativeStrategy s);
NegativeStrategy parse_negative_strategy(std::string_view s);

struct ClickConfig {
  int n_pos = 1;
  int n_neg = 0;
  /// Minimum distance of positive clicks from the mask boundary (pixels).
  double d_border = 15.0;
  /// Minimum pairwise distance between positive clicks (pixels).
  double d_between = 150.0;
  int samples_per_instance = 1;
  std::vector<NegativeStrategy> neg_strategies{NegativeStrategy::other_instance, NegativeStrategy::outer_boundary};
  /// Outer width of the background ring used by `outer_boundary`.
  double ring_radius = 20.0;
  std::uint64_t rng_seed = 0;
  bool text_only = false;

  void validate() const;

  /// Five samples per instance, used for fully supervised refCOCO runs.
  static ClickConfig refcoco_supervised();
};

std::string click_config_to_json(const ClickConfig& cfg);
ClickConfig click_config_from_json(std::string_view json_text);

struct PositiveSample {
  std::vector<Click> clicks;
  /// Relaxation steps taken beyond the configured constraints.
  int relaxations = 0;
  double d_border_used = 0.0;
  double d_between_used = 0.0;
  /// True when even the relaxed constraints were infeasible and the clicks
  /// are the mask's maximal-interior-distance pixels.
  bool pole_fallback = false;
};

/// Positive clicks drawn uniformly from mask pixels at least `d_border` from
/// the boundary and `d_between` from each other. Infeasible constraints are
/// relaxed (halve d_between down to 2 px, then d_border likewise, then fall
/// back to the mask pole); this never fails on a non-empty mask.
PositiveSample sample_positive_clicks(const Mask& mask, const ClickConfig& cfg, Rng& rng);

struct NegativeSample {
  std::vector<Click> clicks;
  /// Strategy that produced the clicks; empty when falling back to any
  /// background pixel or when no negatives were requested.
  std::optional<NegativeStrategy> strategy;
};

/// Negative clicks from the first configured strategy with candidates.
/// Throws when the target covers the whole frame and negatives are needed.
NegativeSample sample_negative_clicks(const Mask& target, std::span<const Mask> same_class_instances,
                                      const ClickConfig& cfg, Rng& rng);

enum class SynthesisMode { train, eval };

struct InteractionRecord {
  std::string image_id;
  std::string class_name;
  int sample_index = 0;
  InteractionSet interactions;
  int relaxations = 0;
  bool pole_fallback = false;

  friend bool operator==(const InteractionRecord&, const InteractionRecord&) = default;
};

struct SynthesisStats {
  std::size_t instances_seen = 0;
  std::size_t instances_filtered = 0;
  std::size_t instances_failed = 0;
  std::size_t instances_relaxed = 0;
  std::size_t records = 0;

  /// Fraction of processed instances that needed at least one relaxation.
  double relaxation_rate() const noexcept {
    const auto processed = instances_seen - instances_filtered - instances_failed;
    return processed == 0 ? 0.0 : double(instances_relaxed) / double(processed);
  }
};

/// Emits `samples_per_instance` interaction sets per instance, in instance
/// order. Train mode drops unseen-class instances. Each (instance, sample)
/// pair draws from its own derived seed, so results do not depend on
/// processing order. Per-instance failures are logged and skipped.
SynthesisStats synthesize_dataset_interactions(std::span<const InstanceMask> instances, const ClassSplit& split,
                                               SynthesisMode mode, const ClickConfig& cfg,
                                               const std::function<void(const InteractionRecord&)>& sink);

std::vector<InteractionRecord> synthesize_dataset_interactions(std::span<const InstanceMask> instances,
                                                               const ClassSplit& split, SynthesisMode mode,
                                                               const ClickConfig& cfg,
                                                               SynthesisStats* stats = nullptr);

/// Clicks for one instance with an explicit seed; shared by dataset
/// synthesis and evaluation.
InteractionRecord synthesize_instance(const InstanceMask& instance, std::span<const Mask> same_class_others,
                                      const ClickConfig& cfg, std::uint64_t seed, int sample_index = 0);

std::string interaction_record_to_json(const InteractionRecord& record);
InteractionRecord interaction_record_from_json(std::string_view line);
void write_interactions_jsonl(const std::filesystem::path& path, std::span<const InteractionRecord> records);
std::vector<InteractionRecord> read_interactions_jsonl(const std::filesystem::path& path);

}  // namespace clickseg
