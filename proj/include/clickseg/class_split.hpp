#pragma once

#include <filesystem>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace clickseg {

/// Case-folds (ASCII), trims, and collapses internal whitespace runs to a
/// single space. No stemming.
std::string normalize_class_name(std::string_view name);

enum class DatasetName { voc, coco, refcoco, openimages, custom };

std::string_view to_string(DatasetName d);
DatasetName parse_dataset_name(std::string_view s);

enum class Membership { seen, unseen };

std::string_view to_string(Membership m);

/// Disjoint partition of a dataset's class names. Names are stored
/// normalized, so construction is independent of input order and spelling.
class ClassSplit {
 public:
  ClassSplit() = default;
  ClassSplit(DatasetName dataset, const std::vector<std::string>& seen, const std::vector<std::string>& unseen);

  DatasetName dataset() const noexcept { return dataset_; }
  const std::set<std::string>& seen() const noexcept { return seen_; }
  const std::set<std::string>& unseen() const noexcept { return unseen_; }

  bool contains(std::string_view class_name) const;
  bool is_seen(std::string_view class_name) const { return classify(class_name) == Membership::seen; }

  /// Throws not_found with the closest known names when the class is absent.
  Membership classify(std::string_view class_name) const;

  /// Checks that every annotated class falls in exactly one side.
  void validate_covers(const std::vector<std::string>& dataset_classes) const;

  std::vector<std::string> nearest_names(std::string_view class_name, std::size_t k = 3) const;

  friend bool operator==(const ClassSplit&, const ClassSplit&) = default;

 private:
  DatasetName dataset_ = DatasetName::custom;
  std::set<std::string> seen_;
  std::set<std::string> unseen_;
};

/// Seen = normalized intersection of the two vocabularies; unseen = the
/// rest of the OpenImages vocabulary.
ClassSplit build_openimages_split(const std::vector<std::string>& coco_classes,
                                  const std::vector<std::string>& openimages_classes);

/// Expected vs. obtained seen-class count for an OpenImages split, with the
/// COCO names that found no exact OpenImages counterpart.
struct SplitDiscrepancyReport {
  std::size_t expected_seen = 0;
  std::size_t actual_seen = 0;
  std::size_t coco_classes = 0;
  std::size_t openimages_classes = 0;
  std::vector<std::string> seen;
  std::vector<std::string> coco_unmatched;

  bool matches() const noexcept { return expected_seen == actual_seen; }
  std::string to_json() const;
};

SplitDiscrepancyReport openimages_split_report(const ClassSplit& split, const std::vector<std::string>& coco_classes,
                                               const std::vector<std::string>& openimages_classes,
                                               std::size_t expected_seen = 64);

Membership classify_instance(const ClassSplit& split, std::string_view class_name);

std::string split_to_json(const ClassSplit& split);
ClassSplit split_from_json(std::string_view json_text);
ClassSplit load_split(const std::filesystem::path& path);
void save_split(const ClassSplit& split, const std::filesystem::path& path);

/// Reads one class name per line, skipping blank lines and '#' comments.
std::vector<std::string> read_class_list(const std::filesystem::path& path);

}  // namespace clickseg
