#include "clickseg/class_split.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "clickseg/error.hpp"

namespace clickseg {

std::string normalize_class_name(std::string_view name) {
  std::string out;
  out.reserve(name.size());
  bool pending_space = false;
  for (char ch : name) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

std::string_view to_string(DatasetName d) {
  switch (d) {
    case DatasetName::voc: return "voc";
    case DatasetName::coco: return "coco";
    case DatasetName::refcoco: return "refcoco";
    case DatasetName::openimages: return "openimages";
    case DatasetName::custom: return "custom";
  }
  return "custom";
}

DatasetName parse_dataset_name(std::string_view s) {
  const auto n = normalize_class_name(s);
  if (n == "voc") return DatasetName::voc;
  if (n == "coco") return DatasetName::coco;
  if (n == "refcoco") return DatasetName::refcoco;
  if (n == "openimages") return DatasetName::openimages;
  if (n == "custom") return DatasetName::custom;
  throw Error(ErrorCode::parse_error, "unknown dataset name '" + std::string(s) + "'");
}

std::string_view to_string(Membership m) { return m == Membership::seen ? "seen" : "unseen"; }

ClassSplit::ClassSplit(DatasetName dataset, const std::vector<std::string>& seen,
                       const std::vector<std::string>& unseen)
    : dataset_(dataset) {
  for (const auto& s : seen) seen_.insert(normalize_class_name(s));
  for (const auto& s : unseen) unseen_.insert(normalize_class_name(s));
  seen_.erase("");
  unseen_.erase("");
  for (const auto& s : seen_) {
    if (unseen_.contains(s)) {
      throw Error(ErrorCode::invalid_argument, "class '" + s + "' is listed as both seen and unseen");
    }
  }
}

bool ClassSplit::contains(std::string_view class_name) const {
  const auto n = normalize_class_name(class_name);
  return seen_.contains(n) || unseen_.contains(n);
}

namespace {

std::size_t edit_distance(std::string_view a, std::string_view b) {
  std::vector<std::size_t> row(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[b.size()];
}

}  // namespace

std::vector<std::string> ClassSplit::nearest_names(std::string_view class_name, std::size_t k) const {
  const auto query = normalize_class_name(class_name);
  std::vector<std::pair<std::size_t, std::string>> scored;
  for (const auto* side : {&seen_, &unseen_})
    for (const auto& name : *side) scored.emplace_back(edit_distance(query, name), name);
  std::sort(scored.begin(), scored.end());
  std::vector<std::string> out;
  for (std::size_t i = 0; i < std::min(k, scored.size()); ++i) out.push_back(scored[i].second);
  return out;
}

Membership ClassSplit::classify(std::string_view class_name) const {
  const auto n = normalize_class_name(class_name);
  if (seen_.contains(n)) return Membership::seen;
  if (unseen_.contains(n)) return Membership::unseen;
  std::string msg = "class '" + std::string(class_name) + "' is not in the split";
  const auto near = nearest_names(class_name);
  if (!near.empty()) {
    msg += "; nearest known names:";
    for (const auto& s : near) msg += " '" + s + "'";
  }
  throw Error(ErrorCode::not_found, msg);
}

void ClassSplit::validate_covers(const std::vector<std::string>& dataset_classes) const {
  std::vector<std::string> missing;
  for (const auto& c : dataset_classes)
    if (!contains(c)) missing.push_back(c);
  if (!missing.empty()) {
    std::string msg = "split does not cover dataset classes:";
    for (const auto& m : missing) msg += " '" + m + "'";
    throw Error(ErrorCode::invalid_argument, msg);
  }
}

ClassSplit build_openimages_split(const std::vector<std::string>& coco_classes,
                                  const std::vector<std::string>& openimages_classes) {
  if (coco_classes.empty() || openimages_classes.empty()) {
    throw Error(ErrorCode::invalid_argument, "openimages split needs non-empty COCO and OpenImages class lists");
  }
  std::set<std::string> coco;
  for (const auto& c : coco_classes) coco.insert(normalize_class_name(c));
  std::set<std::string> oi;
  for (const auto& c : openimages_classes) oi.insert(normalize_class_name(c));
  std::vector<std::string> seen, unseen;
  for (const auto& c : oi) (coco.contains(c) ? seen : unseen).push_back(c);
  if (seen.empty()) {
    throw Error(ErrorCode::invalid_argument,
                "COCO and OpenImages class lists do not intersect; the split would have no seen classes");
  }
  return ClassSplit(DatasetName::openimages, seen, unseen);
}

SplitDiscrepancyReport openimages_split_report(const ClassSplit& split, const std::vector<std::string>& coco_classes,
                                               const std::vector<std::string>& openimages_classes,
                                               std::size_t expected_seen) {
  SplitDiscrepancyReport r;
  r.expected_seen = expected_seen;
  r.actual_seen = split.seen().size();
  r.seen.assign(split.seen().begin(), split.seen().end());
  std::set<std::string> coco;
  for (const auto& c : coco_classes) coco.insert(normalize_class_name(c));
  std::set<std::string> oi;
  for (const auto& c : openimages_classes) oi.insert(normalize_class_name(c));
  r.coco_classes = coco.size();
  r.openimages_classes = oi.size();
  for (const auto& c : coco)
    if (!oi.contains(c)) r.coco_unmatched.push_back(c);
  return r;
}

std::string SplitDiscrepancyReport::to_json() const {
  nlohmann::ordered_json j;
  j["expected_seen"] = expected_seen;
  j["actual_seen"] = actual_seen;
  j["matches"] = matches();
  j["coco_classes"] = coco_classes;
  j["openimages_classes"] = openimages_classes;
  j["normalization"] = "lowercase, collapsed whitespace, exact match";
  j["seen"] = seen;
  j["coco_unmatched"] = coco_unmatched;
  return j.dump(2);
}

Membership classify_instance(const ClassSplit& split, std::string_view class_name) {
  return split.classify(class_name);
}

std::string split_to_json(const ClassSplit& split) {
  nlohmann::ordered_json j;
  j["dataset_name"] = std::string(to_string(split.dataset()));
  j["seen"] = std::vector<std::string>(split.seen().begin(), split.seen().end());
  j["unseen"] = std::vector<std::string>(split.unseen().begin(), split.unseen().end());
  return j.dump(2) + "\n";
}

ClassSplit split_from_json(std::string_view json_text) {
  try {
    const auto j = nlohmann::json::parse(json_text);
    return ClassSplit(parse_dataset_name(j.at("dataset_name").get<std::string>()),
                      j.at("seen").get<std::vector<std::string>>(), j.at("unseen").get<std::vector<std::string>>());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("split json: ") + e.what());
  }
}

namespace {

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io_error, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

ClassSplit load_split(const std::filesystem::path& path) { return split_from_json(slurp(path)); }

void save_split(const ClassSplit& split, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::io_error, "cannot write " + path.string());
  out << split_to_json(split);
}

std::vector<std::string> read_class_list(const std::filesystem::path& path) {
  std::istringstream in(slurp(path));
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    const auto n = normalize_class_name(line);
    if (n.empty() || n.front() == '#') continue;
    out.push_back(line);
  }
  return out;
}

}  // namespace clickseg
