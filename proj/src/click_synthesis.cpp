#include "clickseg/click_synthesis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "clickseg/geometry.hpp"

namespace clickseg {

std::string_view to_string(NegativeStrategy s) {
  return s == NegativeStrategy::other_instance ? "other_instance" : "outer_boundary";
}

NegativeStrategy parse_negative_strategy(std::string_view s) {
  if (s == "other_instance") return NegativeStrategy::other_instance;
  if (s == "outer_boundary") return NegativeStrategy::outer_boundary;
  throw Error(ErrorCode::parse_error, "unknown negative strategy '" + std::string(s) + "'");
}

void ClickConfig::validate() const {
  if (n_pos < 0 || n_neg < 0) throw Error(ErrorCode::invalid_argument, "click counts must be non-negative");
  if (n_pos + n_neg < 1 && !text_only) {
    throw Error(ErrorCode::invalid_argument, "click config requests no clicks and is not text-only");
  }
  if (n_neg > 0 && neg_strategies.empty()) {
    throw Error(ErrorCode::invalid_argument, "negative clicks requested without any negative strategy");
  }
  if (samples_per_instance < 1) throw Error(ErrorCode::invalid_argument, "samples_per_instance must be >= 1");
  if (d_border < 0 || d_between < 0 || ring_radius < 1) {
    throw Error(ErrorCode::invalid_argument, "click distances must be non-negative and ring_radius >= 1");
  }
}

ClickConfig ClickConfig::refcoco_supervised() {
  ClickConfig cfg;
  cfg.samples_per_instance = 5;
  return cfg;
}

std::string click_config_to_json(const ClickConfig& cfg) {
  nlohmann::ordered_json j;
  j["n_pos"] = cfg.n_pos;
  j["n_neg"] = cfg.n_neg;
  j["d_border"] = cfg.d_border;
  j["d_between"] = cfg.d_between;
  j["samples_per_instance"] = cfg.samples_per_instance;
  auto& strategies = j["neg_strategies"] = nlohmann::ordered_json::array();
  for (auto s : cfg.neg_strategies) strategies.push_back(std::string(to_string(s)));
  j["ring_radius"] = cfg.ring_radius;
  j["rng_seed"] = cfg.rng_seed;
  j["text_only"] = cfg.text_only;
  return j.dump();
}

ClickConfig click_config_from_json(std::string_view json_text) {
  ClickConfig cfg;
  try {
    const auto j = nlohmann::json::parse(json_text);
    cfg.n_pos = j.value("n_pos", cfg.n_pos);
    cfg.n_neg = j.value("n_neg", cfg.n_neg);
    cfg.d_border = j.value("d_border", cfg.d_border);
    cfg.d_between = j.value("d_between", cfg.d_between);
    cfg.samples_per_instance = j.value("samples_per_instance", cfg.samples_per_instance);
    if (j.contains("neg_strategies")) {
      cfg.neg_strategies.clear();
      for (const auto& s : j.at("neg_strategies")) cfg.neg_strategies.push_back(parse_negative_strategy(s.get<std::string>()));
    }
    cfg.ring_radius = j.value("ring_radius", cfg.ring_radius);
    cfg.rng_seed = j.value("rng_seed", cfg.rng_seed);
    cfg.text_only = j.value("text_only", cfg.text_only);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("click config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

namespace {

double dist2(Point a, Point b) {
  const double dx = a.x - b.x, dy = a.y - b.y;
  return dx * dx + dy * dy;
}

std::int64_t cross(Point o, Point a, Point b) {
  return std::int64_t(a.x - o.x) * (b.y - o.y) - std::int64_t(a.y - o.y) * (b.x - o.x);
}

// Andrew's monotone chain. The farthest point of a set from any query lies
// on its hull, which keeps the pair-feasibility check near linear.
std::vector<Point> convex_hull(std::vector<Point> pts) {
  std::sort(pts.begin(), pts.end(), [](Point a, Point b) { return a.x != b.x ? a.x < b.x : a.y < b.y; });
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3) return pts;
  std::vector<Point> hull(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
    while (k >= t && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

// Candidates that have at least one partner in the same set at distance >= d.
std::vector<Point> with_far_partner(const std::vector<Point>& pts, double d) {
  const auto hull = convex_hull(pts);
  const double d2 = d * d;
  std::vector<Point> out;
  for (const auto& p : pts) {
    for (const auto& h : hull) {
      if (dist2(p, h) >= d2) {
        out.push_back(p);
        break;
      }
    }
  }
  return out;
}

std::vector<Point> pick_distinct(const std::vector<Point>& pool, int n, Rng& rng) {
  std::vector<Point> out;
  if (pool.empty()) return out;
  if (static_cast<std::size_t>(n) <= pool.size()) {
    // Partial Fisher-Yates over a copy.
    auto copy = pool;
    for (int i = 0; i < n; ++i) {
      const auto j = i + rng.uniform_index(copy.size() - i);
      std::swap(copy[i], copy[j]);
      out.push_back(copy[i]);
    }
  } else {
    for (int i = 0; i < n; ++i) out.push_back(pool[rng.uniform_index(pool.size())]);
  }
  return out;
}

constexpr int kRestarts = 32;

std::optional<std::vector<Point>> try_place(const std::vector<Point>& candidates, int n, double d_between, Rng& rng) {
  if (n == 0) return std::vector<Point>{};
  if (candidates.empty()) return std::nullopt;
  if (n == 1) return std::vector<Point>{candidates[rng.uniform_index(candidates.size())]};
  if (d_between <= 0.0) return pick_distinct(candidates, n, rng);
  const double d2 = d_between * d_between;
  // Exact when n == 2 (the last pair is always filtered for a valid
  // partner); randomized restarts otherwise.
  const int attempts = n == 2 ? 1 : kRestarts;
  for (int attempt = 0; attempt < attempts; ++attempt) {
    std::vector<Point> chosen;
    std::vector<Point> avail = candidates;
    bool ok = true;
    for (int i = 0; i < n; ++i) {
      if (n - i == 2) avail = with_far_partner(avail, d_between);
      if (avail.empty()) {
        ok = false;
        break;
      }
      const Point p = avail[rng.uniform_index(avail.size())];
      chosen.push_back(p);
      std::erase_if(avail, [&](Point q) { return dist2(p, q) < d2; });
    }
    if (ok) return chosen;
  }
  return std::nullopt;
}

std::vector<Point> candidates_at_depth(const Mask& mask, const FloatGrid& depth, double d_border) {
  std::vector<Point> out;
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x)
      if (mask(y, x) && depth(y, x) >= d_border) out.push_back({x, y});
  return out;
}

std::vector<Point> pole_pixels(const Mask& mask, const FloatGrid& depth, int n, Rng& rng) {
  std::vector<Point> pixels;
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x)
      if (mask(y, x)) pixels.push_back({x, y});
  for (std::size_t i = pixels.size(); i > 1; --i) std::swap(pixels[i - 1], pixels[rng.uniform_index(i)]);
  std::stable_sort(pixels.begin(), pixels.end(),
                   [&](Point a, Point b) { return depth(a.y, a.x) > depth(b.y, b.x); });
  std::vector<Point> out;
  for (int i = 0; i < n; ++i) out.push_back(pixels[static_cast<std::size_t>(i) % pixels.size()]);
  return out;
}

std::vector<Click> as_clicks(const std::vector<Point>& pts, Polarity polarity) {
  std::vector<Click> out;
  for (const auto& p : pts) out.push_back({p.x, p.y, polarity});
  return out;
}

}  // namespace

PositiveSample sample_positive_clicks(const Mask& mask, const ClickConfig& cfg, Rng& rng) {
  if (count_foreground(mask) == 0) throw Error(ErrorCode::invalid_argument, "positive clicks need a non-empty mask");
  PositiveSample result;
  if (cfg.n_pos == 0) return result;
  const auto depth = interior_distance(mask);

  // The relaxation ladder, in order.
  std::vector<std::pair<double, double>> steps{{cfg.d_border, cfg.d_between}};
  if (cfg.n_pos >= 2) {
    double between = cfg.d_between;
    while (between >= 2.0) {
      between /= 2.0;
      steps.emplace_back(cfg.d_border, between >= 2.0 ? between : 0.0);
    }
    if (steps.back().second != 0.0) steps.emplace_back(cfg.d_border, 0.0);
  } else {
    steps.back().second = 0.0;
  }
  double border = cfg.d_border;
  while (true) {
    border /= 2.0;
    if (border < 2.0) break;
    steps.emplace_back(border, 0.0);
  }

  std::vector<Point> candidates;
  double last_border = -1.0;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const auto [b, d] = steps[i];
    if (b != last_border) {
      candidates = candidates_at_depth(mask, depth, b);
      last_border = b;
    }
    if (auto placed = try_place(candidates, cfg.n_pos, d, rng)) {
      result.clicks = as_clicks(*placed, Polarity::positive);
      result.relaxations = static_cast<int>(i);
      result.d_border_used = b;
      result.d_between_used = d;
      return result;
    }
  }
  result.clicks = as_clicks(pole_pixels(mask, depth, cfg.n_pos, rng), Polarity::positive);
  result.relaxations = static_cast<int>(steps.size());
  result.pole_fallback = true;
  return result;
}

NegativeSample sample_negative_clicks(const Mask& target, std::span<const Mask> same_class_instances,
                                      const ClickConfig& cfg, Rng& rng) {
  if (count_foreground(target) == 0) throw Error(ErrorCode::invalid_argument, "negative clicks need a non-empty target");
  NegativeSample result;
  if (cfg.n_neg == 0) return result;
  if (count_foreground(target) == static_cast<std::int64_t>(target.size())) {
    throw Error(ErrorCode::invalid_argument, "target covers the entire image; no negative click candidates exist");
  }
  for (const auto strategy : cfg.neg_strategies) {
    std::vector<Point> pool;
    if (strategy == NegativeStrategy::other_instance) {
      Mask others(target.height(), target.width(), 0);
      for (const auto& m : same_class_instances) {
        require_same_shape(m, target, "sample_negative_clicks");
        for (std::size_t i = 0; i < m.size(); ++i) others[i] |= m[i] != 0;
      }
      for (int y = 0; y < target.height(); ++y)
        for (int x = 0; x < target.width(); ++x)
          if (others(y, x) && !target(y, x)) pool.push_back({x, y});
    } else {
      const auto sq = squared_distance_to_seeds(target);
      const double r2 = cfg.ring_radius * cfg.ring_radius;
      for (int y = 0; y < target.height(); ++y)
        for (int x = 0; x < target.width(); ++x)
          if (!target(y, x) && sq(y, x) <= r2) pool.push_back({x, y});
    }
    if (!pool.empty()) {
      result.clicks = as_clicks(pick_distinct(pool, cfg.n_neg, rng), Polarity::negative);
      result.strategy = strategy;
      return result;
    }
  }
  std::vector<Point> background;
  for (int y = 0; y < target.height(); ++y)
    for (int x = 0; x < target.width(); ++x)
      if (!target(y, x)) background.push_back({x, y});
  result.clicks = as_clicks(pick_distinct(background, cfg.n_neg, rng), Polarity::negative);
  return result;
}

InteractionRecord synthesize_instance(const InstanceMask& instance, std::span<const Mask> same_class_others,
                                      const ClickConfig& cfg, std::uint64_t seed, int sample_index) {
  const Mask mask = instance.decode();
  Rng rng(seed);
  InteractionRecord record;
  record.image_id = instance.image_id();
  record.class_name = instance.class_name();
  record.sample_index = sample_index;
  record.interactions.instance_id = instance.instance_id();
  record.interactions.text = instance.class_name();
  const auto pos = sample_positive_clicks(mask, cfg, rng);
  const auto neg = sample_negative_clicks(mask, same_class_others, cfg, rng);
  record.interactions.clicks = pos.clicks;
  record.interactions.clicks.insert(record.interactions.clicks.end(), neg.clicks.begin(), neg.clicks.end());
  record.relaxations = pos.relaxations;
  record.pole_fallback = pos.pole_fallback;
  return record;
}

SynthesisStats synthesize_dataset_interactions(std::span<const InstanceMask> instances, const ClassSplit& split,
                                               SynthesisMode mode, const ClickConfig& cfg,
                                               const std::function<void(const InteractionRecord&)>& sink) {
  cfg.validate();
  SynthesisStats stats;
  // Same-class neighbours per (image, class).
  std::map<std::pair<std::string, std::string>, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    groups[{instances[i].image_id(), normalize_class_name(instances[i].class_name())}].push_back(i);
  }
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const auto& inst = instances[i];
    ++stats.instances_seen;
    try {
      if (mode == SynthesisMode::train && !split.is_seen(inst.class_name())) {
        ++stats.instances_filtered;
        continue;
      }
      std::vector<Mask> others;
      if (cfg.n_neg > 0) {
        for (auto j : groups[{inst.image_id(), normalize_class_name(inst.class_name())}])
          if (j != i) others.push_back(instances[j].decode());
      }
      bool relaxed = false;
      std::vector<InteractionRecord> batch;
      for (int s = 0; s < cfg.samples_per_instance; ++s) {
        batch.push_back(synthesize_instance(inst, others, cfg, derive_seed(cfg.rng_seed, i, s), s));
        relaxed = relaxed || batch.back().relaxations > 0;
      }
      for (const auto& r : batch) sink(r);
      stats.records += batch.size();
      stats.instances_relaxed += relaxed;
    } catch (const Error& e) {
      ++stats.instances_failed;
      spdlog::warn("click synthesis skipped instance {}: {}", inst.instance_id(), e.what());
    }
  }
  return stats;
}

std::vector<InteractionRecord> synthesize_dataset_interactions(std::span<const InstanceMask> instances,
                                                               const ClassSplit& split, SynthesisMode mode,
                                                               const ClickConfig& cfg, SynthesisStats* stats) {
  std::vector<InteractionRecord> out;
  const auto s = synthesize_dataset_interactions(instances, split, mode, cfg,
                                                 [&](const InteractionRecord& r) { out.push_back(r); });
  if (stats) *stats = s;
  return out;
}

std::string interaction_record_to_json(const InteractionRecord& record) {
  nlohmann::ordered_json j;
  j["image_id"] = record.image_id;
  j["instance_id"] = record.interactions.instance_id;
  j["class_name"] = record.class_name;
  j["sample_index"] = record.sample_index;
  auto& clicks = j["clicks"] = nlohmann::ordered_json::array();
  for (const auto& c : record.interactions.clicks) {
    clicks.push_back({{"x", c.x}, {"y", c.y}, {"polarity", std::string(to_string(c.polarity))}});
  }
  if (record.interactions.text) j["text"] = *record.interactions.text;
  j["relaxations"] = record.relaxations;
  j["pole_fallback"] = record.pole_fallback;
  return j.dump();
}

InteractionRecord interaction_record_from_json(std::string_view line) {
  InteractionRecord r;
  try {
    const auto j = nlohmann::json::parse(line);
    r.image_id = j.at("image_id").get<std::string>();
    r.interactions.instance_id = j.at("instance_id").get<std::string>();
    r.class_name = j.value("class_name", std::string{});
    r.sample_index = j.value("sample_index", 0);
    for (const auto& c : j.at("clicks")) {
      r.interactions.clicks.push_back(
          {c.at("x").get<int>(), c.at("y").get<int>(), parse_polarity(c.at("polarity").get<std::string>())});
    }
    if (j.contains("text") && !j.at("text").is_null()) r.interactions.text = j.at("text").get<std::string>();
    r.relaxations = j.value("relaxations", 0);
    r.pole_fallback = j.value("pole_fallback", false);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("interaction record: ") + e.what());
  }
  return r;
}

void write_interactions_jsonl(const std::filesystem::path& path, std::span<const InteractionRecord> records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io_error, "cannot write " + path.string());
  for (const auto& r : records) out << interaction_record_to_json(r) << '\n';
}

std::vector<InteractionRecord> read_interactions_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io_error, "cannot open " + path.string());
  std::vector<InteractionRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(interaction_record_from_json(line));
  }
  return out;
}

}  // namespace clickseg
