#include "clickseg/eval.hpp"

#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <thread>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <spdlog/spdlog.h>

#include "clickseg/error.hpp"
#include "clickseg/rng.hpp"

namespace clickseg {

namespace {

struct Mean {
  double sum = 0;
  std::size_t n = 0;
  void add(double v) {
    sum += v;
    ++n;
  }
  double value() const { return n ? sum / static_cast<double>(n) : 0.0; }
};

std::string_view to_string(Averaging a) { return a == Averaging::instance ? "instance" : "class_macro"; }

Averaging parse_averaging(std::string_view s) {
  if (s == "instance") return Averaging::instance;
  if (s == "class_macro") return Averaging::class_macro;
  throw Error(ErrorCode::parse_error, "unknown averaging '" + std::string(s) + "'");
}

}  // namespace

Aggregates aggregate(std::span<const EvalRow> rows, Averaging averaging) {
  Aggregates a;
  for (const auto& r : rows) {
    ++a.n_overall;
    ++(r.seen ? a.n_seen : a.n_unseen);
    a.n_errors += r.error.has_value();
  }
  if (averaging == Averaging::instance) {
    Mean all, seen, unseen, ball, bseen, bunseen;
    for (const auto& r : rows) {
      all.add(r.iou);
      ball.add(r.boundary_iou);
      (r.seen ? seen : unseen).add(r.iou);
      (r.seen ? bseen : bunseen).add(r.boundary_iou);
    }
    a.overall_miou = all.value();
    a.seen_miou = seen.value();
    a.unseen_miou = unseen.value();
    a.overall_boundary_iou = ball.value();
    a.seen_boundary_iou = bseen.value();
    a.unseen_boundary_iou = bunseen.value();
    return a;
  }
  std::map<std::string, std::pair<Mean, Mean>> per_class;
  std::map<std::string, bool> class_seen;
  for (const auto& r : rows) {
    auto& [iou, biou] = per_class[normalize_class_name(r.class_name)];
    iou.add(r.iou);
    biou.add(r.boundary_iou);
    class_seen[normalize_class_name(r.class_name)] = r.seen;
  }
  Mean all, seen, unseen, ball, bseen, bunseen;
  for (const auto& [cls, m] : per_class) {
    all.add(m.first.value());
    ball.add(m.second.value());
    (class_seen[cls] ? seen : unseen).add(m.first.value());
    (class_seen[cls] ? bseen : bunseen).add(m.second.value());
  }
  a.overall_miou = all.value();
  a.seen_miou = seen.value();
  a.unseen_miou = unseen.value();
  a.overall_boundary_iou = ball.value();
  a.seen_boundary_iou = bseen.value();
  a.unseen_boundary_iou = bunseen.value();
  return a;
}

std::map<int, DistractorBucket> distractor_analysis(std::span<const EvalRow> rows) {
  std::map<int, Mean> groups;
  for (const auto& r : rows)
    if (!r.seen) groups[r.n_same_class_in_image].add(r.iou);
  std::map<int, DistractorBucket> out;
  for (const auto& [n, m] : groups) out[n] = {m.value(), m.n};
  return out;
}

void verify_report(const EvalReport& report) {
  const auto a = aggregate(report.rows, report.averaging);
  const auto& b = report.aggregates;
  auto same = [](double x, double y) { return x == y || std::abs(x - y) <= 1e-12 * std::max(1.0, std::abs(x)); };
  if (!same(a.overall_miou, b.overall_miou) || !same(a.seen_miou, b.seen_miou) || !same(a.unseen_miou, b.unseen_miou) ||
      !same(a.overall_boundary_iou, b.overall_boundary_iou) || !same(a.seen_boundary_iou, b.seen_boundary_iou) ||
      !same(a.unseen_boundary_iou, b.unseen_boundary_iou) || a.n_overall != b.n_overall || a.n_seen != b.n_seen ||
      a.n_unseen != b.n_unseen || a.n_seen + a.n_unseen != a.n_overall)
    throw Error(ErrorCode::numerical, "report aggregates are not re-derivable from its rows");
  const auto buckets = distractor_analysis(report.rows);
  if (buckets.size() != report.distractor_buckets.size())
    throw Error(ErrorCode::numerical, "distractor buckets are not re-derivable from the rows");
  for (const auto& [n, bucket] : buckets) {
    auto it = report.distractor_buckets.find(n);
    if (it == report.distractor_buckets.end() || it->second.count != bucket.count || !same(it->second.mean_iou, bucket.mean_iou))
      throw Error(ErrorCode::numerical, "distractor bucket " + std::to_string(n) + " is not re-derivable from the rows");
  }
}

EvalReport evaluate(InstancePredictor& predictor, const DatasetManifest& manifest, const ClassSplit& split,
                    const EvalOptions& options) {
  options.spec.validate();
  Loader loader(manifest, split, LoaderMode::eval, {.batch_size = 1, .seed = options.seed, .shuffle = false});
  const auto& items = loader.items();
  std::vector<EvalRow> rows(items.size());
  std::atomic<std::size_t> next{0};
  std::mutex image_mutex;
  std::map<std::string, std::shared_ptr<const RgbImage>> images;

  auto image_for = [&](const std::string& id) {
    {
      std::lock_guard lock(image_mutex);
      if (auto it = images.find(id); it != images.end()) return it->second;
    }
    auto img = std::make_shared<const RgbImage>(load_image(manifest.image(id).path));
    std::lock_guard lock(image_mutex);
    return images.emplace(id, img).first->second;
  };

  auto run = [&] {
    for (std::size_t k; (k = next.fetch_add(1)) < items.size();) {
      const auto idx = items[k].instance_index;
      const auto& inst = manifest.instances[idx];
      auto& row = rows[k];
      row.instance_id = inst.instance_id();
      row.image_id = inst.image_id();
      row.class_name = inst.class_name();
      row.seen = split.is_seen(inst.class_name());
      row.n_same_class_in_image = manifest.same_class_count(idx);
      try {
        auto interactions = synthesize_for_spec(manifest, idx, options.clicks, options.spec, derive_seed(options.seed, idx));
        const auto& record = manifest.image(inst.image_id());
        auto img = image_for(inst.image_id());
        Mask pred = predictor.predict_mask(record.sample, *img, interactions);
        Mask gt = inst.decode();
        require_same_shape(pred, gt, "prediction");
        row.iou = iou(pred, gt);
        double d = options.boundary_width.value_or(default_boundary_width(gt.height(), gt.width()));
        row.boundary_iou = boundary_iou(pred, gt, d);
      } catch (const std::exception& e) {
        row.iou = 0.0;
        row.boundary_iou = 0.0;
        row.error = e.what();
        spdlog::warn("eval: instance {} failed: {}", row.instance_id, e.what());
      }
    }
  };
  const int workers = std::max(1, options.workers);
  if (workers == 1) {
    run();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(run);
    for (auto& t : pool) t.join();
  }

  EvalReport report;
  report.rows = std::move(rows);
  report.averaging = options.averaging;
  report.aggregates = aggregate(report.rows, report.averaging);
  report.distractor_buckets = distractor_analysis(report.rows);
  report.config = {{"interactions", options.spec.label()},
                   {"seed", options.seed},
                   {"clicks", nlohmann::json::parse(click_config_to_json(options.clicks))},
                   {"boundary_width", options.boundary_width ? nlohmann::json(*options.boundary_width)
                                                             : nlohmann::json("2% of image diagonal")},
                   {"miou_averaging", to_string(options.averaging)},
                   {"dataset", to_string(manifest.dataset_name)},
                   {"extra", options.extra}};
  return report;
}

std::vector<EvalReport> interaction_sweep(InstancePredictor& predictor, const DatasetManifest& manifest,
                                          const ClassSplit& split, std::span<const InteractionSpec> specs,
                                          const EvalOptions& base) {
  std::vector<EvalReport> out;
  for (const auto& spec : specs) {
    EvalOptions o = base;
    o.spec = spec;
    out.push_back(evaluate(predictor, manifest, split, o));
  }
  return out;
}

nlohmann::ordered_json report_to_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["miou_averaging"] = to_string(report.averaging);
  j["config"] = report.config;
  const auto& a = report.aggregates;
  j["aggregates"] = {{"overall_miou", a.overall_miou},
                     {"seen_miou", a.seen_miou},
                     {"unseen_miou", a.unseen_miou},
                     {"overall_boundary_iou", a.overall_boundary_iou},
                     {"seen_boundary_iou", a.seen_boundary_iou},
                     {"unseen_boundary_iou", a.unseen_boundary_iou},
                     {"n_overall", a.n_overall},
                     {"n_seen", a.n_seen},
                     {"n_unseen", a.n_unseen},
                     {"n_errors", a.n_errors}};
  auto& buckets = j["distractor_buckets"] = nlohmann::ordered_json::object();
  for (const auto& [n, b] : report.distractor_buckets)
    buckets[std::to_string(n)] = {{"mean_iou", b.mean_iou}, {"count", b.count}};
  auto& rows = j["per_instance"] = nlohmann::ordered_json::array();
  for (const auto& r : report.rows) {
    nlohmann::ordered_json row = {{"instance_id", r.instance_id},
                                  {"image_id", r.image_id},
                                  {"class_name", r.class_name},
                                  {"seen_flag", r.seen},
                                  {"iou", r.iou},
                                  {"boundary_iou", r.boundary_iou},
                                  {"n_same_class_in_image", r.n_same_class_in_image}};
    if (r.error) row["error"] = *r.error;
    rows.push_back(std::move(row));
  }
  return j;
}

EvalReport report_from_json(const nlohmann::json& j) {
  EvalReport r;
  r.averaging = parse_averaging(j.at("miou_averaging").get<std::string>());
  r.config = j.value("config", nlohmann::json::object());
  const auto& a = j.at("aggregates");
  r.aggregates = {a.at("overall_miou"), a.at("seen_miou"), a.at("unseen_miou"), a.at("overall_boundary_iou"),
                  a.at("seen_boundary_iou"), a.at("unseen_boundary_iou"), a.at("n_overall"), a.at("n_seen"),
                  a.at("n_unseen"), a.value("n_errors", std::size_t{0})};
  for (const auto& [k, b] : j.at("distractor_buckets").items())
    r.distractor_buckets[std::stoi(k)] = {b.at("mean_iou").get<double>(), b.at("count").get<std::size_t>()};
  for (const auto& row : j.at("per_instance")) {
    EvalRow e;
    e.instance_id = row.at("instance_id");
    e.image_id = row.value("image_id", "");
    e.class_name = row.at("class_name");
    e.seen = row.at("seen_flag");
    e.iou = row.at("iou");
    e.boundary_iou = row.at("boundary_iou");
    e.n_same_class_in_image = row.at("n_same_class_in_image");
    if (row.contains("error")) e.error = row.at("error").get<std::string>();
    r.rows.push_back(std::move(e));
  }
  return r;
}

std::string report_rows_csv(const EvalReport& report) {
  auto quote = [](const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
  };
  std::ostringstream out;
  out << std::setprecision(17);
  out << "instance_id,image_id,class_name,seen_flag,iou,boundary_iou,n_same_class_in_image,error\n";
  for (const auto& r : report.rows)
    out << quote(r.instance_id) << ',' << quote(r.image_id) << ',' << quote(r.class_name) << ',' << (r.seen ? 1 : 0)
        << ',' << r.iou << ',' << r.boundary_iou << ',' << r.n_same_class_in_image << ','
        << quote(r.error.value_or("")) << '\n';
  return out.str();
}

void write_report(const EvalReport& report, const std::filesystem::path& stem) {
  verify_report(report);
  if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
  auto json_path = stem;
  json_path += ".json";
  auto csv_path = stem;
  csv_path += ".csv";
  std::ofstream(json_path) << report_to_json(report).dump(2) << '\n';
  std::ofstream(csv_path) << report_rows_csv(report);
}

void write_distractor_chart(const std::map<int, DistractorBucket>& buckets, const std::filesystem::path& png,
                            const std::string& title) {
  const int width = 640, height = 400, left = 60, right = 20, top = 50, bottom = 60;
  cv::Mat img(height, width, CV_8UC3, cv::Scalar(255, 255, 255));
  const cv::Scalar ink(40, 40, 40), bar(180, 119, 31);
  cv::putText(img, title, {left, 30}, cv::FONT_HERSHEY_SIMPLEX, 0.55, ink, 1, cv::LINE_AA);
  const int plot_h = height - top - bottom, plot_w = width - left - right;
  cv::line(img, {left, top}, {left, top + plot_h}, ink, 1);
  cv::line(img, {left, top + plot_h}, {left + plot_w, top + plot_h}, ink, 1);
  for (int t = 0; t <= 4; ++t) {
    int y = top + plot_h - plot_h * t / 4;
    cv::line(img, {left - 4, y}, {left, y}, ink, 1);
    std::ostringstream label;
    label << std::fixed << std::setprecision(2) << t / 4.0;
    cv::putText(img, label.str(), {8, y + 4}, cv::FONT_HERSHEY_SIMPLEX, 0.4, ink, 1, cv::LINE_AA);
  }
  const int n = std::max<int>(1, static_cast<int>(buckets.size()));
  const int slot = plot_w / n;
  int i = 0;
  for (const auto& [count, b] : buckets) {
    int x0 = left + i * slot + slot / 5, x1 = left + (i + 1) * slot - slot / 5;
    int y0 = top + plot_h - static_cast<int>(std::lround(std::clamp(b.mean_iou, 0.0, 1.0) * plot_h));
    cv::rectangle(img, {x0, y0}, {x1, top + plot_h}, bar, cv::FILLED);
    cv::putText(img, std::to_string(count), {(x0 + x1) / 2 - 5, top + plot_h + 18}, cv::FONT_HERSHEY_SIMPLEX, 0.45, ink,
                1, cv::LINE_AA);
    cv::putText(img, "n=" + std::to_string(b.count), {(x0 + x1) / 2 - 14, top + plot_h + 36}, cv::FONT_HERSHEY_SIMPLEX,
                0.35, ink, 1, cv::LINE_AA);
    ++i;
  }
  cv::putText(img, "same-class instances in image", {left + plot_w / 2 - 110, height - 8}, cv::FONT_HERSHEY_SIMPLEX,
              0.45, ink, 1, cv::LINE_AA);
  if (png.has_parent_path()) std::filesystem::create_directories(png.parent_path());
  if (!cv::imwrite(png.string(), img)) throw Error(ErrorCode::io_error, "cannot write " + png.string());
}

}  // namespace clickseg
