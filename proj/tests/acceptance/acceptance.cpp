// Runs every primary acceptance criterion and prints one PASS/FAIL line each.
// Usage: acceptance [--work DIR] [criterion ...]

#include <chrono>
#include <future>
#include <iostream>
#include <sstream>

#include <httplib.h>

#include "../support/fixtures.hpp"
#include "../support/oracles.hpp"
#include "clickseg/class_split.hpp"
#include "clickseg/click_synthesis.hpp"
#include "clickseg/error.hpp"
#include "clickseg/eval.hpp"
#include "clickseg/experiment.hpp"
#include "clickseg/geometry.hpp"
#include "clickseg/log.hpp"
#include "clickseg/nn/backends.hpp"
#include "clickseg/nn/predict.hpp"
#include "clickseg/nn/toy_study.hpp"
#include "clickseg/nn/train.hpp"
#include "clickseg/rle.hpp"
#include "clickseg/service.hpp"
#include "clickseg/toy.hpp"

using namespace clickseg;
namespace fs = std::filesystem;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point start) { return std::chrono::duration<double>(Clock::now() - start).count(); }

std::string fmt(double v, int digits = 3) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(digits);
  s << v;
  return s.str();
}

Outcome geometry_oracles(const fs::path&) {
  const auto start = Clock::now();
  std::mt19937_64 gen(500);
  std::uniform_int_distribution<int> dim(1, 64), nclicks(1, 6);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double widths[] = {1.0, 2.0, 3.5};
  int masks = 0, edt_checks = 0;
  double worst = 0.0;
  std::vector<std::string> failures;
  for (int t = 0; t < 500; ++t) {
    const int h = dim(gen), w = dim(gen);
    const Mask a = t % 3 == 0 ? oracle::random_mask(gen, h, w, unit(gen)) : oracle::random_blob_mask(gen, h, w);
    const Mask b = t % 2 == 0 ? oracle::random_mask(gen, h, w, unit(gen)) : oracle::random_blob_mask(gen, h, w);
    masks += 2;

    std::vector<Point> clicks;
    for (int i = nclicks(gen); i > 0; --i) clicks.push_back({int(gen() % w), int(gen() % h)});
    const auto dm = euclidean_distance_map(clicks, h, w, 255.0f);
    const auto edt = oracle::edt(clicks, h, w, 255.0f);
    for (std::size_t i = 0; i < edt.size(); ++i) worst = std::max(worst, double(std::abs(dm.values[i] - edt[i])));
    ++edt_checks;
    if (count_foreground(a) > 0) {
      const auto got = interior_distance(a), want = oracle::interior_distance(a);
      for (std::size_t i = 0; i < got.size(); ++i) worst = std::max(worst, double(std::abs(got[i] - want[i])));
      ++edt_checks;
      if (mask_boundary(a) != oracle::boundary(a)) failures.push_back("boundary #" + std::to_string(t));
    }
    if (iou(a, b) != oracle::iou(a, b)) failures.push_back("iou #" + std::to_string(t));
    const double d = widths[t % 3];
    if (boundary_iou(a, b, d) != oracle::boundary_iou(a, b, d)) failures.push_back("boundary_iou #" + std::to_string(t));
  }
  const double secs = seconds_since(start);
  if (worst > 1e-6) failures.push_back("distance error " + std::to_string(worst));
  if (secs >= 120) failures.push_back("runtime " + fmt(secs, 1) + " s");
  return {failures.empty(), std::to_string(masks) + " random masks up to 64x64, " + std::to_string(edt_checks) +
                                " distance maps, max distance error " + (std::ostringstream() << worst).str() + ", " +
                                std::to_string(failures.size()) + " mismatches" +
                                (failures.empty() ? "" : " (first: " + failures.front() + ")") + ", " + fmt(secs, 1) +
                                " s"};
}

Outcome rle_round_trip(const fs::path&) {
  const auto start = Clock::now();
  std::mt19937_64 gen(1000);
  std::uniform_int_distribution<int> dim(0, 96);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  int lossless = 0;
  for (int t = 0; t < 1000; ++t) {
    const int h = dim(gen), w = dim(gen);
    const Mask m = t % 2 ? oracle::random_mask(gen, h, w, unit(gen)) : oracle::random_blob_mask(gen, std::max(h, 1), w);
    const Rle r = rle_encode(m);
    const bool coco_ok = m.empty() || decode_coco_counts(m.height(), m.width(), encode_coco_counts(m)) == m;
    lossless += rle_decode(r) == m && rle_area(r) == count_foreground(m) && coco_ok;
  }
  const double secs = seconds_since(start);
  return {lossless == 1000 && secs < 30,
          std::to_string(lossless) + "/1000 masks lossless (row-major and COCO counts), " + fmt(secs, 2) + " s"};
}

double distance_to_boundary(const std::vector<Point>& boundary, Point p) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& b : boundary) best = std::min(best, std::hypot(double(p.x - b.x), double(p.y - b.y)));
  return best;
}

Outcome click_constraints(const fs::path&) {
  std::mt19937_64 gen(200);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  int clicks = 0, satisfied = 0, relaxed = 0;
  for (int t = 0; t < 200; ++t) {
    // Ellipse-plus-rectangle blobs whose 15 px interior still spans > 150 px.
    const int n = 320;
    Mask m(n, n, 0);
    const double cx = 160 + (unit(gen) - 0.5) * 20, cy = 160 + (unit(gen) - 0.5) * 20;
    const double rx = 110 + unit(gen) * 40, ry = 100 + unit(gen) * 50;
    const int bx = static_cast<int>(unit(gen) * 40), by = static_cast<int>(unit(gen) * 40);
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        const double dx = (x + 0.5 - cx) / rx, dy = (y + 0.5 - cy) / ry;
        m(y, x) = dx * dx + dy * dy <= 1.0 || (x >= bx && x < bx + 90 && y >= by && y < by + 60);
      }
    const auto boundary = oracle::boundary(m);
    for (int npos : {1, 2}) {
      ClickConfig cfg;
      cfg.n_pos = npos;
      cfg.d_border = 15;
      cfg.d_between = 150;
      Rng rng(derive_seed(7, t, npos));
      const auto s = sample_positive_clicks(m, cfg, rng);
      relaxed += s.relaxations > 0 || s.pole_fallback;
      for (std::size_t i = 0; i < s.clicks.size(); ++i) {
        const auto p = s.clicks[i].point();
        bool ok = m.contains(p.y, p.x) && m(p.y, p.x) && distance_to_boundary(boundary, p) >= 15.0;
        for (std::size_t j = 0; j < i; ++j)
          ok = ok && std::hypot(double(p.x - s.clicks[j].x), double(p.y - s.clicks[j].y)) >= 150.0;
        ++clicks;
        satisfied += ok;
      }
      if (static_cast<int>(s.clicks.size()) != npos) ++relaxed;
    }
  }

  // Adversarial masks: single pixels, slivers, scattered specks, tiny frames.
  int tiny = 0, tiny_ok = 0;
  const auto start = Clock::now();
  std::uniform_int_distribution<int> dim(1, 20), kind(0, 3), npos(1, 3);
  for (int t = 0; t < 1000; ++t) {
    const int h = dim(gen), w = dim(gen);
    Mask m(h, w, 0);
    switch (kind(gen)) {
      case 0: m(int(gen() % h), int(gen() % w)) = 1; break;
      case 1: for (int x = 0; x < w; ++x) m(int(gen() % h) * 0 + h / 2, x) = 1; break;
      case 2: m = oracle::random_mask(gen, h, w, 0.15); break;
      default: m = oracle::random_blob_mask(gen, h, w); break;
    }
    if (count_foreground(m) == 0) m(0, 0) = 1;
    ClickConfig cfg;
    cfg.n_pos = npos(gen);
    cfg.d_border = 15;
    cfg.d_between = 150;
    Rng rng(derive_seed(9, t));
    const auto s = sample_positive_clicks(m, cfg, rng);
    bool ok = !s.clicks.empty();
    for (const auto& c : s.clicks) ok = ok && m.contains(c.y, c.x) && m(c.y, c.x);
    ++tiny;
    tiny_ok += ok;
  }
  const double tiny_secs = seconds_since(start);
  const bool pass = clicks > 0 && satisfied == clicks && relaxed == 0 && tiny_ok == tiny;
  return {pass, "large blobs: " + std::to_string(satisfied) + "/" + std::to_string(clicks) +
                    " positive clicks satisfy d_border=15, d_between=150, " + std::to_string(relaxed) +
                    " relaxations; tiny masks: " + std::to_string(tiny_ok) + "/" + std::to_string(tiny) +
                    " returned in-mask clicks in " + fmt(tiny_secs, 2) + " s"};
}

Outcome shape_contracts(const fs::path&) {
  torch::manual_seed(0);
  SegmentationNet net(ModelConfig::desk());
  net->eval();
  torch::NoGradGuard g;
  int rejected = 0;
  for (int c : {3, 4, 6}) {
    try {
      net->forward(torch::randn({1, c, 32, 32}));
    } catch (const Error&) {
      ++rejected;
    }
  }
  auto cfg = ModelConfig::desk();
  cfg.in_channels = 4;
  bool config_rejected = false;
  try {
    cfg.validate();
  } catch (const Error&) {
    config_rejected = true;
  }
  const auto out = net->forward(torch::randn({2, 5, 40, 24}));
  const bool shape_ok = out.sizes() == torch::IntArrayRef({2, 2, 40, 24});
  return {rejected == 3 && config_rejected && shape_ok,
          "rejected " + std::to_string(rejected) + "/3 non-5-channel inputs, 4-channel config " +
              (config_rejected ? "rejected" : "accepted") + ", [2,5,40,24] -> " + c10::str(out.sizes())};
}

Outcome gradient_check(const fs::path&) {
  torch::manual_seed(5);
  StandInNet net;
  net->to(torch::kFloat64);
  auto x = torch::randn({2, 5, 8, 8}, torch::kFloat64);
  auto target = (torch::rand({2, 8, 8}) > 0.5).to(torch::kInt64);
  auto valid = torch::rand({2, 8, 8}) > 0.2;
  auto loss_of = [&] { return masked_cross_entropy(net->forward(x), target, valid); };
  net->zero_grad();
  loss_of().backward();
  torch::NoGradGuard g;
  const double eps = 1e-6;
  int checked = 0, within = 0;
  double worst = 0.0;
  for (auto& p : net->parameters()) {
    auto flat = p.view(-1);
    auto grad = p.grad().view(-1);
    for (int64_t i = 0; i < flat.numel(); ++i) {
      const double orig = flat[i].item<double>();
      flat[i] = orig + eps;
      const double up = loss_of().item<double>();
      flat[i] = orig - eps;
      const double down = loss_of().item<double>();
      flat[i] = orig;
      const double numeric = (up - down) / (2 * eps), analytic = grad[i].item<double>();
      const double rel = std::abs(analytic - numeric) / std::max(std::abs(numeric), 1e-6);
      worst = std::max(worst, rel);
      within += rel <= 1e-3;
      ++checked;
    }
  }
  return {checked > 0 && within == checked, std::to_string(within) + "/" + std::to_string(checked) +
                                                " parameters within rtol 1e-3 on 8x8 inputs, worst " +
                                                (std::ostringstream() << worst).str()};
}

Outcome overfit(const fs::path& work) {
  const fs::path root = work / "overfit";
  fs::remove_all(root);
  auto toy = make_person_tie_toy(root / "data", {.images = 4, .size = 64, .seed = 0});
  auto cfg = toy_experiment_config(toy, root / "run");
  cfg.train.iterations = 300;
  auto data = prepare_data(cfg, cfg.train_data, LoaderMode::train);
  auto backend = make_saliency_backend(cfg.backend, &data.manifest);
  ExampleBuilder builder(data.manifest, data.split, builder_config_of(cfg), backend, data.interactions);
  const auto start = Clock::now();
  auto result = train_model(cfg, data.loader, builder, {.save = false});
  const double secs = seconds_since(start);
  result.net->eval();
  double sum = 0.0;
  for (const auto& item : data.loader.items()) {
    auto ex = builder.build(item);
    auto p = forward_probability(result.net, ex.inputs);
    Mask pred(p.height(), p.width(), 0);
    for (int y = 0; y < p.height(); ++y)
      for (int x = 0; x < p.width(); ++x) pred(y, x) = ex.inputs.valid(y, x) && p(y, x) > 0.5f;
    sum += iou(pred, ex.target);
  }
  const auto n = data.loader.items().size();
  const double miou = sum / static_cast<double>(n);
  return {n == 8 && miou > 0.90 && secs < 600, std::to_string(n) + " instances, desk preset, " +
                                                   std::to_string(cfg.train.iterations) + " steps: mean train IoU " +
                                                   fmt(miou, 4) + " in " + fmt(secs, 1) + " s"};
}

Outcome table1(const fs::path& work) {
  const auto start = Clock::now();
  int wins = 0;
  std::string per_seed;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto r = run_text_ablation_study(work / "table1", seed, {});
    wins += r.unseen_miou_text > r.unseen_miou_zeroed;
    per_seed += " seed" + std::to_string(seed) + " " + fmt(r.unseen_miou_text) + " vs " + fmt(r.unseen_miou_zeroed) + ";";
  }
  const double secs = seconds_since(start);
  return {wins == 3 && secs < 3600, "unseen mIoU text vs zeroed saliency:" + per_seed + " " + std::to_string(wins) +
                                        "/3 seeds, " + fmt(secs, 0) + " s"};
}

Outcome table5(const fs::path& work) {
  const auto start = Clock::now();
  const std::vector<InteractionSpec> specs{{true, 2, 1}, {true, 1, 0}, {false, 1, 0}};
  ToyStudyOptions options;
  options.train_images = 120;
  options.iterations = 1500;
  int ordered = 0;
  std::string per_seed;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto r = run_interaction_sweep_study(work / "table5", seed, specs, options);
    const auto& m = r.overall_miou;
    ordered += m[0] >= m[1] && m[1] >= m[2];
    per_seed += " seed" + std::to_string(seed) + " " + fmt(m[0]) + " >= " + fmt(m[1]) + " >= " + fmt(m[2]) + ";";
  }
  const double secs = seconds_since(start);
  return {ordered == 3, "mIoU (text,2,1) >= (text,1,0) >= (no-text,1,0):" + per_seed + " " + std::to_string(ordered) +
                            "/3 seeds, " + fmt(secs, 0) + " s"};
}

/// Predicts the instance's own mask shifted right by an id-dependent amount.
class ShiftPredictor final : public InstancePredictor {
 public:
  explicit ShiftPredictor(const DatasetManifest& manifest) : manifest_(manifest) {}
  static Mask shifted(const Mask& gt, int shift) {
    Mask out(gt.height(), gt.width(), 0);
    for (int y = 0; y < gt.height(); ++y)
      for (int x = 0; x + shift < gt.width(); ++x) out(y, x + shift) = gt(y, x);
    return out;
  }
  static int shift_of(const std::string& id) { return static_cast<int>(std::hash<std::string>{}(id) % 7); }
  Mask predict_mask(const ImageSample&, const RgbImage&, const InteractionSet& interactions) override {
    for (const auto& inst : manifest_.instances)
      if (inst.instance_id() == interactions.instance_id) return shifted(inst.decode(), shift_of(inst.instance_id()));
    throw Error(ErrorCode::not_found, "unknown instance " + interactions.instance_id);
  }

 private:
  const DatasetManifest& manifest_;
};

Outcome distractor_buckets(const fs::path& work) {
  const fs::path root = work / "distractors";
  fs::create_directories(root);
  DatasetManifest manifest;
  std::mt19937_64 gen(50);
  const char* classes[] = {"cat", "kite", "zebra"};
  int next_id = 1;
  for (int img = 0; next_id <= 50; ++img) {
    const std::string image_id = "im" + std::to_string(img);
    save_png(fixture::noise_image(48, 48, static_cast<unsigned>(img)), root / (image_id + ".png"));
    manifest.images.push_back({{image_id, 48, 48, ""}, root / (image_id + ".png")});
    for (const char* cls : classes) {
      const int count = static_cast<int>(gen() % 4);
      for (int k = 0; k < count && next_id <= 50; ++k) {
        Mask m(48, 48, 0);
        const int x0 = static_cast<int>(gen() % 36), y0 = static_cast<int>(gen() % 36);
        const int w = 4 + static_cast<int>(gen() % 8), h = 4 + static_cast<int>(gen() % 8);
        for (int y = y0; y < y0 + h; ++y)
          for (int x = x0; x < x0 + w; ++x) m(y, x) = 1;
        manifest.instances.emplace_back(image_id, std::to_string(next_id++), cls, m);
      }
    }
  }
  manifest.index();
  const ClassSplit split(DatasetName::custom, {"cat"}, {"kite", "zebra"});
  ShiftPredictor predictor(manifest);
  EvalOptions options;
  options.clicks.d_border = 1;
  options.clicks.d_between = 2;
  const auto report = evaluate(predictor, manifest, split, options);

  // Independent group-by straight from the annotations.
  std::map<int, std::pair<double, std::size_t>> expected;
  for (const auto& inst : manifest.instances) {
    if (std::string(inst.class_name()) == "cat") continue;
    int same = 0;
    for (const auto& other : manifest.instances)
      same += other.image_id() == inst.image_id() && other.class_name() == inst.class_name();
    const Mask gt = inst.decode();
    auto& [sum, n] = expected[same];
    sum += oracle::iou(ShiftPredictor::shifted(gt, ShiftPredictor::shift_of(inst.instance_id())), gt);
    ++n;
  }
  bool exact = expected.size() == report.distractor_buckets.size();
  std::string buckets;
  for (const auto& [same, acc] : expected) {
    const double mean = acc.first / static_cast<double>(acc.second);
    auto it = report.distractor_buckets.find(same);
    exact = exact && it != report.distractor_buckets.end() && it->second.mean_iou == mean && it->second.count == acc.second;
    buckets += " " + std::to_string(same) + ":" + fmt(mean, 4) + "(n=" + std::to_string(acc.second) + ")";
  }
  return {exact && manifest.instances.size() == 50,
          std::to_string(manifest.instances.size()) + " instances, buckets" + buckets +
              (exact ? ", identical to the group-by" : ", MISMATCH against the group-by")};
}

Outcome openimages_split(const fs::path& work) {
  const fs::path lists = fs::path(CLICKSEG_SOURCE_DIR) / "splits/class_lists";
  const auto coco = read_class_list(lists / "coco80.txt");
  const auto oi = read_class_list(lists / "openimages_v7_boxable601.txt");
  const auto split = build_openimages_split(coco, oi);
  const auto report = openimages_split_report(split, coco, oi, 64);
  const fs::path report_path = work / "openimages_discrepancy.json";
  std::ofstream(report_path) << report.to_json() << "\n";
  const bool shipped_matches = load_split(fs::path(CLICKSEG_SOURCE_DIR) / "splits/openimages.json") == split;
  if (!report.matches())
    clickseg::log::warn("OpenImages split: " + std::to_string(report.actual_seen) + " seen classes, expected 64; report " +
              report_path.string());
  std::string unmatched;
  for (const auto& c : report.coco_unmatched) unmatched += (unmatched.empty() ? "" : ", ") + c;
  const std::string detail =
      report.matches() ? "64 seen classes"
                       : std::to_string(report.actual_seen) + " seen classes from the shipped " +
                             std::to_string(report.openimages_classes) +
                             "-class OpenImages list (expected 64); discrepancy report logged to " +
                             report_path.string() + "; COCO names without an exact match: " + unmatched;
  return {shipped_matches && fs::exists(report_path),
          detail + (shipped_matches ? "" : "; splits/openimages.json is stale")};
}

Outcome service_determinism(const fs::path& work) {
  const fs::path root = work / "service";
  fs::remove_all(root);
  auto toy = make_person_tie_toy(root / "data", {.images = 4, .size = 64, .seed = 1});
  auto cfg = toy_experiment_config(toy, root / "run");
  cfg.train.iterations = 150;
  auto data = prepare_data(cfg, cfg.train_data, LoaderMode::train);
  auto backend = make_saliency_backend(cfg.backend, &data.manifest);
  ExampleBuilder builder(data.manifest, data.split, builder_config_of(cfg), backend, data.interactions);
  const auto trained = train_model(cfg, data.loader, builder);

  ServiceConfig scfg;
  scfg.port = 0;
  scfg.checkpoint = trained.checkpoint->weights;
  scfg.backend = cfg.backend;
  InferenceService service(scfg);
  const int port = service.start();
  if (!service.wait_ready(std::chrono::seconds(60))) return {false, "service did not become ready"};
  httplib::Client client("127.0.0.1", port);
  std::ifstream in(data.manifest.images.front().path, std::ios::binary);
  const std::string bytes((std::istreambuf_iterator<char>(in)), {});
  const auto up = client.Post("/v1/images", bytes, "image/png");
  const std::string image_id = json::parse(up->body).at("image_id");
  const auto& person = data.manifest.instances.front();
  const auto depth = interior_distance(person.decode());
  const auto deepest = std::max_element(depth.data(), depth.data() + depth.size()) - depth.data();
  const json request{{"image_id", image_id},
                     {"clicks", {{{"x", deepest % person.width()}, {"y", deepest / person.width()}}}},
                     {"text", person.class_name()}};
  std::vector<std::future<std::pair<int, std::string>>> futures;
  for (int i = 0; i < 10; ++i)
    futures.push_back(std::async(std::launch::async, [&] {
      httplib::Client c("127.0.0.1", port);
      c.set_read_timeout(60);
      auto res = c.Post("/v1/segment", request.dump(), "application/json");
      return res ? std::make_pair(res->status, res->body) : std::make_pair(-1, std::string());
    }));
  std::set<std::string> distinct;
  int ok = 0;
  std::int64_t area = 0;
  for (auto& f : futures) {
    auto [status, body] = f.get();
    if (status != 200) continue;
    ++ok;
    const auto j = json::parse(body);
    distinct.insert(j.at("mask_rle").dump());
    area = j.at("area");
  }
  service.stop();
  return {ok == 10 && distinct.size() == 1, std::to_string(ok) + "/10 concurrent requests answered, " +
                                                std::to_string(distinct.size()) + " distinct mask_rle (area " +
                                                std::to_string(area) + ")"};
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work;
  std::set<std::string> only;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--work" && i + 1 < argc) work = argv[++i];
    else only.insert(arg);
  }
  std::optional<fixture::TempDir> temp;
  if (work.empty()) {
    temp.emplace("acceptance");
    work = temp->path();
  }
  fs::create_directories(work);
  clickseg::log::set_level("warn");

  const std::vector<std::pair<std::string, Outcome (*)(const fs::path&)>> criteria{
      {"geometry_oracles", geometry_oracles},     {"rle_round_trip", rle_round_trip},
      {"click_constraints", click_constraints},   {"shape_contracts", shape_contracts},
      {"gradient_check", gradient_check},         {"overfit", overfit},
      {"table1_text_vs_zeroed", table1},          {"table5_interaction_order", table5},
      {"distractor_buckets", distractor_buckets}, {"openimages_split", openimages_split},
      {"service_determinism", service_determinism}};
  int failed = 0, run = 0;
  for (const auto& [name, fn] : criteria) {
    if (!only.empty() && !only.contains(name)) continue;
    Outcome o;
    try {
      o = fn(work);
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    ++run;
    failed += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
  }
  std::cout << (run - failed) << "/" << run << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
