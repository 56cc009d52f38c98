#include <csignal>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "clickseg/class_split.hpp"
#include "clickseg/click_synthesis.hpp"
#include "clickseg/error.hpp"
#include "clickseg/eval.hpp"
#include "clickseg/experiment.hpp"
#include "clickseg/log.hpp"
#include "clickseg/nn/backends.hpp"
#include "clickseg/nn/train.hpp"
#include "clickseg/service.hpp"
#include "clickseg/toy.hpp"

using namespace clickseg;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

/// A dataset directory holds annotations.json and images/.
DatasetSource dataset_dir(const fs::path& dir) {
  return {dir / "annotations.json", dir / "images", std::nullopt};
}

ClickConfig click_config_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::not_found, "cannot open " + path.string());
  const json j = json::parse(in);
  if (j.contains("clicks")) return load_experiment_config(path).clicks;
  return click_config_from_json(j.dump());
}

InteractionSet parse_click_list(const std::string& clicks, const std::string& text) {
  InteractionSet set;
  set.instance_id = "cli";
  std::stringstream ss(clicks);
  for (std::string item; std::getline(ss, item, ';');) {
    if (item.empty()) continue;
    std::stringstream fields(item);
    std::string x, y, sign;
    std::getline(fields, x, ',');
    std::getline(fields, y, ',');
    std::getline(fields, sign, ',');
    if (x.empty() || y.empty() || (sign != "+" && sign != "-" && !sign.empty()))
      throw Error(ErrorCode::parse_error, "clicks must look like \"x,y,+;x,y,-\", got '" + item + "'");
    set.clicks.push_back({std::stoi(x), std::stoi(y), sign == "-" ? Polarity::negative : Polarity::positive});
  }
  if (!text.empty()) set.text = text;
  return set;
}

std::vector<InteractionSpec> parse_specs(const std::string& s) {
  std::vector<InteractionSpec> specs;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ';');)
    if (!item.empty()) specs.push_back(parse_interaction_spec(item));
  if (specs.empty()) throw Error(ErrorCode::invalid_argument, "no interaction specs given");
  return specs;
}

int synth_clicks(const fs::path& dataset, const fs::path& split_path, const fs::path& config, const fs::path& out,
                 const std::string& mode) {
  const auto source = dataset_dir(dataset);
  auto ingested = ingest_coco(source.annotations, source.image_root);
  if (!ingested.report.ok()) log::warn(ingested.report.summary());
  const auto split = load_split(split_path);
  SynthesisStats stats;
  auto records = synthesize_dataset_interactions(ingested.manifest.instances, split,
                                                 mode == "train" ? SynthesisMode::train : SynthesisMode::eval,
                                                 click_config_file(config), &stats);
  write_interactions_jsonl(out, records);
  std::cout << json{{"records", stats.records},
                    {"instances", stats.instances_seen},
                    {"filtered", stats.instances_filtered},
                    {"failed", stats.instances_failed},
                    {"relaxation_rate", stats.relaxation_rate()},
                    {"out", out.string()}}
                   .dump()
            << "\n";
  return 0;
}

int train(const fs::path& config, std::optional<int> iterations) {
  auto cfg = load_experiment_config(config);
  if (iterations) cfg.train.iterations = *iterations;
  cfg.validate();
  auto data = prepare_data(cfg, cfg.train_data, LoaderMode::train);
  if (!data.report.ok()) log::warn(data.report.summary());
  auto backend = make_saliency_backend(cfg.backend, &data.manifest);
  ExampleBuilder builder(data.manifest, data.split, builder_config_of(cfg), backend, data.interactions);
  TrainOptions options;
  options.on_step = [&](const TrainProgress& p) {
    if (p.iteration % cfg.train.log_every == 0 || p.iteration + 1 == cfg.train.iterations)
      log::info("iter " + std::to_string(p.iteration) + " loss " + std::to_string(p.loss) + " lr " +
                std::to_string(p.lr));
  };
  auto result = train_model(cfg, data.loader, builder, options);
  std::cout << result.checkpoint->weights.string() << "\n";
  return 0;
}

ServiceConfig serving_config(const fs::path& ckpt, const std::string& backend, const fs::path& registry) {
  ServiceConfig cfg;
  cfg.checkpoint = ckpt;
  const auto loaded_manifest = [&] {
    fs::path manifest = ckpt;
    manifest.replace_extension(".json");
    std::ifstream in(manifest);
    if (!in) throw Error(ErrorCode::not_found, "missing checkpoint manifest " + manifest.string());
    return json::parse(in);
  }();
  cfg.backend = experiment_config_from_json(loaded_manifest.at("experiment")).backend;
  if (!backend.empty()) cfg.backend.id = backend;
  if (!registry.empty()) cfg.backend.registry = registry;
  return cfg;
}

int predict(const fs::path& ckpt, const fs::path& image_path, const std::string& clicks, const std::string& text,
            const fs::path& out, const std::string& backend, const fs::path& registry) {
  auto model = load_serving_model(serving_config(ckpt, backend, registry));
  const RgbImage image = load_image(image_path);
  auto interactions = parse_click_list(clicks, text);
  interactions.validate(image.height, image.width);
  ImageSample sample{image_path.stem().string(), image.width, image.height, image_path.string()};
  if (auto it = model.image_aliases.find(image_content_hash(image)); it != model.image_aliases.end())
    sample.image_id = it->second;
  const auto prediction = model.predictor->predict(sample, image, interactions);
  save_mask_png(prediction.mask.decode(), out);
  std::cout << json{{"out", out.string()}, {"area", prediction.mask.area()}, {"confidence", prediction.confidence}}.dump()
            << "\n";
  return 0;
}

int eval(const fs::path& ckpt, const fs::path& dataset, const fs::path& split_path, const std::string& specs_text,
         const fs::path& out, const std::string& backend, const fs::path& registry, std::uint64_t seed,
         const std::string& averaging) {
  auto serving = serving_config(ckpt, backend, registry);
  serving.dataset = dataset_dir(dataset);
  auto model = load_serving_model(serving);
  const auto source = dataset_dir(dataset);
  auto ingested = ingest_coco(source.annotations, source.image_root);
  const auto split = load_split(split_path);
  EvalOptions options;
  options.clicks = click_config_from_json(model.predictor->manifest().at("clicks").dump());
  options.seed = seed;
  options.averaging = averaging == "class" ? Averaging::class_macro : Averaging::instance;
  options.extra = {{"checkpoint", ckpt.string()}, {"dataset", dataset.string()}, {"split", split_path.string()}};
  const auto specs = parse_specs(specs_text);
  auto reports = interaction_sweep(*model.predictor, ingested.manifest, split, specs, options);
  json summary = json::array();
  for (std::size_t i = 0; i < reports.size(); ++i) {
    std::string name = specs[i].label();
    std::replace(name.begin(), name.end(), ',', '_');
    const fs::path stem = out / name;
    write_report(reports[i], stem);
    if (!reports[i].distractor_buckets.empty()) {
      fs::path chart = stem;
      chart += "_distractors.png";
      write_distractor_chart(reports[i].distractor_buckets, chart);
    }
    const auto& a = reports[i].aggregates;
    summary.push_back({{"spec", specs[i].label()},
                       {"overall_miou", a.overall_miou},
                       {"seen_miou", a.seen_miou},
                       {"unseen_miou", a.unseen_miou},
                       {"overall_boundary_iou", a.overall_boundary_iou},
                       {"n", a.n_overall}});
  }
  std::cout << summary.dump(2) << "\n";
  return 0;
}

InferenceService* running_service = nullptr;

int serve(ServiceConfig cfg) {
  apply_env_overrides(cfg);
  InferenceService service(std::move(cfg));
  running_service = &service;
  std::signal(SIGINT, [](int) { if (running_service) std::thread([] { running_service->stop(); }).detach(); });
  std::signal(SIGTERM, [](int) { if (running_service) std::thread([] { running_service->stop(); }).detach(); });
  service.run();
  running_service = nullptr;
  return 0;
}

int build_split(const fs::path& coco, const fs::path& openimages, const fs::path& out, const fs::path& report_path,
                std::size_t expected) {
  const auto coco_classes = read_class_list(coco);
  const auto oi_classes = read_class_list(openimages);
  const auto split = build_openimages_split(coco_classes, oi_classes);
  save_split(split, out);
  const auto report = openimages_split_report(split, coco_classes, oi_classes, expected);
  if (!report_path.empty()) std::ofstream(report_path) << report.to_json() << "\n";
  if (!report.matches())
    log::warn("OpenImages split has " + std::to_string(report.actual_seen) + " seen classes, expected " +
              std::to_string(report.expected_seen) + "; discrepancy report: " +
              (report_path.empty() ? std::string("(not written)") : report_path.string()));
  std::cout << report.to_json() << "\n";
  return 0;
}

int make_toy(const std::string& kind, const fs::path& out, ToyOptions options) {
  const fs::path dir = fs::absolute(out);
  ToyDataset toy;
  if (kind == "two-shape") toy = make_two_shape_toy(dir / "data", options);
  else if (kind == "tile") toy = make_tile_toy(dir / "data", options);
  else if (kind == "person-tie") toy = make_person_tie_toy(dir / "data", options);
  else throw Error(ErrorCode::invalid_argument, "unknown toy kind '" + kind + "'");
  auto cfg = toy_experiment_config(toy, dir / "run");
  std::ofstream(dir / "config.json") << to_json(cfg).dump(2) << "\n";
  std::cout << (dir / "config.json").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Click and text interactive segmentation"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace|debug|info|warn|error");

  fs::path dataset, split, config, out, ckpt, image, registry, report;
  std::string mode = "train", clicks, text, backend, specs = "text,1,0", averaging = "instance";
  std::optional<int> iterations;
  std::uint64_t seed = 2024;

  auto* synth = app.add_subcommand("synth-clicks", "Synthesize interaction sets as JSON lines");
  synth->add_option("--dataset", dataset, "Directory with annotations.json and images/")->required();
  synth->add_option("--split", split, "Class split file")->required();
  synth->add_option("--config", config, "Click config or experiment config")->required();
  synth->add_option("--out", out, "Output .jsonl")->required();
  synth->add_option("--mode", mode, "train drops unseen classes; eval keeps all")->check(CLI::IsMember({"train", "eval"}));

  auto* tr = app.add_subcommand("train", "Train a model from an experiment config");
  tr->add_option("--config", config)->required()->check(CLI::ExistingFile);
  tr->add_option("--iterations", iterations, "Override train.iterations");

  auto* pr = app.add_subcommand("predict", "Segment one instance");
  pr->add_option("--ckpt", ckpt)->required()->check(CLI::ExistingFile);
  pr->add_option("--image", image)->required()->check(CLI::ExistingFile);
  pr->add_option("--clicks", clicks, "\"x,y,+;x,y,-\"");
  pr->add_option("--text", text);
  pr->add_option("--out", out, "Mask PNG")->required();
  pr->add_option("--backend", backend, "Saliency backend; defaults to the checkpoint's");
  pr->add_option("--registry", registry, "CLIP weights registry");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint under interaction specs");
  ev->add_option("--ckpt", ckpt)->required()->check(CLI::ExistingFile);
  ev->add_option("--dataset", dataset)->required();
  ev->add_option("--split", split)->required()->check(CLI::ExistingFile);
  ev->add_option("--interactions", specs, "Specs joined by ';', e.g. \"text,2,1;no-text,1,0\"");
  ev->add_option("--out", out, "Report directory")->required();
  ev->add_option("--backend", backend);
  ev->add_option("--registry", registry);
  ev->add_option("--seed", seed, "Evaluation click seed");
  ev->add_option("--averaging", averaging)->check(CLI::IsMember({"instance", "class"}));

  ServiceConfig service_cfg;
  auto* sv = app.add_subcommand("serve", "Run the HTTP inference service");
  sv->add_option("--ckpt", ckpt)->required()->check(CLI::ExistingFile);
  sv->add_option("--backend", backend);
  sv->add_option("--registry", registry);
  sv->add_option("--host", service_cfg.host);
  sv->add_option("--port", service_cfg.port);
  sv->add_option("--ui", service_cfg.ui_dir, "Static UI bundle served under /ui");
  sv->add_option("--cache-dir", service_cfg.backend.cache_dir, "Saliency cache directory");
  sv->add_option("--dataset", dataset, "Dataset directory for the annotation_stub backend");

  std::size_t expected_seen = 64;
  fs::path coco_list = "splits/class_lists/coco80.txt", oi_list = "splits/class_lists/openimages_v7_boxable601.txt";
  auto* bs = app.add_subcommand("build-split", "Build the OpenImages seen/unseen split");
  bs->add_option("--coco", coco_list)->check(CLI::ExistingFile);
  bs->add_option("--openimages", oi_list)->check(CLI::ExistingFile);
  bs->add_option("--out", out)->required();
  bs->add_option("--report", report, "Discrepancy report JSON");
  bs->add_option("--expected-seen", expected_seen);

  std::string kind = "two-shape";
  ToyOptions toy;
  auto* mt = app.add_subcommand("make-toy", "Write a synthetic toy dataset and its experiment config");
  mt->add_option("--kind", kind)->check(CLI::IsMember({"two-shape", "tile", "person-tie"}));
  mt->add_option("--out", out)->required();
  mt->add_option("--images", toy.images);
  mt->add_option("--size", toy.size);
  mt->add_option("--seed", toy.seed);
  mt->add_option("--distractors", toy.distractors);

  CLI11_PARSE(app, argc, argv);
  log::set_level(log_level);
  try {
    if (*synth) return synth_clicks(dataset, split, config, out, mode);
    if (*tr) return train(config, iterations);
    if (*pr) return predict(ckpt, image, clicks, text, out, backend, registry);
    if (*ev) return eval(ckpt, dataset, split, specs, out, backend, registry, seed, averaging);
    if (*sv) {
      auto cfg = serving_config(ckpt, backend, registry);
      cfg.host = service_cfg.host;
      cfg.port = service_cfg.port;
      cfg.ui_dir = service_cfg.ui_dir;
      if (service_cfg.backend.cache_dir) cfg.backend.cache_dir = service_cfg.backend.cache_dir;
      if (!dataset.empty()) cfg.dataset = dataset_dir(dataset);
      return serve(std::move(cfg));
    }
    if (*bs) return build_split(coco_list, oi_list, out, report, expected_seen);
    if (*mt) return make_toy(kind, out, toy);
  } catch (const std::exception& e) {
    log::error(e.what());
    return 1;
  }
  return 0;
}
