#include "clickseg/nn/checkpoint.hpp"

#include <fstream>

#include "clickseg/error.hpp"
#include "clickseg/hash.hpp"

namespace clickseg {

using nlohmann::json;

AssembleConfig assemble_config_of(const ExperimentConfig& cfg) {
  return {.height = cfg.height, .width = cfg.width, .use_text = cfg.use_text, .use_clicks = cfg.use_clicks, .range = cfg.range,
          .distance_cap = cfg.distance_cap};
}

namespace {

json assemble_to_json(const AssembleConfig& a) {
  return {{"height", a.height},
          {"width", a.width},
          {"use_text", a.use_text},
          {"use_clicks", a.use_clicks},
          {"normalize_range", a.range == NormalizeRange::zero_one ? "zero_one" : "minus_one_one"},
          {"distance_cap", a.distance_cap}};
}

AssembleConfig assemble_from_json(const json& j) {
  AssembleConfig a;
  a.height = j.at("height");
  a.width = j.at("width");
  a.use_text = j.at("use_text");
  a.use_clicks = j.at("use_clicks");
  a.range = j.at("normalize_range") == "zero_one" ? NormalizeRange::zero_one : NormalizeRange::minus_one_one;
  a.distance_cap = j.value("distance_cap", kDefaultDistanceCap);
  return a;
}

}  // namespace

json make_training_manifest(const ExperimentConfig& cfg, int iteration) {
  std::string split_hash = "missing";
  if (std::filesystem::exists(cfg.split)) split_hash = sha256_file(cfg.split);
  return {{"format", "clickseg-checkpoint/1"},
          {"dataset", to_string(cfg.dataset_name)},
          {"split_file", cfg.split.string()},
          {"split_sha256", split_hash},
          {"clicks", json::parse(click_config_to_json(cfg.clicks))},
          {"backend_id", cfg.use_text ? cfg.backend.id : "none"},
          {"backend_variant", cfg.backend.variant},
          {"git_revision", build_git_revision()},
          {"iteration", iteration},
          {"model", to_json(cfg.model)},
          {"train", to_json(cfg.train)},
          {"hyperparameter_source", cfg.train.optimizer == "sgd"
                                        ? "mmsegmentation deeplabv3plus defaults (sgd 0.01, momentum 0.9, wd 5e-4, poly 0.9)"
                                        : "desk preset (adam, poly schedule)"},
          {"assemble", assemble_to_json(assemble_config_of(cfg))},
          {"experiment", to_json(cfg)}};
}

Checkpoint save_checkpoint(SegmentationNet& net, const json& manifest, const std::filesystem::path& stem) {
  if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
  Checkpoint c;
  c.weights = stem;
  c.weights += ".pt";
  c.manifest_path = stem;
  c.manifest_path += ".json";
  c.manifest = manifest;
  c.manifest["weights_file"] = c.weights.filename().string();
  torch::save(net, c.weights.string());
  c.manifest["weights_sha256"] = sha256_file(c.weights);
  std::ofstream(c.manifest_path) << c.manifest.dump(2) << '\n';
  return c;
}

LoadedModel load_checkpoint(const std::filesystem::path& path) {
  auto manifest_path = path;
  if (manifest_path.extension() == ".pt") manifest_path.replace_extension(".json");
  std::ifstream in(manifest_path);
  if (!in) throw Error(ErrorCode::not_found, "checkpoint manifest not found: " + manifest_path.string());
  LoadedModel m;
  try {
    m.manifest = json::parse(in);
    m.model = model_config_from_json(m.manifest.at("model"));
    m.assemble = assemble_from_json(m.manifest.at("assemble"));
    m.backend_id = m.manifest.at("backend_id");
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse_error, manifest_path.string() + ": " + e.what());
  }
  auto weights = manifest_path.parent_path() / m.manifest.value("weights_file", manifest_path.stem().string() + ".pt");
  if (!std::filesystem::exists(weights)) throw Error(ErrorCode::not_found, "checkpoint weights not found: " + weights.string());
  m.net = SegmentationNet(m.model);
  torch::load(m.net, weights.string());
  m.net->eval();
  return m;
}

}  // namespace clickseg
