#include "clickseg/config.hpp"

#include <fstream>
#include <set>

#include "clickseg/error.hpp"

namespace clickseg {

using nlohmann::json;

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed, std::string_view where) {
  if (!j.is_object()) throw Error(ErrorCode::parse_error, std::string(where) + " must be an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, _] : j.items())
    if (!ok.count(key)) throw Error(ErrorCode::parse_error, "unknown key '" + key + "' in " + std::string(where));
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_relative() && !base.empty() ? base / path : path;
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

DatasetSource source_from_json(const json& j, const std::filesystem::path& base, std::string_view where) {
  check_keys(j, {"annotations", "image_root", "interactions"}, where);
  DatasetSource s;
  s.annotations = resolve(base, j.at("annotations").get<std::string>());
  s.image_root = resolve(base, j.at("image_root").get<std::string>());
  if (j.contains("interactions") && !j.at("interactions").is_null())
    s.interactions = resolve(base, j.at("interactions").get<std::string>());
  return s;
}

json to_json(const DatasetSource& s) {
  return {{"annotations", s.annotations.string()},
          {"image_root", s.image_root.string()},
          {"interactions", s.interactions ? json(s.interactions->string()) : json(nullptr)}};
}

}  // namespace

void ModelConfig::validate() const {
  if (in_channels != 5) throw Error(ErrorCode::invalid_argument, "model in_channels must be 5, got " + std::to_string(in_channels));
  if (out_classes != 2) throw Error(ErrorCode::invalid_argument, "model out_classes must be 2, got " + std::to_string(out_classes));
  if (stage_blocks.size() != 4 || stage_widths.size() != 4)
    throw Error(ErrorCode::invalid_argument, "encoder needs exactly 4 stages");
  for (int b : stage_blocks)
    if (b < 1) throw Error(ErrorCode::invalid_argument, "every stage needs >= 1 block");
  for (int w : stage_widths)
    if (w < 1) throw Error(ErrorCode::invalid_argument, "stage widths must be positive");
  if (output_stride != 8 && output_stride != 16)
    throw Error(ErrorCode::invalid_argument, "output_stride must be 8 or 16");
  if (aspp_dilations.empty()) throw Error(ErrorCode::invalid_argument, "aspp_dilations must be non-empty");
  if (stem_width < 2 || aspp_channels < 1 || low_level_channels < 1)
    throw Error(ErrorCode::invalid_argument, "model widths must be positive");
  if (dropout < 0 || dropout >= 1) throw Error(ErrorCode::invalid_argument, "dropout must be in [0, 1)");
}

ModelConfig ModelConfig::resnet50() { return ModelConfig{}; }

ModelConfig ModelConfig::desk() {
  ModelConfig c;
  c.backbone = "desk";
  c.bottleneck = false;
  c.stem_width = 16;
  c.stage_blocks = {1, 1, 1, 1};
  c.stage_widths = {16, 32, 64, 96};
  c.aspp_dilations = {1, 2, 4, 6};
  c.aspp_channels = 64;
  c.low_level_channels = 16;
  c.dropout = 0.0;
  return c;
}

ModelConfig ModelConfig::preset(std::string_view name) {
  if (name == "resnet50") return resnet50();
  if (name == "desk") return desk();
  throw Error(ErrorCode::invalid_argument, "unknown model preset '" + std::string(name) + "' (resnet50, desk)");
}

void TrainConfig::validate() const {
  if (optimizer != "sgd" && optimizer != "adam")
    throw Error(ErrorCode::invalid_argument, "optimizer must be sgd or adam");
  if (!(lr > 0) || min_lr < 0 || min_lr > lr) throw Error(ErrorCode::invalid_argument, "need 0 <= min_lr <= lr, lr > 0");
  if (iterations < 1 || batch_size < 1) throw Error(ErrorCode::invalid_argument, "iterations and batch_size must be >= 1");
  if (checkpoint_every < 0 || log_every < 1 || workers < 1)
    throw Error(ErrorCode::invalid_argument, "checkpoint_every >= 0, log_every >= 1, workers >= 1");
}

void ExperimentConfig::validate() const {
  clicks.validate();
  model.validate();
  train.validate();
  if (height < 16 || width < 16) throw Error(ErrorCode::invalid_argument, "training resolution must be >= 16");
  if (!(distance_cap > 0.0f)) throw Error(ErrorCode::invalid_argument, "distance_cap must be > 0");
  if (!use_text && !use_clicks) throw Error(ErrorCode::invalid_argument, "at least one of text and clicks must be used");
}

json to_json(const ModelConfig& c) {
  return {{"in_channels", c.in_channels},       {"out_classes", c.out_classes},
          {"backbone", c.backbone},             {"bottleneck", c.bottleneck},
          {"stem_width", c.stem_width},         {"stage_blocks", c.stage_blocks},
          {"stage_widths", c.stage_widths},     {"output_stride", c.output_stride},
          {"aspp_dilations", c.aspp_dilations}, {"aspp_channels", c.aspp_channels},
          {"low_level_channels", c.low_level_channels}, {"dropout", c.dropout}};
}

ModelConfig model_config_from_json(const json& j) {
  check_keys(j, {"preset", "in_channels", "out_classes", "backbone", "bottleneck", "stem_width", "stage_blocks",
                 "stage_widths", "output_stride", "aspp_dilations", "aspp_channels", "low_level_channels", "dropout"},
             "model");
  ModelConfig c = j.contains("preset") ? ModelConfig::preset(j.at("preset").get<std::string>()) : ModelConfig{};
  read(j, "in_channels", c.in_channels);
  read(j, "out_classes", c.out_classes);
  read(j, "backbone", c.backbone);
  read(j, "bottleneck", c.bottleneck);
  read(j, "stem_width", c.stem_width);
  read(j, "stage_blocks", c.stage_blocks);
  read(j, "stage_widths", c.stage_widths);
  read(j, "output_stride", c.output_stride);
  read(j, "aspp_dilations", c.aspp_dilations);
  read(j, "aspp_channels", c.aspp_channels);
  read(j, "low_level_channels", c.low_level_channels);
  read(j, "dropout", c.dropout);
  c.validate();
  return c;
}

json to_json(const TrainConfig& c) {
  return {{"optimizer", c.optimizer},   {"lr", c.lr},
          {"momentum", c.momentum},     {"weight_decay", c.weight_decay},
          {"poly_power", c.poly_power}, {"min_lr", c.min_lr},
          {"iterations", c.iterations}, {"batch_size", c.batch_size},
          {"seed", c.seed},             {"checkpoint_every", c.checkpoint_every},
          {"log_every", c.log_every},   {"workers", c.workers}};
}

TrainConfig train_config_from_json(const json& j) {
  check_keys(j, {"optimizer", "lr", "momentum", "weight_decay", "poly_power", "min_lr", "iterations", "batch_size",
                 "seed", "checkpoint_every", "log_every", "workers"},
             "train");
  TrainConfig c;
  read(j, "optimizer", c.optimizer);
  read(j, "lr", c.lr);
  read(j, "momentum", c.momentum);
  read(j, "weight_decay", c.weight_decay);
  read(j, "poly_power", c.poly_power);
  read(j, "min_lr", c.min_lr);
  read(j, "iterations", c.iterations);
  read(j, "batch_size", c.batch_size);
  read(j, "seed", c.seed);
  read(j, "checkpoint_every", c.checkpoint_every);
  read(j, "log_every", c.log_every);
  read(j, "workers", c.workers);
  c.validate();
  return c;
}

json to_json(const BackendConfig& c) {
  return {{"id", c.id},
          {"cache_dir", c.cache_dir ? json(c.cache_dir->string()) : json(nullptr)},
          {"softmax", c.softmax},
          {"variant", c.variant},
          {"registry", c.registry.string()},
          {"prompt_template", c.prompt_template},
          {"sigma_scale", c.sigma_scale}};
}

BackendConfig backend_config_from_json(const json& j) {
  check_keys(j, {"id", "cache_dir", "softmax", "variant", "registry", "prompt_template", "sigma_scale"}, "backend");
  BackendConfig c;
  read(j, "id", c.id);
  if (j.contains("cache_dir") && !j.at("cache_dir").is_null()) c.cache_dir = j.at("cache_dir").get<std::string>();
  read(j, "softmax", c.softmax);
  read(j, "variant", c.variant);
  if (j.contains("registry")) c.registry = j.at("registry").get<std::string>();
  read(j, "prompt_template", c.prompt_template);
  read(j, "sigma_scale", c.sigma_scale);
  return c;
}

namespace {

json mix_labels(const std::vector<InteractionSpec>& mix) {
  json out = json::array();
  for (const auto& m : mix) out.push_back(m.label());
  return out;
}

}  // namespace

json to_json(const ExperimentConfig& c) {
  return {{"name", c.name},
          {"dataset", {{"name", to_string(c.dataset_name)}, {"split", c.split.string()}, {"train", to_json(c.train_data)},
                       {"eval", to_json(c.eval_data)}}},
          {"clicks", json::parse(click_config_to_json(c.clicks))},
          {"backend", to_json(c.backend)},
          {"resolution", {c.height, c.width}},
          {"ablation", {{"use_text", c.use_text}, {"use_clicks", c.use_clicks}}},
          {"normalize_range", c.range == NormalizeRange::zero_one ? "zero_one" : "minus_one_one"},
          {"distance_cap", c.distance_cap},
          {"resample_clicks_per_epoch", c.resample_clicks_per_epoch},
          {"interaction_mix", mix_labels(c.interaction_mix)},
          {"model", to_json(c.model)},
          {"train", to_json(c.train)},
          {"out_dir", c.out_dir.string()}};
}

ExperimentConfig experiment_config_from_json(const json& j, const std::filesystem::path& base_dir) {
  try {
    check_keys(j, {"name", "dataset", "clicks", "backend", "resolution", "ablation", "normalize_range",
                   "distance_cap", "resample_clicks_per_epoch", "interaction_mix", "model", "train", "out_dir"},
               "experiment config");
    ExperimentConfig c;
    read(j, "name", c.name);
    const auto& d = j.at("dataset");
    check_keys(d, {"name", "split", "train", "eval"}, "dataset");
    c.dataset_name = parse_dataset_name(d.at("name").get<std::string>());
    c.split = resolve(base_dir, d.at("split").get<std::string>());
    c.train_data = source_from_json(d.at("train"), base_dir, "dataset.train");
    c.eval_data = d.contains("eval") ? source_from_json(d.at("eval"), base_dir, "dataset.eval") : c.train_data;
    if (j.contains("clicks")) c.clicks = click_config_from_json(j.at("clicks").dump());
    if (j.contains("backend")) {
      c.backend = backend_config_from_json(j.at("backend"));
      if (c.backend.cache_dir) c.backend.cache_dir = resolve(base_dir, c.backend.cache_dir->string());
      c.backend.registry = resolve(base_dir, c.backend.registry.string());
    }
    if (j.contains("resolution")) {
      const auto& r = j.at("resolution");
      if (r.is_number_integer()) {
        c.height = c.width = r.get<int>();
      } else {
        auto hw = r.get<std::vector<int>>();
        if (hw.size() != 2) throw Error(ErrorCode::parse_error, "resolution must be N or [height, width]");
        c.height = hw[0];
        c.width = hw[1];
      }
    }
    if (j.contains("ablation")) {
      const auto& a = j.at("ablation");
      check_keys(a, {"use_text", "use_clicks"}, "ablation");
      read(a, "use_text", c.use_text);
      read(a, "use_clicks", c.use_clicks);
    }
    if (j.contains("normalize_range")) {
      auto r = j.at("normalize_range").get<std::string>();
      if (r == "zero_one") c.range = NormalizeRange::zero_one;
      else if (r == "minus_one_one") c.range = NormalizeRange::minus_one_one;
      else throw Error(ErrorCode::parse_error, "normalize_range must be minus_one_one or zero_one");
    }
    read(j, "distance_cap", c.distance_cap);
    read(j, "resample_clicks_per_epoch", c.resample_clicks_per_epoch);
    if (j.contains("interaction_mix"))
      for (const auto& m : j.at("interaction_mix")) c.interaction_mix.push_back(parse_interaction_spec(m.get<std::string>()));
    if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
    if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
    if (j.contains("out_dir")) c.out_dir = resolve(base_dir, j.at("out_dir").get<std::string>());
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("experiment config: ") + e.what());
  }
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::not_found, "cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse_error, path.string() + ": " + e.what());
  }
  return experiment_config_from_json(j, path.parent_path());
}

}  // namespace clickseg
