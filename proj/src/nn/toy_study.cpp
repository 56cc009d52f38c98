#include "clickseg/nn/toy_study.hpp"

#include "clickseg/eval.hpp"
#include "clickseg/experiment.hpp"
#include "clickseg/nn/backends.hpp"
#include "clickseg/nn/predict.hpp"
#include "clickseg/nn/train.hpp"
#include "clickseg/toy.hpp"

namespace clickseg {

namespace {

using Generator = ToyDataset (*)(const std::filesystem::path&, const ToyOptions&);

ExperimentConfig study_config(Generator make, const std::filesystem::path& work, std::uint64_t seed,
                              const ToyStudyOptions& options) {
  auto train = make(work / "train_data",
                    {.images = options.train_images, .size = 64, .seed = seed, .distractors = options.distractors});
  auto eval = make(work / "eval_data", {.images = options.eval_images,
                                        .size = 64,
                                        .seed = derive_seed(seed, 0xe7a1),
                                        .distractors = options.distractors});
  auto cfg = toy_experiment_config(train, work);
  cfg.eval_data = {eval.annotations, eval.image_root, std::nullopt};
  cfg.train.iterations = options.iterations;
  cfg.train.seed = seed;
  cfg.clicks.rng_seed = seed;
  return cfg;
}

LoadedModel train_variant(ExperimentConfig cfg, const std::string& name) {
  cfg.name = name;
  cfg.out_dir = cfg.out_dir / name;
  auto data = prepare_data(cfg, cfg.train_data, LoaderMode::train);
  auto backend = make_saliency_backend(cfg.backend, &data.manifest);
  ExampleBuilder builder(data.manifest, data.split, builder_config_of(cfg), backend, data.interactions);
  auto result = train_model(cfg, data.loader, builder);
  return load_checkpoint(result.checkpoint->weights);
}

std::vector<EvalReport> evaluate_specs(const ExperimentConfig& cfg, LoadedModel model,
                                       const std::vector<InteractionSpec>& specs) {
  IngestOptions io;
  io.dataset_name = cfg.dataset_name;
  auto eval = ingest_coco(cfg.eval_data.annotations, cfg.eval_data.image_root, io);
  auto split = load_split(cfg.split);
  Predictor predictor(std::move(model), make_saliency_backend(cfg.backend, &eval.manifest));
  EvalOptions options;
  options.clicks = cfg.clicks;
  return interaction_sweep(predictor, eval.manifest, split, specs, options);
}

}  // namespace

TextAblationOutcome run_text_ablation_study(const std::filesystem::path& work, std::uint64_t seed,
                                            const ToyStudyOptions& options) {
  auto cfg = study_config(make_two_shape_toy, work, seed, options);
  const std::vector<InteractionSpec> spec{{.text = true, .pclicks = 1, .nclicks = 0}};
  TextAblationOutcome out{.seed = seed};
  out.unseen_miou_text = evaluate_specs(cfg, train_variant(cfg, "text"), spec).at(0).aggregates.unseen_miou;
  cfg.use_text = false;
  out.unseen_miou_zeroed = evaluate_specs(cfg, train_variant(cfg, "zeroed"), spec).at(0).aggregates.unseen_miou;
  return out;
}

SweepOutcome run_interaction_sweep_study(const std::filesystem::path& work, std::uint64_t seed,
                                         const std::vector<InteractionSpec>& specs, const ToyStudyOptions& options) {
  auto cfg = study_config(make_tile_toy, work, seed, options);
  cfg.interaction_mix = options.train_mix.empty() ? specs : options.train_mix;
  SweepOutcome out{.seed = seed, .specs = specs, .overall_miou = {}, .seen_miou = {}, .unseen_miou = {}};
  for (const auto& report : evaluate_specs(cfg, train_variant(cfg, "mixed"), specs)) {
    out.overall_miou.push_back(report.aggregates.overall_miou);
    out.seen_miou.push_back(report.aggregates.seen_miou);
    out.unseen_miou.push_back(report.aggregates.unseen_miou);
  }
  return out;
}

}  // namespace clickseg
