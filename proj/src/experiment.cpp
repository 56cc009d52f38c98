#include "clickseg/experiment.hpp"

#include "clickseg/error.hpp"

namespace clickseg {

LoaderConfig loader_config_of(const ExperimentConfig& cfg, LoaderMode mode) {
  LoaderConfig lc;
  lc.batch_size = cfg.train.batch_size;
  lc.seed = cfg.train.seed;
  lc.shuffle = mode == LoaderMode::train;
  lc.drop_last = mode == LoaderMode::train;
  lc.samples_per_instance = cfg.clicks.samples_per_instance;
  return lc;
}

BuilderConfig builder_config_of(const ExperimentConfig& cfg) {
  BuilderConfig bc;
  bc.assemble.height = cfg.height;
  bc.assemble.width = cfg.width;
  bc.assemble.use_text = cfg.use_text;
  bc.assemble.use_clicks = cfg.use_clicks;
  bc.assemble.range = cfg.range;
  bc.assemble.distance_cap = cfg.distance_cap;
  bc.clicks = cfg.clicks;
  bc.interaction_mix = cfg.interaction_mix;
  bc.resample_clicks_per_epoch = cfg.resample_clicks_per_epoch;
  bc.saliency.softmax = cfg.backend.softmax;
  bc.workers = cfg.train.workers;
  return bc;
}

PreparedData prepare_data(const ExperimentConfig& cfg, const DatasetSource& source, LoaderMode mode) {
  IngestOptions io;
  io.dataset_name = cfg.dataset_name;
  auto ingested = ingest_coco(source.annotations, source.image_root, io);
  ClassSplit split = load_split(cfg.split);
  Loader loader = make_loader(ingested.manifest, split, mode, loader_config_of(cfg, mode));
  if (mode == LoaderMode::train) check_no_leakage(ingested.manifest, split, loader);

  InteractionTable table;
  if (source.interactions) {
    const auto records = read_interactions_jsonl(*source.interactions);
    table = interaction_table_from_records(records);
  } else {
    std::vector<std::size_t> instances;
    for (const auto& item : loader.items())
      if (instances.empty() || instances.back() != item.instance_index) instances.push_back(item.instance_index);
    table = synthesize_interaction_table(ingested.manifest, instances, cfg.clicks,
                                         mode == LoaderMode::train ? SynthesisMode::train : SynthesisMode::eval);
  }
  return PreparedData{std::move(ingested.manifest), std::move(ingested.report), std::move(split), std::move(loader),
                      std::move(table)};
}

std::shared_ptr<SaliencyBackend> make_basic_backend(const BackendConfig& cfg, const DatasetManifest* manifest) {
  if (cfg.id == "stub") return std::make_shared<StubBackend>();
  if (cfg.id == "annotation_stub") {
    if (!manifest) throw Error(ErrorCode::invalid_argument, "annotation_stub needs the dataset annotations");
    return std::make_shared<AnnotationStubBackend>(manifest->instances, cfg.sigma_scale);
  }
  if (cfg.id == "gradcam" || cfg.id == "transformer_explainability") return std::make_shared<PlaceholderBackend>(cfg.id);
  return nullptr;
}

}  // namespace clickseg
