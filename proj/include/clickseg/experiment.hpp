#pragma once

#include <memory>

#include "clickseg/config.hpp"
#include "clickseg/dataset.hpp"
#include "clickseg/saliency.hpp"

namespace clickseg {

/// A dataset ingested for one run, with its split and per-instance clicks.
struct PreparedData {
  DatasetManifest manifest;
  ValidationReport report;
  ClassSplit split;
  Loader loader;
  InteractionTable interactions;
};

/// Ingests `source`, builds the train or eval loader and loads or
/// synthesizes interactions for the loader's instances.
PreparedData prepare_data(const ExperimentConfig& cfg, const DatasetSource& source, LoaderMode mode);

BuilderConfig builder_config_of(const ExperimentConfig& cfg);
LoaderConfig loader_config_of(const ExperimentConfig& cfg, LoaderMode mode);

/// Backends that need no network weights: stub, annotation_stub and the
/// unimplemented placeholders. Returns nullptr for other ids.
std::shared_ptr<SaliencyBackend> make_basic_backend(const BackendConfig& cfg, const DatasetManifest* manifest);

}  // namespace clickseg
