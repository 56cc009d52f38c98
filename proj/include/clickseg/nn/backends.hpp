#pragma once

#include <memory>

#include "clickseg/config.hpp"
#include "clickseg/dataset.hpp"
#include "clickseg/saliency.hpp"

namespace clickseg {

/// The configured saliency backend behind a SaliencyCache (on disk when
/// cfg.cache_dir is set). `manifest` is required by annotation_stub only.
std::shared_ptr<CachedBackend> make_saliency_backend(const BackendConfig& cfg, const DatasetManifest* manifest);

}  // namespace clickseg
