#include "clickseg/nn/backends.hpp"

#include "clickseg/error.hpp"
#include "clickseg/experiment.hpp"
#include "clickseg/nn/clip.hpp"

namespace clickseg {

std::shared_ptr<CachedBackend> make_saliency_backend(const BackendConfig& cfg, const DatasetManifest* manifest) {
  std::shared_ptr<SaliencyBackend> inner =
      cfg.id == "maskclip" ? std::make_shared<MaskClipBackend>(cfg) : make_basic_backend(cfg, manifest);
  if (!inner) throw Error(ErrorCode::invalid_argument, "unknown saliency backend '" + cfg.id + "'");
  return std::make_shared<CachedBackend>(std::move(inner), std::make_shared<SaliencyCache>(cfg.cache_dir));
}

}  // namespace clickseg
