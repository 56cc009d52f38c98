#pragma once

#include <memory>
#include <mutex>
#include <optional>

#include "clickseg/eval.hpp"
#include "clickseg/nn/checkpoint.hpp"
#include "clickseg/saliency.hpp"

namespace clickseg {

struct Prediction {
  InstanceMask mask;
  /// Mean foreground probability over the predicted foreground; 0 when the
  /// prediction is empty.
  double confidence = 0.0;
};

/// Inference for one trained checkpoint. Forward passes are serialized; the
/// object is safe to share between threads.
class Predictor : public InstancePredictor {
 public:
  Predictor(LoadedModel model, std::shared_ptr<SaliencyBackend> backend, SaliencyOptions saliency_options = {});

  /// Computes saliency through the backend when the interaction has text and
  /// the model uses it, unless `saliency` is supplied.
  Prediction predict(const ImageSample& sample, const RgbImage& image, const InteractionSet& interactions,
                     const std::optional<SaliencyMap>& saliency = std::nullopt);

  Mask predict_mask(const ImageSample& sample, const RgbImage& image, const InteractionSet& interactions) override;

  /// Saliency this predictor would use, or nullopt when text is absent or
  /// the model was trained without it.
  std::optional<SaliencyMap> saliency_for(const ImageSample& sample, const RgbImage& image,
                                          const InteractionSet& interactions);

  const nlohmann::json& manifest() const noexcept { return model_.manifest; }
  const AssembleConfig& assemble_config() const noexcept { return model_.assemble; }
  const std::shared_ptr<SaliencyBackend>& backend() const noexcept { return backend_; }

 private:
  LoadedModel model_;
  std::shared_ptr<SaliencyBackend> backend_;
  SaliencyOptions saliency_options_;
  std::mutex forward_mutex_;
};

/// Grid-resolution foreground probabilities for assembled inputs.
FloatGrid forward_probability(SegmentationNet& net, const ExampleInputs& inputs);

/// Threshold at 0.5, crop the letterbox content and resize to native size.
Prediction finalize_prediction(const FloatGrid& probability, const ExampleInputs& inputs, const ImageSample& sample,
                               const std::string& instance_id);

}  // namespace clickseg
