#include "clickseg/nn/predict.hpp"

#include "clickseg/error.hpp"

namespace clickseg {

Predictor::Predictor(LoadedModel model, std::shared_ptr<SaliencyBackend> backend, SaliencyOptions saliency_options)
    : model_(std::move(model)), backend_(std::move(backend)), saliency_options_(saliency_options) {
  model_.net->eval();
}

std::optional<SaliencyMap> Predictor::saliency_for(const ImageSample& sample, const RgbImage& image,
                                                   const InteractionSet& interactions) {
  if (!model_.assemble.use_text || !interactions.has_text()) return std::nullopt;
  if (!backend_) throw Error(ErrorCode::unavailable, "model expects text saliency but no backend is configured");
  return compute_saliency(*backend_, sample, image, *interactions.text, saliency_options_);
}

FloatGrid forward_probability(SegmentationNet& net, const ExampleInputs& inputs) {
  torch::NoGradGuard guard;
  auto p = foreground_probability(net->forward(to_input_tensor(inputs))).squeeze(0).contiguous();
  FloatGrid out(inputs.height, inputs.width, 0.0f);
  std::copy_n(p.data_ptr<float>(), out.size(), out.data());
  return out;
}

Prediction finalize_prediction(const FloatGrid& probability, const ExampleInputs& inputs, const ImageSample& sample,
                               const std::string& instance_id) {
  Mask grid(inputs.height, inputs.width, 0);
  double sum = 0;
  std::size_t n = 0;
  for (int y = 0; y < inputs.height; ++y)
    for (int x = 0; x < inputs.width; ++x)
      if (inputs.valid(y, x) && probability(y, x) > 0.5f) {
        grid(y, x) = 1;
        sum += probability(y, x);
        ++n;
      }
  Prediction out;
  out.mask = InstanceMask(sample.image_id, instance_id, "", unletterbox_mask(grid, inputs.letterbox));
  out.confidence = n ? sum / static_cast<double>(n) : 0.0;
  return out;
}

Prediction Predictor::predict(const ImageSample& sample, const RgbImage& image, const InteractionSet& interactions,
                              const std::optional<SaliencyMap>& saliency) {
  interactions.validate(image.height, image.width);
  std::optional<SaliencyMap> sal = saliency;
  if (!sal) sal = saliency_for(sample, image, interactions);
  auto inputs = assemble_inputs(image, interactions, sal, model_.assemble);
  FloatGrid prob;
  {
    std::lock_guard lock(forward_mutex_);
    prob = forward_probability(model_.net, inputs);
  }
  return finalize_prediction(prob, inputs, sample, interactions.instance_id);
}

Mask Predictor::predict_mask(const ImageSample& sample, const RgbImage& image, const InteractionSet& interactions) {
  return predict(sample, image, interactions).mask.decode();
}

}  // namespace clickseg
