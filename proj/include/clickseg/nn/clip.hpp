#pragma once

#include <filesystem>
#include <mutex>
#include <string>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "clickseg/clip_tokenizer.hpp"
#include "clickseg/config.hpp"
#include "clickseg/dataset.hpp"
#include "clickseg/saliency.hpp"

namespace clickseg {

struct ClipConfig {
  int embed_dim = 512;
  int image_size = 224;
  int patch_size = 16;
  int vision_width = 768;
  int vision_layers = 12;
  int vision_heads = 12;
  int context_length = 77;
  int vocab_size = 49408;
  int text_width = 512;
  int text_heads = 8;
  int text_layers = 12;
  bool quick_gelu = true;
  std::array<float, 3> mean{0.48145466f, 0.4578275f, 0.40821073f};
  std::array<float, 3> std{0.26862954f, 0.26130258f, 0.27577711f};

  int grid() const noexcept { return image_size / patch_size; }
};

ClipConfig clip_config_from_json(const nlohmann::json& j);

class ClipAttentionImpl : public torch::nn::Module {
 public:
  ClipAttentionImpl(int width, int heads);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& mask = {});
  /// out_proj(W_v x + b_v): the value path alone, no query/key mixing.
  torch::Tensor value_path(const torch::Tensor& x);

  torch::Tensor in_proj_weight, in_proj_bias;
  torch::nn::Linear out_proj{nullptr};

 private:
  int heads_;
};
TORCH_MODULE(ClipAttention);

class ClipMlpImpl : public torch::nn::Module {
 public:
  ClipMlpImpl(int width, bool quick_gelu);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Linear c_fc{nullptr}, c_proj{nullptr};

 private:
  bool quick_gelu_;
};
TORCH_MODULE(ClipMlp);

class ClipBlockImpl : public torch::nn::Module {
 public:
  ClipBlockImpl(int width, int heads, bool quick_gelu);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& mask = {});
  /// Block output with attention replaced by its value path.
  torch::Tensor forward_value_path(const torch::Tensor& x);

  torch::nn::LayerNorm ln_1{nullptr}, ln_2{nullptr};
  ClipAttention attn{nullptr};
  ClipMlp mlp{nullptr};
};
TORCH_MODULE(ClipBlock);

class ClipTransformerImpl : public torch::nn::Module {
 public:
  ClipTransformerImpl(int width, int layers, int heads, bool quick_gelu);
  torch::nn::ModuleList resblocks{nullptr};
  ClipBlockImpl& block(std::size_t i) { return *resblocks[i]->as<ClipBlockImpl>(); }
};
TORCH_MODULE(ClipTransformer);

class ClipVisualImpl : public torch::nn::Module {
 public:
  explicit ClipVisualImpl(const ClipConfig& cfg);
  /// Tokens after ln_pre: [N, 1 + grid^2, width].
  torch::Tensor embed(const torch::Tensor& images);

  torch::Tensor class_embedding, positional_embedding, proj;
  torch::nn::Conv2d conv1{nullptr};
  torch::nn::LayerNorm ln_pre{nullptr}, ln_post{nullptr};
  ClipTransformer transformer{nullptr};
};
TORCH_MODULE(ClipVisual);

/// CLIP ViT image and text towers with open_clip parameter names.
class ClipModelImpl : public torch::nn::Module {
 public:
  explicit ClipModelImpl(ClipConfig cfg);

  /// [N, context] token ids -> [N, embed_dim], not normalized.
  torch::Tensor encode_text(const torch::Tensor& tokens);
  /// [N, 3, S, S] normalized pixels -> [N, embed_dim] pooled (class token).
  torch::Tensor encode_image(const torch::Tensor& images);
  /// Dense per-patch embeddings [N, embed_dim, g, g] read out through the
  /// value path of the last visual block instead of its attention.
  torch::Tensor dense_features(const torch::Tensor& images);

  /// Copies tensors from an exported state dict; every parameter must be
  /// present with the right shape.
  void load_exported(const std::filesystem::path& weights);

  const ClipConfig& config() const noexcept { return cfg_; }

  ClipVisual visual{nullptr};
  ClipTransformer transformer{nullptr};
  torch::nn::Embedding token_embedding{nullptr};
  torch::Tensor positional_embedding, text_projection;
  torch::nn::LayerNorm ln_final{nullptr};

 private:
  ClipConfig cfg_;
  torch::Tensor causal_mask_;
};
TORCH_MODULE(ClipModel);

/// Weights location for a backbone variant, resolved from the registry file.
struct ClipWeights {
  std::filesystem::path weights;
  std::filesystem::path architecture;
  std::optional<std::string> sha256;
  std::string export_command;
};

ClipWeights resolve_clip_weights(const std::filesystem::path& registry, const std::string& variant);

/// Text saliency from a frozen CLIP: cosine similarity between the phrase
/// embedding and each patch embedding, on the letterboxed image, mapped back
/// to the image frame.
class MaskClipBackend final : public SaliencyBackend {
 public:
  /// Throws unavailable, with the export command, when the weights are missing.
  explicit MaskClipBackend(const BackendConfig& cfg);
  MaskClipBackend(ClipModel model, std::shared_ptr<const ClipTokenizer> tokenizer, std::string prompt_template,
                  std::string variant);

  std::string id() const override { return "maskclip"; }
  BackendCapabilities capabilities() const override { return {true, true, false}; }
  SaliencyMap compute(const ImageSample& sample, const RgbImage& image, std::string_view text) override;

  /// Unit-norm embedding of the templated phrase.
  torch::Tensor embed_text(std::string_view phrase);
  /// Letterboxed, normalized [1, 3, S, S] input.
  torch::Tensor preprocess(const RgbImage& image, Letterbox& letterbox) const;
  const std::string& variant() const noexcept { return variant_; }

 private:
  ClipModel model_;
  std::shared_ptr<const ClipTokenizer> tokenizer_;
  std::string template_;
  std::string variant_;
  std::mutex mutex_;
};

}  // namespace clickseg
