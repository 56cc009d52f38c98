#include "clickseg/nn/clip.hpp"

#include <fstream>

#include "clickseg/dataset.hpp"
#include "clickseg/error.hpp"
#include "clickseg/hash.hpp"
#include "clickseg/image.hpp"
#include "clickseg/log.hpp"

namespace clickseg {

namespace F = torch::nn::functional;
using nlohmann::json;

ClipConfig clip_config_from_json(const json& j) {
  ClipConfig c;
  c.embed_dim = j.at("embed_dim");
  c.image_size = j.at("image_size");
  c.patch_size = j.at("patch_size");
  c.vision_width = j.at("vision_width");
  c.vision_layers = j.at("vision_layers");
  c.vision_heads = j.at("vision_heads");
  c.context_length = j.at("context_length");
  c.vocab_size = j.at("vocab_size");
  c.text_width = j.at("text_width");
  c.text_heads = j.at("text_heads");
  c.text_layers = j.at("text_layers");
  c.quick_gelu = j.value("quick_gelu", true);
  if (j.contains("mean")) c.mean = j.at("mean").get<std::array<float, 3>>();
  if (j.contains("std")) c.std = j.at("std").get<std::array<float, 3>>();
  if (c.image_size % c.patch_size != 0) throw Error(ErrorCode::invalid_argument, "image_size must be a multiple of patch_size");
  return c;
}

ClipAttentionImpl::ClipAttentionImpl(int width, int heads) : heads_(heads) {
  in_proj_weight = register_parameter("in_proj_weight", torch::empty({3 * width, width}));
  in_proj_bias = register_parameter("in_proj_bias", torch::zeros({3 * width}));
  out_proj = register_module("out_proj", torch::nn::Linear(width, width));
  torch::nn::init::xavier_uniform_(in_proj_weight);
}

torch::Tensor ClipAttentionImpl::forward(const torch::Tensor& x, const torch::Tensor& mask) {
  const auto n = x.size(0), l = x.size(1), w = x.size(2);
  const auto d = w / heads_;
  auto qkv = F::linear(x, in_proj_weight, in_proj_bias).chunk(3, -1);
  auto split = [&](const torch::Tensor& t) { return t.reshape({n, l, heads_, d}).transpose(1, 2); };
  auto q = split(qkv[0]), k = split(qkv[1]), v = split(qkv[2]);
  auto scores = torch::matmul(q, k.transpose(-2, -1)) / std::sqrt(static_cast<double>(d));
  if (mask.defined()) scores = scores + mask;
  auto out = torch::matmul(scores.softmax(-1), v).transpose(1, 2).reshape({n, l, w});
  return out_proj(out);
}

torch::Tensor ClipAttentionImpl::value_path(const torch::Tensor& x) {
  const auto w = x.size(2);
  return out_proj(F::linear(x, in_proj_weight.slice(0, 2 * w), in_proj_bias.slice(0, 2 * w)));
}

ClipMlpImpl::ClipMlpImpl(int width, bool quick_gelu) : quick_gelu_(quick_gelu) {
  c_fc = register_module("c_fc", torch::nn::Linear(width, 4 * width));
  c_proj = register_module("c_proj", torch::nn::Linear(4 * width, width));
}

torch::Tensor ClipMlpImpl::forward(const torch::Tensor& x) {
  auto h = c_fc(x);
  h = quick_gelu_ ? h * torch::sigmoid(1.702 * h) : torch::gelu(h);
  return c_proj(h);
}

ClipBlockImpl::ClipBlockImpl(int width, int heads, bool quick_gelu) {
  ln_1 = register_module("ln_1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({width})));
  attn = register_module("attn", ClipAttention(width, heads));
  ln_2 = register_module("ln_2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({width})));
  mlp = register_module("mlp", ClipMlp(width, quick_gelu));
}

torch::Tensor ClipBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& mask) {
  auto h = x + attn(ln_1(x), mask);
  return h + mlp(ln_2(h));
}

torch::Tensor ClipBlockImpl::forward_value_path(const torch::Tensor& x) {
  auto h = x + attn->value_path(ln_1(x));
  return h + mlp(ln_2(h));
}

ClipTransformerImpl::ClipTransformerImpl(int width, int layers, int heads, bool quick_gelu) {
  resblocks = register_module("resblocks", torch::nn::ModuleList());
  for (int i = 0; i < layers; ++i) resblocks->push_back(ClipBlock(width, heads, quick_gelu));
}

ClipVisualImpl::ClipVisualImpl(const ClipConfig& cfg) {
  const int w = cfg.vision_width, g = cfg.grid();
  class_embedding = register_parameter("class_embedding", torch::randn({w}) * 0.02);
  positional_embedding = register_parameter("positional_embedding", torch::randn({g * g + 1, w}) * 0.01);
  proj = register_parameter("proj", torch::randn({w, cfg.embed_dim}) * 0.02);
  conv1 = register_module(
      "conv1", torch::nn::Conv2d(torch::nn::Conv2dOptions(3, w, cfg.patch_size).stride(cfg.patch_size).bias(false)));
  ln_pre = register_module("ln_pre", torch::nn::LayerNorm(torch::nn::LayerNormOptions({w})));
  transformer = register_module("transformer", ClipTransformer(w, cfg.vision_layers, cfg.vision_heads, cfg.quick_gelu));
  ln_post = register_module("ln_post", torch::nn::LayerNorm(torch::nn::LayerNormOptions({w})));
}

torch::Tensor ClipVisualImpl::embed(const torch::Tensor& images) {
  auto x = conv1(images);
  x = x.flatten(2).transpose(1, 2);
  auto cls = class_embedding.expand({x.size(0), 1, x.size(2)});
  x = torch::cat({cls, x}, 1) + positional_embedding;
  return ln_pre(x);
}

ClipModelImpl::ClipModelImpl(ClipConfig cfg) : cfg_(std::move(cfg)) {
  visual = register_module("visual", ClipVisual(cfg_));
  transformer = register_module("transformer",
                                ClipTransformer(cfg_.text_width, cfg_.text_layers, cfg_.text_heads, cfg_.quick_gelu));
  token_embedding = register_module("token_embedding", torch::nn::Embedding(cfg_.vocab_size, cfg_.text_width));
  positional_embedding = register_parameter("positional_embedding", torch::randn({cfg_.context_length, cfg_.text_width}) * 0.01);
  text_projection = register_parameter("text_projection", torch::randn({cfg_.text_width, cfg_.embed_dim}) * 0.02);
  ln_final = register_module("ln_final", torch::nn::LayerNorm(torch::nn::LayerNormOptions({cfg_.text_width})));
  causal_mask_ = torch::full({cfg_.context_length, cfg_.context_length}, -std::numeric_limits<float>::infinity()).triu(1);
}

torch::Tensor ClipModelImpl::encode_text(const torch::Tensor& tokens) {
  if (tokens.dim() != 2 || tokens.size(1) != cfg_.context_length)
    throw Error(ErrorCode::shape_mismatch, "text tokens must be [N, " + std::to_string(cfg_.context_length) + "]");
  auto x = token_embedding(tokens) + positional_embedding;
  for (std::size_t i = 0; i < transformer->resblocks->size(); ++i) x = transformer->block(i).forward(x, causal_mask_);
  x = ln_final(x);
  // The end-of-text token has the largest id; pool there.
  auto eot = tokens.argmax(-1);
  auto pooled = x.index({torch::arange(x.size(0)), eot});
  return pooled.matmul(text_projection);
}

torch::Tensor ClipModelImpl::encode_image(const torch::Tensor& images) {
  auto x = visual->embed(images);
  for (std::size_t i = 0; i < visual->transformer->resblocks->size(); ++i) x = visual->transformer->block(i).forward(x);
  return visual->ln_post(x.select(1, 0)).matmul(visual->proj);
}

torch::Tensor ClipModelImpl::dense_features(const torch::Tensor& images) {
  const int s = cfg_.image_size;
  if (images.dim() != 4 || images.size(1) != 3 || images.size(2) != s || images.size(3) != s)
    throw Error(ErrorCode::shape_mismatch, "CLIP images must be [N, 3, " + std::to_string(s) + ", " + std::to_string(s) + "]");
  auto x = visual->embed(images);
  const auto last = visual->transformer->resblocks->size() - 1;
  for (std::size_t i = 0; i < last; ++i) x = visual->transformer->block(i).forward(x);
  x = visual->transformer->block(last).forward_value_path(x);
  auto feats = visual->ln_post(x.slice(1, 1)).matmul(visual->proj);
  const int g = cfg_.grid();
  return feats.transpose(1, 2).reshape({feats.size(0), cfg_.embed_dim, g, g});
}

void ClipModelImpl::load_exported(const std::filesystem::path& weights) {
  std::ifstream in(weights, std::ios::binary);
  if (!in) throw Error(ErrorCode::not_found, "cannot open CLIP weights " + weights.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), {});
  auto dict = torch::pickle_load(bytes).toGenericDict();
  std::map<std::string, torch::Tensor> tensors;
  for (const auto& kv : dict) tensors.emplace(kv.key().toStringRef(), kv.value().toTensor());
  torch::NoGradGuard guard;
  for (auto& p : named_parameters()) {
    auto it = tensors.find(p.key());
    if (it == tensors.end()) throw Error(ErrorCode::parse_error, "CLIP weights lack " + p.key());
    if (it->second.sizes() != p.value().sizes())
      throw Error(ErrorCode::shape_mismatch, "CLIP weight " + p.key() + " has the wrong shape");
    p.value().copy_(it->second);
  }
}

ClipWeights resolve_clip_weights(const std::filesystem::path& registry, const std::string& variant) {
  std::ifstream in(registry);
  if (!in) throw Error(ErrorCode::not_found, "cannot open backend registry " + registry.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse_error, "backend registry " + registry.string() + ": " + e.what());
  }
  const auto& entries = j.at("maskclip");
  if (!entries.contains(variant))
    throw Error(ErrorCode::not_found, "no maskclip variant '" + variant + "' in " + registry.string());
  const auto& e = entries.at(variant);
  const auto base = registry.parent_path();
  ClipWeights w;
  w.weights = base / e.at("weights").get<std::string>();
  w.architecture = base / e.at("architecture").get<std::string>();
  if (e.contains("sha256") && e.at("sha256").is_string()) w.sha256 = e.at("sha256").get<std::string>();
  w.export_command = e.value("export", "");
  return w;
}

MaskClipBackend::MaskClipBackend(const BackendConfig& cfg)
    : model_(nullptr), template_(cfg.prompt_template), variant_(cfg.variant) {
  const auto w = resolve_clip_weights(cfg.registry, cfg.variant);
  if (!std::filesystem::exists(w.weights) || !std::filesystem::exists(w.architecture))
    throw Error(ErrorCode::unavailable, "maskclip weights for " + cfg.variant + " not found at " + w.weights.string() +
                                            ". Export them with: " + w.export_command);
  if (w.sha256) {
    const auto actual = sha256_file(w.weights);
    if (actual != *w.sha256)
      throw Error(ErrorCode::io_error, "maskclip weights " + w.weights.string() + " have sha256 " + actual +
                                           ", registry expects " + *w.sha256);
  } else {
    log::warn("maskclip weights " + w.weights.string() + " have no registry hash; not verified");
  }
  std::ifstream arch(w.architecture);
  model_ = ClipModel(clip_config_from_json(json::parse(arch)));
  model_->load_exported(w.weights);
  model_->eval();
  tokenizer_ = std::make_shared<const ClipTokenizer>(default_bpe_path(cfg.registry.parent_path()));
}

MaskClipBackend::MaskClipBackend(ClipModel model, std::shared_ptr<const ClipTokenizer> tokenizer,
                                 std::string prompt_template, std::string variant)
    : model_(std::move(model)),
      tokenizer_(std::move(tokenizer)),
      template_(std::move(prompt_template)),
      variant_(std::move(variant)) {
  model_->eval();
}

torch::Tensor MaskClipBackend::embed_text(std::string_view phrase) {
  if (phrase.empty()) throw Error(ErrorCode::invalid_argument, "empty text phrase");
  std::string prompt = template_;
  if (auto at = prompt.find("{}"); at != std::string::npos) prompt.replace(at, 2, phrase);
  else prompt = std::string(phrase);
  const auto ids = tokenizer_->tokenize(prompt, model_->config().context_length);
  auto tokens = torch::tensor(ids, torch::kLong).unsqueeze(0);
  std::lock_guard lock(mutex_);
  torch::NoGradGuard guard;
  auto e = model_->encode_text(tokens).squeeze(0);
  return e / e.norm();
}

torch::Tensor MaskClipBackend::preprocess(const RgbImage& image, Letterbox& letterbox) const {
  const auto& c = model_->config();
  letterbox = make_letterbox(image.height, image.width, c.image_size, c.image_size);
  RgbImage content = resize_rgb(image, letterbox.content_width, letterbox.content_height);
  auto x = torch::zeros({1, 3, c.image_size, c.image_size});
  auto a = x.accessor<float, 4>();
  for (int y = 0; y < content.height; ++y)
    for (int xx = 0; xx < content.width; ++xx)
      for (int ch = 0; ch < 3; ++ch)
        a[0][ch][y][xx] = (content.at(y, xx, ch) / 255.0f - c.mean[static_cast<std::size_t>(ch)]) / c.std[static_cast<std::size_t>(ch)];
  return x;
}

SaliencyMap MaskClipBackend::compute(const ImageSample& sample, const RgbImage& image, std::string_view text) {
  auto phrase = embed_text(text);
  Letterbox lb;
  auto input = preprocess(image, lb);
  torch::Tensor sim;
  {
    std::lock_guard lock(mutex_);
    torch::NoGradGuard guard;
    auto feats = model_->dense_features(input);
    feats = feats / feats.norm(2, 1, true).clamp_min(1e-12);
    sim = (feats * phrase.view({1, -1, 1, 1})).sum(1, true);
  }
  const int s = model_->config().image_size;
  auto up = F::interpolate(sim, F::InterpolateFuncOptions().size(std::vector<int64_t>{s, s}).mode(torch::kBilinear).align_corners(false));
  up = up.slice(2, 0, lb.content_height).slice(3, 0, lb.content_width);
  up = F::interpolate(up, F::InterpolateFuncOptions()
                              .size(std::vector<int64_t>{sample.height, sample.width})
                              .mode(torch::kBilinear)
                              .align_corners(false));
  up = up.squeeze().contiguous();
  FloatGrid values(sample.height, sample.width);
  std::copy_n(up.data_ptr<float>(), values.size(), values.data());
  return {std::move(values), std::string(text), id()};
}

}  // namespace clickseg
