#include "clickseg/nn/model.hpp"

#include "clickseg/error.hpp"

namespace clickseg {

namespace F = torch::nn::functional;

Stack conv_bn_relu(int in, int out, int kernel, int stride, int dilation) {
  return Stack(
      torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, kernel)
                            .stride(stride)
                            .padding(dilation * (kernel / 2))
                            .dilation(dilation)
                            .bias(false)),
      torch::nn::BatchNorm2d(out), torch::nn::ReLU(true));
}

Stack separable_conv(int in, int out, int dilation) {
  return Stack(
      torch::nn::Conv2d(
          torch::nn::Conv2dOptions(in, in, 3).padding(dilation).dilation(dilation).groups(in).bias(false)),
      torch::nn::BatchNorm2d(in), torch::nn::ReLU(true),
      torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 1).bias(false)), torch::nn::BatchNorm2d(out),
      torch::nn::ReLU(true));
}

ResidualBlockImpl::ResidualBlockImpl(int in, int width, int stride, int dilation, bool bottleneck) {
  body_ = Stack();
  if (bottleneck) {
    out_ = width * 4;
    body_->push_back(conv_bn_relu(in, width, 1));
    body_->push_back(conv_bn_relu(width, width, 3, stride, dilation));
    body_->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(width, out_, 1).bias(false)));
  } else {
    out_ = width;
    body_->push_back(conv_bn_relu(in, width, 3, stride, dilation));
    body_->push_back(torch::nn::Conv2d(
        torch::nn::Conv2dOptions(width, width, 3).padding(dilation).dilation(dilation).bias(false)));
  }
  body_->push_back(torch::nn::BatchNorm2d(out_));
  register_module("body", body_);
  if (stride != 1 || in != out_) {
    shortcut_ = Stack(
        torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out_, 1).stride(stride).bias(false)),
        torch::nn::BatchNorm2d(out_));
    register_module("shortcut", shortcut_);
  }
}

torch::Tensor ResidualBlockImpl::forward(const torch::Tensor& x) {
  auto identity = shortcut_ ? shortcut_->forward(x) : x;
  return torch::relu(body_->forward(x) + identity);
}

AsppImpl::AsppImpl(int in, int channels, const std::vector<int>& dilations) {
  image_pool_ = register_module(
      "image_pool", Stack(torch::nn::AdaptiveAvgPool2d(1), conv_bn_relu(in, channels, 1)));
  branches_ = register_module("branches", torch::nn::ModuleList());
  for (int d : dilations) {
    if (d == 1) branches_->push_back(conv_bn_relu(in, channels, 1));
    else branches_->push_back(separable_conv(in, channels, d));
  }
  project_ = register_module(
      "project", conv_bn_relu(channels * static_cast<int>(dilations.size() + 1), channels, 3));
}

torch::Tensor AsppImpl::forward(const torch::Tensor& x) {
  const auto size = std::vector<int64_t>{x.size(2), x.size(3)};
  std::vector<torch::Tensor> outs;
  outs.push_back(F::interpolate(image_pool_->forward(x),
                                F::InterpolateFuncOptions().size(size).mode(torch::kBilinear).align_corners(false)));
  for (auto& b : *branches_) outs.push_back(b->as<StackImpl>()->forward(x));
  return project_->forward(torch::cat(outs, 1));
}

namespace {

Stack make_stage(int& in, int width, int blocks, int stride, int dilation, bool bottleneck) {
  Stack stage;
  for (int i = 0; i < blocks; ++i) {
    ResidualBlock block(in, width, i == 0 ? stride : 1, dilation, bottleneck);
    in = block->out_channels();
    stage->push_back(block);
  }
  return stage;
}

void init_weights(torch::nn::Module& m) {
  torch::NoGradGuard guard;
  for (auto& mod : m.modules(false)) {
    if (auto* conv = mod->as<torch::nn::Conv2d>()) {
      torch::nn::init::kaiming_normal_(conv->weight, 0.0, torch::kFanOut, torch::kReLU);
      if (conv->bias.defined()) conv->bias.zero_();
    } else if (auto* bn = mod->as<torch::nn::BatchNorm2d>()) {
      bn->weight.fill_(1.0);
      bn->bias.zero_();
    }
  }
}

}  // namespace

SegmentationNetImpl::SegmentationNetImpl(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const int half = cfg_.stem_width / 2;
  stem_ = register_module("stem", Stack(conv_bn_relu(cfg_.in_channels, half, 3, 2),
                                                         conv_bn_relu(half, half, 3), conv_bn_relu(half, cfg_.stem_width, 3),
                                                         torch::nn::MaxPool2d(torch::nn::MaxPool2dOptions(3).stride(2).padding(1))));
  const bool os8 = cfg_.output_stride == 8;
  int ch = cfg_.stem_width;
  stage1_ = register_module("stage1", make_stage(ch, cfg_.stage_widths[0], cfg_.stage_blocks[0], 1, 1, cfg_.bottleneck));
  const int low_level_in = ch;
  stage2_ = register_module("stage2", make_stage(ch, cfg_.stage_widths[1], cfg_.stage_blocks[1], 2, 1, cfg_.bottleneck));
  stage3_ = register_module("stage3", make_stage(ch, cfg_.stage_widths[2], cfg_.stage_blocks[2], os8 ? 1 : 2,
                                                 os8 ? 2 : 1, cfg_.bottleneck));
  stage4_ = register_module("stage4", make_stage(ch, cfg_.stage_widths[3], cfg_.stage_blocks[3], 1, os8 ? 4 : 2,
                                                 cfg_.bottleneck));
  aspp_ = register_module("aspp", Aspp(ch, cfg_.aspp_channels, cfg_.aspp_dilations));
  low_level_ = register_module("low_level", conv_bn_relu(low_level_in, cfg_.low_level_channels, 1));
  decoder_ = register_module("decoder",
                             Stack(separable_conv(cfg_.aspp_channels + cfg_.low_level_channels, cfg_.aspp_channels),
                                                   separable_conv(cfg_.aspp_channels, cfg_.aspp_channels)));
  dropout_ = register_module("dropout", torch::nn::Dropout(cfg_.dropout));
  classifier_ = register_module("classifier", torch::nn::Conv2d(torch::nn::Conv2dOptions(cfg_.aspp_channels, cfg_.out_classes, 1)));
  init_weights(*this);
  torch::NoGradGuard guard;
  torch::nn::init::normal_(classifier_->weight, 0.0, 0.01);
  classifier_->bias.zero_();
}

void check_input_shape(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != 5) {
    std::string shape;
    for (auto s : x.sizes()) shape += (shape.empty() ? "" : "x") + std::to_string(s);
    throw Error(ErrorCode::shape_mismatch, "network expects N x 5 x H x W input, got " + shape);
  }
}

torch::Tensor SegmentationNetImpl::forward(const torch::Tensor& x) {
  check_input_shape(x);
  const std::vector<int64_t> in_size{x.size(2), x.size(3)};
  auto low = stage1_->forward(stem_->forward(x));
  auto high = aspp_->forward(stage4_->forward(stage3_->forward(stage2_->forward(low))));
  auto skip = low_level_->forward(low);
  high = F::interpolate(high, F::InterpolateFuncOptions()
                                  .size(std::vector<int64_t>{skip.size(2), skip.size(3)})
                                  .mode(torch::kBilinear)
                                  .align_corners(false));
  auto logits = classifier_->forward(dropout_->forward(decoder_->forward(torch::cat({high, skip}, 1))));
  return F::interpolate(logits, F::InterpolateFuncOptions().size(in_size).mode(torch::kBilinear).align_corners(false));
}

torch::Tensor foreground_probability(const torch::Tensor& logits) { return torch::softmax(logits, 1).select(1, 1); }

torch::Tensor masked_cross_entropy(const torch::Tensor& logits, const torch::Tensor& target, const torch::Tensor& valid) {
  if (logits.dim() != 4 || target.dim() != 3 || valid.sizes() != target.sizes() || logits.size(0) != target.size(0) ||
      logits.size(2) != target.size(1) || logits.size(3) != target.size(2))
    throw Error(ErrorCode::shape_mismatch, "loss expects N x C x H x W logits with N x H x W target and valid mask");
  auto per_pixel = F::cross_entropy(logits, target, F::CrossEntropyFuncOptions().reduction(torch::kNone));
  auto w = valid.to(per_pixel.dtype());
  auto n = w.sum();
  if (n.item<double>() == 0) throw Error(ErrorCode::invalid_argument, "batch has no valid pixels");
  return (per_pixel * w).sum() / n;
}

torch::Tensor to_input_tensor(const ExampleInputs& inputs) {
  return torch::from_blob(const_cast<float*>(inputs.channels.data()), {1, kInputChannels, inputs.height, inputs.width},
                          torch::kFloat32)
      .clone();
}

ExampleBatch to_batch(std::span<const TrainingExample> examples) {
  if (examples.empty()) throw Error(ErrorCode::invalid_argument, "empty batch");
  const int h = examples[0].inputs.height, w = examples[0].inputs.width;
  const auto n = static_cast<int64_t>(examples.size());
  ExampleBatch b{torch::empty({n, kInputChannels, h, w}, torch::kFloat32), torch::empty({n, h, w}, torch::kInt64),
                 torch::empty({n, h, w}, torch::kBool)};
  auto* in = b.inputs.data_ptr<float>();
  auto* tg = b.target.data_ptr<int64_t>();
  auto* va = b.valid.data_ptr<bool>();
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& ex = examples[i];
    if (ex.inputs.height != h || ex.inputs.width != w)
      throw Error(ErrorCode::shape_mismatch, "batch mixes training resolutions");
    std::copy(ex.inputs.channels.begin(), ex.inputs.channels.end(), in + i * kInputChannels * plane);
    for (std::size_t p = 0; p < plane; ++p) {
      tg[i * plane + p] = ex.target.data()[p];
      va[i * plane + p] = ex.inputs.valid.data()[p] != 0;
    }
  }
  return b;
}

StandInNetImpl::StandInNetImpl() {
  conv1 = register_module("conv1", torch::nn::Conv2d(torch::nn::Conv2dOptions(5, 4, 3).padding(1)));
  conv2 = register_module("conv2", torch::nn::Conv2d(torch::nn::Conv2dOptions(4, 2, 3).padding(1)));
}

torch::Tensor StandInNetImpl::forward(const torch::Tensor& x) {
  check_input_shape(x);
  return conv2->forward(torch::tanh(conv1->forward(x)));
}

void seed_everything(std::uint64_t seed) {
  torch::manual_seed(seed);
  at::globalContext().setDeterministicAlgorithms(true, true);
}

}  // namespace clickseg
