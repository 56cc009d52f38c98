#pragma once

#include <span>

#include <torch/torch.h>

#include "clickseg/config.hpp"
#include "clickseg/dataset.hpp"

namespace clickseg {

/// Sequential with a concrete forward, so stacks can nest.
class StackImpl : public torch::nn::SequentialImpl {
 public:
  using SequentialImpl::SequentialImpl;
  torch::Tensor forward(torch::Tensor x) { return SequentialImpl::forward(std::move(x)); }
};
TORCH_MODULE(Stack);

/// conv -> batch norm -> relu
Stack conv_bn_relu(int in, int out, int kernel, int stride = 1, int dilation = 1);

/// Depthwise 3x3 (dilated) then pointwise 1x1, each followed by BN + ReLU.
Stack separable_conv(int in, int out, int dilation = 1);

class ResidualBlockImpl : public torch::nn::Module {
 public:
  ResidualBlockImpl(int in, int width, int stride, int dilation, bool bottleneck);
  torch::Tensor forward(const torch::Tensor& x);
  int out_channels() const noexcept { return out_; }

 private:
  Stack body_{nullptr};
  Stack shortcut_{nullptr};
  int out_ = 0;
};
TORCH_MODULE(ResidualBlock);

class AsppImpl : public torch::nn::Module {
 public:
  AsppImpl(int in, int channels, const std::vector<int>& dilations);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  Stack image_pool_{nullptr};
  torch::nn::ModuleList branches_{nullptr};
  Stack project_{nullptr};
};
TORCH_MODULE(Aspp);

/// Five input channels (RGB, clickmap, saliency), two output classes, logits
/// at the input resolution.
class SegmentationNetImpl : public torch::nn::Module {
 public:
  explicit SegmentationNetImpl(const ModelConfig& cfg);

  /// x: N x 5 x H x W. Returns N x 2 x H x W logits.
  torch::Tensor forward(const torch::Tensor& x);
  const ModelConfig& config() const noexcept { return cfg_; }

 private:
  ModelConfig cfg_;
  Stack stem_{nullptr};
  Stack stage1_{nullptr}, stage2_{nullptr}, stage3_{nullptr}, stage4_{nullptr};
  Aspp aspp_{nullptr};
  Stack low_level_{nullptr};
  Stack decoder_{nullptr};
  torch::nn::Dropout dropout_{nullptr};
  torch::nn::Conv2d classifier_{nullptr};
};
TORCH_MODULE(SegmentationNet);

/// Throws shape_mismatch unless x is N x 5 x H x W.
void check_input_shape(const torch::Tensor& x);

/// softmax over the class axis, foreground plane: N x H x W.
torch::Tensor foreground_probability(const torch::Tensor& logits);

/// Mean per-pixel 2-class cross-entropy over pixels where `valid` is set.
/// target: N x H x W (int64), valid: N x H x W (bool).
torch::Tensor masked_cross_entropy(const torch::Tensor& logits, const torch::Tensor& target, const torch::Tensor& valid);

struct ExampleBatch {
  torch::Tensor inputs;  // N x 5 x H x W float
  torch::Tensor target;  // N x H x W int64
  torch::Tensor valid;   // N x H x W bool
};

ExampleBatch to_batch(std::span<const TrainingExample> examples);
torch::Tensor to_input_tensor(const ExampleInputs& inputs);

/// Tiny two-layer tanh conv net used to check gradients of the loss
/// plumbing independently of the full network.
class StandInNetImpl : public torch::nn::Module {
 public:
  StandInNetImpl();
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Conv2d conv1{nullptr};
  torch::nn::Conv2d conv2{nullptr};
};
TORCH_MODULE(StandInNet);

/// Seeds torch's generators and switches on deterministic kernels.
void seed_everything(std::uint64_t seed);

}  // namespace clickseg
