#include "clickseg/nn/train.hpp"

#include <cmath>
#include <fstream>

#include <sstream>

#include "clickseg/error.hpp"
#include "clickseg/log.hpp"

namespace clickseg {

using nlohmann::json;

double poly_lr(const TrainConfig& cfg, int iteration) {
  const double progress = std::min(1.0, static_cast<double>(iteration) / cfg.iterations);
  return (cfg.lr - cfg.min_lr) * std::pow(1.0 - progress, cfg.poly_power) + cfg.min_lr;
}

namespace {

void write_diagnostics(const std::filesystem::path& dir, int iteration, double loss,
                       const std::vector<TrainingExample>& examples, const ExampleBatch& batch) {
  json ids = json::array();
  for (const auto& ex : examples) ids.push_back(ex.instance_id);
  json channels = json::array();
  for (int c = 0; c < kInputChannels; ++c) {
    auto plane = batch.inputs.select(1, c);
    auto finite = torch::isfinite(plane);
    channels.push_back({{"channel", c},
                        {"min", plane.min().item<double>()},
                        {"max", plane.max().item<double>()},
                        {"mean", plane.mean().item<double>()},
                        {"non_finite", (~finite).sum().item<int64_t>()}});
  }
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "diagnostics.json")
      << json{{"iteration", iteration}, {"loss", std::isnan(loss) ? "nan" : "inf"}, {"instance_ids", ids},
              {"channel_stats", channels}}
             .dump(2)
      << '\n';
}

}  // namespace

TrainResult train_model(const ExperimentConfig& cfg, const Loader& loader, const ExampleBuilder& builder,
                        const TrainOptions& options) {
  cfg.validate();
  seed_everything(cfg.train.seed);
  TrainResult result;
  result.net = SegmentationNet(cfg.model);
  auto& net = result.net;
  net->train();

  std::unique_ptr<torch::optim::Optimizer> opt;
  if (cfg.train.optimizer == "adam") {
    opt = std::make_unique<torch::optim::Adam>(
        net->parameters(), torch::optim::AdamOptions(cfg.train.lr).weight_decay(cfg.train.weight_decay));
  } else {
    opt = std::make_unique<torch::optim::SGD>(net->parameters(), torch::optim::SGDOptions(cfg.train.lr)
                                                                     .momentum(cfg.train.momentum)
                                                                     .weight_decay(cfg.train.weight_decay));
  }
  auto set_lr = [&](double lr) {
    for (auto& group : opt->param_groups()) group.options().set_lr(lr);
  };

  std::ofstream loss_log;
  if (options.save) {
    std::filesystem::create_directories(cfg.out_dir);
    loss_log.open(cfg.out_dir / "loss.csv");
    loss_log << "iteration,loss,lr\n";
  }

  int epoch = 0;
  auto batches = loader.epoch(epoch);
  if (batches.empty())
    throw Error(ErrorCode::invalid_argument, "loader yields no batches: " + std::to_string(loader.items().size()) +
                                                 " items for batch size " + std::to_string(loader.config().batch_size));
  std::size_t cursor = 0;
  for (int it = 0; it < cfg.train.iterations; ++it) {
    if (cursor == batches.size()) {
      batches = loader.epoch(++epoch);
      cursor = 0;
    }
    const auto& items = batches[cursor++];
    auto examples = builder.build_batch(items, epoch);
    auto batch = to_batch(examples);

    const double lr = poly_lr(cfg.train, it);
    set_lr(lr);
    opt->zero_grad();
    auto loss = masked_cross_entropy(net->forward(batch.inputs), batch.target, batch.valid);
    const double value = loss.item<double>();
    if (!std::isfinite(value)) {
      write_diagnostics(cfg.out_dir, it, value, examples, batch);
      throw Error(ErrorCode::numerical, "non-finite loss at iteration " + std::to_string(it) + "; see " +
                                            (cfg.out_dir / "diagnostics.json").string());
    }
    loss.backward();
    opt->step();

    result.losses.push_back(value);
    if (loss_log.is_open()) loss_log << it << ',' << value << ',' << lr << '\n';
    if (options.on_step) options.on_step({it, value, lr});
    if ((it + 1) % cfg.train.log_every == 0) {
      std::ostringstream msg;
      msg << "iter " << it + 1 << "/" << cfg.train.iterations << " loss " << value << " lr " << lr;
      log::info(msg.str());
    }
    const bool last = it + 1 == cfg.train.iterations;
    if (options.save && !last && cfg.train.checkpoint_every > 0 && (it + 1) % cfg.train.checkpoint_every == 0) {
      net->eval();
      save_checkpoint(net, make_training_manifest(cfg, it + 1), cfg.out_dir / ("iter_" + std::to_string(it + 1)));
      net->train();
    }
  }
  net->eval();
  if (options.save) result.checkpoint = save_checkpoint(net, make_training_manifest(cfg, cfg.train.iterations), cfg.out_dir / "final");
  return result;
}

}  // namespace clickseg
