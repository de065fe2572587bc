#pragma once

// Two-stage training, inference, evaluation and checkpoint files.

#include "mambareg/data_pipeline.hpp"
#include "mambareg/losses.hpp"
#include "mambareg/metrics.hpp"
#include "mambareg/model.hpp"

#include <json.hpp>

#include <functional>
#include <memory>

namespace mambareg::train {

using json = nlohmann::json;

struct TrainConfig {
  int64_t epochs = 200;
  double lr = 1e-4;
  double poly_power = 0.9;
  uint64_t seed = 3407;
  int64_t batch_size = 8;
  int64_t image_size = 64;
  loss::LossWeights weights;
  model::NetConfig net;

  void validate() const;
  /// Learning rate used during `epoch` (0-based): lr * (1 - epoch/epochs)^poly_power.
  double lr_at(int64_t epoch) const;
};

json to_json(const TrainConfig& c);
TrainConfig config_from_json(const json& j);  // missing keys keep defaults; unknown keys are rejected
uint64_t fnv1a(std::string_view bytes, uint64_t h = 0xcbf29ce484222325ull);
std::string hex_digest(uint64_t v);
std::string config_digest(const TrainConfig& c);

/// FNV-1a over parameter names, shapes and raw bytes, in registration order.
std::string parameter_digest(const torch::nn::Module& m);

struct EpochStats {
  int64_t epoch = 0;  // 1-based in logs
  double loss = 0, sim = 0, smooth = 0, guidance = 0, recon = 0, lr = 0;
};

/// "epoch=<e> loss=<v> sim=<v> smooth=<v> guid=<v> recon=<v> lr=<v>"
std::string format_stats(const EpochStats& s);
/// Parses lines produced by format_stats (other lines are skipped).
std::vector<EpochStats> parse_stats(std::istream& in);

/// Training inputs for stage 2. Deliberately has no label fields.
struct TrainPairs {
  torch::Tensor moving, fixed;            // [N, C, H, W]
  torch::Tensor moving_mask, fixed_mask;  // [N, 1, H, W] float, may be undefined when masks are off

  int64_t size() const { return moving.size(0); }
};
TrainPairs training_view(const data::PairBatch& b);

using EpochCallback = std::function<void(const EpochStats&)>;

struct AGNetRun {
  model::AGNet net{nullptr};
  std::shared_ptr<torch::optim::Adam> optimizer;
  std::vector<EpochStats> history;
};

/// Stage 1 on pixel-aligned pairs. Only the `loss` field of EpochStats is meaningful.
AGNetRun pretrain_agnet(const TrainPairs& aligned, const TrainConfig& cfg, const EpochCallback& on_epoch = {});

/// AG-Net disentangled MI images for every pair, computed without gradient.
std::pair<torch::Tensor, torch::Tensor> guidance_targets(model::AGNet& agnet, const TrainPairs& pairs,
                                                         int64_t batch_size);

struct MambaRegRun {
  model::MambaRegNet net{nullptr};
  std::shared_ptr<torch::optim::Adam> optimizer;
  std::vector<EpochStats> history;
};

/// Stage 2. agnet is frozen (requires_grad off) for the duration and afterwards.
MambaRegRun train_mambareg(const TrainPairs& pairs, model::AGNet& agnet, const TrainConfig& cfg,
                           const EpochCallback& on_epoch = {});

/// Loss components of one stage-2 forward pass; exposed for tests.
loss::LossComponents stage2_components(model::MambaRegNet& net, const TrainPairs& batch, const torch::Tensor& target_x,
                                       const torch::Tensor& target_y, bool roi_mask);

struct Registration {
  torch::Tensor phi, warped;
};
Registration infer_register(model::MambaRegNet& net, const torch::Tensor& i_x, const torch::Tensor& i_y);

/// Per-pair reports: warped moving vs fixed, nearest-warped moving labels vs fixed labels.
std::vector<metrics::MetricReport> evaluate(model::MambaRegNet& net, const data::PairBatch& pairs, int64_t batch_size,
                                            metrics::DiceConvention convention = metrics::DiceConvention::Standard);
/// Same reports with phi = 0.
std::vector<metrics::MetricReport> evaluate_identity(const data::PairBatch& pairs,
                                                     metrics::DiceConvention convention = metrics::DiceConvention::Standard);

// ---- checkpoints -----------------------------------------------------------

inline constexpr int64_t kCheckpointVersion = 1;

struct CheckpointMeta {
  int64_t version = kCheckpointVersion;
  std::string kind;  // "agnet" or "mambareg"
  TrainConfig config;
  std::string config_digest;
  int64_t epoch = 0;
  json metrics = json::object();
};

void save_checkpoint(const std::filesystem::path& path, torch::nn::Module& net, const CheckpointMeta& meta,
                     torch::optim::Optimizer* optimizer = nullptr);
CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path);
/// Loads parameters (and optimizer state when given) into an already-constructed module.
void load_parameters(const std::filesystem::path& path, torch::nn::Module& net, torch::optim::Optimizer* optimizer = nullptr);

model::AGNet load_agnet(const std::filesystem::path& path);
model::MambaRegNet load_mambareg(const std::filesystem::path& path);

}  // namespace mambareg::train
