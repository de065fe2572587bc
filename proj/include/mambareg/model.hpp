#pragma once

// Full networks: the guidance network used in stage 1 and the registration
// network trained in stage 2, plus the ablation presets.

#include "mambareg/feature_extractors.hpp"
#include "mambareg/registration.hpp"

#include <string>

namespace mambareg::model {

struct Ablation {
  MambaMode mdfe = MambaMode::Bi;
  MambaMode mife = MambaMode::Bi;
  MambaMode m3rm = MambaMode::Bi;
  bool roi_mask = true;

  bool operator==(const Ablation&) const = default;
};

/// "b1".."b6" (case-insensitive).
Ablation ablation_preset(const std::string& name);

struct NetConfig {
  int64_t channels = 1;
  int64_t code_channels = 32;
  int64_t n_blocks = 4;
  int64_t state_dim = 8;
  int64_t unet_depth = 3;
  int64_t unet_base = 16;
  Ablation ablation;

  features::ExtractorOptions extractor(MambaMode mode) const;
};

struct Disentangled {
  torch::Tensor md_x, md_y, mi_x, mi_y;
};

/// Two modality-dependent extractors and one shared modality-invariant extractor.
class AGNetImpl : public torch::nn::Module {
 public:
  explicit AGNetImpl(const NetConfig& config);

  Disentangled disentangle(const torch::Tensor& i_x, const torch::Tensor& i_y);

  struct Output {
    Disentangled parts;
    torch::Tensor ix_hat, iy_hat;
  };
  Output forward(const torch::Tensor& i_x, const torch::Tensor& i_y);

  NetConfig config;
  features::MDFE mdfe_x{nullptr}, mdfe_y{nullptr};
  features::MIFE mife{nullptr};
};
TORCH_MODULE(AGNet);

class MambaRegNetImpl : public torch::nn::Module {
 public:
  explicit MambaRegNetImpl(const NetConfig& config);

  struct Output {
    Disentangled parts;
    torch::Tensor phi;      // [N, 2, H, W]
    torch::Tensor warped;   // moving image carried by phi
    torch::Tensor ix_hat, iy_hat;
  };
  Output forward(const torch::Tensor& i_x, const torch::Tensor& i_y);

  /// Field only; skips the reconstruction branch.
  torch::Tensor predict_field(const torch::Tensor& i_x, const torch::Tensor& i_y);

  NetConfig config;
  features::MDFE mdfe_x{nullptr}, mdfe_y{nullptr};
  features::MIFE mife{nullptr};
  reg::M3RM m3rm{nullptr};
};
TORCH_MODULE(MambaRegNet);

}  // namespace mambareg::model
