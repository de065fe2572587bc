#pragma once

// Deformation-field prediction (U-Net with a Mamba bottleneck) and the dense
// spatial transformer.
//
// Field convention: phi[:, 0] = dy, phi[:, 1] = dx in pixels, and a warped
// image samples out(p) = img(p + phi(p)).

#include "mambareg/ssm.hpp"

#include <vector>

namespace mambareg::reg {

struct UNetConfig {
  int64_t depth = 3;
  int64_t base_channels = 16;
  MambaMode bottleneck_mamba = MambaMode::Bi;
  int64_t state_dim = 8;

  /// Channels at encoder level `level` (0 = full resolution).
  int64_t channels_at(int64_t level) const;
};

/// Concatenates the two MI maps, encodes, optionally applies Mamba at the
/// deepest level, decodes with skips and emits a 2-channel field. The head is
/// zero-initialized so a fresh network predicts the identity transform.
class M3RMImpl : public torch::nn::Module {
 public:
  M3RMImpl(int64_t image_channels, UNetConfig config);

  torch::Tensor forward(const torch::Tensor& mi_x, const torch::Tensor& mi_y);

  UNetConfig config;
  int64_t image_channels;
  torch::nn::Conv2d stem{nullptr};
  std::vector<torch::nn::Conv2d> down;
  std::vector<torch::nn::Conv2d> up;
  torch::nn::Conv2d refine{nullptr};
  torch::nn::Conv2d head{nullptr};
  ssm::BiMambaBlock bottleneck{nullptr};
};
TORCH_MODULE(M3RM);

torch::Tensor m3rm_forward(const torch::Tensor& mi_x, const torch::Tensor& mi_y, M3RM& net);

/// Bilinear warp with clamp-to-edge sampling; differentiable in img and phi.
///   img [N, C, H, W], phi [N, 2, H, W]
torch::Tensor stn_warp(const torch::Tensor& img, const torch::Tensor& phi);

/// Nearest-neighbour warp for integer label maps [N, 1, H, W] (or [H, W] with phi [1, 2, H, W]).
torch::Tensor warp_labels(const torch::Tensor& labels, const torch::Tensor& phi);

}  // namespace mambareg::reg
