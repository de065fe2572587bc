#pragma once

#include "mambareg/common.hpp"

#include <torch/torch.h>

namespace mambareg::loss {

struct LossWeights {
  double alpha = 100.0;  // similarity
  double beta = 10.0;    // smoothness
  double gamma = 25.0;   // guidance
  double delta = 10.0;   // reconstruction

  void validate() const;
};

struct LossComponents {
  torch::Tensor sim, smooth, guidance, recon;
};

torch::Tensor mse(const torch::Tensor& a, const torch::Tensor& b);

/// 0.5 * (mse(x, gt) + mse(mask*x, mask*gt)); mask broadcasts over channels.
torch::Tensor sim_loss(const torch::Tensor& x_warp, const torch::Tensor& gt, const torch::Tensor& mask);

/// Mean squared forward difference of the field, zero gradient on the last row/column.
torch::Tensor smooth_loss(const torch::Tensor& phi);

torch::Tensor guidance_loss(const torch::Tensor& mi_x, const torch::Tensor& mi_y, const torch::Tensor& mi_x_ag,
                            const torch::Tensor& mi_y_ag);

torch::Tensor recon_loss(const torch::Tensor& ix_hat, const torch::Tensor& ix, const torch::Tensor& iy_hat,
                         const torch::Tensor& iy);

torch::Tensor agnet_loss(const torch::Tensor& ix_hat, const torch::Tensor& ix, const torch::Tensor& iy_hat,
                         const torch::Tensor& iy);

torch::Tensor total_loss(const LossComponents& c, const LossWeights& w);

/// Union of the fixed mask and the moving mask carried along by phi (no gradient).
/// Masks are [N, 1, H, W] floating tensors with values in {0, 1}.
torch::Tensor union_mask(const torch::Tensor& moving_mask, const torch::Tensor& fixed_mask, const torch::Tensor& phi);

}  // namespace mambareg::loss
