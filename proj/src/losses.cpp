#include "mambareg/losses.hpp"

#include "mambareg/registration.hpp"

namespace mambareg::loss {

void LossWeights::validate() const {
  if (alpha < 0 || beta < 0 || gamma < 0 || delta < 0) throw ConfigError("loss weights must be nonnegative");
}

torch::Tensor mse(const torch::Tensor& a, const torch::Tensor& b) {
  require_same_shape(a, b, "mse");
  return (a - b).pow(2).mean();
}

torch::Tensor sim_loss(const torch::Tensor& x_warp, const torch::Tensor& gt, const torch::Tensor& mask) {
  require_same_shape(x_warp, gt, "sim_loss");
  require_dim(mask, x_warp.dim(), "sim_loss mask");
  auto m = mask.to(x_warp.scalar_type()).expand_as(x_warp);
  return 0.5 * (mse(x_warp, gt) + mse(m * x_warp, m * gt));
}

torch::Tensor smooth_loss(const torch::Tensor& phi) {
  require_dim(phi, 4, "smooth_loss");
  require_finite(phi, "smooth_loss");
  namespace F = torch::nn::functional;
  // zero padding: no difference past the last row/column
  auto dy = F::pad(phi.diff(1, 2), F::PadFuncOptions({0, 0, 0, 1}));
  auto dx = F::pad(phi.diff(1, 3), F::PadFuncOptions({0, 1, 0, 0}));
  return (dy.pow(2) + dx.pow(2)).mean();
}

torch::Tensor guidance_loss(const torch::Tensor& mi_x, const torch::Tensor& mi_y, const torch::Tensor& mi_x_ag,
                            const torch::Tensor& mi_y_ag) {
  return mse(mi_x, mi_x_ag.detach()) + mse(mi_y, mi_y_ag.detach());
}

torch::Tensor recon_loss(const torch::Tensor& ix_hat, const torch::Tensor& ix, const torch::Tensor& iy_hat,
                         const torch::Tensor& iy) {
  return mse(ix_hat, ix) + mse(iy_hat, iy);
}

torch::Tensor agnet_loss(const torch::Tensor& ix_hat, const torch::Tensor& ix, const torch::Tensor& iy_hat,
                         const torch::Tensor& iy) {
  return recon_loss(ix_hat, ix, iy_hat, iy);
}

torch::Tensor total_loss(const LossComponents& c, const LossWeights& w) {
  w.validate();
  return w.alpha * c.sim + w.beta * c.smooth + w.gamma * c.guidance + w.delta * c.recon;
}

torch::Tensor union_mask(const torch::Tensor& moving_mask, const torch::Tensor& fixed_mask, const torch::Tensor& phi) {
  torch::NoGradGuard no_grad;
  auto carried = (reg::stn_warp(moving_mask.to(torch::kFloat), phi.detach().to(torch::kFloat)) >= 0.5).to(torch::kFloat);
  return torch::maximum(carried, fixed_mask.to(torch::kFloat));
}

}  // namespace mambareg::loss
