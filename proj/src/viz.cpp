#include "mambareg/viz.hpp"

#include "mambareg/common.hpp"

#include <numbers>

namespace mambareg::viz {

namespace {
torch::Tensor as_rgb(const torch::Tensor& img) {
  require_dim(img, 3, "panel image");
  if (img.size(0) == 3) return img.to(torch::kFloat);
  if (img.size(0) == 1) return img.to(torch::kFloat).expand({3, img.size(1), img.size(2)});
  throw ShapeError("panel image must have 1 or 3 channels, got " + shape_string(img));
}
}  // namespace

torch::Tensor flow_to_rgb(const torch::Tensor& phi, double max_magnitude) {
  require_dim(phi, 3, "flow_to_rgb");
  if (phi.size(0) != 2) throw ShapeError("flow_to_rgb: expected [2, H, W], got " + shape_string(phi));
  auto f = phi.detach().to(torch::kDouble);
  auto dy = f[0], dx = f[1];
  auto mag = (dy * dy + dx * dx).sqrt();
  if (max_magnitude <= 0) max_magnitude = mag.max().item<double>();
  auto sat = max_magnitude > 0 ? (mag / max_magnitude).clamp(0, 1) : torch::zeros_like(mag);
  auto hue = (torch::atan2(dy, dx) / (2 * std::numbers::pi) + 1).remainder(1.0) * 6;  // [0, 6)
  // HSV -> RGB with V = 1
  auto channel = [&](double n) {
    auto k = (hue + n).remainder(6.0);
    auto w = torch::clamp(torch::minimum(k, 4 - k), 0, 1);
    return 1 - sat * w;
  };
  return torch::stack({channel(5), channel(3), channel(1)}).to(torch::kFloat);
}

torch::Tensor registration_panel(const torch::Tensor& moving, const torch::Tensor& fixed, const torch::Tensor& warped,
                                 const torch::Tensor& phi, int64_t gap) {
  auto m = as_rgb(moving), f = as_rgb(fixed), w = as_rgb(warped);
  require_same_shape(m, f, "panel");
  require_same_shape(m, w, "panel");
  auto flow = flow_to_rgb(phi);
  if (flow.size(1) != m.size(1) || flow.size(2) != m.size(2))
    throw ShapeError("panel: field " + shape_string(phi) + " does not match image " + shape_string(moving));
  auto sep = torch::ones({3, m.size(1), gap}, torch::kFloat);
  return torch::cat({m, sep, f, sep, w, sep, flow}, 2).clamp(0, 1);
}

}  // namespace mambareg::viz
