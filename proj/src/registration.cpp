#include "mambareg/registration.hpp"

#include <algorithm>

namespace mambareg::reg {

namespace F = torch::nn::functional;

namespace {

torch::nn::Conv2d conv3(int64_t in, int64_t out, int64_t stride = 1) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).stride(stride).padding(1));
}

torch::Tensor act(const torch::Tensor& x) { return F::leaky_relu(x, F::LeakyReLUFuncOptions().negative_slope(0.2)); }

struct SampleGrid {
  torch::Tensor y, x;  // [N, H, W] absolute sampling coordinates, clamped
};

SampleGrid sampling_coordinates(const torch::Tensor& phi, int64_t H, int64_t W) {
  auto opts = phi.options();
  auto gy = torch::arange(H, opts).view({1, H, 1});
  auto gx = torch::arange(W, opts).view({1, 1, W});
  return {torch::clamp(gy + phi.select(1, 0), 0, H - 1), torch::clamp(gx + phi.select(1, 1), 0, W - 1)};
}

torch::Tensor gather(const torch::Tensor& flat, const torch::Tensor& index, int64_t channels) {
  // flat [N, C, H*W], index [N, H*W]
  return flat.gather(2, index.unsqueeze(1).expand({index.size(0), channels, index.size(1)}));
}

void check_field(const torch::Tensor& img, const torch::Tensor& phi, const char* what) {
  require_dim(phi, 4, what);
  if (phi.size(1) != 2 || phi.size(0) != img.size(0) || phi.size(2) != img.size(2) || phi.size(3) != img.size(3)) {
    throw ShapeError(std::string(what) + ": field " + shape_string(phi) + " does not match " + shape_string(img));
  }
  require_finite(phi, what);
}

}  // namespace

int64_t UNetConfig::channels_at(int64_t level) const { return base_channels << std::min<int64_t>(level, 2); }

M3RMImpl::M3RMImpl(int64_t image_channels_, UNetConfig config_) : config(config_), image_channels(image_channels_) {
  if (config.depth < 1) throw ConfigError("M3RM: depth must be at least 1");
  if (config.base_channels < 1) throw ConfigError("M3RM: base channels must be positive");
  stem = register_module("stem", conv3(2 * image_channels, config.channels_at(0)));
  for (int64_t l = 1; l <= config.depth; ++l) {
    down.push_back(register_module("down" + std::to_string(l), conv3(config.channels_at(l - 1), config.channels_at(l), 2)));
  }
  for (int64_t l = config.depth; l >= 1; --l) {
    up.push_back(register_module("up" + std::to_string(l),
                                 conv3(config.channels_at(l) + config.channels_at(l - 1), config.channels_at(l - 1))));
  }
  refine = register_module("refine", conv3(config.channels_at(0), config.channels_at(0)));
  head = register_module("head", conv3(config.channels_at(0), 2));
  torch::NoGradGuard no_grad;
  head->weight.zero_();
  head->bias.zero_();
  bottleneck = ssm::BiMambaBlock(
      ssm::BiMambaOptions(config.channels_at(config.depth), config.bottleneck_mamba).state_dim(config.state_dim));
  if (config.bottleneck_mamba != MambaMode::None) register_module("bottleneck", bottleneck);
}

torch::Tensor M3RMImpl::forward(const torch::Tensor& mi_x, const torch::Tensor& mi_y) {
  require_same_shape(mi_x, mi_y, "M3RM");
  require_dim(mi_x, 4, "M3RM");
  if (mi_x.size(1) != image_channels) throw ConfigError("M3RM: unexpected channel count " + shape_string(mi_x));
  const int64_t factor = int64_t{1} << config.depth;
  if (mi_x.size(2) % factor != 0 || mi_x.size(3) % factor != 0) {
    throw ConfigError("M3RM: spatial size " + shape_string(mi_x) + " not divisible by 2^" + std::to_string(config.depth));
  }
  std::vector<torch::Tensor> skips;
  auto x = act(stem(torch::cat({mi_x, mi_y}, 1)));
  for (auto& conv : down) {
    skips.push_back(x);
    x = act(conv(x));
  }
  x = ssm::apply_on_map(bottleneck, x);
  for (auto& conv : up) {
    auto skip = skips.back();
    skips.pop_back();
    x = F::interpolate(x, F::InterpolateFuncOptions()
                              .size(std::vector<int64_t>{skip.size(2), skip.size(3)})
                              .mode(torch::kNearest));
    x = act(conv(torch::cat({x, skip}, 1)));
  }
  return head(act(refine(x)));
}

torch::Tensor m3rm_forward(const torch::Tensor& mi_x, const torch::Tensor& mi_y, M3RM& net) {
  return net->forward(mi_x, mi_y);
}

torch::Tensor stn_warp(const torch::Tensor& img, const torch::Tensor& phi) {
  require_dim(img, 4, "stn_warp");
  check_field(img, phi, "stn_warp");
  const auto N = img.size(0), C = img.size(1), H = img.size(2), W = img.size(3);
  auto [ys, xs] = sampling_coordinates(phi.to(img.scalar_type()), H, W);
  auto y0 = ys.floor().detach();
  auto x0 = xs.floor().detach();
  auto wy = (ys - y0).unsqueeze(1);
  auto wx = (xs - x0).unsqueeze(1);
  auto y0i = y0.to(torch::kLong);
  auto x0i = x0.to(torch::kLong);
  auto y1i = torch::clamp_max(y0i + 1, H - 1);
  auto x1i = torch::clamp_max(x0i + 1, W - 1);
  auto flat = img.reshape({N, C, H * W});
  auto sample = [&](const torch::Tensor& yi, const torch::Tensor& xi) {
    return gather(flat, (yi * W + xi).reshape({N, H * W}), C).reshape({N, C, H, W});
  };
  return sample(y0i, x0i) * (1 - wy) * (1 - wx) + sample(y0i, x1i) * (1 - wy) * wx + sample(y1i, x0i) * wy * (1 - wx) +
         sample(y1i, x1i) * wy * wx;
}

torch::Tensor warp_labels(const torch::Tensor& labels, const torch::Tensor& phi) {
  if (labels.dim() == 2) return warp_labels(labels.unsqueeze(0).unsqueeze(0), phi).squeeze(0).squeeze(0);
  require_dim(labels, 4, "warp_labels");
  check_field(labels, phi, "warp_labels");
  const auto N = labels.size(0), C = labels.size(1), H = labels.size(2), W = labels.size(3);
  torch::NoGradGuard no_grad;
  auto [ys, xs] = sampling_coordinates(phi.to(torch::kDouble), H, W);
  auto index = (ys.round().to(torch::kLong) * W + xs.round().to(torch::kLong)).reshape({N, H * W});
  return gather(labels.reshape({N, C, H * W}), index, C).reshape({N, C, H, W});
}

}  // namespace mambareg::reg
