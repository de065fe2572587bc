#include "mambareg/model.hpp"

#include <algorithm>
#include <cctype>

namespace mambareg::model {

Ablation ablation_preset(const std::string& name) {
  std::string n = name;
  std::transform(n.begin(), n.end(), n.begin(), [](unsigned char c) { return std::tolower(c); });
  using M = MambaMode;
  if (n == "b1") return {M::None, M::None, M::None, false};
  if (n == "b2") return {M::Bi, M::None, M::None, false};
  if (n == "b3") return {M::Bi, M::Bi, M::None, false};
  if (n == "b4") return {M::Uni, M::Uni, M::Uni, false};
  if (n == "b5") return {M::Bi, M::Bi, M::Bi, false};
  if (n == "b6") return {M::Bi, M::Bi, M::Bi, true};
  throw ConfigError("unknown ablation preset '" + name + "' (expected b1..b6)");
}

features::ExtractorOptions NetConfig::extractor(MambaMode mode) const {
  return features::ExtractorOptions(channels, code_channels).n_blocks(n_blocks).mode(mode).state_dim(state_dim);
}

AGNetImpl::AGNetImpl(const NetConfig& config_) : config(config_) {
  mdfe_x = register_module("mdfe_x", features::MDFE(config.extractor(config.ablation.mdfe)));
  mdfe_y = register_module("mdfe_y", features::MDFE(config.extractor(config.ablation.mdfe)));
  mife = register_module("mife", features::MIFE(config.extractor(config.ablation.mife)));
}

Disentangled AGNetImpl::disentangle(const torch::Tensor& i_x, const torch::Tensor& i_y) {
  Disentangled d;
  d.md_x = mdfe_x->forward(i_x);
  d.md_y = mdfe_y->forward(i_y);
  d.mi_x = features::split_mi(i_x, d.md_x);
  d.mi_y = features::split_mi(i_y, d.md_y);
  return d;
}

AGNetImpl::Output AGNetImpl::forward(const torch::Tensor& i_x, const torch::Tensor& i_y) {
  Output out;
  out.parts = disentangle(i_x, i_y);
  auto r_x = mife->render(mife->encode(out.parts.mi_x), features::Modality::X);
  auto r_y = mife->render(mife->encode(out.parts.mi_y), features::Modality::Y);
  out.ix_hat = r_x + out.parts.md_x;
  out.iy_hat = r_y + out.parts.md_y;
  return out;
}

MambaRegNetImpl::MambaRegNetImpl(const NetConfig& config_) : config(config_) {
  mdfe_x = register_module("mdfe_x", features::MDFE(config.extractor(config.ablation.mdfe)));
  mdfe_y = register_module("mdfe_y", features::MDFE(config.extractor(config.ablation.mdfe)));
  mife = register_module("mife", features::MIFE(config.extractor(config.ablation.mife)));
  reg::UNetConfig unet;
  unet.depth = config.unet_depth;
  unet.base_channels = config.unet_base;
  unet.bottleneck_mamba = config.ablation.m3rm;
  unet.state_dim = config.state_dim;
  m3rm = register_module("m3rm", reg::M3RM(config.channels, unet));
}

MambaRegNetImpl::Output MambaRegNetImpl::forward(const torch::Tensor& i_x, const torch::Tensor& i_y) {
  Output out;
  auto& d = out.parts;
  d.md_x = mdfe_x->forward(i_x);
  d.md_y = mdfe_y->forward(i_y);
  d.mi_x = features::split_mi(i_x, d.md_x);
  d.mi_y = features::split_mi(i_y, d.md_y);
  out.phi = m3rm->forward(d.mi_x, d.mi_y);
  out.warped = reg::stn_warp(i_x, out.phi);
  // moving-side code rendered in both modalities; the fixed-side rendering is carried by phi
  auto code = mife->encode(d.mi_x);
  out.ix_hat = mife->render(code, features::Modality::X) + d.md_x;
  out.iy_hat = reg::stn_warp(mife->render(code, features::Modality::Y), out.phi) + d.md_y;
  return out;
}

torch::Tensor MambaRegNetImpl::predict_field(const torch::Tensor& i_x, const torch::Tensor& i_y) {
  auto mi_x = features::split_mi(i_x, mdfe_x->forward(i_x));
  auto mi_y = features::split_mi(i_y, mdfe_y->forward(i_y));
  return m3rm->forward(mi_x, mi_y);
}

}  // namespace mambareg::model
