#include "mambareg/feature_extractors.hpp"

#include <cmath>

namespace mambareg::features {

namespace F = torch::nn::functional;

namespace {

torch::Tensor synthesis_filters(int64_t out_channels, int64_t code_channels) {
  return torch::randn({out_channels, code_channels, 3, 3}) / std::sqrt(9.0 * static_cast<double>(code_channels));
}

torch::Tensor synthesize(const torch::Tensor& code, const torch::Tensor& filters) {
  return F::conv2d(code, filters, F::Conv2dFuncOptions().padding(1));
}

}  // namespace

csc::StackOptions ExtractorOptions::stack() const {
  return csc::StackOptions(image_channels(), code_channels()).n_blocks(n_blocks()).mode(mode()).state_dim(state_dim());
}

MDFEImpl::MDFEImpl(ExtractorOptions options_) : options(std::move(options_)) {
  encoder = register_module("encoder", csc::EncodeStack(options.stack()));
  md_filters = register_parameter("md_filters", synthesis_filters(options.image_channels(), options.code_channels()));
}

torch::Tensor MDFEImpl::forward(const torch::Tensor& image) { return synthesize(encoder->forward(image), md_filters); }

torch::Tensor split_mi(const torch::Tensor& image, const torch::Tensor& md) {
  require_same_shape(image, md, "split_mi");
  return image - md;
}

MIFEImpl::MIFEImpl(ExtractorOptions options_) : options(std::move(options_)) {
  encoder = register_module("encoder", csc::EncodeStack(options.stack()));
  mi_x_filters = register_parameter("mi_x_filters", synthesis_filters(options.image_channels(), options.code_channels()));
  mi_y_filters = register_parameter("mi_y_filters", synthesis_filters(options.image_channels(), options.code_channels()));
}

torch::Tensor MIFEImpl::encode(const torch::Tensor& mi) { return encoder->forward(mi); }

torch::Tensor MIFEImpl::render(const torch::Tensor& code, Modality modality) const {
  switch (modality) {
    case Modality::X: return synthesize(code, mi_x_filters);
    case Modality::Y: return synthesize(code, mi_y_filters);
  }
  throw ConfigError("MIFE: unknown modality");
}

ReconPair MIFEImpl::forward(const torch::Tensor& mi) {
  auto code = encode(mi);
  return {render(code, Modality::X), render(code, Modality::Y)};
}

}  // namespace mambareg::features
