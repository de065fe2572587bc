#include "mambareg/sparse_coding.hpp"

#include <cmath>

namespace mambareg::csc {

namespace F = torch::nn::functional;

namespace {

double inverse_softplus(double y) { return y + std::log(-std::expm1(-y)); }

torch::Tensor conv_same(const torch::Tensor& x, const torch::Tensor& w) {
  return F::conv2d(x, w, F::Conv2dFuncOptions().padding(w.size(-1) / 2));
}

torch::Tensor channel_view(const torch::Tensor& theta, int64_t dims) {
  std::vector<int64_t> shape(dims, 1);
  shape[1] = theta.size(0);
  return theta.view(shape);
}

}  // namespace

torch::Tensor soft_threshold(const torch::Tensor& x, const torch::Tensor& theta) {
  require_dim(theta, 1, "soft_threshold(theta)");
  if (x.dim() < 2 || x.size(1) != theta.size(0)) {
    throw ShapeError("soft_threshold: theta " + shape_string(theta) + " does not match channels of " + shape_string(x));
  }
  if ((theta < 0).any().item<bool>()) throw PreconditionError("soft_threshold: negative threshold");
  auto t = channel_view(theta, x.dim());
  return torch::sign(x) * torch::relu(x.abs() - t);
}

torch::Tensor lcsc_step(const torch::Tensor& z, const torch::Tensor& x, const torch::Tensor& encode_w,
                        const torch::Tensor& decode_w, const torch::Tensor& theta) {
  require_dim(z, 4, "lcsc_step(z)");
  require_dim(x, 4, "lcsc_step(x)");
  if (encode_w.size(0) != z.size(1) || encode_w.size(1) != x.size(1) || decode_w.size(0) != x.size(1) ||
      decode_w.size(1) != z.size(1) || theta.size(0) != z.size(1)) {
    throw ConfigError("lcsc_step: dictionary " + shape_string(encode_w) + " incompatible with code " +
                      shape_string(z) + " / input " + shape_string(x));
  }
  if (z.size(2) != x.size(2) || z.size(3) != x.size(3)) throw ShapeError("lcsc_step: spatial shapes differ");
  auto residual = x - conv_same(z, decode_w);
  return soft_threshold(z + conv_same(residual, encode_w), theta);
}

ConvDictionaryImpl::ConvDictionaryImpl(DictionaryOptions options_) : options(std::move(options_)) {
  const auto k = options.kernel_size();
  if (k % 2 == 0) throw ConfigError("ConvDictionary: kernel size must be odd");
  const auto din = options.in_channels();
  const auto dout = options.code_channels();
  const double scale = 1.0 / std::sqrt(static_cast<double>(din * k * k + dout * k * k));
  encode_w = register_parameter("encode", torch::randn({dout, din, k, k}) * scale);
  if (!options.tied()) decode_w = register_parameter("decode", torch::randn({din, dout, k, k}) * scale);
  theta_raw = register_parameter("theta", torch::full({dout}, inverse_softplus(options.theta_init())));
}

torch::Tensor ConvDictionaryImpl::theta() const { return F::softplus(theta_raw); }

torch::Tensor ConvDictionaryImpl::decode_weight() const {
  if (!options.tied()) return decode_w;
  return encode_w.transpose(0, 1).flip({2, 3});
}

torch::Tensor ConvDictionaryImpl::step(const torch::Tensor& z, const torch::Tensor& x) const {
  return lcsc_step(z, x, encode_weight(), decode_weight(), theta());
}

MLCSCBlockImpl::MLCSCBlockImpl(DictionaryOptions dict_options, MambaMode mode, int64_t state_dim) {
  const auto channels = dict_options.code_channels();
  dict = register_module("dict", ConvDictionary(std::move(dict_options)));
  mamba = ssm::BiMambaBlock(ssm::BiMambaOptions(channels, mode).state_dim(state_dim));
  if (mode != MambaMode::None) register_module("mamba", mamba);
}

torch::Tensor MLCSCBlockImpl::forward(const torch::Tensor& z, const torch::Tensor& x) {
  return ssm::apply_on_map(mamba, dict->step(z, x));
}

torch::Tensor mlcsc_block(const torch::Tensor& z, const torch::Tensor& x, MLCSCBlock& block) {
  return block->forward(z, x);
}

EncodeStackImpl::EncodeStackImpl(StackOptions options_) : options(std::move(options_)) {
  if (options.n_blocks() < 1) throw ConfigError("EncodeStack: at least one MLCSC block is required");
  const auto k = options.kernel_size();
  if (k % 2 == 0) throw ConfigError("EncodeStack: kernel size must be odd");
  const double scale = 1.0 / std::sqrt(static_cast<double>(options.in_channels() * k * k));
  initial_w = register_parameter("initial", torch::randn({options.code_channels(), options.in_channels(), k, k}) * scale);
  initial_theta_raw = register_parameter("initial_theta", torch::full({options.code_channels()}, inverse_softplus(0.01)));
  for (int64_t i = 0; i < options.n_blocks(); ++i) {
    auto dict_opts = DictionaryOptions(options.in_channels(), options.code_channels()).kernel_size(k).tied(options.tied());
    blocks.push_back(register_module("block" + std::to_string(i), MLCSCBlock(dict_opts, options.mode(), options.state_dim())));
  }
}

torch::Tensor EncodeStackImpl::initial_theta() const { return F::softplus(initial_theta_raw); }

torch::Tensor EncodeStackImpl::initial_code(const torch::Tensor& x) const {
  require_dim(x, 4, "EncodeStack");
  if (x.size(1) != options.in_channels()) {
    throw ConfigError("EncodeStack: expected " + std::to_string(options.in_channels()) + " input channels, got " +
                      shape_string(x));
  }
  return soft_threshold(conv_same(x, initial_w), initial_theta());
}

torch::Tensor EncodeStackImpl::forward(const torch::Tensor& x) {
  auto z = initial_code(x);
  for (auto& block : blocks) z = block->forward(z, x);
  return z;
}

}  // namespace mambareg::csc
