#pragma once

// Learned convolutional sparse coding (unrolled ISTA) and the Mamba-augmented
// block built on it.

#include "mambareg/common.hpp"
#include "mambareg/ssm.hpp"

#include <vector>

namespace mambareg::csc {

/// sign(x) * max(|x| - theta, 0), theta broadcast along dim 1 of x.
torch::Tensor soft_threshold(const torch::Tensor& x, const torch::Tensor& theta);

/// One unrolled ISTA iteration
///   z+ = soft_threshold(z + encode(x - decode(z)), theta)
/// with same-padded, bias-free convolutions.
///   z [N, Dout, H, W], x [N, Din, H, W]
///   encode_w [Dout, Din, k, k], decode_w [Din, Dout, k, k], theta [Dout]
torch::Tensor lcsc_step(const torch::Tensor& z, const torch::Tensor& x, const torch::Tensor& encode_w,
                        const torch::Tensor& decode_w, const torch::Tensor& theta);

struct DictionaryOptions {
  DictionaryOptions(int64_t in_channels, int64_t code_channels)
      : in_channels_(in_channels), code_channels_(code_channels) {}
  TORCH_ARG(int64_t, in_channels);
  TORCH_ARG(int64_t, code_channels);
  TORCH_ARG(int64_t, kernel_size) = 3;
  /// decode = adjoint of encode when set
  TORCH_ARG(bool, tied) = false;
  TORCH_ARG(double, theta_init) = 0.01;
};

/// Encode/decode filter banks plus a per-channel threshold kept nonnegative
/// through a softplus reparameterization.
class ConvDictionaryImpl : public torch::nn::Module {
 public:
  explicit ConvDictionaryImpl(DictionaryOptions options);

  torch::Tensor theta() const;
  torch::Tensor encode_weight() const { return encode_w; }
  /// Adjoint (flipped, transposed) encode filters when tied.
  torch::Tensor decode_weight() const;

  torch::Tensor step(const torch::Tensor& z, const torch::Tensor& x) const;

  DictionaryOptions options;
  torch::Tensor encode_w;
  torch::Tensor decode_w;
  torch::Tensor theta_raw;
};
TORCH_MODULE(ConvDictionary);

/// LCSC step followed by a residual Mamba pass over the raster-flattened code.
class MLCSCBlockImpl : public torch::nn::Module {
 public:
  MLCSCBlockImpl(DictionaryOptions dict_options, MambaMode mode, int64_t state_dim = 8);

  torch::Tensor forward(const torch::Tensor& z, const torch::Tensor& x);

  ConvDictionary dict{nullptr};
  ssm::BiMambaBlock mamba{nullptr};
};
TORCH_MODULE(MLCSCBlock);

torch::Tensor mlcsc_block(const torch::Tensor& z, const torch::Tensor& x, MLCSCBlock& block);

struct StackOptions {
  StackOptions(int64_t in_channels, int64_t code_channels) : in_channels_(in_channels), code_channels_(code_channels) {}
  TORCH_ARG(int64_t, in_channels);
  TORCH_ARG(int64_t, code_channels);
  TORCH_ARG(int64_t, n_blocks) = 4;
  TORCH_ARG(int64_t, kernel_size) = 3;
  TORCH_ARG(MambaMode, mode) = MambaMode::Bi;
  TORCH_ARG(int64_t, state_dim) = 8;
  TORCH_ARG(bool, tied) = false;
};

/// z0 = soft_threshold(initial_conv(x)), then each MLCSC block once in order.
class EncodeStackImpl : public torch::nn::Module {
 public:
  explicit EncodeStackImpl(StackOptions options);

  torch::Tensor forward(const torch::Tensor& x);
  torch::Tensor initial_code(const torch::Tensor& x) const;
  torch::Tensor initial_theta() const;

  int64_t size() const { return static_cast<int64_t>(blocks.size()); }

  StackOptions options;
  torch::Tensor initial_w;
  torch::Tensor initial_theta_raw;
  std::vector<MLCSCBlock> blocks;
};
TORCH_MODULE(EncodeStack);

}  // namespace mambareg::csc
