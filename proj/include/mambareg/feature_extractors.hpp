#pragma once

// Modality-dependent (MDFE) and modality-invariant (MIFE) feature extractors.
// Both are a sparse-coding encoder followed by single 3x3 synthesis filters
// mapping the code back to image channels.

#include "mambareg/sparse_coding.hpp"

namespace mambareg::features {

enum class Modality { X, Y };

struct ExtractorOptions {
  ExtractorOptions(int64_t image_channels, int64_t code_channels)
      : image_channels_(image_channels), code_channels_(code_channels) {}
  TORCH_ARG(int64_t, image_channels);
  TORCH_ARG(int64_t, code_channels);
  TORCH_ARG(int64_t, n_blocks) = 4;
  TORCH_ARG(MambaMode, mode) = MambaMode::Bi;
  TORCH_ARG(int64_t, state_dim) = 8;

 public:
  csc::StackOptions stack() const;
};

/// md = md_filters * encode_stack(image)
class MDFEImpl : public torch::nn::Module {
 public:
  explicit MDFEImpl(ExtractorOptions options);
  torch::Tensor forward(const torch::Tensor& image);

  ExtractorOptions options;
  csc::EncodeStack encoder{nullptr};
  torch::Tensor md_filters;
};
TORCH_MODULE(MDFE);

/// mi = image - md, exactly.
torch::Tensor split_mi(const torch::Tensor& image, const torch::Tensor& md);

struct ReconPair {
  torch::Tensor r_x;
  torch::Tensor r_y;
};

/// One shared sparse code, rendered by two modality-specific filter banks.
class MIFEImpl : public torch::nn::Module {
 public:
  explicit MIFEImpl(ExtractorOptions options);

  ReconPair forward(const torch::Tensor& mi);
  torch::Tensor encode(const torch::Tensor& mi);
  torch::Tensor render(const torch::Tensor& code, Modality modality) const;

  ExtractorOptions options;
  csc::EncodeStack encoder{nullptr};
  torch::Tensor mi_x_filters;
  torch::Tensor mi_y_filters;
};
TORCH_MODULE(MIFE);

}  // namespace mambareg::features
