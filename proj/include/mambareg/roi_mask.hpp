#pragma once

// Unsupervised foreground masks: Otsu threshold, binarize, rectangular
// dilation, small-component removal. Masks are [H, W] uint8 tensors in {0, 1}.

#include "mambareg/common.hpp"

#include <torch/torch.h>

namespace mambareg::roi {

enum class Polarity { Bright, Dark };

Polarity parse_polarity(const std::string& s);
std::string to_string(Polarity p);

/// Channel mean of [C, H, W] or [1, C, H, W]; [H, W] passes through. Returns double.
torch::Tensor to_gray(const torch::Tensor& img);

struct OtsuResult {
  int bin;           // class 0 holds bins [0, bin]
  double threshold;  // centre of the tied run of cuts starting at `bin`
};

/// Histogram over [lo, hi] with `bins` bins; bin = min(floor((v-lo)/(hi-lo)*bins), bins-1).
/// Ties go to the lowest bin. Throws PreconditionError on a single-bin histogram.
OtsuResult otsu(const torch::Tensor& gray, int bins = 256, double lo = 0.0, double hi = 1.0);
double otsu_threshold(const torch::Tensor& gray, int bins = 256);

torch::Tensor binarize(const torch::Tensor& gray, double t, Polarity polarity = Polarity::Bright);

/// Window of kh x kw anchored at (kh/2, kw/2); outside the raster counts as 0.
torch::Tensor dilate(const torch::Tensor& mask, int64_t kh, int64_t kw);

/// Drops 4-connected components with fewer than min_size pixels.
torch::Tensor filter_components(const torch::Tensor& mask, int64_t min_size);

struct MaskParams {
  int bins = 256;
  int64_t kernel_h = 5;
  int64_t kernel_w = 5;
  int64_t min_size = 16;  // at 64x64
  Polarity polarity = Polarity::Bright;

  /// min_size scaled by pixel count relative to 64x64.
  int64_t min_size_for(int64_t H, int64_t W) const;
};

torch::Tensor gen_roi_mask(const torch::Tensor& img, const MaskParams& params = {});

}  // namespace mambareg::roi
