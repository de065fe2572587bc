#pragma once

#include "mambareg/common.hpp"

#include <torch/torch.h>

#include <string>
#include <vector>

namespace mambareg::metrics {

enum class DiceConvention { Standard, AsPrinted };

DiceConvention parse_dice_convention(const std::string& s);
std::string to_string(DiceConvention c);

/// Pixel-count weighted Dice over labels >= 1 present in `fixed`.
/// AsPrinted drops the factor 2 (perfect overlap then scores 0.5).
double weighted_dice(const torch::Tensor& fixed, const torch::Tensor& warped,
                     DiceConvention convention = DiceConvention::Standard);

// Image metrics act on the channel mean; inputs may be [H,W], [C,H,W] or [1,C,H,W].
double mse(const torch::Tensor& a, const torch::Tensor& b);
double ncc(const torch::Tensor& a, const torch::Tensor& b);
double ssim(const torch::Tensor& a, const torch::Tensor& b, int64_t window = 11, double sigma = 1.5,
            double data_range = 1.0);

struct MetricReport {
  double dice = 0, mse = 0, ncc = 0, ssim = 0;

  bool has_nan() const;
};

MetricReport image_report(const torch::Tensor& warped, const torch::Tensor& fixed, const torch::Tensor& warped_labels,
                          const torch::Tensor& fixed_labels, DiceConvention convention = DiceConvention::Standard);

MetricReport mean_report(const std::vector<MetricReport>& reports);

}  // namespace mambareg::metrics
