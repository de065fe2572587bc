#pragma once

// Figure helpers for registration panels.

#include <torch/torch.h>

namespace mambareg::viz {

/// Hue encodes displacement direction, saturation its magnitude relative to
/// `max_magnitude` (largest |phi| in the field when <= 0). Zero displacement is white.
///   phi [2, H, W] -> [3, H, W] float in [0, 1]
torch::Tensor flow_to_rgb(const torch::Tensor& phi, double max_magnitude = 0);

/// moving | fixed | warped | flow, separated by white columns of width `gap`.
/// Images are [C, H, W] with C in {1, 3}; result is [3, H, 4W + 3*gap].
torch::Tensor registration_panel(const torch::Tensor& moving, const torch::Tensor& fixed, const torch::Tensor& warped,
                                 const torch::Tensor& phi, int64_t gap = 2);

}  // namespace mambareg::viz
