#pragma once

// Shared vocabulary for the registration library: error types, the Mamba
// ablation switch, and small tensor guards.
//
// Layout conventions used throughout:
//   Image / FeatureMap   [N, C, H, W] float
//   DeformationField     [N, 2, H, W] pixel displacements, channel 0 = dy, 1 = dx
//   SequenceBatch        [B, L, D] (row-major raster order when built from a map)
//   LabelMap             [H, W] int64, 0 = background
//   Mask                 [H, W] uint8 in {0, 1}

#include <torch/torch.h>

#include <stdexcept>
#include <string>
#include <string_view>

namespace mambareg {

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct PreconditionError : std::domain_error {
  using std::domain_error::domain_error;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Raised when a metric has no meaningful value (constant image, empty label map).
struct UndefinedMetricError : std::domain_error {
  using std::domain_error::domain_error;
};

enum class MambaMode { None, Uni, Bi };

std::string_view to_string(MambaMode mode);
MambaMode parse_mamba_mode(std::string_view text);

std::string shape_string(const torch::Tensor& t);

inline void require_same_shape(const torch::Tensor& a, const torch::Tensor& b, std::string_view what) {
  if (a.sizes() != b.sizes()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
  }
}

inline void require_dim(const torch::Tensor& t, int64_t dim, std::string_view what) {
  if (t.dim() != dim) {
    throw ShapeError(std::string(what) + ": expected " + std::to_string(dim) + "-d tensor, got " + shape_string(t));
  }
}

inline void require_finite(const torch::Tensor& t, std::string_view what) {
  if (!torch::isfinite(t).all().item<bool>()) {
    throw NumericError(std::string(what) + ": non-finite values");
  }
}

}  // namespace mambareg
