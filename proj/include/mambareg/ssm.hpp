#pragma once

// Selective state-space (Mamba-style) sequence layer.
//
// Continuous system x'(t) = A x(t) + B u(t), y(t) = C x(t) with diagonal A,
// discretized per token with zero-order hold on A and Euler on B:
//   h_t = exp(delta_t * A) * h_{t-1} + delta_t * B_t * u_t,   h_0 = 0
//   y_t = <C_t, h_t> + D * u_t
// delta, B and C are projections of the input token (the selection mechanism).

#include "mambareg/common.hpp"

#include <utility>

namespace mambareg::ssm {

enum class ScanAlgorithm {
  Sequential,  // one pass over L per (batch, channel)
  Chunked,     // per-chunk local scans joined by a carry pass; chunks are independent
};

/// A row-major raster flattening of a feature map, data is [B, H*W, C].
struct SequenceBatch {
  torch::Tensor data;
  int64_t height = 0;
  int64_t width = 0;
};

SequenceBatch raster_flatten(const torch::Tensor& feature_map);
torch::Tensor raster_unflatten(const SequenceBatch& seq);
/// Flips the L axis of a [B, L, D] tensor.
torch::Tensor reverse_sequence(const torch::Tensor& seq);

/// Zero-order-hold discretization of a diagonal SSM.
///   delta [B, L, D] > 0, A [D, N], b_in [B, L, N]
/// Returns (A_bar, B_bar), both [B, L, D, N].
std::pair<torch::Tensor, torch::Tensor> discretize(const torch::Tensor& delta, const torch::Tensor& A,
                                                   const torch::Tensor& b_in);

/// Differentiable scan over already-projected quantities.
///   u [B, L, D], delta [B, L, D] (positive), A [D, N], b [B, L, N], c [B, L, N], d_skip [D]
/// The backward pass recomputes hidden states instead of storing [B, L, D, N].
torch::Tensor scan(const torch::Tensor& u, const torch::Tensor& delta, const torch::Tensor& A, const torch::Tensor& b,
                   const torch::Tensor& c, const torch::Tensor& d_skip,
                   ScanAlgorithm algorithm = ScanAlgorithm::Chunked, int64_t chunk_size = 64);

/// Number of scan() calls in this process; lets callers confirm an SSM-free configuration.
uint64_t scan_call_count();

struct SSMOptions {
  SSMOptions(int64_t channels, int64_t state_dim = 8) : channels_(channels), state_dim_(state_dim) {}
  TORCH_ARG(int64_t, channels);
  TORCH_ARG(int64_t, state_dim);
  TORCH_ARG(double, dt_min) = 1e-3;
  TORCH_ARG(double, dt_max) = 1e-1;
  TORCH_ARG(ScanAlgorithm, algorithm) = ScanAlgorithm::Sequential;
  TORCH_ARG(int64_t, chunk_size) = 64;
};

/// Learned parameters of one selective SSM: A_log, D_skip and the three
/// input-dependent projections (W_delta with bias, W_B, W_C).
class SelectiveSSMImpl : public torch::nn::Module {
 public:
  explicit SelectiveSSMImpl(SSMOptions options);

  void reset();

  /// u [B, L, D] -> y [B, L, D]
  torch::Tensor forward(const torch::Tensor& u);

  /// A = -exp(A_log), strictly negative.
  torch::Tensor state_matrix() const { return -torch::exp(A_log); }
  /// softplus(W_delta u + bias), strictly positive.
  torch::Tensor step_size(const torch::Tensor& u);

  int64_t channels() const { return options.channels(); }
  int64_t state_dim() const { return options.state_dim(); }

  SSMOptions options;
  torch::Tensor A_log;
  torch::Tensor D_skip;
  torch::nn::Linear W_delta{nullptr};
  torch::nn::Linear W_B{nullptr};
  torch::nn::Linear W_C{nullptr};
};
TORCH_MODULE(SelectiveSSM);

/// selective_scan(u, params) on a sequence batch; shape is preserved.
SequenceBatch selective_scan(const SequenceBatch& u, SelectiveSSM& params);

/// Direction fusion without normalization or gating:
///   Uni: fwd(u)
///   Bi:  fwd(u) + reverse(bwd(reverse(u)))
/// `bwd` may be empty for Uni.
torch::Tensor bimamba_core(const torch::Tensor& u, SelectiveSSM& fwd, SelectiveSSM* bwd, MambaMode mode);

struct BiMambaOptions {
  BiMambaOptions(int64_t channels, MambaMode mode) : channels_(channels), mode_(mode) {}
  TORCH_ARG(int64_t, channels);
  TORCH_ARG(MambaMode, mode);
  TORCH_ARG(int64_t, state_dim) = 8;
  TORCH_ARG(int64_t, expand) = 1;
  TORCH_ARG(ScanAlgorithm, algorithm) = ScanAlgorithm::Sequential;
};

/// Vision-Mamba style block on a [B, L, D] sequence:
///   x, z = split(in_proj(LayerNorm(u)))
///   y    = bimamba_core(silu(x)) * silu(z)
///   out  = u + out_proj(y)
/// Mode None makes the block the identity.
class BiMambaBlockImpl : public torch::nn::Module {
 public:
  explicit BiMambaBlockImpl(BiMambaOptions options);

  torch::Tensor forward(const torch::Tensor& u);

  MambaMode mode() const { return options.mode(); }

  BiMambaOptions options;
  torch::nn::LayerNorm norm{nullptr};
  torch::nn::Linear in_proj{nullptr};
  torch::nn::Linear out_proj{nullptr};
  SelectiveSSM fwd{nullptr};
  SelectiveSSM bwd{nullptr};
};
TORCH_MODULE(BiMambaBlock);

/// bimamba on a sequence batch (full block with norm, gate and residual).
SequenceBatch bimamba(const SequenceBatch& u, BiMambaBlock& block);

/// Applies `block` to a [N, C, H, W] map through its raster flattening.
torch::Tensor apply_on_map(BiMambaBlock& block, const torch::Tensor& feature_map);

}  // namespace mambareg::ssm
