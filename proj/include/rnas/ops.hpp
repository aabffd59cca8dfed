#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "rnas/autodiff.hpp"

// Differentiable primitives. Every op takes the tape it records onto and
// returns a fresh Var; inputs are never modified.
namespace rnas::ops {

struct Conv2dParams {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t dilation = 1;
  std::size_t groups = 1;
};

/// Output extent of a convolution or pooling window along one axis.
/// Returns 0 when the window does not fit.
std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding,
                            std::size_t dilation);

/// Cross-correlation of x [N,C,H,W] with weight [K, C/groups, kh, kw].
/// `bias` may be null.
template <typename T>
Var<T> conv2d(Tape<T>& tape, const Var<T>& x, const Var<T>& weight, const Var<T>& bias, const Conv2dParams& p);

/// Running statistics owned by a batch-norm layer.
template <typename T>
struct BatchNormState {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);

  explicit BatchNormState(std::size_t channels = 1)
      : running_mean({channels}, T(0)), running_var({channels}, T(1)) {}
};

/// Per-channel normalisation of [N,C] or [N,C,H,W]. Training mode uses
/// batch statistics and updates `state`; eval mode reads `state` only.
template <typename T>
Var<T> batch_norm(Tape<T>& tape, const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                  BatchNormState<T>& state, bool training);
template <typename T>
Var<T> batch_norm_eval(Tape<T>& tape, const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                       const BatchNormState<T>& state);

template <typename T>
Var<T> relu(Tape<T>& tape, const Var<T>& x);
template <typename T>
Var<T> add(Tape<T>& tape, const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> mul(Tape<T>& tape, const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> scale(Tape<T>& tape, const Var<T>& x, T factor);
template <typename T>
Var<T> sum(Tape<T>& tape, const Var<T>& x);
template <typename T>
Var<T> reshape(Tape<T>& tape, const Var<T>& x, Shape shape);

/// Axis-1 concatenation of [N,Ci,...] tensors (rank 2 or 4).
template <typename T>
Var<T> concat_channels(Tape<T>& tape, const std::vector<Var<T>>& xs);

/// x[:, :, offset:, offset:]
template <typename T>
Var<T> crop(Tape<T>& tape, const Var<T>& x, std::size_t offset);

/// 3x3 windows, padding 1. Padding never wins the max; the average counts
/// only in-bounds cells.
template <typename T>
Var<T> max_pool_3x3(Tape<T>& tape, const Var<T>& x, std::size_t stride);
template <typename T>
Var<T> avg_pool_3x3(Tape<T>& tape, const Var<T>& x, std::size_t stride);

/// [N,C,H,W] -> [N,C]
template <typename T>
Var<T> global_avg_pool(Tape<T>& tape, const Var<T>& x);

/// x [N,F] times weight [O,F]^T plus bias [O] (bias may be null).
template <typename T>
Var<T> linear(Tape<T>& tape, const Var<T>& x, const Var<T>& weight, const Var<T>& bias);

/// Mean cross-entropy of softmax(logits [N,K]) against integer labels.
template <typename T>
Var<T> softmax_cross_entropy(Tape<T>& tape, const Var<T>& logits, std::span<const std::int32_t> labels);

}  // namespace rnas::ops
