#pragma once

#include <cmath>
#include <memory>
#include <random>
#include <string>

#include "rnas/genotype.hpp"
#include "rnas/network_params.hpp"
#include "rnas/ops.hpp"

// Building blocks of DARTS cells. Each block registers its tensors with a
// ParamSet in construction order, which fixes checkpoint layout.
namespace rnas::layers {

template <typename T>
struct Context {
  Tape<T>& tape;
  bool training;
};

/// U(-1/sqrt(fan_in), 1/sqrt(fan_in)), the usual default for conv/linear.
template <typename T>
Tensor<T> uniform_init(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(double(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = T(dist(rng));
  return t;
}

template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Var<T> forward(Context<T>& ctx, const Var<T>& x) const = 0;
};

template <typename T>
class BatchNorm {
 public:
  BatchNorm(ParamSet<T>& ps, const std::string& name, std::size_t channels) : state_(channels) {
    gamma_ = ps.add_param(name + ".weight", Tensor<T>({channels}, T(1)));
    beta_ = ps.add_param(name + ".bias", Tensor<T>({channels}, T(0)));
    ps.add_buffer(name + ".running_mean", &state_.running_mean);
    ps.add_buffer(name + ".running_var", &state_.running_var);
  }
  BatchNorm(const BatchNorm&) = delete;
  BatchNorm& operator=(const BatchNorm&) = delete;

  Var<T> forward(Context<T>& ctx, const Var<T>& x) const {
    if (ctx.training) return ops::batch_norm(ctx.tape, x, gamma_, beta_, state_, true);
    return ops::batch_norm_eval(ctx.tape, x, gamma_, beta_, state_);
  }

 private:
  Var<T> gamma_, beta_;
  // Written only by training-mode forward passes.
  mutable ops::BatchNormState<T> state_;
};

/// Bias-free convolution with a square kernel.
template <typename T>
class Conv {
 public:
  Conv(ParamSet<T>& ps, const std::string& name, std::size_t c_in, std::size_t c_out, std::size_t kernel,
       ops::Conv2dParams p, std::mt19937_64& rng)
      : p_(p) {
    const std::size_t fan_in = (c_in / p.groups) * kernel * kernel;
    weight_ = ps.add_param(name + ".weight", uniform_init<T>({c_out, c_in / p.groups, kernel, kernel}, fan_in, rng));
  }
  Var<T> forward(Context<T>& ctx, const Var<T>& x) const { return ops::conv2d(ctx.tape, x, weight_, Var<T>(), p_); }

 private:
  ops::Conv2dParams p_;
  Var<T> weight_;
};

/// [ReLU ->] conv -> BN
template <typename T>
class ConvBn : public Layer<T> {
 public:
  ConvBn(ParamSet<T>& ps, const std::string& name, std::size_t c_in, std::size_t c_out, std::size_t kernel,
         ops::Conv2dParams p, bool leading_relu, std::mt19937_64& rng)
      : leading_relu_(leading_relu), conv_(ps, name + ".conv", c_in, c_out, kernel, p, rng), bn_(ps, name + ".bn", c_out) {}

  Var<T> forward(Context<T>& ctx, const Var<T>& x) const override {
    Var<T> h = leading_relu_ ? ops::relu(ctx.tape, x) : x;
    return bn_.forward(ctx, conv_.forward(ctx, h));
  }

 private:
  bool leading_relu_;
  Conv<T> conv_;
  BatchNorm<T> bn_;
};

inline std::size_t checked_cell_kernel(std::size_t kernel, const char* what) {
  if (kernel != 3 && kernel != 5) {
    throw UsageError(std::string(what) + ": unsupported kernel size " + std::to_string(kernel) + " (expected 3 or 5)");
  }
  return kernel;
}

/// ReLU -> depthwise (kernel, stride, dilation) -> pointwise 1x1 -> BN.
/// Padding keeps stride-1 extents unchanged.
template <typename T>
class DepthwiseBlock {
 public:
  DepthwiseBlock(ParamSet<T>& ps, const std::string& name, std::size_t c_in, std::size_t c_out, std::size_t kernel,
                 std::size_t stride, std::size_t dilation, std::mt19937_64& rng)
      : depthwise_(ps, name + ".depthwise", c_in, c_in, kernel, {stride, dilation * (kernel - 1) / 2, dilation, c_in},
                   rng),
        pointwise_(ps, name + ".pointwise", c_in, c_out, 1, {}, rng),
        bn_(ps, name + ".bn", c_out) {}

  Var<T> forward(Context<T>& ctx, const Var<T>& x) const {
    return bn_.forward(ctx, pointwise_.forward(ctx, depthwise_.forward(ctx, ops::relu(ctx.tape, x))));
  }

 private:
  Conv<T> depthwise_;
  Conv<T> pointwise_;
  BatchNorm<T> bn_;
};

/// Two depthwise blocks; only the first one strides.
template <typename T>
class SepConv : public Layer<T> {
 public:
  SepConv(ParamSet<T>& ps, const std::string& name, std::size_t channels, std::size_t kernel, std::size_t stride,
          std::mt19937_64& rng)
      : first_(ps, name + ".0", channels, channels, checked_cell_kernel(kernel, "sep_conv"), stride, 1, rng),
        second_(ps, name + ".1", channels, channels, kernel, 1, 1, rng) {}

  Var<T> forward(Context<T>& ctx, const Var<T>& x) const override {
    return second_.forward(ctx, first_.forward(ctx, x));
  }

 private:
  DepthwiseBlock<T> first_, second_;
};

/// One depthwise block with dilation 2.
template <typename T>
class DilConv : public Layer<T> {
 public:
  DilConv(ParamSet<T>& ps, const std::string& name, std::size_t channels, std::size_t kernel, std::size_t stride,
          std::mt19937_64& rng)
      : block_(ps, name, channels, channels, checked_cell_kernel(kernel, "dil_conv"), stride, 2, rng) {}

  Var<T> forward(Context<T>& ctx, const Var<T>& x) const override { return block_.forward(ctx, x); }

 private:
  DepthwiseBlock<T> block_;
};

template <typename T>
class Pool : public Layer<T> {
 public:
  Pool(bool max, std::size_t stride) : max_(max), stride_(stride) {}
  Var<T> forward(Context<T>& ctx, const Var<T>& x) const override {
    return max_ ? ops::max_pool_3x3(ctx.tape, x, stride_) : ops::avg_pool_3x3(ctx.tape, x, stride_);
  }

 private:
  bool max_;
  std::size_t stride_;
};

template <typename T>
class Identity : public Layer<T> {
 public:
  Var<T> forward(Context<T>&, const Var<T>& x) const override { return x; }
};

/// Halves spatial extents with two 1x1 stride-2 convolutions, the second
/// offset by one pixel, concatenated then normalised. Extents must be even.
template <typename T>
class FactorizedReduce : public Layer<T> {
 public:
  FactorizedReduce(ParamSet<T>& ps, const std::string& name, std::size_t c_in, std::size_t c_out,
                   std::mt19937_64& rng)
      : left_(ps, name + ".conv_1", c_in, c_out / 2, 1, {2, 0, 1, 1}, rng),
        right_(ps, name + ".conv_2", c_in, c_out - c_out / 2, 1, {2, 0, 1, 1}, rng),
        bn_(ps, name + ".bn", c_out) {}

  Var<T> forward(Context<T>& ctx, const Var<T>& x) const override {
    Var<T> h = ops::relu(ctx.tape, x);
    Var<T> a = left_.forward(ctx, h);
    Var<T> b = right_.forward(ctx, ops::crop(ctx.tape, h, 1));
    return bn_.forward(ctx, ops::concat_channels(ctx.tape, std::vector<Var<T>>{a, b}));
  }

 private:
  Conv<T> left_, right_;
  BatchNorm<T> bn_;
};

/// The layer implementing one genotype edge.
template <typename T>
std::unique_ptr<Layer<T>> make_cell_op(ParamSet<T>& ps, const std::string& name, OpKind op, std::size_t channels,
                                       std::size_t stride, std::mt19937_64& rng) {
  switch (op) {
    case OpKind::sep_conv_3x3:
      return std::make_unique<SepConv<T>>(ps, name, channels, 3, stride, rng);
    case OpKind::sep_conv_5x5:
      return std::make_unique<SepConv<T>>(ps, name, channels, 5, stride, rng);
    case OpKind::dil_conv_3x3:
      return std::make_unique<DilConv<T>>(ps, name, channels, 3, stride, rng);
    case OpKind::dil_conv_5x5:
      return std::make_unique<DilConv<T>>(ps, name, channels, 5, stride, rng);
    case OpKind::max_pool_3x3:
      return std::make_unique<Pool<T>>(true, stride);
    case OpKind::avg_pool_3x3:
      return std::make_unique<Pool<T>>(false, stride);
    case OpKind::skip_connect:
      if (stride == 1) return std::make_unique<Identity<T>>();
      return std::make_unique<FactorizedReduce<T>>(ps, name, channels, channels, rng);
  }
  throw UsageError("unsupported operation");
}

}  // namespace rnas::layers
