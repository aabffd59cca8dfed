#pragma once

#include <random>

#include "rnas/layers.hpp"
#include "rnas/model.hpp"
#include "rnas/network_params.hpp"

namespace rnas {

/// logits = W flatten(x) + b, for any input shape.
template <typename T>
class LinearModel final : public TrainableModel<T> {
 public:
  LinearModel(Shape input_shape, std::size_t classes, std::uint64_t seed) : input_shape_(std::move(input_shape)) {
    std::mt19937_64 rng(seed);
    const std::size_t f = shape_size(input_shape_);
    weight_ = params_.add_param("weight", layers::uniform_init<T>({classes, f}, f, rng));
    bias_ = params_.add_param("bias", layers::uniform_init<T>({classes}, f, rng));
  }

  Var<T> forward(Tape<T>& tape, const Var<T>& x) const override {
    const std::size_t f = shape_size(input_shape_);
    if (x->value.rank() == 0 || x->value.size() != x->value.dim(0) * f) {
      throw ShapeError("linear model: batch " + shape_string(x->value.shape()) + " does not match " +
                       shape_string(input_shape_));
    }
    return ops::linear(tape, ops::reshape(tape, x, Shape{x->value.dim(0), f}), weight_, bias_);
  }
  Var<T> forward_train(Tape<T>& tape, const Var<T>& x) override { return forward(tape, x); }
  std::vector<Var<T>> parameters() const override { return params_.params(); }
  Shape input_shape() const override { return input_shape_; }
  std::size_t num_classes() const override { return weight_->value.dim(0); }

  Var<T>& weight() { return weight_; }
  Var<T>& bias() { return bias_; }

 private:
  Shape input_shape_;
  ParamSet<T> params_;
  Var<T> weight_, bias_;
};

}  // namespace rnas
