#pragma once

#include <vector>

#include "rnas/autodiff.hpp"

namespace rnas {

/// Anything that maps an image batch [N,C,H,W] to logits [N,K].
template <typename T>
class Classifier {
 public:
  virtual ~Classifier() = default;

  /// Inference-mode forward: batch norm reads running statistics and the
  /// model is not modified, so concurrent calls on separate tapes are safe.
  virtual Var<T> forward(Tape<T>& tape, const Var<T>& x) const = 0;

  /// (C, H, W) of one sample.
  virtual Shape input_shape() const = 0;
  virtual std::size_t num_classes() const = 0;
};

template <typename T>
class TrainableModel : public Classifier<T> {
 public:
  /// Training-mode forward: batch norm uses batch statistics and updates its
  /// running statistics.
  virtual Var<T> forward_train(Tape<T>& tape, const Var<T>& x) = 0;
  virtual std::vector<Var<T>> parameters() const = 0;
};

/// Logits for a batch with no gradient bookkeeping.
template <typename T>
Tensor<T> predict_logits(const Classifier<T>& model, const Tensor<T>& batch) {
  Tape<T> tape(GradMode::none);
  return model.forward(tape, make_constant(batch))->value;
}

}  // namespace rnas
