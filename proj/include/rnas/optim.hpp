#pragma once

#include <vector>

#include "rnas/autodiff.hpp"

namespace rnas {

/// One SGD update in place:
///   v <- momentum * v + grad + weight_decay * param
///   param <- param - lr * v
template <typename T>
void sgd_step(Tensor<T>& param, const Tensor<T>& grad, Tensor<T>& velocity, double lr, double momentum,
              double weight_decay);

/// SGD with momentum over a fixed parameter list. Parameters without a
/// gradient are treated as having a zero gradient.
template <typename T>
class Sgd {
 public:
  Sgd(std::vector<Var<T>> params, double momentum, double weight_decay);

  void step(double lr);
  void zero_grad();
  const std::vector<Var<T>>& params() const noexcept { return params_; }

 private:
  std::vector<Var<T>> params_;
  std::vector<Tensor<T>> velocity_;
  double momentum_;
  double weight_decay_;
};

/// Cosine annealing to zero over `epochs`, evaluated at the start of `epoch`.
double cosine_lr(double initial_lr, std::size_t epoch, std::size_t epochs);

extern template class Sgd<float>;
extern template class Sgd<double>;

}  // namespace rnas
