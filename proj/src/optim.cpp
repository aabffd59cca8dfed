#include "rnas/optim.hpp"

#include <cmath>
#include <numbers>

namespace rnas {

template <typename T>
void sgd_step(Tensor<T>& param, const Tensor<T>& grad, Tensor<T>& velocity, double lr, double momentum,
              double weight_decay) {
  if (!(lr >= 0)) throw UsageError("sgd_step: learning rate must be non-negative, got " + std::to_string(lr));
  require_same_shape(param.shape(), grad.shape(), "sgd_step gradient");
  if (velocity.empty()) velocity = Tensor<T>(param.shape());
  require_same_shape(param.shape(), velocity.shape(), "sgd_step velocity");
  const T m = T(momentum), wd = T(weight_decay), step = T(lr);
  T* p = param.ptr();
  T* v = velocity.ptr();
  const T* g = grad.ptr();
  for (std::size_t i = 0; i < param.size(); ++i) {
    v[i] = m * v[i] + g[i] + wd * p[i];
    p[i] -= step * v[i];
  }
}

template <typename T>
Sgd<T>::Sgd(std::vector<Var<T>> params, double momentum, double weight_decay)
    : params_(std::move(params)), velocity_(params_.size()), momentum_(momentum), weight_decay_(weight_decay) {}

template <typename T>
void Sgd<T>::step(double lr) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Node<T>& p = *params_[i];
    if (!p.has_grad()) p.grad = Tensor<T>(p.value.shape());
    sgd_step(p.value, p.grad, velocity_[i], lr, momentum_, weight_decay_);
  }
}

template <typename T>
void Sgd<T>::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

double cosine_lr(double initial_lr, std::size_t epoch, std::size_t epochs) {
  if (epochs == 0) throw UsageError("cosine_lr: epochs must be positive");
  return initial_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * double(epoch) / double(epochs)));
}

template void sgd_step(Tensor<float>&, const Tensor<float>&, Tensor<float>&, double, double, double);
template void sgd_step(Tensor<double>&, const Tensor<double>&, Tensor<double>&, double, double, double);
template class Sgd<float>;
template class Sgd<double>;

}  // namespace rnas
