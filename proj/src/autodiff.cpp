#include "rnas/autodiff.hpp"

#include <algorithm>

namespace rnas {

template <typename T>
void Node<T>::accumulate_grad(std::span<const T> g) {
  if (g.size() != value.size()) {
    throw ShapeError("gradient of " + std::to_string(g.size()) + " elements for a tensor of shape " +
                     shape_string(value.shape()));
  }
  if (grad.empty()) {
    grad = Tensor<T>(value.shape(), std::vector<T>(g.begin(), g.end()));
    return;
  }
  T* dst = grad.ptr();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

template <typename T>
Var<T> make_parameter(Tensor<T> value) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->requires_grad = true;
  node->is_parameter = true;
  return node;
}

template <typename T>
Var<T> make_constant(Tensor<T> value) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  return node;
}

template <typename T>
Var<T> make_input(Tensor<T> value, bool requires_grad) {
  auto node = make_constant(std::move(value));
  node->requires_grad = requires_grad;
  return node;
}

template <typename T>
bool Tape<T>::tracks(const Node<T>& node) const noexcept {
  switch (mode_) {
    case GradMode::none:
      return false;
    case GradMode::all:
      return node.requires_grad;
    case GradMode::inputs_only:
      return node.requires_grad && !node.is_parameter;
  }
  return false;
}

template <typename T>
Var<T> Tape<T>::push(Tensor<T> value, bool tracked, BackwardFn fn) {
  if (consumed_) throw UsageError("cannot record onto a tape after backward()");
  if (check_finite_ && !value.all_finite()) {
    throw NumericError("non-finite value produced by primitive #" + std::to_string(records_.size()));
  }
  auto out = make_constant(std::move(value));
  if (tracked && mode_ != GradMode::none) {
    out->requires_grad = true;
    records_.push_back({out, std::move(fn)});
  }
  return out;
}

template <typename T>
void Tape<T>::backward(const Var<T>& loss) {
  if (consumed_) throw UsageError("backward() called on a consumed tape");
  if (!loss || loss->value.size() != 1) {
    throw ShapeError("backward() needs a scalar loss, got shape " +
                     (loss ? shape_string(loss->value.shape()) : std::string("<null>")));
  }
  consumed_ = true;
  if (!loss->requires_grad) return;
  const T one = 1;
  loss->accumulate_grad(std::span<const T>(&one, 1));
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    Node<T>& out = *it->output;
    if (!out.has_grad()) continue;
    it->backward(out.grad);
    // Intermediate gradients are not needed once propagated.
    if (it->output != loss) out.zero_grad();
  }
  records_.clear();
}

template struct Node<float>;
template struct Node<double>;
template class Tape<float>;
template class Tape<double>;
template Var<float> make_parameter(Tensor<float>);
template Var<double> make_parameter(Tensor<double>);
template Var<float> make_constant(Tensor<float>);
template Var<double> make_constant(Tensor<double>);
template Var<float> make_input(Tensor<float>, bool);
template Var<double> make_input(Tensor<double>, bool);

}  // namespace rnas
