#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "rnas/tensor.hpp"

namespace rnas {

/// Which leaves a tape differentiates.
///  - none: record nothing (pure inference)
///  - all: every node with requires_grad
///  - inputs_only: parameters act as constants; used by attacks so that
///    generating an input gradient never touches parameter gradients
enum class GradMode { none, all, inputs_only };

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // empty until something flows into it
  bool requires_grad = false;
  bool is_parameter = false;

  bool has_grad() const noexcept { return !grad.empty(); }
  void accumulate_grad(std::span<const T> g);
  void zero_grad() { grad = Tensor<T>(); }
};

template <typename T>
using Var = std::shared_ptr<Node<T>>;

template <typename T>
Var<T> make_parameter(Tensor<T> value);
template <typename T>
Var<T> make_constant(Tensor<T> value);
template <typename T>
Var<T> make_input(Tensor<T> value, bool requires_grad);

/// Linear record of executed primitives for one forward pass.
///
/// Records are appended in execution order, so inputs always precede their
/// consumers. backward() walks the records once in reverse and then marks
/// the tape consumed; a tape cannot be replayed.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(const Tensor<T>& grad_out)>;

  explicit Tape(GradMode mode = GradMode::all) : mode_(mode) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  GradMode mode() const noexcept { return mode_; }
  bool tracks(const Node<T>& node) const noexcept;
  bool tracks(const Var<T>& node) const noexcept { return node && tracks(*node); }

  /// Wraps `value` as the output of a primitive. `fn` is retained only when
  /// `tracked` is true; it must capture its inputs by Var to keep them alive.
  Var<T> push(Tensor<T> value, bool tracked, BackwardFn fn);

  void backward(const Var<T>& loss);

  bool consumed() const noexcept { return consumed_; }
  std::size_t size() const noexcept { return records_.size(); }

  /// Debug mode: every primitive output is checked for NaN/Inf.
  void set_check_finite(bool on) noexcept { check_finite_ = on; }

 private:
  struct Record {
    Var<T> output;
    BackwardFn backward;
  };

  GradMode mode_;
  bool consumed_ = false;
  bool check_finite_ = false;
  std::vector<Record> records_;
};

extern template struct Node<float>;
extern template struct Node<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace rnas
