#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "rnas/autodiff.hpp"

namespace rnas {

/// One named tensor in a model's state, in declaration order. `trainable`
/// is false for batch-norm running statistics.
template <typename T>
struct StateEntry {
  std::string name;
  Tensor<T>* tensor;
  bool trainable;
};

/// Ordered registry of the tensors a model owns.
template <typename T>
class ParamSet {
 public:
  Var<T> add_param(std::string name, Tensor<T> init);
  void add_buffer(std::string name, Tensor<T>* buffer);

  const std::vector<Var<T>>& params() const noexcept { return params_; }
  const std::vector<StateEntry<T>>& entries() const noexcept { return entries_; }
  std::size_t trainable_count() const;

 private:
  std::vector<Var<T>> params_;
  std::vector<StateEntry<T>> entries_;
};

/// Entry count, then per entry: name, trainable flag, rank, extents,
/// little-endian scalars. Reading requires names and shapes to match.
template <typename T>
void write_state(std::ostream& out, const std::vector<StateEntry<T>>& entries);
template <typename T>
void read_state(std::istream& in, const std::vector<StateEntry<T>>& entries, const std::string& what);

extern template class ParamSet<float>;
extern template class ParamSet<double>;

}  // namespace rnas
