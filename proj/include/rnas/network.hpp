#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "rnas/genotype.hpp"
#include "rnas/model.hpp"
#include "rnas/network_params.hpp"
#include "rnas/ops.hpp"

namespace rnas {

/// Recipe for a stacked-cell classifier.
struct NetworkSpec {
  std::size_t num_cells = 8;
  std::size_t init_channels = 16;
  std::size_t num_classes = 10;
  Shape input_shape{3, 32, 32};  // (C, H, W)

  void validate() const;
  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

/// Cell indices that are reduce cells: floor(N/3) and floor(2N/3) when both
/// are at least 1 and distinct, otherwise none.
std::vector<std::size_t> reduction_indices(std::size_t num_cells);

namespace layers {
template <typename T>
class ConvBn;
}
namespace detail {
template <typename T>
class CellModule;
}  // namespace detail

/// A genotype realised as stem -> cells -> global pool -> linear head.
template <typename T>
class Network final : public TrainableModel<T> {
 public:
  Network(const Genotype& genotype, const NetworkSpec& spec, std::uint64_t seed);
  ~Network() override;
  Network(Network&&) noexcept;
  Network& operator=(Network&&) noexcept;
  Network(const Network&) = delete;
  Network& operator=(const Network&) = delete;

  Var<T> forward(Tape<T>& tape, const Var<T>& x) const override;
  Var<T> forward_train(Tape<T>& tape, const Var<T>& x) override;
  std::vector<Var<T>> parameters() const override { return params_.params(); }
  Shape input_shape() const override { return spec_.input_shape; }
  std::size_t num_classes() const override { return spec_.num_classes; }

  /// Trainable scalars: conv/linear weights, biases, batch-norm affine.
  std::size_t param_count() const { return params_.trainable_count(); }
  const std::vector<StateEntry<T>>& state() const noexcept { return params_.entries(); }

  const Genotype& genotype() const noexcept { return genotype_; }
  const NetworkSpec& spec() const noexcept { return spec_; }
  /// Multiplier C_cell / init_channels of every cell, in order.
  std::vector<std::size_t> cell_channels() const;

 private:
  Var<T> run(Tape<T>& tape, const Var<T>& x, bool training) const;

  Genotype genotype_;
  NetworkSpec spec_;
  ParamSet<T> params_;
  std::unique_ptr<layers::ConvBn<T>> stem_;
  std::vector<std::unique_ptr<detail::CellModule<T>>> cells_;
  Var<T> head_weight_, head_bias_;
};

/// Parameter count of build(g, spec) without materialising buffers twice.
std::size_t count_parameters(const Genotype& g, const NetworkSpec& spec);

// Checkpoint container: magic "RCKT", u32 version, u8 dtype, spec, genotype
// text, then named state tensors in declaration order. Little-endian.
template <typename T>
void save_checkpoint(const Network<T>& net, std::ostream& out);
template <typename T>
Network<T> load_checkpoint(std::istream& in);
template <typename T>
void save_checkpoint_file(const Network<T>& net, const std::string& path);
template <typename T>
Network<T> load_checkpoint_file(const std::string& path);

/// Reads only the dtype byte of a checkpoint.
Precision checkpoint_precision(const std::string& path);

extern template class Network<float>;
extern template class Network<double>;

}  // namespace rnas
