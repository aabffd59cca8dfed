#include "rnas/network.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "rnas/binary_io.hpp"
#include "rnas/layers.hpp"

namespace rnas {

void NetworkSpec::validate() const {
  if (num_cells < 1) throw UsageError("network spec: num_cells must be >= 1");
  if (init_channels < 1) throw UsageError("network spec: init_channels must be >= 1");
  if (num_classes < 2) throw UsageError("network spec: num_classes must be >= 2");
  if (input_shape.size() != 3 || input_shape[0] == 0 || input_shape[1] == 0 || input_shape[2] == 0) {
    throw UsageError("network spec: input_shape must be (C,H,W) with positive extents, got " +
                     shape_string(input_shape));
  }
}

std::vector<std::size_t> reduction_indices(std::size_t num_cells) {
  const std::size_t a = num_cells / 3, b = 2 * num_cells / 3;
  if (a >= 1 && b > a) return {a, b};
  return {};
}

template <typename T>
Var<T> ParamSet<T>::add_param(std::string name, Tensor<T> init) {
  auto p = make_parameter(std::move(init));
  entries_.push_back({std::move(name), &p->value, true});
  params_.push_back(p);
  return p;
}

template <typename T>
void ParamSet<T>::add_buffer(std::string name, Tensor<T>* buffer) {
  entries_.push_back({std::move(name), buffer, false});
}

template <typename T>
std::size_t ParamSet<T>::trainable_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

namespace detail {

template <typename T>
class CellModule {
 public:
  CellModule(ParamSet<T>& ps, const std::string& name, const CellGenotype& g, std::size_t c_prev_prev,
             std::size_t c_prev, std::size_t c, bool reduction, bool reduction_prev, std::mt19937_64& rng)
      : genotype_(g), reduction_(reduction) {
    if (reduction_prev) {
      pre0_ = std::make_unique<layers::FactorizedReduce<T>>(ps, name + ".preprocess0", c_prev_prev, c, rng);
    } else {
      pre0_ = std::make_unique<layers::ConvBn<T>>(ps, name + ".preprocess0", c_prev_prev, c, 1, ops::Conv2dParams{},
                                                true, rng);
    }
    pre1_ = std::make_unique<layers::ConvBn<T>>(ps, name + ".preprocess1", c_prev, c, 1, ops::Conv2dParams{}, true, rng);
    for (std::size_t i = 0; i < g.edges.size(); ++i) {
      const Edge& e = g.edges[i];
      const std::size_t stride = reduction && e.from < kCellInputs ? 2 : 1;
      ops_.push_back(layers::make_cell_op(ps, name + ".ops." + std::to_string(i), e.op, c, stride, rng));
    }
  }

  bool reduction() const { return reduction_; }
  std::size_t multiplier() const { return genotype_.concat.size(); }

  Var<T> forward(layers::Context<T>& ctx, const Var<T>& s0, const Var<T>& s1) const {
    std::vector<Var<T>> states{pre0_->forward(ctx, s0), pre1_->forward(ctx, s1)};
    for (int k = 0; k < kCellSteps; ++k) {
      const auto a = std::size_t(2 * k), b = a + 1;
      Var<T> h1 = ops_[a]->forward(ctx, states[std::size_t(genotype_.edges[a].from)]);
      Var<T> h2 = ops_[b]->forward(ctx, states[std::size_t(genotype_.edges[b].from)]);
      states.push_back(ops::add(ctx.tape, h1, h2));
    }
    std::vector<Var<T>> picked;
    for (int idx : genotype_.concat) picked.push_back(states[std::size_t(idx)]);
    return ops::concat_channels(ctx.tape, picked);
  }

 private:
  CellGenotype genotype_;
  bool reduction_;
  std::unique_ptr<layers::Layer<T>> pre0_, pre1_;
  std::vector<std::unique_ptr<layers::Layer<T>>> ops_;
};

}  // namespace detail

namespace {
constexpr std::size_t kStemMultiplier = 3;
}

template <typename T>
Network<T>::Network(const Genotype& genotype, const NetworkSpec& spec, std::uint64_t seed)
    : genotype_(genotype), spec_(spec) {
  spec_.validate();
  validate(genotype_);
  std::mt19937_64 rng(seed);

  const std::size_t in_channels = spec_.input_shape[0];
  std::size_t h = spec_.input_shape[1], w = spec_.input_shape[2];
  std::size_t c_curr = kStemMultiplier * spec_.init_channels;
  stem_ = std::make_unique<layers::ConvBn<T>>(params_, "stem", in_channels, c_curr, 3,
                                                    ops::Conv2dParams{1, 1, 1, 1}, false, rng);

  const auto reductions = reduction_indices(spec_.num_cells);
  std::size_t c_prev_prev = c_curr, c_prev = c_curr;
  c_curr = spec_.init_channels;
  bool reduction_prev = false;
  for (std::size_t i = 0; i < spec_.num_cells; ++i) {
    const bool reduction = std::find(reductions.begin(), reductions.end(), i) != reductions.end();
    if (reduction) {
      if (h < 2 || w < 2 || h % 2 || w % 2) {
        throw ShapeError("network build: cell " + std::to_string(i) + " is a reduce cell but its input is " +
                         std::to_string(h) + "x" + std::to_string(w) + "; reductions need even extents >= 2");
      }
      c_curr *= 2;
      h /= 2;
      w /= 2;
    }
    const CellGenotype& cg = reduction ? genotype_.reduce : genotype_.normal;
    cells_.push_back(std::make_unique<detail::CellModule<T>>(params_, "cells." + std::to_string(i), cg, c_prev_prev,
                                                             c_prev, c_curr, reduction, reduction_prev, rng));
    c_prev_prev = c_prev;
    c_prev = cg.concat.size() * c_curr;
    reduction_prev = reduction;
  }
  head_weight_ = params_.add_param("classifier.weight",
                                   layers::uniform_init<T>({spec_.num_classes, c_prev}, c_prev, rng));
  head_bias_ = params_.add_param("classifier.bias", layers::uniform_init<T>({spec_.num_classes}, c_prev, rng));
}

template <typename T>
Network<T>::~Network() = default;
template <typename T>
Network<T>::Network(Network&&) noexcept = default;
template <typename T>
Network<T>& Network<T>::operator=(Network&&) noexcept = default;

template <typename T>
Var<T> Network<T>::run(Tape<T>& tape, const Var<T>& x, bool training) const {
  const Shape& s = x->value.shape();
  if (s.size() != 4 || Shape(s.begin() + 1, s.end()) != spec_.input_shape) {
    throw ShapeError("network forward: expected batch of " + shape_string(spec_.input_shape) + ", got " +
                     shape_string(s));
  }
  layers::Context<T> ctx{tape, training};
  Var<T> s0 = stem_->forward(ctx, x);
  Var<T> s1 = s0;
  for (const auto& cell : cells_) {
    Var<T> next = cell->forward(ctx, s0, s1);
    s0 = s1;
    s1 = next;
  }
  return ops::linear(tape, ops::global_avg_pool(tape, s1), head_weight_, head_bias_);
}

template <typename T>
Var<T> Network<T>::forward(Tape<T>& tape, const Var<T>& x) const {
  return run(tape, x, false);
}

template <typename T>
Var<T> Network<T>::forward_train(Tape<T>& tape, const Var<T>& x) {
  return run(tape, x, true);
}

template <typename T>
std::vector<std::size_t> Network<T>::cell_channels() const {
  std::vector<std::size_t> out;
  std::size_t mult = 1;
  for (const auto& cell : cells_) {
    if (cell->reduction()) mult *= 2;
    out.push_back(mult);
  }
  return out;
}

std::size_t count_parameters(const Genotype& g, const NetworkSpec& spec) {
  return Network<float>(g, spec, 0).param_count();
}

// ---- checkpoint container ----

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
constexpr std::uint8_t dtype_code() {
  return sizeof(T) == 4 ? 2 : 3;
}

}  // namespace

template <typename T>
void write_state(std::ostream& out, const std::vector<StateEntry<T>>& entries) {
  io::write_uint<std::uint32_t>(out, std::uint32_t(entries.size()));
  for (const auto& e : entries) {
    io::write_string(out, e.name);
    io::write_uint<std::uint8_t>(out, e.trainable ? 1 : 0);
    io::write_uint<std::uint32_t>(out, std::uint32_t(e.tensor->rank()));
    for (std::size_t d : e.tensor->shape()) io::write_uint<std::uint32_t>(out, std::uint32_t(d));
    io::write_floats<T>(out, e.tensor->data());
  }
}

template <typename T>
void read_state(std::istream& in, const std::vector<StateEntry<T>>& entries, const std::string& what) {
  const auto count = io::read_uint<std::uint32_t>(in, "state entry count");
  if (count != entries.size()) {
    throw DataError(what + " holds " + std::to_string(count) + " tensors, model declares " +
                    std::to_string(entries.size()));
  }
  for (const auto& e : entries) {
    const std::string name = io::read_string(in, "state tensor name");
    if (name != e.name) throw DataError(what + " tensor '" + name + "' found where '" + e.name + "' was expected");
    io::read_uint<std::uint8_t>(in, "state tensor flag");
    const auto rank = io::read_uint<std::uint32_t>(in, "state tensor rank");
    if (rank > 8) throw DataError(what + " tensor '" + name + "' has implausible rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& d : shape) d = io::read_uint<std::uint32_t>(in, "state tensor extent");
    if (shape != e.tensor->shape()) {
      throw DataError(what + " tensor '" + name + "' has shape " + shape_string(shape) + ", expected " +
                      shape_string(e.tensor->shape()));
    }
    io::read_floats<T>(in, e.tensor->data(), "state tensor payload");
  }
}

template <typename T>
void save_checkpoint(const Network<T>& net, std::ostream& out) {
  out.write("RCKT", 4);
  io::write_uint<std::uint32_t>(out, kCheckpointVersion);
  io::write_uint<std::uint8_t>(out, dtype_code<T>());
  const NetworkSpec& spec = net.spec();
  io::write_uint<std::uint32_t>(out, std::uint32_t(spec.num_cells));
  io::write_uint<std::uint32_t>(out, std::uint32_t(spec.init_channels));
  io::write_uint<std::uint32_t>(out, std::uint32_t(spec.num_classes));
  for (std::size_t d : spec.input_shape) io::write_uint<std::uint32_t>(out, std::uint32_t(d));
  io::write_string(out, serialize_genotype(net.genotype()));
  write_state(out, net.state());
}

template <typename T>
Network<T> load_checkpoint(std::istream& in) {
  io::expect_magic(in, "RCKT", "checkpoint");
  const auto version = io::read_uint<std::uint32_t>(in, "checkpoint version");
  if (version != kCheckpointVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
  const auto dtype = io::read_uint<std::uint8_t>(in, "checkpoint dtype");
  if (dtype != dtype_code<T>()) {
    throw DataError("checkpoint precision (dtype " + std::to_string(dtype) + ") does not match requested precision");
  }
  NetworkSpec spec;
  spec.num_cells = io::read_uint<std::uint32_t>(in, "checkpoint spec");
  spec.init_channels = io::read_uint<std::uint32_t>(in, "checkpoint spec");
  spec.num_classes = io::read_uint<std::uint32_t>(in, "checkpoint spec");
  for (auto& d : spec.input_shape) d = io::read_uint<std::uint32_t>(in, "checkpoint spec");
  const Genotype genotype = parse_genotype(io::read_string(in, "checkpoint genotype"));
  Network<T> net(genotype, spec, 0);
  read_state(in, net.state(), "checkpoint");
  return net;
}

template <typename T>
void save_checkpoint_file(const Network<T>& net, const std::string& path) {
  std::ostringstream out(std::ios::binary);
  save_checkpoint(net, out);
  io::write_file_atomic(path, out.str());
}

template <typename T>
Network<T> load_checkpoint_file(const std::string& path) {
  std::istringstream in(io::read_file(path), std::ios::binary);
  return load_checkpoint<T>(in);
}

Precision checkpoint_precision(const std::string& path) {
  std::istringstream in(io::read_file(path), std::ios::binary);
  io::expect_magic(in, "RCKT", "checkpoint");
  io::read_uint<std::uint32_t>(in, "checkpoint version");
  const auto dtype = io::read_uint<std::uint8_t>(in, "checkpoint dtype");
  if (dtype == 2) return Precision::f32;
  if (dtype == 3) return Precision::f64;
  throw DataError("unknown checkpoint dtype " + std::to_string(dtype));
}

template void write_state(std::ostream&, const std::vector<StateEntry<float>>&);
template void write_state(std::ostream&, const std::vector<StateEntry<double>>&);
template void read_state(std::istream&, const std::vector<StateEntry<float>>&, const std::string&);
template void read_state(std::istream&, const std::vector<StateEntry<double>>&, const std::string&);
template class ParamSet<float>;
template class ParamSet<double>;
template class Network<float>;
template class Network<double>;
template void save_checkpoint(const Network<float>&, std::ostream&);
template void save_checkpoint(const Network<double>&, std::ostream&);
template Network<float> load_checkpoint(std::istream&);
template Network<double> load_checkpoint(std::istream&);
template void save_checkpoint_file(const Network<float>&, const std::string&);
template void save_checkpoint_file(const Network<double>&, const std::string&);
template Network<float> load_checkpoint_file(const std::string&);
template Network<double> load_checkpoint_file(const std::string&);

}  // namespace rnas
