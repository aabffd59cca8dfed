#include "rnas/ensemble.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "rnas/binary_io.hpp"
#include "rnas/layers.hpp"
#include "rnas/parallel.hpp"

namespace rnas {

void partition_cells(std::size_t total, std::span<const std::size_t> sizes) {
  if (sizes.empty()) throw UsageError("cell partition is empty");
  std::size_t sum = 0;
  for (std::size_t s : sizes) {
    if (s < 1) throw UsageError("cell partition: every member needs at least one cell");
    sum += s;
  }
  if (sum != total) {
    throw UsageError("cell partition sums to " + std::to_string(sum) + " but must sum to " + std::to_string(total));
  }
}

void EnsembleSpec::validate() const {
  if (members.size() < 2) throw UsageError("an ensemble needs at least two members");
  std::vector<std::size_t> sizes;
  for (const auto& m : members) {
    rnas::validate(m.genotype);
    if (m.epochs < 1) throw UsageError("ensemble member epochs must be >= 1");
    sizes.push_back(m.num_cells);
  }
  partition_cells(total_cells, sizes);
  for (std::size_t i = 0; i < members.size(); ++i) member_network(i).validate();
  if (combiner.hidden_multiplier < 1) throw UsageError("combiner hidden multiplier must be >= 1");
  if (!(combiner.lr >= 0)) throw UsageError("combiner lr must be non-negative");
  if (combiner.batch_size < 2) throw UsageError("combiner batch size must be >= 2");
  TrainConfig t = train;
  t.epochs = 1;
  t.validate();
}

NetworkSpec EnsembleSpec::member_network(std::size_t i) const {
  NetworkSpec s;
  s.num_cells = members.at(i).num_cells;
  s.init_channels = init_channels;
  s.num_classes = num_classes;
  s.input_shape = input_shape;
  return s;
}

EnsembleSpec sample_ensemble_spec(std::span<const std::size_t> sizes, std::size_t total_cells,
                                  std::size_t total_epochs, const NetworkSpec& base, const TrainConfig& train,
                                  std::uint64_t seed) {
  partition_cells(total_cells, sizes);
  EnsembleSpec spec;
  spec.total_cells = total_cells;
  spec.init_channels = base.init_channels;
  spec.num_classes = base.num_classes;
  spec.input_shape = base.input_shape;
  spec.train = train;
  spec.seed = seed;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    MemberSpec m;
    m.genotype = sample_random(derive_seed(seed, 2 * i));
    m.num_cells = sizes[i];
    m.epochs = epoch_budget(sizes[i], total_cells, total_epochs);
    m.seed = derive_seed(seed, 2 * i + 1);
    spec.members.push_back(std::move(m));
  }
  spec.validate();
  return spec;
}

nlohmann::json ensemble_spec_to_json(const EnsembleSpec& s) {
  nlohmann::json members = nlohmann::json::array();
  for (const auto& m : s.members) {
    members.push_back({{"genotype", serialize_genotype(m.genotype)},
                       {"num_cells", m.num_cells},
                       {"epochs", m.epochs},
                       {"seed", m.seed}});
  }
  return {{"members", members},
          {"total_cells", s.total_cells},
          {"init_channels", s.init_channels},
          {"num_classes", s.num_classes},
          {"input_shape", s.input_shape},
          {"train", train_config_to_json(s.train)},
          {"combiner",
           {{"hidden_multiplier", s.combiner.hidden_multiplier},
            {"lr", s.combiner.lr},
            {"batch_size", s.combiner.batch_size},
            {"epochs", kCombinerEpochs}}},
          {"seed", s.seed}};
}

EnsembleSpec ensemble_spec_from_json(const nlohmann::json& j) {
  try {
    EnsembleSpec s;
    for (const auto& m : j.at("members")) {
      MemberSpec ms;
      ms.genotype = parse_genotype(m.at("genotype").get<std::string>());
      ms.num_cells = m.at("num_cells").get<std::size_t>();
      ms.epochs = m.at("epochs").get<std::size_t>();
      ms.seed = m.at("seed").get<std::uint64_t>();
      s.members.push_back(std::move(ms));
    }
    s.total_cells = j.at("total_cells").get<std::size_t>();
    s.init_channels = j.at("init_channels").get<std::size_t>();
    s.num_classes = j.at("num_classes").get<std::size_t>();
    s.input_shape = j.at("input_shape").get<Shape>();
    nlohmann::json train = j.at("train");
    s.train = train_config_from_json(train);
    const auto& c = j.at("combiner");
    s.combiner.hidden_multiplier = c.at("hidden_multiplier").get<std::size_t>();
    s.combiner.lr = c.at("lr").get<double>();
    s.combiner.batch_size = c.at("batch_size").get<std::size_t>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed ensemble spec: ") + e.what());
  }
}

// ---- combiner ----

template <typename T>
struct Combiner<T>::Layers {
  Var<T> w1, b1, w2, b2, w3, b3;
  std::unique_ptr<layers::BatchNorm<T>> bn1, bn2;
};

template <typename T>
Combiner<T>::Combiner(std::size_t inputs, std::size_t hidden, std::size_t classes, std::uint64_t seed)
    : inputs_(inputs), classes_(classes), layers_(std::make_unique<Layers>()) {
  if (inputs < 1 || hidden < 1 || classes < 2) throw UsageError("combiner: invalid widths");
  std::mt19937_64 rng(seed);
  Layers& l = *layers_;
  l.w1 = params_.add_param("fc1.weight", layers::uniform_init<T>({hidden, inputs}, inputs, rng));
  l.b1 = params_.add_param("fc1.bias", layers::uniform_init<T>({hidden}, inputs, rng));
  l.bn1 = std::make_unique<layers::BatchNorm<T>>(params_, "bn1", hidden);
  l.w2 = params_.add_param("fc2.weight", layers::uniform_init<T>({hidden, hidden}, hidden, rng));
  l.b2 = params_.add_param("fc2.bias", layers::uniform_init<T>({hidden}, hidden, rng));
  l.bn2 = std::make_unique<layers::BatchNorm<T>>(params_, "bn2", hidden);
  l.w3 = params_.add_param("fc3.weight", layers::uniform_init<T>({classes, hidden}, hidden, rng));
  l.b3 = params_.add_param("fc3.bias", layers::uniform_init<T>({classes}, hidden, rng));
}

template <typename T>
Combiner<T>::Combiner(Combiner&&) noexcept = default;
template <typename T>
Combiner<T>& Combiner<T>::operator=(Combiner&&) noexcept = default;
template <typename T>
Combiner<T>::~Combiner() = default;

template <typename T>
Var<T> Combiner<T>::run(Tape<T>& tape, const Var<T>& x, bool training) const {
  if (x->value.rank() != 2 || x->value.dim(1) != inputs_) {
    throw ShapeError("combiner: expected [N," + std::to_string(inputs_) + "], got " + shape_string(x->value.shape()));
  }
  layers::Context<T> ctx{tape, training};
  const Layers& l = *layers_;
  Var<T> h = l.bn1->forward(ctx, ops::linear(tape, x, l.w1, l.b1));
  h = l.bn2->forward(ctx, ops::linear(tape, h, l.w2, l.b2));
  return ops::linear(tape, h, l.w3, l.b3);
}

template <typename T>
Var<T> Combiner<T>::forward(Tape<T>& tape, const Var<T>& x) const {
  return run(tape, x, false);
}

template <typename T>
Var<T> Combiner<T>::forward_train(Tape<T>& tape, const Var<T>& x) {
  return run(tape, x, true);
}

// ---- ensemble model ----

namespace {

template <typename T>
Combiner<T> fresh_combiner(const EnsembleSpec& spec) {
  const std::size_t in = spec.members.size() * spec.num_classes;
  return Combiner<T>(in, spec.combiner.hidden_multiplier * in, spec.num_classes, derive_seed(spec.seed, 1u << 20));
}

}  // namespace

template <typename T>
EnsembleModel<T>::EnsembleModel(EnsembleSpec spec, std::vector<Network<T>> members, Combiner<T> combiner)
    : spec_(std::move(spec)), members_(std::move(members)), combiner_(std::move(combiner)) {
  spec_.validate();
  if (members_.size() != spec_.members.size()) throw UsageError("ensemble: member count does not match its spec");
  for (std::size_t i = 0; i < members_.size(); ++i) {
    if (members_[i].spec() != spec_.member_network(i) || members_[i].genotype() != spec_.members[i].genotype) {
      throw UsageError("ensemble: member " + std::to_string(i) + " does not match its spec");
    }
  }
  if (combiner_.input_shape() != Shape{members_.size() * spec_.num_classes} ||
      combiner_.num_classes() != spec_.num_classes) {
    throw UsageError("ensemble: combiner widths do not match the members");
  }
}

template <typename T>
Var<T> EnsembleModel<T>::forward(Tape<T>& tape, const Var<T>& x) const {
  std::vector<Var<T>> logits;
  for (const auto& m : members_) logits.push_back(m.forward(tape, x));
  return combiner_.forward(tape, ops::concat_channels(tape, logits));
}

template <typename T>
Tensor<T> EnsembleModel<T>::member_logits(const Tensor<T>& batch) const {
  Tape<T> tape(GradMode::none);
  auto x = make_constant(batch);
  std::vector<Var<T>> logits;
  for (const auto& m : members_) logits.push_back(m.forward(tape, x));
  return ops::concat_channels(tape, logits)->value;
}

template <typename T>
std::size_t EnsembleModel<T>::param_count() const {
  std::size_t n = 0;
  for (const auto& m : members_) n += m.param_count();
  for (const auto& e : combiner_.state())
    if (e.trainable) n += e.tensor->size();
  return n;
}

template <typename T>
TrainLog train_combiner(EnsembleModel<T>& model, const Dataset& train_data) {
  const EnsembleSpec& spec = model.spec();
  if (train_data.sample_shape() != spec.input_shape) {
    throw ShapeError("ensemble: training data samples are " + shape_string(train_data.sample_shape()) +
                     " but members expect " + shape_string(spec.input_shape));
  }
  const std::size_t n = train_data.size(), width = spec.members.size() * spec.num_classes;
  Tensor<double> features({n, width});
  const std::size_t chunk = 256;
  for (std::size_t begin = 0; begin < n; begin += chunk) {
    const std::size_t end = std::min(n, begin + chunk);
    std::vector<std::size_t> idx(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    const Tensor<T> f = model.member_logits(gather_rows<T>(train_data.images, idx));
    std::copy(f.data().begin(), f.data().end(), features.ptr() + begin * width);
  }
  if (!features.all_finite()) throw NumericError("ensemble: member logits are not finite");
  model.combiner() = fresh_combiner<T>(spec);
  TrainConfig cfg = spec.train;
  cfg.epochs = kCombinerEpochs;
  cfg.lr = spec.combiner.lr;
  cfg.cosine = false;
  cfg.augment = false;
  cfg.batch_size = spec.combiner.batch_size;
  cfg.seed = derive_seed(spec.seed, (1u << 20) + 1);
  return train(model.combiner(), features, train_data.labels, cfg);
}

template <typename T>
EnsembleModel<T> build_ensemble(const EnsembleSpec& spec, const Dataset& train_data, std::size_t threads,
                                EnsembleTrainLog* log, const MemberCallback& on_epoch) {
  spec.validate();
  if (train_data.sample_shape() != spec.input_shape) {
    throw ShapeError("ensemble: training data samples are " + shape_string(train_data.sample_shape()) +
                     " but the spec expects " + shape_string(spec.input_shape));
  }
  const std::size_t m = spec.members.size();
  std::vector<std::unique_ptr<Network<T>>> trained(m);
  std::vector<TrainLog> logs(m);
  parallel_for(m, threads, [&](std::size_t i) {
    const MemberSpec& ms = spec.members[i];
    auto net = std::make_unique<Network<T>>(ms.genotype, spec.member_network(i), ms.seed);
    TrainConfig cfg = spec.train;
    cfg.epochs = ms.epochs;
    cfg.seed = ms.seed;
    EpochCallback cb;
    if (on_epoch) cb = [&, i](const EpochLog& e) { on_epoch(i, e); };
    try {
      logs[i] = train(*net, train_data, cfg, cb);
    } catch (const NumericError& e) {
      throw NumericError("ensemble member " + std::to_string(i) + ": " + e.what());
    }
    trained[i] = std::move(net);
  });
  std::vector<Network<T>> members;
  for (auto& p : trained) members.push_back(std::move(*p));
  EnsembleModel<T> model(spec, std::move(members), fresh_combiner<T>(spec));
  TrainLog combiner_log = train_combiner(model, train_data);
  if (log) {
    log->members = std::move(logs);
    log->combiner = std::move(combiner_log);
  }
  return model;
}

// ---- container ----

namespace {

constexpr std::uint32_t kEnsembleVersion = 1;

template <typename T>
constexpr std::uint8_t dtype_code() {
  return sizeof(T) == 4 ? 2 : 3;
}

}  // namespace

template <typename T>
void save_ensemble(const EnsembleModel<T>& model, std::ostream& out) {
  out.write("RENS", 4);
  io::write_uint<std::uint32_t>(out, kEnsembleVersion);
  io::write_uint<std::uint8_t>(out, dtype_code<T>());
  io::write_string(out, ensemble_spec_to_json(model.spec()).dump());
  io::write_uint<std::uint32_t>(out, std::uint32_t(model.members().size()));
  for (const auto& m : model.members()) {
    std::ostringstream buf(std::ios::binary);
    save_checkpoint(m, buf);
    io::write_string(out, buf.str());
  }
  write_state(out, model.combiner().state());
}

template <typename T>
EnsembleModel<T> load_ensemble(std::istream& in) {
  io::expect_magic(in, "RENS", "ensemble");
  const auto version = io::read_uint<std::uint32_t>(in, "ensemble version");
  if (version != kEnsembleVersion) throw DataError("unsupported ensemble version " + std::to_string(version));
  const auto dtype = io::read_uint<std::uint8_t>(in, "ensemble dtype");
  if (dtype != dtype_code<T>()) throw DataError("ensemble precision does not match requested precision");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_string(in, "ensemble spec"));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("ensemble spec is not valid JSON: ") + e.what());
  }
  EnsembleSpec spec = ensemble_spec_from_json(j);
  const auto count = io::read_uint<std::uint32_t>(in, "ensemble member count");
  if (count != spec.members.size()) throw DataError("ensemble member count does not match its spec");
  std::vector<Network<T>> members;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::istringstream buf(io::read_string(in, "ensemble member", std::size_t(1) << 31), std::ios::binary);
    members.push_back(load_checkpoint<T>(buf));
  }
  Combiner<T> combiner = fresh_combiner<T>(spec);
  read_state(in, combiner.state(), "ensemble combiner");
  return EnsembleModel<T>(std::move(spec), std::move(members), std::move(combiner));
}

template <typename T>
void save_ensemble_file(const EnsembleModel<T>& model, const std::string& path) {
  std::ostringstream out(std::ios::binary);
  save_ensemble(model, out);
  io::write_file_atomic(path, out.str());
}

template <typename T>
EnsembleModel<T> load_ensemble_file(const std::string& path) {
  std::istringstream in(io::read_file(path), std::ios::binary);
  return load_ensemble<T>(in);
}

// ---- repeated runs ----

RepeatedStats summarize_runs(std::vector<RunOutcome> runs) {
  if (runs.size() < 2) throw UsageError("repeated runs need at least two runs");
  RepeatedStats s;
  const double n = double(runs.size());
  for (const auto& r : runs) {
    s.clean_mean += r.clean / n;
    s.pgd_mean += r.pgd / n;
  }
  double vc = 0, vp = 0;
  for (const auto& r : runs) {
    vc += (r.clean - s.clean_mean) * (r.clean - s.clean_mean);
    vp += (r.pgd - s.pgd_mean) * (r.pgd - s.pgd_mean);
  }
  s.clean_std = std::sqrt(vc / (n - 1));
  s.pgd_std = std::sqrt(vp / (n - 1));
  s.runs = std::move(runs);
  return s;
}

RepeatedStats run_repeated(const std::function<RunOutcome(std::uint64_t)>& run_once,
                           std::span<const std::uint64_t> seeds) {
  std::vector<RunOutcome> runs;
  for (std::uint64_t seed : seeds) runs.push_back(run_once(seed));
  return summarize_runs(std::move(runs));
}

nlohmann::json repeated_stats_to_json(const RepeatedStats& s) {
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& r : s.runs) runs.push_back({{"clean", r.clean}, {"pgd", r.pgd}});
  return {{"runs", runs},
          {"clean_mean", s.clean_mean},
          {"clean_std", s.clean_std},
          {"pgd_mean", s.pgd_mean},
          {"pgd_std", s.pgd_std}};
}

template class Combiner<float>;
template class Combiner<double>;
template class EnsembleModel<float>;
template class EnsembleModel<double>;

#define RNAS_INSTANTIATE(T)                                                                                 \
  template EnsembleModel<T> build_ensemble(const EnsembleSpec&, const Dataset&, std::size_t,                \
                                           EnsembleTrainLog*, const MemberCallback&);                       \
  template TrainLog train_combiner(EnsembleModel<T>&, const Dataset&);                                     \
  template void save_ensemble(const EnsembleModel<T>&, std::ostream&);                                      \
  template EnsembleModel<T> load_ensemble<T>(std::istream&);                                                \
  template void save_ensemble_file(const EnsembleModel<T>&, const std::string&);                            \
  template EnsembleModel<T> load_ensemble_file<T>(const std::string&);

RNAS_INSTANTIATE(float)
RNAS_INSTANTIATE(double)

}  // namespace rnas
