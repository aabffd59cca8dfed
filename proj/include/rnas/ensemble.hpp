#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "rnas/dataset.hpp"
#include "rnas/genotype.hpp"
#include "rnas/network.hpp"
#include "rnas/trainer.hpp"

namespace rnas {

/// Throws UsageError unless every size is >= 1 and they sum to `total`.
void partition_cells(std::size_t total, std::span<const std::size_t> sizes);

struct MemberSpec {
  Genotype genotype;
  std::size_t num_cells = 1;
  std::size_t epochs = 1;
  std::uint64_t seed = 0;
};

struct CombinerConfig {
  std::size_t hidden_multiplier = 2;  // hidden width = multiplier * input width
  double lr = 0.01;
  std::size_t batch_size = 64;
};

/// The combiner is always trained for this many epochs.
inline constexpr std::size_t kCombinerEpochs = 2;

struct EnsembleSpec {
  std::vector<MemberSpec> members;
  std::size_t total_cells = 20;
  std::size_t init_channels = 16;
  std::size_t num_classes = 10;
  Shape input_shape{3, 32, 32};
  TrainConfig train;  // per-member epochs and seeds come from `members`
  CombinerConfig combiner;
  std::uint64_t seed = 0;

  void validate() const;
  NetworkSpec member_network(std::size_t i) const;
};

/// Members get genotypes sampled from distinct sub-seeds of `seed` and
/// epoch_budget(cells, total_cells, total_epochs) epochs each.
EnsembleSpec sample_ensemble_spec(std::span<const std::size_t> sizes, std::size_t total_cells,
                                  std::size_t total_epochs, const NetworkSpec& base, const TrainConfig& train,
                                  std::uint64_t seed);

nlohmann::json ensemble_spec_to_json(const EnsembleSpec& s);
EnsembleSpec ensemble_spec_from_json(const nlohmann::json& j);

/// Linear -> BN -> Linear -> BN -> Linear over concatenated member logits.
template <typename T>
class Combiner final : public TrainableModel<T> {
 public:
  Combiner(std::size_t inputs, std::size_t hidden, std::size_t classes, std::uint64_t seed);
  Combiner(Combiner&&) noexcept;
  Combiner& operator=(Combiner&&) noexcept;
  ~Combiner() override;

  Var<T> forward(Tape<T>& tape, const Var<T>& x) const override;
  Var<T> forward_train(Tape<T>& tape, const Var<T>& x) override;
  std::vector<Var<T>> parameters() const override { return params_.params(); }
  Shape input_shape() const override { return {inputs_}; }
  std::size_t num_classes() const override { return classes_; }
  const std::vector<StateEntry<T>>& state() const noexcept { return params_.entries(); }

 private:
  struct Layers;
  Var<T> run(Tape<T>& tape, const Var<T>& x, bool training) const;

  std::size_t inputs_, classes_;
  ParamSet<T> params_;
  std::unique_ptr<Layers> layers_;
};

/// Members and combiner as one classifier, differentiable w.r.t. the input.
template <typename T>
class EnsembleModel final : public Classifier<T> {
 public:
  EnsembleModel(EnsembleSpec spec, std::vector<Network<T>> members, Combiner<T> combiner);

  Var<T> forward(Tape<T>& tape, const Var<T>& x) const override;
  Shape input_shape() const override { return spec_.input_shape; }
  std::size_t num_classes() const override { return spec_.num_classes; }

  /// Concatenated member logits [N, members * classes] without gradients.
  Tensor<T> member_logits(const Tensor<T>& batch) const;

  const EnsembleSpec& spec() const noexcept { return spec_; }
  const std::vector<Network<T>>& members() const noexcept { return members_; }
  const Combiner<T>& combiner() const noexcept { return combiner_; }
  Combiner<T>& combiner() noexcept { return combiner_; }
  std::size_t param_count() const;

 private:
  EnsembleSpec spec_;
  std::vector<Network<T>> members_;
  Combiner<T> combiner_;
};

struct EnsembleTrainLog {
  std::vector<TrainLog> members;
  TrainLog combiner;
};

using MemberCallback = std::function<void(std::size_t member, const EpochLog&)>;

/// Trains every member (up to `threads` at once), then the combiner for
/// kCombinerEpochs on frozen member logits of the training set.
template <typename T>
EnsembleModel<T> build_ensemble(const EnsembleSpec& spec, const Dataset& train_data, std::size_t threads = 1,
                                EnsembleTrainLog* log = nullptr, const MemberCallback& on_epoch = {});

/// Trains a fresh combiner on the frozen members of `model`.
template <typename T>
TrainLog train_combiner(EnsembleModel<T>& model, const Dataset& train_data);

// Ensemble container: magic "RENS", u32 version, u8 dtype, spec JSON,
// member checkpoints (length-prefixed RCKT bytes), combiner tensors.
template <typename T>
void save_ensemble(const EnsembleModel<T>& model, std::ostream& out);
template <typename T>
EnsembleModel<T> load_ensemble(std::istream& in);
template <typename T>
void save_ensemble_file(const EnsembleModel<T>& model, const std::string& path);
template <typename T>
EnsembleModel<T> load_ensemble_file(const std::string& path);

struct RunOutcome {
  double clean = 0;
  double pgd = 0;
};

struct RepeatedStats {
  std::vector<RunOutcome> runs;
  double clean_mean = 0, clean_std = 0;
  double pgd_mean = 0, pgd_std = 0;  // sample standard deviations
};

/// Mean and sample standard deviation; needs at least two runs.
RepeatedStats summarize_runs(std::vector<RunOutcome> runs);

/// Calls run_once(seed) for each seed in order.
RepeatedStats run_repeated(const std::function<RunOutcome(std::uint64_t)>& run_once,
                           std::span<const std::uint64_t> seeds);

nlohmann::json repeated_stats_to_json(const RepeatedStats& s);

extern template class Combiner<float>;
extern template class Combiner<double>;
extern template class EnsembleModel<float>;
extern template class EnsembleModel<double>;

}  // namespace rnas
