#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rnas/attacks.hpp"
#include "rnas/ensemble.hpp"
#include "rnas/metrics.hpp"

namespace rnas {

/// Repeated sample-train-ensemble runs, optionally against a single random
/// network with the same total cell count and epoch budget.
struct EnsembleExperiment {
  std::vector<std::size_t> partition{3, 2, 1};
  std::size_t total_cells = 6;
  std::size_t total_epochs = 30;
  NetworkSpec base{6, 8, 4, {3, 16, 16}};  // num_cells is ignored
  TrainConfig train = [] {
    TrainConfig t;
    t.batch_size = 32;
    return t;
  }();
  CombinerConfig combiner;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3};
  bool single_baseline = true;
  AttackConfig attack = AttackConfig::defaults(AttackKind::pgd);
  std::size_t eval_batch = 128;
  // Synthetic data drawn per seed when no datasets are supplied.
  std::size_t train_samples = 512;
  std::size_t test_samples = 1024;

  void validate() const;
};

nlohmann::json experiment_to_json(const EnsembleExperiment& e);
/// Missing keys keep defaults. `runs` with `seed` expands to seeds seed..seed+runs-1.
EnsembleExperiment experiment_from_json(const nlohmann::json& j);

struct ExperimentRun {
  std::uint64_t seed = 0;
  RunOutcome ensemble;
  double ensemble_params_m = 0;
  nlohmann::json ensemble_spec;
  std::optional<RunOutcome> single;
  double single_params_m = 0;
  std::string single_genotype;
  double seconds = 0;
};

struct ExperimentResult {
  std::vector<ExperimentRun> runs;
  RepeatedStats ensemble;
  std::optional<RepeatedStats> single;

  /// Mean-valued reports "ensemble" and "single_random" for the CSV table.
  std::vector<RobustnessReport> reports() const;
  nlohmann::json to_json(bool with_timing = true) const;
};

using RunCallback = std::function<void(const ExperimentRun&)>;

/// Per seed s: synthetic train/test sets from derive_seed(s, 100/101) unless
/// `train`/`test` are given; ensemble spec from sample_ensemble_spec(..., s);
/// single net genotype derive_seed(s, 200), init derive_seed(s, 201), training
/// derive_seed(s, 202); attacks evaluated with seed s.
template <typename T>
ExperimentResult run_experiment(const EnsembleExperiment& cfg, const Dataset* train, const Dataset* test,
                                std::size_t threads = 1, const RunCallback& on_run = {});

}  // namespace rnas
