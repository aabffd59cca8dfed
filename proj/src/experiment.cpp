#include "rnas/experiment.hpp"

#include <chrono>

#include "rnas/config.hpp"
#include "rnas/parallel.hpp"

namespace rnas {

void EnsembleExperiment::validate() const {
  partition_cells(total_cells, partition);
  if (partition.size() < 2) throw UsageError("experiment: an ensemble needs at least two members");
  if (total_epochs < 1) throw UsageError("experiment: total_epochs must be >= 1");
  if (seeds.size() < 2) throw UsageError("experiment: repeated runs need at least two seeds");
  if (eval_batch == 0) throw UsageError("experiment: eval_batch must be positive");
  if (train_samples < 2 || test_samples < 1) throw UsageError("experiment: sample counts are too small");
  NetworkSpec probe = base;
  probe.num_cells = total_cells;
  probe.validate();
  train.validate();
  attack.validate();
}

nlohmann::json experiment_to_json(const EnsembleExperiment& e) {
  nlohmann::json base = network_spec_to_json(e.base);
  base.erase("num_cells");
  return {{"partition", e.partition},
          {"total_cells", e.total_cells},
          {"total_epochs", e.total_epochs},
          {"network", base},
          {"train", train_config_to_json(e.train)},
          {"combiner",
           {{"hidden_multiplier", e.combiner.hidden_multiplier},
            {"lr", e.combiner.lr},
            {"batch_size", e.combiner.batch_size}}},
          {"seeds", e.seeds},
          {"single_baseline", e.single_baseline},
          {"attack", attack_config_to_json(e.attack)},
          {"eval_batch", e.eval_batch},
          {"train_samples", e.train_samples},
          {"test_samples", e.test_samples}};
}

EnsembleExperiment experiment_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw UsageError("experiment config must be a JSON object");
  EnsembleExperiment e;
  std::optional<std::size_t> runs;
  std::uint64_t first_seed = 0;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "partition") e.partition = value.get<std::vector<std::size_t>>();
      else if (key == "total_cells") e.total_cells = value.get<std::size_t>();
      else if (key == "total_epochs") e.total_epochs = value.get<std::size_t>();
      else if (key == "network") {
        nlohmann::json net = value;
        net["num_cells"] = e.base.num_cells;
        e.base = network_spec_from_json(net, e.base);
      } else if (key == "train") e.train = train_config_from_json(value);
      else if (key == "combiner") {
        for (const auto& [ck, cv] : value.items()) {
          if (ck == "hidden_multiplier") e.combiner.hidden_multiplier = cv.get<std::size_t>();
          else if (ck == "lr") e.combiner.lr = cv.get<double>();
          else if (ck == "batch_size") e.combiner.batch_size = cv.get<std::size_t>();
          else throw UsageError("combiner config: unknown key '" + ck + "'");
        }
      } else if (key == "seeds") e.seeds = value.get<std::vector<std::uint64_t>>();
      else if (key == "runs") runs = value.get<std::size_t>();
      else if (key == "seed") first_seed = value.get<std::uint64_t>();
      else if (key == "single_baseline") e.single_baseline = value.get<bool>();
      else if (key == "attack") e.attack = attack_config_from_json(value);
      else if (key == "eval_batch") e.eval_batch = value.get<std::size_t>();
      else if (key == "train_samples") e.train_samples = value.get<std::size_t>();
      else if (key == "test_samples") e.test_samples = value.get<std::size_t>();
      else throw UsageError("experiment config: unknown key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& ex) {
    throw UsageError(std::string("experiment config: ") + ex.what());
  }
  if (runs) {
    if (j.contains("seeds")) throw UsageError("experiment config: give either 'seeds' or 'runs', not both");
    e.seeds.clear();
    for (std::size_t i = 0; i < *runs; ++i) e.seeds.push_back(first_seed + i);
  } else if (j.contains("seed") && !j.contains("seeds")) {
    for (std::size_t i = 0; i < e.seeds.size(); ++i) e.seeds[i] = first_seed + i;
  }
  e.validate();
  return e;
}

std::vector<RobustnessReport> ExperimentResult::reports() const {
  std::vector<RobustnessReport> out;
  auto mean_params = [&](bool single) {
    double s = 0;
    for (const auto& r : runs) s += single ? r.single_params_m : r.ensemble_params_m;
    return s / double(runs.size());
  };
  out.push_back(make_report("ensemble", mean_params(false), ensemble.clean_mean, {{"pgd", ensemble.pgd_mean}},
                            runs.empty() ? 0 : runs.front().seed));
  if (single) {
    out.push_back(make_report("single_random", mean_params(true), single->clean_mean, {{"pgd", single->pgd_mean}},
                              runs.empty() ? 0 : runs.front().seed));
  }
  return out;
}

nlohmann::json ExperimentResult::to_json(bool with_timing) const {
  nlohmann::json rs = nlohmann::json::array();
  for (const auto& r : runs) {
    nlohmann::json j = {{"seed", r.seed},
                        {"ensemble", {{"clean", r.ensemble.clean}, {"pgd", r.ensemble.pgd}}},
                        {"ensemble_params_m", r.ensemble_params_m},
                        {"ensemble_spec", r.ensemble_spec}};
    if (r.single) {
      j["single"] = {{"clean", r.single->clean}, {"pgd", r.single->pgd}};
      j["single_params_m"] = r.single_params_m;
      j["single_genotype"] = r.single_genotype;
    }
    if (with_timing) j["seconds"] = r.seconds;
    rs.push_back(std::move(j));
  }
  nlohmann::json out = {{"runs", rs}, {"ensemble", repeated_stats_to_json(ensemble)}};
  if (single) out["single"] = repeated_stats_to_json(*single);
  return out;
}

template <typename T>
ExperimentResult run_experiment(const EnsembleExperiment& cfg, const Dataset* train, const Dataset* test,
                                std::size_t threads, const RunCallback& on_run) {
  cfg.validate();
  if ((train == nullptr) != (test == nullptr)) throw UsageError("experiment: give both train and test data, or neither");
  ExperimentResult result;
  std::vector<RunOutcome> ens_runs, single_runs;
  for (std::uint64_t seed : cfg.seeds) {
    const auto start = std::chrono::steady_clock::now();
    Dataset own_train, own_test;
    if (!train) {
      SyntheticOptions so;
      so.classes = cfg.base.num_classes;
      so.size = cfg.base.input_shape.at(1);
      so.samples = cfg.train_samples;
      so.seed = derive_seed(seed, 100);
      own_train = make_synthetic(so);
      so.samples = cfg.test_samples;
      so.seed = derive_seed(seed, 101);
      own_test = make_synthetic(so);
    }
    const Dataset& tr = train ? *train : own_train;
    const Dataset& te = test ? *test : own_test;

    ExperimentRun run;
    run.seed = seed;
    EnsembleSpec spec = sample_ensemble_spec(cfg.partition, cfg.total_cells, cfg.total_epochs, cfg.base, cfg.train, seed);
    spec.combiner = cfg.combiner;
    const EvalOptions eval{cfg.eval_batch, seed, threads};
    {
      const auto model = build_ensemble<T>(spec, tr, threads);
      run.ensemble = {clean_accuracy(model, te, 1, cfg.eval_batch), adversarial_accuracy(model, te, cfg.attack, eval)};
      run.ensemble_params_m = double(model.param_count()) / 1e6;
      run.ensemble_spec = ensemble_spec_to_json(spec);
    }
    if (cfg.single_baseline) {
      NetworkSpec ns = cfg.base;
      ns.num_cells = cfg.total_cells;
      const Genotype g = sample_random(derive_seed(seed, 200));
      Network<T> net(g, ns, derive_seed(seed, 201));
      TrainConfig tc = cfg.train;
      tc.epochs = cfg.total_epochs;
      tc.seed = derive_seed(seed, 202);
      rnas::train(net, tr, tc);
      run.single = RunOutcome{clean_accuracy(net, te, 1, cfg.eval_batch), adversarial_accuracy(net, te, cfg.attack, eval)};
      run.single_params_m = double(net.param_count()) / 1e6;
      run.single_genotype = serialize_genotype(g);
    }
    run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    ens_runs.push_back(run.ensemble);
    if (run.single) single_runs.push_back(*run.single);
    if (on_run) on_run(run);
    result.runs.push_back(std::move(run));
  }
  result.ensemble = summarize_runs(ens_runs);
  if (cfg.single_baseline) result.single = summarize_runs(single_runs);
  return result;
}

template ExperimentResult run_experiment<float>(const EnsembleExperiment&, const Dataset*, const Dataset*, std::size_t,
                                                const RunCallback&);
template ExperimentResult run_experiment<double>(const EnsembleExperiment&, const Dataset*, const Dataset*, std::size_t,
                                                 const RunCallback&);

}  // namespace rnas
