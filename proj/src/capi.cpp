#include "rnas/rnas.h"

#include <cstdlib>
#include <cstring>
#include <memory>
#include <new>
#include <sstream>

#include "rnas/attacks.hpp"
#include "rnas/binary_io.hpp"
#include "rnas/config.hpp"
#include "rnas/ensemble.hpp"
#include "rnas/experiment.hpp"
#include "rnas/metrics.hpp"

using namespace rnas;

struct rnas_genotype {
  Genotype g;
};

struct rnas_dataset {
  Dataset d;
};

struct rnas_model {
  Precision precision = Precision::f32;
  std::unique_ptr<Network<float>> net_f;
  std::unique_ptr<Network<double>> net_d;
  std::unique_ptr<EnsembleModel<float>> ens_f;
  std::unique_ptr<EnsembleModel<double>> ens_d;

  bool is_ensemble() const { return ens_f || ens_d; }

  const Classifier<float>& classifier_f() const {
    if (net_f) return *net_f;
    return *ens_f;
  }
  const Classifier<double>& classifier_d() const {
    if (net_d) return *net_d;
    return *ens_d;
  }
};

namespace {

thread_local std::string g_last_error;

rnas_status fail(rnas_status s, const std::string& msg) {
  g_last_error = msg;
  return s;
}

template <typename Fn>
rnas_status guard(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return RNAS_OK;
  } catch (const Error& e) {
    return fail(static_cast<rnas_status>(e.kind()), e.what());
  } catch (const nlohmann::json::exception& e) {
    return fail(RNAS_ERR_USAGE, std::string("invalid JSON: ") + e.what());
  } catch (const std::bad_alloc&) {
    return fail(RNAS_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(RNAS_ERR_INTERNAL, e.what());
  }
}

void need(const void* p, const char* what) {
  if (!p) throw UsageError(std::string(what) + " must not be NULL");
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void put(char** out, const std::string& s) {
  if (out) *out = dup_string(s);
}

nlohmann::json parse_json(const char* text, const char* what) {
  if (!text || !*text) return nlohmann::json::object();
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string(what) + " is not valid JSON: " + e.what());
  }
}

Precision to_precision(rnas_precision p) {
  if (p == RNAS_SINGLE) return Precision::f32;
  if (p == RNAS_DOUBLE) return Precision::f64;
  throw UsageError("unknown precision");
}

std::string precision_name(Precision p) { return p == Precision::f32 ? "single" : "double"; }

// Calls fn(classifier) with the model's scalar type.
template <typename Fn>
auto with_classifier(const rnas_model* m, Fn&& fn) {
  if (m->precision == Precision::f32) return fn(m->classifier_f());
  return fn(m->classifier_d());
}

nlohmann::ordered_json stats_json(const OpStats& s) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (std::size_t c = 0; c < kNumCategories; ++c) j[std::string(category_name(OpCategory(c)))] = s.counts[c];
  j["unique"] = s.unique_operations;
  return j;
}

template <typename T>
Dataset to_dataset(const AdversarialBatch<T>& batch, const Dataset& like) {
  Dataset d;
  d.images = batch.perturbed.template cast<double>();
  d.labels = batch.labels;
  d.num_classes = like.num_classes;
  d.pixel_dtype = std::is_same_v<T, float> ? DType::f32 : DType::f64;
  d.name = like.name.empty() ? "adversarial" : like.name + ".adv";
  d.split = like.split;
  return d;
}

EpochCallback epoch_reporter(rnas_progress_fn progress, void* user, nlohmann::json base) {
  if (!progress) return {};
  return [progress, user, base](const EpochLog& e) {
    nlohmann::json j = base;
    j["event"] = "epoch";
    j["epoch"] = e.epoch;
    j["loss"] = e.loss;
    j["accuracy"] = e.accuracy;
    j["lr"] = e.lr;
    progress(j.dump().c_str(), user);
  };
}

SyntheticOptions synthetic_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw UsageError("synthetic data options must be a JSON object");
  SyntheticOptions o;
  for (const auto& [key, value] : j.items()) {
    if (key == "samples") o.samples = value.get<std::size_t>();
    else if (key == "classes") o.classes = value.get<std::size_t>();
    else if (key == "size") o.size = value.get<std::size_t>();
    else if (key == "noise") o.noise = value.get<double>();
    else if (key == "seed") o.seed = value.get<std::uint64_t>();
    else throw UsageError("synthetic data options: unknown key '" + key + "'");
  }
  if (o.samples == 0 || o.classes < 2 || o.size < 4) throw UsageError("synthetic data options out of range");
  return o;
}

nlohmann::json synthetic_to_json(const SyntheticOptions& o) {
  return {{"samples", o.samples}, {"classes", o.classes}, {"size", o.size}, {"noise", o.noise}, {"seed", o.seed}};
}

}  // namespace

extern "C" {

const char* rnas_version(void) { return "0.1.0"; }

const char* rnas_last_error(void) { return g_last_error.c_str(); }

void rnas_string_free(char* s) { std::free(s); }

rnas_status rnas_write_file_atomic(const char* path, const char* data, size_t size) {
  return guard([&] {
    need(path, "path");
    if (size) need(data, "data");
    io::write_file_atomic(path, std::string(data ? data : "", size));
  });
}

// ---- genotypes ----

rnas_status rnas_genotype_sample(uint64_t seed, rnas_genotype** out) {
  return guard([&] {
    need(out, "out");
    *out = new rnas_genotype{sample_random(seed)};
  });
}

rnas_status rnas_genotype_builtin(const char* name, rnas_genotype** out) {
  return guard([&] {
    need(name, "name");
    need(out, "out");
    *out = new rnas_genotype{builtin_genotype(name)};
  });
}

rnas_status rnas_genotype_parse(const char* text, rnas_genotype** out) {
  return guard([&] {
    need(text, "text");
    need(out, "out");
    *out = new rnas_genotype{parse_genotype(text)};
  });
}

rnas_status rnas_genotype_load(const char* path, rnas_genotype** out) {
  return guard([&] {
    need(path, "path");
    need(out, "out");
    const std::string text = io::read_file(path);
    try {
      *out = new rnas_genotype{parse_genotype(text)};
    } catch (const DataError& e) {
      throw DataError(std::string(path) + ": " + e.what());
    }
  });
}

rnas_status rnas_genotype_save(const rnas_genotype* g, const char* path) {
  return guard([&] {
    need(g, "genotype");
    need(path, "path");
    io::write_file_atomic(path, serialize_genotype(g->g));
  });
}

rnas_status rnas_genotype_text(const rnas_genotype* g, char** out) {
  return guard([&] {
    need(g, "genotype");
    need(out, "out");
    put(out, serialize_genotype(g->g));
  });
}

rnas_status rnas_genotype_stats(const rnas_genotype* g, char** json_out) {
  return guard([&] {
    need(g, "genotype");
    need(json_out, "json_out");
    nlohmann::ordered_json j;
    j["normal"] = stats_json(op_stats(g->g, CellKind::normal));
    j["reduce"] = stats_json(op_stats(g->g, CellKind::reduce));
    put(json_out, j.dump());
  });
}

rnas_status rnas_genotype_builtin_names(char** json_out) {
  return guard([&] {
    need(json_out, "json_out");
    put(json_out, nlohmann::json(builtin_genotype_names()).dump());
  });
}

void rnas_genotype_free(rnas_genotype* g) { delete g; }

// ---- datasets ----

rnas_status rnas_dataset_load(const char* path, size_t num_classes, rnas_dataset** out) {
  return guard([&] {
    need(path, "path");
    need(out, "out");
    *out = new rnas_dataset{load_dataset(path, num_classes)};
  });
}

rnas_status rnas_dataset_synthetic(const char* options_json, rnas_dataset** out) {
  return guard([&] {
    need(out, "out");
    *out = new rnas_dataset{make_synthetic(synthetic_from_json(parse_json(options_json, "synthetic data options")))};
  });
}

rnas_status rnas_dataset_save(const rnas_dataset* d, const char* path) {
  return guard([&] {
    need(d, "dataset");
    need(path, "path");
    save_dataset_file(d->d, path);
  });
}

rnas_status rnas_dataset_info(const rnas_dataset* d, char** json_out) {
  return guard([&] {
    need(d, "dataset");
    need(json_out, "json_out");
    const char* dt = d->d.pixel_dtype == DType::u8 ? "u8" : d->d.pixel_dtype == DType::f32 ? "f32" : "f64";
    const nlohmann::json j = {{"samples", d->d.size()},
                              {"shape", d->d.sample_shape()},
                              {"num_classes", d->d.num_classes},
                              {"pixel_dtype", dt},
                              {"name", d->d.name}};
    put(json_out, j.dump());
  });
}

void rnas_dataset_free(rnas_dataset* d) { delete d; }

// ---- models ----

rnas_status rnas_network_create(const rnas_genotype* g, const char* network_json, uint64_t seed,
                                rnas_precision precision, rnas_model** out) {
  return guard([&] {
    need(g, "genotype");
    need(out, "out");
    const NetworkSpec spec = network_spec_from_json(parse_json(network_json, "network config"));
    auto m = std::make_unique<rnas_model>();
    m->precision = to_precision(precision);
    if (m->precision == Precision::f32) m->net_f = std::make_unique<Network<float>>(g->g, spec, seed);
    else m->net_d = std::make_unique<Network<double>>(g->g, spec, seed);
    *out = m.release();
  });
}

rnas_status rnas_network_train(rnas_model* m, const rnas_dataset* data, const char* train_json,
                               rnas_progress_fn progress, void* user, char** log_json) {
  return guard([&] {
    need(m, "model");
    need(data, "dataset");
    if (m->is_ensemble()) throw UsageError("rnas_network_train needs a single network; ensembles are built whole");
    const TrainConfig cfg = train_config_from_json(parse_json(train_json, "train config"));
    const auto cb = epoch_reporter(progress, user, nlohmann::json::object());
    const TrainLog log = m->net_f ? train(*m->net_f, data->d, cfg, cb) : train(*m->net_d, data->d, cfg, cb);
    put(log_json, log.to_json(true).dump());
  });
}

rnas_status rnas_ensemble_sample_spec(const char* request_json, char** spec_json) {
  return guard([&] {
    need(spec_json, "spec_json");
    const auto j = parse_json(request_json, "ensemble request");
    std::vector<std::size_t> partition{12, 6, 2};
    std::size_t total_cells = 20, total_epochs = 600;
    NetworkSpec base;
    TrainConfig train;
    CombinerConfig combiner;
    std::uint64_t seed = 0;
    for (const auto& [key, value] : j.items()) {
      if (key == "partition") partition = value.get<std::vector<std::size_t>>();
      else if (key == "total_cells") total_cells = value.get<std::size_t>();
      else if (key == "total_epochs") total_epochs = value.get<std::size_t>();
      else if (key == "network") {
        nlohmann::json net = value;
        net["num_cells"] = std::size_t(1);
        base = network_spec_from_json(net);
      } else if (key == "train") train = train_config_from_json(value);
      else if (key == "combiner") {
        combiner.hidden_multiplier = value.value("hidden_multiplier", combiner.hidden_multiplier);
        combiner.lr = value.value("lr", combiner.lr);
        combiner.batch_size = value.value("batch_size", combiner.batch_size);
      } else if (key == "seed") seed = value.get<std::uint64_t>();
      else throw UsageError("ensemble request: unknown key '" + key + "'");
    }
    EnsembleSpec spec = sample_ensemble_spec(partition, total_cells, total_epochs, base, train, seed);
    spec.combiner = combiner;
    spec.validate();
    put(spec_json, ensemble_spec_to_json(spec).dump());
  });
}

rnas_status rnas_ensemble_build(const char* spec_json, const rnas_dataset* data, rnas_precision precision,
                                size_t threads, rnas_progress_fn progress, void* user, rnas_model** out,
                                char** log_json) {
  return guard([&] {
    need(data, "dataset");
    need(out, "out");
    const auto j = parse_json(spec_json, "ensemble spec");
    EnsembleSpec spec;
    try {
      spec = ensemble_spec_from_json(j);
    } catch (const DataError& e) {
      throw UsageError(e.what());
    }
    MemberCallback cb;
    if (progress) {
      cb = [progress, user](std::size_t member, const EpochLog& e) {
        const nlohmann::json ev = {{"event", "epoch"}, {"member", member}, {"epoch", e.epoch},
                                   {"loss", e.loss},   {"accuracy", e.accuracy}};
        progress(ev.dump().c_str(), user);
      };
    }
    auto m = std::make_unique<rnas_model>();
    m->precision = to_precision(precision);
    EnsembleTrainLog log;
    const std::size_t t = threads ? threads : 1;
    if (m->precision == Precision::f32) {
      m->ens_f = std::make_unique<EnsembleModel<float>>(build_ensemble<float>(spec, data->d, t, &log, cb));
    } else {
      m->ens_d = std::make_unique<EnsembleModel<double>>(build_ensemble<double>(spec, data->d, t, &log, cb));
    }
    if (log_json) {
      nlohmann::json members = nlohmann::json::array();
      for (const auto& l : log.members) members.push_back(l.to_json(true));
      *log_json = dup_string(nlohmann::json{{"members", members}, {"combiner", log.combiner.to_json(true)}}.dump());
    }
    *out = m.release();
  });
}

rnas_status rnas_model_load(const char* path, rnas_model** out) {
  return guard([&] {
    need(path, "path");
    need(out, "out");
    const std::string bytes = io::read_file(path);
    if (bytes.size() < 9) throw DataError(std::string("truncated model file '") + path + "'");
    const std::string magic = bytes.substr(0, 4);
    const auto code = std::uint8_t(bytes[8]);
    if (code != 2 && code != 3) throw DataError("unknown model precision code " + std::to_string(code));
    auto m = std::make_unique<rnas_model>();
    m->precision = code == 2 ? Precision::f32 : Precision::f64;
    std::istringstream in(bytes, std::ios::binary);
    if (magic == "RCKT") {
      if (m->precision == Precision::f32) m->net_f = std::make_unique<Network<float>>(load_checkpoint<float>(in));
      else m->net_d = std::make_unique<Network<double>>(load_checkpoint<double>(in));
    } else if (magic == "RENS") {
      if (m->precision == Precision::f32) m->ens_f = std::make_unique<EnsembleModel<float>>(load_ensemble<float>(in));
      else m->ens_d = std::make_unique<EnsembleModel<double>>(load_ensemble<double>(in));
    } else {
      throw DataError(std::string("'") + path + "' is neither a network checkpoint nor an ensemble (bad magic)");
    }
    *out = m.release();
  });
}

rnas_status rnas_model_save(const rnas_model* m, const char* path) {
  return guard([&] {
    need(m, "model");
    need(path, "path");
    if (m->net_f) save_checkpoint_file(*m->net_f, path);
    else if (m->net_d) save_checkpoint_file(*m->net_d, path);
    else if (m->ens_f) save_ensemble_file(*m->ens_f, path);
    else save_ensemble_file(*m->ens_d, path);
  });
}

rnas_status rnas_model_info(const rnas_model* m, char** json_out) {
  return guard([&] {
    need(m, "model");
    need(json_out, "json_out");
    nlohmann::json j = {{"precision", precision_name(m->precision)}};
    auto net_info = [&](const auto& net) {
      j["kind"] = "network";
      j["params"] = net.param_count();
      j["spec"] = network_spec_to_json(net.spec());
      j["genotype"] = serialize_genotype(net.genotype());
    };
    auto ens_info = [&](const auto& ens) {
      j["kind"] = "ensemble";
      j["params"] = ens.param_count();
      j["spec"] = ensemble_spec_to_json(ens.spec());
    };
    if (m->net_f) net_info(*m->net_f);
    else if (m->net_d) net_info(*m->net_d);
    else if (m->ens_f) ens_info(*m->ens_f);
    else ens_info(*m->ens_d);
    put(json_out, j.dump());
  });
}

void rnas_model_free(rnas_model* m) { delete m; }

// ---- evaluation ----

rnas_status rnas_clean_accuracy(const rnas_model* m, const rnas_dataset* data, size_t k, double* out) {
  return guard([&] {
    need(m, "model");
    need(data, "dataset");
    need(out, "out");
    *out = with_classifier(m, [&](const auto& c) { return clean_accuracy(c, data->d, k ? k : 1); });
  });
}

rnas_status rnas_adversarial_accuracy(const rnas_model* m, const rnas_dataset* data, const char* attack_json,
                                      const char* eval_json, double* out) {
  return guard([&] {
    need(m, "model");
    need(data, "dataset");
    need(out, "out");
    const auto attack = attack_config_from_json(parse_json(attack_json, "attack config"));
    const auto eval = eval_options_from_json(parse_json(eval_json, "eval config"));
    *out = with_classifier(m, [&](const auto& c) { return adversarial_accuracy(c, data->d, attack, eval); });
  });
}

rnas_status rnas_transfer_eval(const rnas_model* source, const rnas_model* target, const rnas_dataset* data,
                               const char* attack_json, const char* eval_json, double* out) {
  return guard([&] {
    need(source, "source model");
    need(target, "target model");
    need(data, "dataset");
    need(out, "out");
    if (source->precision != target->precision) {
      throw UsageError("transfer evaluation needs source and target in the same precision");
    }
    const auto attack = attack_config_from_json(parse_json(attack_json, "attack config"));
    const auto eval = eval_options_from_json(parse_json(eval_json, "eval config"));
    if (source->precision == Precision::f32) {
      *out = transfer_eval(source->classifier_f(), target->classifier_f(), data->d, attack, eval);
    } else {
      *out = transfer_eval(source->classifier_d(), target->classifier_d(), data->d, attack, eval);
    }
  });
}

rnas_status rnas_attack(const rnas_model* m, const rnas_dataset* data, const char* attack_json,
                        const char* eval_json, rnas_dataset** out) {
  return guard([&] {
    need(m, "model");
    need(data, "dataset");
    need(out, "out");
    const auto attack = attack_config_from_json(parse_json(attack_json, "attack config"));
    const auto eval = eval_options_from_json(parse_json(eval_json, "eval config"));
    Dataset adv = with_classifier(m, [&](const auto& c) { return to_dataset(attack_dataset(c, data->d, attack, eval), data->d); });
    *out = new rnas_dataset{std::move(adv)};
  });
}

rnas_status rnas_evaluate(const rnas_model* m, const rnas_dataset* data, const char* model_id,
                          const char* attacks_json, const char* eval_json, char** report_json) {
  return guard([&] {
    need(m, "model");
    need(data, "dataset");
    need(model_id, "model_id");
    need(report_json, "report_json");
    const char* attacks_text = attacks_json && *attacks_json ? attacks_json : R"(["fgsm","ffgsm","pgd"])";
    const auto attacks = attack_list_from_json(parse_json(attacks_text, "attack list"));
    const auto eval = eval_options_from_json(parse_json(eval_json, "eval config"));
    std::map<std::string, double> adversarial;
    nlohmann::json attack_cfgs = nlohmann::json::array();
    for (const auto& a : attacks) {
      const std::string name = attack_name(a.kind);
      if (adversarial.count(name)) throw UsageError("attack '" + name + "' listed twice");
      adversarial[name] = with_classifier(m, [&](const auto& c) { return adversarial_accuracy(c, data->d, a, eval); });
      attack_cfgs.push_back(attack_config_to_json(a));
    }
    const double clean = with_classifier(m, [&](const auto& c) { return clean_accuracy(c, data->d, 1, eval.batch_size); });
    std::size_t params = 0;
    if (m->net_f) params = m->net_f->param_count();
    else if (m->net_d) params = m->net_d->param_count();
    else if (m->ens_f) params = m->ens_f->param_count();
    else params = m->ens_d->param_count();
    RobustnessReport r = make_report(model_id, double(params) / 1e6, clean, adversarial, eval.seed);
    r.config = {{"attacks", attack_cfgs},
                {"eval", eval_options_to_json(eval)},
                {"precision", precision_name(m->precision)},
                {"samples", data->d.size()}};
    put(report_json, report_to_json(r).dump());
  });
}

rnas_status rnas_experiment_run(const char* config_json, const rnas_dataset* train, const rnas_dataset* test,
                                rnas_precision precision, size_t threads, rnas_progress_fn progress, void* user,
                                char** result_json, char** reports_json) {
  return guard([&] {
    const EnsembleExperiment cfg = experiment_from_json(parse_json(config_json, "experiment config"));
    RunCallback cb;
    if (progress) {
      cb = [progress, user](const ExperimentRun& r) {
        nlohmann::json ev = {{"event", "run"},
                             {"seed", r.seed},
                             {"ensemble", {{"clean", r.ensemble.clean}, {"pgd", r.ensemble.pgd}}},
                             {"seconds", r.seconds}};
        if (r.single) ev["single"] = {{"clean", r.single->clean}, {"pgd", r.single->pgd}};
        progress(ev.dump().c_str(), user);
      };
    }
    const Dataset* tr = train ? &train->d : nullptr;
    const Dataset* te = test ? &test->d : nullptr;
    const std::size_t t = threads ? threads : 1;
    const ExperimentResult res = to_precision(precision) == Precision::f32
                                     ? run_experiment<float>(cfg, tr, te, t, cb)
                                     : run_experiment<double>(cfg, tr, te, t, cb);
    nlohmann::json reports = nlohmann::json::array();
    for (auto r : res.reports()) {
      r.config = experiment_to_json(cfg);
      reports.push_back(report_to_json(r));
    }
    put(result_json, res.to_json(true).dump());
    put(reports_json, reports.dump());
  });
}

rnas_status rnas_config_resolve(const char* section, const char* config_json, char** resolved_json) {
  return guard([&] {
    need(section, "section");
    need(resolved_json, "resolved_json");
    const std::string name = section;
    const auto j = parse_json(config_json, (name + " config").c_str());
    nlohmann::json out;
    if (name == "network") out = network_spec_to_json(network_spec_from_json(j));
    else if (name == "train") out = train_config_to_json(train_config_from_json(j));
    else if (name == "attack") out = attack_config_to_json(attack_config_from_json(j));
    else if (name == "attacks") {
      out = nlohmann::json::array();
      for (const auto& a : attack_list_from_json(j)) out.push_back(attack_config_to_json(a));
    } else if (name == "eval") out = eval_options_to_json(eval_options_from_json(j));
    else if (name == "experiment") out = experiment_to_json(experiment_from_json(j));
    else if (name == "synthetic") out = synthetic_to_json(synthetic_from_json(j));
    else throw UsageError("unknown config section '" + name + "'");
    put(resolved_json, out.dump());
  });
}

// ---- metrics ----

rnas_status rnas_hrs(double clean, double pgd, double* out) {
  return guard([&] {
    need(out, "out");
    *out = hrs(clean, pgd);
  });
}

rnas_status rnas_pp_hrs(double hrs_value, double baseline_params, double model_params, double* out) {
  return guard([&] {
    need(out, "out");
    *out = pp_hrs(hrs_value, baseline_params, model_params);
  });
}

rnas_status rnas_epoch_budget(size_t num_cells, size_t total_cells, size_t total_epochs, size_t* out) {
  return guard([&] {
    need(out, "out");
    *out = epoch_budget(num_cells, total_cells, total_epochs);
  });
}

rnas_status rnas_reports_csv(const char* reports_json, int assign, char** csv_out) {
  return guard([&] {
    need(reports_json, "reports_json");
    need(csv_out, "csv_out");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(reports_json);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("reports are not valid JSON: ") + e.what());
    }
    if (!j.is_array()) throw DataError("reports must be a JSON array");
    std::vector<RobustnessReport> reports;
    for (const auto& r : j) reports.push_back(report_from_json(r));
    if (assign && !reports.empty()) assign_pp_hrs(reports);
    put(csv_out, reports_to_csv(std::move(reports)));
  });
}

}  // extern "C"
