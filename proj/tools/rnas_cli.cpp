// rnas command line. Talks to the library only through rnas.h.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "rnas/rnas.h"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Failure {
  int code;
  std::string message;
};

[[noreturn]] void usage_fail(const std::string& msg) { throw Failure{RNAS_ERR_USAGE, msg}; }

void check(rnas_status s) {
  if (s != RNAS_OK) throw Failure{int(s), rnas_last_error()};
}

struct GenotypeFree {
  void operator()(rnas_genotype* g) const { rnas_genotype_free(g); }
};
struct DatasetFree {
  void operator()(rnas_dataset* d) const { rnas_dataset_free(d); }
};
struct ModelFree {
  void operator()(rnas_model* m) const { rnas_model_free(m); }
};
using GenotypePtr = std::unique_ptr<rnas_genotype, GenotypeFree>;
using DatasetPtr = std::unique_ptr<rnas_dataset, DatasetFree>;
using ModelPtr = std::unique_ptr<rnas_model, ModelFree>;

// Takes ownership of a library-allocated string.
std::string take(char* s) {
  std::string out = s ? s : "";
  rnas_string_free(s);
  return out;
}

template <typename Fn>
std::string call_string(Fn&& fn) {
  char* out = nullptr;
  check(fn(&out));
  return take(out);
}

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::size_t threads = 1;
  std::string precision = "single";
  std::string out;
  bool quiet = false;
};

rnas_precision precision_of(const Common& c) { return c.precision == "double" ? RNAS_DOUBLE : RNAS_SINGLE; }

const std::vector<std::string> kSections = {"data",    "genotype", "network",    "train",     "attacks",
                                            "eval",    "model_id", "experiment", "synthetic", "model"};

json load_config(const Common& c) {
  if (c.config_path.empty()) return json::object();
  std::ifstream in(c.config_path);
  if (!in) usage_fail("cannot read config '" + c.config_path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    usage_fail("config '" + c.config_path + "' is not valid JSON: " + e.what());
  }
  if (!j.is_object()) usage_fail("config '" + c.config_path + "' must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(kSections.begin(), kSections.end(), key) == kSections.end()) {
      usage_fail("config: unknown section '" + key + "'");
    }
  }
  return j;
}

json section(const json& cfg, const char* name) { return cfg.contains(name) ? cfg.at(name) : json::object(); }

std::string resolve(const char* name, const json& j) {
  const std::string text = j.dump();
  return call_string([&](char** out) { return rnas_config_resolve(name, text.c_str(), out); });
}

fs::path out_dir(const Common& c) {
  if (c.out.empty()) usage_fail("--out is required");
  std::error_code ec;
  fs::create_directories(c.out, ec);
  if (ec) throw Failure{RNAS_ERR_DATA, "cannot create output directory '" + c.out + "': " + ec.message()};
  return fs::path(c.out);
}

void write_text(const fs::path& path, const std::string& text) {
  check(rnas_write_file_atomic(path.string().c_str(), text.data(), text.size()));
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

void progress_to_stderr(const char* event_json, void* user) {
  if (*static_cast<const bool*>(user)) return;
  std::fprintf(stderr, "%s\n", event_json);
}

DatasetPtr load_data(const std::string& path, std::size_t num_classes) {
  rnas_dataset* d = nullptr;
  check(rnas_dataset_load(path.c_str(), num_classes, &d));
  return DatasetPtr(d);
}

// A builtin name, or a path to a genotype file.
GenotypePtr load_genotype(const std::string& ref) {
  const json names = json::parse(call_string([](char** out) { return rnas_genotype_builtin_names(out); }));
  rnas_genotype* g = nullptr;
  for (const auto& n : names) {
    if (n.get<std::string>() == ref) {
      check(rnas_genotype_builtin(ref.c_str(), &g));
      return GenotypePtr(g);
    }
  }
  check(rnas_genotype_load(ref.c_str(), &g));
  return GenotypePtr(g);
}

ModelPtr load_model(const std::string& path) {
  rnas_model* m = nullptr;
  check(rnas_model_load(path.c_str(), &m));
  return ModelPtr(m);
}

std::string data_path(const std::string& flag, const json& cfg, const char* key) {
  if (!flag.empty()) return flag;
  const json d = section(cfg, "data");
  if (d.contains(key)) return d.at(key).get<std::string>();
  usage_fail(std::string("no dataset given (use --data or config data.") + key + ")");
}

std::size_t config_classes(const json& cfg) { return section(cfg, "data").value("num_classes", std::size_t(0)); }

json eval_section(const json& cfg, const Common& c) {
  json e = section(cfg, "eval");
  if (c.seed) e["seed"] = *c.seed;
  e["threads"] = c.threads;
  return e;
}

json attacks_section(const json& cfg) {
  return cfg.contains("attacks") ? cfg.at("attacks") : json::array({"fgsm", "ffgsm", "pgd"});
}

// ---- commands ----

int cmd_gen_data(const Common& c) {
  const json cfg = load_config(c);
  json syn = section(cfg, "synthetic");
  const std::size_t train_n = syn.value("train_samples", std::size_t(512));
  const std::size_t test_n = syn.value("test_samples", std::size_t(1024));
  syn.erase("train_samples");
  syn.erase("test_samples");
  const std::uint64_t seed = c.seed.value_or(syn.value("seed", std::uint64_t(0)));
  const fs::path dir = out_dir(c);

  json resolved = {{"seed", seed}};
  for (const auto& [split, n, sub] : {std::tuple{"train", train_n, 0}, std::tuple{"test", test_n, 1}}) {
    json o = syn;
    o["samples"] = n;
    o["seed"] = seed * 2 + std::uint64_t(sub);
    const std::string opts = o.dump();
    rnas_dataset* raw = nullptr;
    check(rnas_dataset_synthetic(opts.c_str(), &raw));
    DatasetPtr d(raw);
    const fs::path path = dir / (std::string(split) + ".rten");
    check(rnas_dataset_save(d.get(), path.string().c_str()));
    resolved[split] = json::parse(resolve("synthetic", o));
    std::cout << path.string() << "\n";
  }
  write_json(dir / "config.json", {{"command", "gen-data"}, {"synthetic", resolved}});
  return 0;
}

int cmd_sample(const Common& c) {
  const std::uint64_t seed = c.seed.value_or(0);
  rnas_genotype* raw = nullptr;
  check(rnas_genotype_sample(seed, &raw));
  GenotypePtr g(raw);
  const std::string text = call_string([&](char** out) { return rnas_genotype_text(g.get(), out); });
  if (!c.out.empty()) {
    const fs::path dir = out_dir(c);
    check(rnas_genotype_save(g.get(), (dir / "genotype.txt").string().c_str()));
    write_json(dir / "config.json", {{"command", "sample"}, {"seed", seed}});
  }
  std::cout << text;
  return 0;
}

int cmd_stats(const std::string& ref, bool as_json) {
  GenotypePtr g = load_genotype(ref);
  // ordered_json keeps the library's category order.
  const auto stats =
      nlohmann::ordered_json::parse(call_string([&](char** out) { return rnas_genotype_stats(g.get(), out); }));
  if (as_json) {
    std::cout << stats.dump(2) << "\n";
    return 0;
  }
  std::cout << "cell";
  for (const auto& [key, value] : stats.at("normal").items()) std::cout << "," << key;
  std::cout << "\n";
  for (const char* cell : {"normal", "reduce"}) {
    std::cout << cell;
    for (const auto& [key, value] : stats.at(cell).items()) std::cout << "," << value.get<int>();
    std::cout << "\n";
  }
  return 0;
}

int cmd_train(const Common& c, const std::string& data_flag, const std::string& genotype_flag) {
  const json cfg = load_config(c);
  const fs::path dir = out_dir(c);
  DatasetPtr data = load_data(data_path(data_flag, cfg, "train"), config_classes(cfg));
  const json info = json::parse(call_string([&](char** out) { return rnas_dataset_info(data.get(), out); }));

  const std::uint64_t seed = c.seed.value_or(0);
  GenotypePtr g;
  std::string genotype_ref = genotype_flag;
  if (genotype_ref.empty() && cfg.contains("genotype")) genotype_ref = cfg.at("genotype").get<std::string>();
  if (genotype_ref.empty()) {
    rnas_genotype* raw = nullptr;
    check(rnas_genotype_sample(seed, &raw));
    g.reset(raw);
  } else {
    g = load_genotype(genotype_ref);
  }

  json net = section(cfg, "network");
  if (!net.contains("num_classes")) net["num_classes"] = info.at("num_classes");
  if (!net.contains("input_shape")) net["input_shape"] = info.at("shape");
  json tr = section(cfg, "train");
  if (c.seed) tr["seed"] = seed;
  const std::string net_text = resolve("network", net);
  const std::string train_text = resolve("train", tr);

  rnas_model* raw = nullptr;
  check(rnas_network_create(g.get(), net_text.c_str(), seed, precision_of(c), &raw));
  ModelPtr model(raw);
  bool quiet = c.quiet;
  const std::string log = call_string([&](char** out) {
    return rnas_network_train(model.get(), data.get(), train_text.c_str(), progress_to_stderr, &quiet, out);
  });

  check(rnas_model_save(model.get(), (dir / "model.rckt").string().c_str()));
  check(rnas_genotype_save(g.get(), (dir / "genotype.txt").string().c_str()));
  write_text(dir / "train_log.json", json::parse(log).dump(2) + "\n");
  write_json(dir / "config.json", {{"command", "train"},
                                   {"data", {{"train", data_path(data_flag, cfg, "train")}}},
                                   {"genotype", genotype_ref.empty() ? "random" : genotype_ref},
                                   {"seed", seed},
                                   {"precision", c.precision},
                                   {"network", json::parse(net_text)},
                                   {"train", json::parse(train_text)}});
  const json minfo = json::parse(call_string([&](char** out) { return rnas_model_info(model.get(), out); }));
  const json epochs = json::parse(log).at("epochs");
  std::cout << "params " << minfo.at("params") << ", final loss " << epochs.back().at("loss") << ", train accuracy "
            << epochs.back().at("accuracy") << "\n";
  return 0;
}

int cmd_attack(const Common& c, const std::string& model_path, const std::string& data_flag) {
  const json cfg = load_config(c);
  if (model_path.empty()) usage_fail("--model is required");
  const fs::path dir = out_dir(c);
  ModelPtr model = load_model(model_path);
  DatasetPtr data = load_data(data_path(data_flag, cfg, "test"), config_classes(cfg));
  const json attacks = json::parse(resolve("attacks", attacks_section(cfg)));
  const std::string eval_text = resolve("eval", eval_section(cfg, c));
  for (const auto& a : attacks) {
    const std::string attack_text = a.dump();
    rnas_dataset* raw = nullptr;
    check(rnas_attack(model.get(), data.get(), attack_text.c_str(), eval_text.c_str(), &raw));
    DatasetPtr adv(raw);
    const fs::path path = dir / (a.at("kind").get<std::string>() + ".rten");
    check(rnas_dataset_save(adv.get(), path.string().c_str()));
    std::cout << path.string() << "\n";
  }
  write_json(dir / "config.json", {{"command", "attack"},
                                   {"model", model_path},
                                   {"data", {{"test", data_path(data_flag, cfg, "test")}}},
                                   {"attacks", attacks},
                                   {"eval", json::parse(eval_text)}});
  return 0;
}

int cmd_evaluate(const Common& c, const std::string& model_path, const std::string& data_flag, std::string id) {
  const json cfg = load_config(c);
  if (model_path.empty()) usage_fail("--model is required");
  const fs::path dir = out_dir(c);
  if (id.empty()) id = cfg.value("model_id", fs::path(model_path).stem().string());
  ModelPtr model = load_model(model_path);
  DatasetPtr data = load_data(data_path(data_flag, cfg, "test"), config_classes(cfg));
  const std::string attacks_text = resolve("attacks", attacks_section(cfg));
  const std::string eval_text = resolve("eval", eval_section(cfg, c));
  const std::string report = call_string([&](char** out) {
    return rnas_evaluate(model.get(), data.get(), id.c_str(), attacks_text.c_str(), eval_text.c_str(), out);
  });
  write_text(dir / "report.json", json::parse(report).dump(2) + "\n");
  write_json(dir / "config.json", {{"command", "evaluate"},
                                   {"model", model_path},
                                   {"model_id", id},
                                   {"data", {{"test", data_path(data_flag, cfg, "test")}}},
                                   {"attacks", json::parse(attacks_text)},
                                   {"eval", json::parse(eval_text)}});
  std::cout << json::parse(report).dump(2) << "\n";
  return 0;
}

int cmd_ensemble(const Common& c, const std::string& train_flag, const std::string& test_flag) {
  const json cfg = load_config(c);
  const fs::path dir = out_dir(c);
  json exp = section(cfg, "experiment");
  if (c.seed) {
    if (exp.contains("seeds") && !exp.contains("runs")) exp["runs"] = exp.at("seeds").size();
    exp.erase("seeds");
    exp["seed"] = *c.seed;
  }
  const std::string exp_text = resolve("experiment", exp);

  DatasetPtr train, test;
  const json d = section(cfg, "data");
  const std::string train_path = !train_flag.empty() ? train_flag : d.value("train", std::string());
  const std::string test_path = !test_flag.empty() ? test_flag : d.value("test", std::string());
  if (train_path.empty() != test_path.empty()) usage_fail("give both train and test data, or neither");
  if (!train_path.empty()) {
    train = load_data(train_path, config_classes(cfg));
    test = load_data(test_path, config_classes(cfg));
  }

  bool quiet = c.quiet;
  char* result_raw = nullptr;
  char* reports_raw = nullptr;
  check(rnas_experiment_run(exp_text.c_str(), train.get(), test.get(), precision_of(c), c.threads,
                            progress_to_stderr, &quiet, &result_raw, &reports_raw));
  const json result = json::parse(take(result_raw));
  const json reports = json::parse(take(reports_raw));

  write_json(dir / "result.json", result);
  write_json(dir / "reports.json", reports);
  for (const auto& r : reports) write_json(dir / ("report_" + r.at("model_id").get<std::string>() + ".json"), r);
  const std::string reports_text = reports.dump();
  const std::string csv = call_string([&](char** out) { return rnas_reports_csv(reports_text.c_str(), 1, out); });
  write_text(dir / "table.csv", csv);
  json resolved = {{"command", "ensemble"}, {"precision", c.precision}, {"experiment", json::parse(exp_text)}};
  if (!train_path.empty()) resolved["data"] = {{"train", train_path}, {"test", test_path}};
  write_json(dir / "config.json", resolved);

  std::cout << csv;
  for (const char* which : {"ensemble", "single"}) {
    if (!result.contains(which)) continue;
    const json& s = result.at(which);
    std::printf("%s: clean %.2f +- %.2f, pgd %.2f +- %.2f\n", which, s.at("clean_mean").get<double>(),
                s.at("clean_std").get<double>(), s.at("pgd_mean").get<double>(), s.at("pgd_std").get<double>());
  }
  return 0;
}

int cmd_report(const Common& c, const std::vector<std::string>& inputs, bool no_pp_hrs) {
  json all = json::array();
  for (const auto& path : inputs) {
    std::ifstream in(path);
    if (!in) throw Failure{RNAS_ERR_DATA, "cannot read report '" + path + "'"};
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw Failure{RNAS_ERR_DATA, "report '" + path + "' is not valid JSON: " + e.what()};
    }
    if (j.is_array()) {
      for (auto& r : j) all.push_back(std::move(r));
    } else {
      all.push_back(std::move(j));
    }
  }
  const std::string text = all.dump();
  const std::string csv =
      call_string([&](char** out) { return rnas_reports_csv(text.c_str(), no_pp_hrs ? 0 : 1, out); });
  if (!c.out.empty()) {
    const fs::path dir = out_dir(c);
    write_text(dir / "report.csv", csv);
    write_json(dir / "report.json", all);
    write_json(dir / "config.json", {{"command", "report"}, {"inputs", inputs}, {"pp_hrs", !no_pp_hrs}});
  }
  std::cout << csv;
  return 0;
}

void add_common(CLI::App* sub, Common& c, bool with_config = true) {
  if (with_config) sub->add_option("--config", c.config_path, "JSON config file")->check(CLI::ExistingFile);
  sub->add_option("--seed", c.seed, "Seed (u64)");
  sub->add_option("--threads", c.threads, "Worker threads")->check(CLI::PositiveNumber);
  sub->add_option("--precision", c.precision, "single or double")->check(CLI::IsMember({"single", "double"}));
  sub->add_option("--out", c.out, "Output directory");
  sub->add_flag("-q,--quiet", c.quiet, "No progress on stderr");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Random cell ensembles: training, attacks and robustness reports"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(rnas_version()));
  Common c;

  auto* gen = app.add_subcommand("gen-data", "Write the synthetic train/test datasets");
  add_common(gen, c);

  auto* sample = app.add_subcommand("sample", "Sample a random genotype from a seed");
  add_common(sample, c, false);

  auto* stats = app.add_subcommand("stats", "Operation counts of a genotype's normal and reduce cells");
  std::string stats_ref;
  bool stats_json = false;
  stats->add_option("genotype", stats_ref, "Genotype file or builtin name")->required();
  stats->add_flag("--json", stats_json, "Print JSON instead of CSV");

  auto* train = app.add_subcommand("train", "Train one network; writes model.rckt and train_log.json");
  std::string train_data, train_genotype;
  train->add_option("--data", train_data, "Training dataset");
  train->add_option("--genotype", train_genotype, "Genotype file or builtin name (default: random from --seed)");
  add_common(train, c);

  auto* attack = app.add_subcommand("attack", "Write attacked copies of a dataset");
  std::string attack_model, attack_data;
  attack->add_option("--model", attack_model, "Network checkpoint or ensemble file");
  attack->add_option("--data", attack_data, "Dataset to attack");
  add_common(attack, c);

  auto* evaluate = app.add_subcommand("evaluate", "Clean and adversarial accuracy as a report JSON");
  std::string eval_model, eval_data, eval_id;
  evaluate->add_option("--model", eval_model, "Network checkpoint or ensemble file");
  evaluate->add_option("--data", eval_data, "Test dataset");
  evaluate->add_option("--id", eval_id, "Model id in the report");
  add_common(evaluate, c);

  auto* ensemble = app.add_subcommand("ensemble", "Repeated ensemble runs against a single random network");
  std::string ens_train, ens_test;
  ensemble->add_option("--train", ens_train, "Training dataset (default: synthetic per seed)");
  ensemble->add_option("--test", ens_test, "Test dataset");
  add_common(ensemble, c);

  auto* report = app.add_subcommand("report", "Merge report JSONs into one CSV table");
  std::vector<std::string> report_inputs;
  bool no_pp_hrs = false;
  report->add_option("reports", report_inputs, "Report JSON files")->required();
  report->add_flag("--no-pp-hrs", no_pp_hrs, "Keep stored pp_hrs instead of recomputing against the smallest model");
  add_common(report, c, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    std::cerr << "error: " << msg << "\n";
    return RNAS_ERR_USAGE;
  }

  try {
    if (*gen) return cmd_gen_data(c);
    if (*sample) return cmd_sample(c);
    if (*stats) return cmd_stats(stats_ref, stats_json);
    if (*train) return cmd_train(c, train_data, train_genotype);
    if (*attack) return cmd_attack(c, attack_model, attack_data);
    if (*evaluate) return cmd_evaluate(c, eval_model, eval_data, eval_id);
    if (*ensemble) return cmd_ensemble(c, ens_train, ens_test);
    if (*report) return cmd_report(c, report_inputs, no_pp_hrs);
  } catch (const Failure& f) {
    std::string msg = f.message;
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    std::cerr << "error: " << msg << "\n";
    return f.code;
  } catch (const json::exception& e) {
    std::cerr << "error: bad JSON value: " << e.what() << "\n";
    return RNAS_ERR_USAGE;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return RNAS_ERR_INTERNAL;
  }
  return RNAS_ERR_USAGE;
}
