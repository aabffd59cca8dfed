// One PASS/FAIL line per acceptance criterion. Exit status 0 only if all pass.
//
//   acceptance [--cli PATH] [--work DIR] [--only N,...]

#include <sys/wait.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "rnas/attacks.hpp"
#include "rnas/layers.hpp"
#include "rnas/metrics.hpp"
#include "rnas/network.hpp"
#include "rnas/trainer.hpp"
#include "support.hpp"

using namespace rnas;
using rnas::testing::grad_check;
using rnas::testing::random_tensor;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Line {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---- 1 ----

Line metric_fidelity() {
  struct Case {
    const char* what;
    double got, want;
  };
  const Case cases[] = {
      {"hrs(97.03,7.09)", hrs(97.03, 7.09), 13.21},
      {"hrs(94.38,23.45)", hrs(94.38, 23.45), 37.57},
      {"hrs(91.57,11.20)", hrs(91.57, 11.20), 19.96},
      {"pp_hrs(B7 vs B0)", pp_hrs(hrs(91.57, 11.20), 5.29, 66.35), 1.59},
  };
  Line l{true, ""};
  for (const auto& c : cases) {
    const bool ok = std::abs(c.got - c.want) <= 0.01;
    l.pass = l.pass && ok;
    l.detail += fmt("%s=%.4f(%s) ", c.what, c.got, ok ? "ok" : "off");
  }
  return l;
}

// ---- 2 ----

Line genotype_statistics() {
  using Row = std::array<int, 6>;  // five categories + unique
  struct Expected {
    const char* fixture;
    Row normal, reduce;
  };
  const Expected table[] = {
      {"darts_v2", {0, 0, 2, 5, 1, 3}, {5, 0, 3, 0, 0, 2}},
      {"pdarts", {0, 0, 2, 4, 2, 3}, {1, 1, 0, 2, 4, 3}},
      {"pc_darts", {0, 1, 1, 4, 2, 4}, {1, 0, 0, 7, 0, 2}},
  };
  auto row_of = [](const OpStats& s) {
    Row r{};
    for (std::size_t i = 0; i < kNumCategories; ++i) r[i] = s.counts[i];
    r[5] = s.unique_operations;
    return r;
  };
  Line l{true, ""};
  int matched = 0, total = 0;
  for (const auto& e : table) {
    std::ifstream in(std::string(RNAS_DATA_DIR) + "/genotypes/" + e.fixture + ".txt");
    std::stringstream ss;
    ss << in.rdbuf();
    const Genotype g = parse_genotype(ss.str());
    for (auto [kind, want, name] : {std::tuple{CellKind::normal, e.normal, "normal"},
                                    std::tuple{CellKind::reduce, e.reduce, "reduce"}}) {
      ++total;
      const Row got = row_of(op_stats(g, kind));
      if (got == want) {
        ++matched;
        continue;
      }
      l.pass = false;
      l.detail += fmt("%s/%s got {%d,%d,%d,%d,%d} unique %d, table {%d,%d,%d,%d,%d} unique %d; ", e.fixture, name,
                      got[0], got[1], got[2], got[3], got[4], got[5], want[0], want[1], want[2], want[3], want[4],
                      want[5]);
    }
  }
  l.detail = fmt("%d/%d rows exact. ", matched, total) + l.detail;
  return l;
}

// ---- 3 ----

Line parameter_anchor() {
  NetworkSpec spec;
  spec.num_cells = 20;
  spec.init_channels = 36;
  spec.num_classes = 10;
  spec.input_shape = {3, 32, 32};
  const Network<float> net(builtin_genotype("darts_v2"), spec, 0);
  const double m = double(net.param_count()) / 1e6;
  const double rel = std::abs(m - 3.35) / 3.35;
  return {rel <= 0.03, fmt("%.4fM params, %.2f%% from 3.35M", m, 100 * rel)};
}

// ---- 4 ----

Var<double> param(Tensor<double> t) { return make_parameter(std::move(t)); }

double layer_check(const std::function<Var<double>(Tape<double>&)>& fwd, const std::vector<Var<double>>& leaves,
                   std::mt19937_64& rng, std::size_t max_coords = 0) {
  Var<double> readout;
  {
    Tape<double> probe(GradMode::none);
    readout = make_constant(random_tensor(fwd(probe)->value.shape(), rng));
  }
  auto loss = [&](Tape<double>& t) { return rnas::testing::weighted_sum(t, fwd(t), readout); };
  return grad_check(loss, leaves, rng, max_coords).max_rel_error;
}

// Values bounded away from zero, so kinks (relu) and ties (max pool) stay
// out of the finite-difference stencil.
Tensor<double> spread_tensor(Shape shape, std::mt19937_64& rng) {
  Tensor<double> t(std::move(shape));
  std::vector<double> v(t.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.05 * double(i + 1);
  std::shuffle(v.begin(), v.end(), rng);
  std::bernoulli_distribution neg(0.5);
  for (std::size_t i = 0; i < v.size(); ++i) t[i] = neg(rng) ? -v[i] : v[i];
  return t;
}

Line gradient_correctness() {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> small(1, 3), ext(3, 7), kpick(0, 2);
  std::map<std::string, double> worst;
  std::map<std::string, int> configs;
  auto note = [&](const std::string& name, double err) {
    worst[name] = std::max(worst[name], err);
    ++configs[name];
  };

  while (configs["conv2d"] < 20) {
    const std::size_t groups = std::size_t(small(rng)), c = groups * std::size_t(small(rng)),
                      k = groups * std::size_t(small(rng)), kernel = std::size_t(1 + 2 * kpick(rng)),
                      stride = std::size_t(small(rng)), dil = std::size_t(small(rng)), pad = std::size_t(kpick(rng)),
                      h = std::size_t(ext(rng)), w = std::size_t(ext(rng)), n = std::size_t(small(rng));
    if (ops::conv_out_extent(h, kernel, stride, pad, dil) == 0 || ops::conv_out_extent(w, kernel, stride, pad, dil) == 0)
      continue;
    auto x = param(random_tensor({n, c, h, w}, rng));
    auto wt = param(random_tensor({k, c / groups, kernel, kernel}, rng));
    auto b = param(random_tensor({k}, rng));
    const ops::Conv2dParams p{stride, pad, dil, groups};
    note("conv2d", layer_check([&](Tape<double>& t) { return ops::conv2d(t, x, wt, b, p); }, {x, wt, b}, rng));
  }
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = std::size_t(small(rng)), c = std::size_t(small(rng));
    const std::size_t h = std::size_t(ext(rng)) - 1, w = std::size_t(ext(rng)) - 1, stride = 1 + trial % 2;
    auto x = param(spread_tensor({n, c, h, w}, rng));
    note("max_pool_3x3", layer_check([&](Tape<double>& t) { return ops::max_pool_3x3(t, x, stride); }, {x}, rng));
    note("avg_pool_3x3", layer_check([&](Tape<double>& t) { return ops::avg_pool_3x3(t, x, stride); }, {x}, rng));
    note("relu", layer_check([&](Tape<double>& t) { return ops::relu(t, x); }, {x}, rng));
    note("global_avg_pool", layer_check([&](Tape<double>& t) { return ops::global_avg_pool(t, x); }, {x}, rng));

    auto y = param(random_tensor({n, c, h, w}, rng));
    auto z = param(random_tensor({n, c + 1, h, w}, rng));
    note("add", layer_check([&](Tape<double>& t) { return ops::add(t, x, y); }, {x, y}, rng));
    note("concat_channels",
         layer_check([&](Tape<double>& t) { return ops::concat_channels(t, std::vector<Var<double>>{y, z}); }, {y, z},
                     rng));

    const std::size_t bc = std::size_t(small(rng));
    auto bx = param(random_tensor(trial % 2 ? Shape{3, bc, 3, 2} : Shape{4, bc}, rng));
    auto g = param(random_tensor({bc}, rng, 0.5, 1.5));
    auto be = param(random_tensor({bc}, rng));
    ops::BatchNormState<double> state(bc);
    state.running_mean = random_tensor({bc}, rng);
    state.running_var = random_tensor({bc}, rng, 0.5, 2.0);
    note("batch_norm(train)", layer_check(
                                  [&](Tape<double>& t) {
                                    ops::BatchNormState<double> s = state;
                                    return ops::batch_norm(t, bx, g, be, s, true);
                                  },
                                  {bx, g, be}, rng));
    note("batch_norm(eval)",
         layer_check([&](Tape<double>& t) { return ops::batch_norm_eval(t, bx, g, be, state); }, {bx, g, be}, rng));

    const std::size_t f = 1 + std::size_t(ext(rng)), o = std::size_t(ext(rng));
    auto lx = param(random_tensor({n, f}, rng));
    auto lw = param(random_tensor({o, f}, rng));
    auto lb = param(random_tensor({o}, rng));
    note("linear", layer_check([&](Tape<double>& t) { return ops::linear(t, lx, lw, lb); }, {lx, lw, lb}, rng));

    std::vector<std::int32_t> labels(n);
    for (auto& l : labels) l = std::int32_t(rng() % o);
    auto logits = param(random_tensor({n, o}, rng, -3, 3));
    note("softmax_cross_entropy",
         grad_check([&](Tape<double>& t) { return ops::softmax_cross_entropy(t, logits, labels); }, {logits}, rng)
             .max_rel_error);
  }
  const std::pair<OpKind, const char*> cell_ops[] = {{OpKind::sep_conv_3x3, "sep_conv_3x3"},
                                                     {OpKind::sep_conv_5x5, "sep_conv_5x5"},
                                                     {OpKind::dil_conv_3x3, "dil_conv_3x3"},
                                                     {OpKind::dil_conv_5x5, "dil_conv_5x5"},
                                                     {OpKind::skip_connect, "factorized_reduce"}};
  for (const auto& [kind, name] : cell_ops) {
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t c = 2 + std::size_t(trial % 3);
      const std::size_t stride = kind == OpKind::skip_connect ? 2 : std::size_t(1 + trial % 2);
      ParamSet<double> ps;
      auto op = layers::make_cell_op(ps, "op", kind, c, stride, rng);
      auto x = param(random_tensor({2 + std::size_t(trial % 2), c, 6, 6}, rng));
      std::vector<Var<double>> leaves = ps.params();
      leaves.push_back(x);
      note(name, layer_check(
                     [&](Tape<double>& t) {
                       layers::Context<double> ctx{t, true};
                       return op->forward(ctx, x);
                     },
                     leaves, rng, 12));
    }
  }

  // Full 2-cell network, training-mode BN, every parameter tensor sampled.
  {
    NetworkSpec spec{2, 3, 4, {3, 6, 6}};
    Network<double> net(builtin_genotype("darts_v2"), spec, 4);
    std::vector<Tensor<double>> saved;
    for (const auto& e : net.state()) saved.push_back(*e.tensor);
    auto x = make_input(random_tensor({3, 3, 6, 6}, rng, 0, 1), true);
    const std::int32_t labels[] = {0, 2, 1};
    auto loss = [&](Tape<double>& t) {
      for (std::size_t i = 0; i < saved.size(); ++i)
        if (!net.state()[i].trainable) *net.state()[i].tensor = saved[i];
      return ops::softmax_cross_entropy(t, net.forward_train(t, x), labels);
    };
    std::vector<Var<double>> leaves = net.parameters();
    leaves.push_back(x);
    note("network(2 cells)", grad_check(loss, leaves, rng, 4).max_rel_error);
  }

  Line l{true, ""};
  double overall = 0;
  for (const auto& [name, err] : worst) {
    const bool enough = name == "network(2 cells)" || configs[name] >= 20;
    if (err >= 1e-4 || !enough) {
      l.pass = false;
      l.detail += fmt("%s err %.2e over %d configs; ", name.c_str(), err, configs[name]);
    }
    overall = std::max(overall, err);
  }
  l.detail = fmt("%zu primitives x >=20 configs + 2-cell network, max rel err %.2e. ", worst.size() - 1, overall) +
             l.detail;
  return l;
}

// ---- 5 ----

template <typename T>
std::vector<std::vector<unsigned char>> state_bytes(const Network<T>& net) {
  std::vector<std::vector<unsigned char>> out;
  for (const auto& e : net.state()) {
    const auto* p = reinterpret_cast<const unsigned char*>(e.tensor->data().data());
    out.emplace_back(p, p + e.tensor->size() * sizeof(T));
  }
  return out;
}

Line attack_invariants() {
  constexpr std::size_t kSamples = 10000, kBatch = 125, kModels = 4;
  const double eps = 8.0 / 255.0;
  std::mt19937_64 rng(55);
  std::size_t checked = 0, ball_violations = 0, range_violations = 0;
  double fgsm_pgd_diff = 0;
  bool params_unchanged = true;

  for (std::size_t m = 0; m < kModels; ++m) {
    const Network<double> net(sample_random(900 + m), NetworkSpec{2, 4, 4, {3, 8, 8}}, 900 + m);
    const auto before = state_bytes(net);
    for (std::size_t b = 0; b < kSamples / kModels / kBatch; ++b) {
      Tensor<double> x = random_tensor({kBatch, 3, 8, 8}, rng, 0, 1);
      // Some pixels exactly on the box edges so clipping is exercised.
      std::uniform_int_distribution<std::size_t> pick(0, x.size() - 1);
      for (int i = 0; i < 200; ++i) x[pick(rng)] = double(i % 2);
      std::vector<std::int32_t> labels(kBatch);
      for (auto& l : labels) l = std::int32_t(rng() % 4);
      const std::uint64_t seed = rng();

      for (AttackKind kind : {AttackKind::fgsm, AttackKind::ffgsm, AttackKind::pgd}) {
        const auto adv = run_attack(net, x, labels, AttackConfig::defaults(kind, eps), seed);
        for (std::size_t i = 0; i < x.size(); ++i) {
          if (std::abs(adv.perturbed[i] - x[i]) > eps + 1e-7) ++ball_violations;
          if (!(adv.perturbed[i] >= 0.0 && adv.perturbed[i] <= 1.0)) ++range_violations;
        }
      }
      checked += kBatch;

      AttackConfig one = AttackConfig::defaults(AttackKind::pgd, eps);
      one.iterations = 1;
      one.step_size = eps;
      one.random_start = false;
      const auto a = fgsm(net, x, labels, AttackConfig::defaults(AttackKind::fgsm, eps));
      const auto p = pgd(net, x, labels, one, seed);
      for (std::size_t i = 0; i < x.size(); ++i)
        fgsm_pgd_diff = std::max(fgsm_pgd_diff, std::abs(a.perturbed[i] - p.perturbed[i]));
    }
    params_unchanged = params_unchanged && state_bytes(net) == before;
  }
  const bool pass = checked >= kSamples && ball_violations == 0 && range_violations == 0 && fgsm_pgd_diff <= 1e-6 &&
                    params_unchanged;
  return {pass, fmt("%zu samples x 3 attacks: %zu ball / %zu range violations; max |fgsm - pgd1| %.1e; params %s",
                    checked, ball_violations, range_violations, fgsm_pgd_diff,
                    params_unchanged ? "bitwise unchanged" : "CHANGED")};
}

// ---- 6 and 8 ----

int run_cli(const std::string& cli, const std::string& args) {
  const std::string cmd = "'" + cli + "' " + args;
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("missing " + p.string());
  return json::parse(in);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json without_timing(json j) {
  for (auto& r : j["runs"]) r.erase("seconds");
  return j;
}

Line desk_reproduction(const fs::path& run_dir, int code) {
  if (code != 0) return {false, fmt("ensemble command exited with %d", code)};
  const json r = read_json(run_dir / "result.json");
  const json& e = r.at("ensemble");
  const json& s = r.at("single");
  const double em = e.at("pgd_mean"), es = e.at("pgd_std"), sm = s.at("pgd_mean"), ss = s.at("pgd_std");
  const bool a = em > sm, b = es < ss;
  std::string per_seed;
  for (const auto& run : r.at("runs"))
    per_seed += fmt(" %.2f/%.2f", run.at("ensemble").at("pgd").get<double>(), run.at("single").at("pgd").get<double>());
  return {a && b, fmt("(a) ensemble PGD mean %.2f vs single %.2f: %s; (b) std %.2f vs %.2f: %s; per seed ens/single:",
                      em, sm, a ? "pass" : "FAIL", es, ss, b ? "pass" : "FAIL") +
                      per_seed};
}

Line determinism(const fs::path& a, int code_a, const fs::path& b, int code_b) {
  if (code_a != 0 || code_b != 0) return {false, fmt("ensemble exit codes %d, %d", code_a, code_b)};
  const bool reports = slurp(a / "reports.json") == slurp(b / "reports.json");
  const bool result = without_timing(read_json(a / "result.json")) == without_timing(read_json(b / "result.json"));
  const bool table = slurp(a / "table.csv") == slurp(b / "table.csv");
  return {reports && result && table, fmt("reports.json %s, result.json minus timing %s, table.csv %s",
                                          reports ? "identical" : "DIFFER", result ? "identical" : "DIFFER",
                                          table ? "identical" : "DIFFER")};
}

// ---- 7 ----

Line epoch_convention() {
  const std::size_t b16 = epoch_budget(16, 20, 600), b2 = epoch_budget(2, 20, 600);
  std::mt19937_64 rng(7);
  std::size_t partitions = 0, worst_slack_ok = 0;
  double worst = 0;
  for (int trial = 0; trial < 5000; ++trial) {
    const std::size_t total_cells = 2 + rng() % 40, total_epochs = 1 + rng() % 1000;
    const std::size_t members = 1 + rng() % total_cells;
    // Random composition of total_cells into `members` positive parts.
    std::vector<std::size_t> cuts;
    std::vector<std::size_t> pool(total_cells - 1);
    std::iota(pool.begin(), pool.end(), std::size_t(1));
    std::shuffle(pool.begin(), pool.end(), rng);
    cuts.assign(pool.begin(), pool.begin() + long(members - 1));
    std::sort(cuts.begin(), cuts.end());
    std::size_t prev = 0, sum = 0;
    cuts.push_back(total_cells);
    for (std::size_t c : cuts) {
      sum += epoch_budget(c - prev, total_cells, total_epochs);
      prev = c;
    }
    const double slack = std::abs(double(sum) - double(total_epochs));
    worst = std::max(worst, slack / (double(members) / 2));
    if (slack <= double(members) / 2) ++worst_slack_ok;
    ++partitions;
  }
  const bool pass = b16 == 480 && b2 == 60 && worst_slack_ok == partitions;
  return {pass, fmt("16->%zu, 2->%zu; %zu/%zu random partitions within members/2 (worst %.2f of allowance)", b16, b2,
                    worst_slack_ok, partitions, worst)};
}

// ---- 9 ----

Line transfer_sanity() {
  SyntheticOptions so;
  so.samples = 512;
  so.size = 8;
  so.seed = 31;
  const Dataset train_set = make_synthetic(so);
  so.samples = 256;
  so.seed = 32;
  const Dataset test_set = make_synthetic(so);
  Network<double> net(sample_random(33), NetworkSpec{2, 8, 4, {3, 8, 8}}, 33);
  TrainConfig tc;
  tc.epochs = 10;
  tc.batch_size = 32;
  train(net, train_set, tc);

  const EvalOptions opt{64, 9, 1};
  const double clean = clean_accuracy(net, test_set);
  bool ok = true;
  std::string detail = fmt("clean %.2f;", clean);
  for (AttackKind kind : {AttackKind::fgsm, AttackKind::ffgsm, AttackKind::pgd}) {
    const AttackConfig cfg = AttackConfig::defaults(kind);
    const double white = adversarial_accuracy(net, test_set, cfg, opt);
    const double self = transfer_eval(net, net, test_set, cfg, opt);
    const double zero = transfer_eval(net, net, test_set, AttackConfig::defaults(kind, 0.0), opt);
    ok = ok && white == self && zero == clean;
    detail += fmt(" %s white %.2f transfer %.2f eps0 %.2f;", attack_name(kind).c_str(), white, self, zero);
  }
  return {ok, detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::string cli = RNAS_CLI;
  std::string work = (fs::temp_directory_path() / "rnas_acceptance").string();
  std::vector<int> only;
  app.add_option("--cli", cli, "Path to the rnas command");
  app.add_option("--work", work, "Scratch directory for command outputs");
  app.add_option("--only", only, "Run only these criteria")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  const std::set<int> selected(only.begin(), only.end());
  auto want = [&](int n) { return selected.empty() || selected.count(n); };

  std::map<int, Line> lines;
  auto guarded = [&](int n, const std::function<Line()>& fn) {
    if (!want(n)) return;
    try {
      lines[n] = fn();
    } catch (const std::exception& e) {
      lines[n] = {false, std::string("exception: ") + e.what()};
    }
    std::cout << "criterion " << n << ": " << (lines[n].pass ? "PASS" : "FAIL") << "  " << lines[n].detail
              << std::endl;
  };

  guarded(1, metric_fidelity);
  guarded(2, genotype_statistics);
  guarded(3, parameter_anchor);
  guarded(4, gradient_correctness);
  guarded(5, attack_invariants);

  // Criterion 6 is the first of two identical end-to-end runs; criterion 8
  // compares it with the second.
  const fs::path dir(work);
  int code_a = -1, code_b = -1;
  if (want(6) || want(8)) {
    fs::remove_all(dir);
    fs::create_directories(dir);
    code_a = run_cli(cli, "ensemble -q --precision single --seed 0 --out '" + (dir / "run_a").string() + "'");
  }
  guarded(6, [&] { return desk_reproduction(dir / "run_a", code_a); });
  guarded(7, epoch_convention);
  guarded(8, [&] {
    code_b = run_cli(cli, "ensemble -q --precision single --seed 0 --out '" + (dir / "run_b").string() + "'");
    return determinism(dir / "run_a", code_a, dir / "run_b", code_b);
  });
  guarded(9, transfer_sanity);

  bool all = true;
  for (const auto& [n, l] : lines) all = all && l.pass;
  return all ? 0 : 1;
}
