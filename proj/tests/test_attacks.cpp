#include <map>
#include <memory>

#include "doctest.h"
#include "rnas/attacks.hpp"
#include "rnas/linear_model.hpp"
#include "rnas/metrics.hpp"
#include "rnas/network.hpp"
#include "rnas/parallel.hpp"
#include "rnas/trainer.hpp"
#include "support.hpp"

using namespace rnas;
using rnas::testing::random_tensor;

namespace {

constexpr double kEps = 8.0 / 255.0;

// Ignores its input: every logit is a constant, so the input gradient is zero.
class ConstantModel final : public Classifier<double> {
 public:
  Var<double> forward(Tape<double>& tape, const Var<double>& x) const override {
    Tensor<double> bias({3}, {0.0, 1.0, 2.0});
    auto flat = ops::reshape(tape, x, Shape{x->value.dim(0), 16});
    return ops::linear(tape, flat, make_constant(Tensor<double>({3, 16})), make_constant(std::move(bias)));
  }
  Shape input_shape() const override { return {1, 4, 4}; }
  std::size_t num_classes() const override { return 3; }
};

std::vector<std::int32_t> random_labels(std::size_t n, std::size_t k, std::mt19937_64& rng) {
  std::vector<std::int32_t> y(n);
  for (auto& v : y) v = std::int32_t(rng() % k);
  return y;
}

NetworkSpec toy_spec() {
  NetworkSpec s;
  s.num_cells = 2;
  s.init_channels = 8;
  s.num_classes = 4;
  s.input_shape = {3, 8, 8};
  return s;
}

Dataset toy_data(std::size_t n, std::uint64_t seed) {
  return make_synthetic({.samples = n, .classes = 4, .size = 8, .noise = 0.08, .seed = seed});
}

// Trained 2-cell nets, built once per seed.
const Network<double>& trained_toy(std::uint64_t seed) {
  static std::map<std::uint64_t, std::unique_ptr<Network<double>>> cache;
  auto& slot = cache[seed];
  if (!slot) {
    slot = std::make_unique<Network<double>>(sample_random(derive_seed(seed, 1)), toy_spec(), derive_seed(seed, 2));
    TrainConfig cfg;
    cfg.epochs = 10;
    cfg.batch_size = 32;
    cfg.seed = derive_seed(seed, 3);
    train(*slot, toy_data(512, derive_seed(seed, 4)), cfg);
  }
  return *slot;
}

template <typename T>
std::vector<Tensor<T>> snapshot(const std::vector<StateEntry<T>>& state) {
  std::vector<Tensor<T>> out;
  for (const auto& e : state) out.push_back(*e.tensor);
  return out;
}

}  // namespace

TEST_CASE("attack names") {
  for (auto k : {AttackKind::fgsm, AttackKind::ffgsm, AttackKind::pgd}) CHECK(attack_from_name(attack_name(k)) == k);
  CHECK_THROWS_AS(attack_from_name("cw"), UsageError);
}

TEST_CASE("attack defaults and validation") {
  const auto f = AttackConfig::defaults(AttackKind::fgsm);
  CHECK(f.epsilon == 8.0 / 255.0);
  CHECK(f.step_size == f.epsilon);
  CHECK(f.iterations == 1);
  CHECK_FALSE(f.random_start);
  const auto ff = AttackConfig::defaults(AttackKind::ffgsm);
  CHECK(ff.step_size == ff.epsilon);
  CHECK(ff.random_start);
  const auto p = AttackConfig::defaults(AttackKind::pgd);
  CHECK(p.step_size == 2.0 / 255.0);
  CHECK(p.iterations == 10);
  CHECK(p.random_start);
  AttackConfig bad = p;
  bad.epsilon = -0.1;
  CHECK_THROWS_AS(bad.validate(), UsageError);
  bad = p;
  bad.iterations = 0;
  CHECK_THROWS_AS(bad.validate(), UsageError);
  bad = p;
  bad.step_size = 0;
  CHECK_THROWS_AS(bad.validate(), UsageError);
}

TEST_CASE("zero input gradient leaves x unchanged") {
  ConstantModel m;
  std::mt19937_64 rng(1);
  const auto x = random_tensor({5, 1, 4, 4}, rng, 0, 1);
  const auto y = random_labels(5, 3, rng);
  CHECK(fgsm(m, x, y, AttackConfig::defaults(AttackKind::fgsm)).perturbed == x);
  auto cfg = AttackConfig::defaults(AttackKind::pgd);
  cfg.random_start = false;
  CHECK(pgd(m, x, y, cfg, 0).perturbed == x);
}

TEST_CASE("fgsm on a linear model follows the sign of the loss gradient") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    LinearModel<double> m({1, 4, 4}, 3, rng());
    const auto x = random_tensor({6, 1, 4, 4}, rng, 0, 1);
    const auto y = random_labels(6, 3, rng);
    const auto adv = fgsm(m, x, y, AttackConfig::defaults(AttackKind::fgsm, kEps)).perturbed;

    // Independent oracle: d/dx of mean CE is (softmax - onehot) W / N.
    Tensor<double> logits = predict_logits(m, x);
    const Tensor<double> p = softmax(logits);
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t f = 0; f < 16; ++f) {
        double g = 0;
        for (std::size_t c = 0; c < 3; ++c)
          g += (p[i * 3 + c] - (std::int32_t(c) == y[i] ? 1.0 : 0.0)) * m.weight()->value[c * 16 + f];
        const double s = g > 0 ? 1.0 : (g < 0 ? -1.0 : 0.0);
        const double expect = std::clamp(x[i * 16 + f] + kEps * s, 0.0, 1.0);
        CHECK(adv[i * 16 + f] == doctest::Approx(expect).epsilon(1e-12));
      }
    CHECK(batch_loss(m, adv, y) >= batch_loss(m, x, y));
  }
}

TEST_CASE("ball invariant on a toy net for every attack") {
  Network<double> net(builtin_genotype("darts_v2"), toy_spec(), 3);
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    auto x = random_tensor({8, 3, 8, 8}, rng, 0, 1);
    for (std::size_t i = 0; i < 40; ++i) x[i] = double(i % 2);  // pixels at the box edges
    const auto y = random_labels(8, 4, rng);
    for (auto kind : {AttackKind::fgsm, AttackKind::ffgsm, AttackKind::pgd}) {
      const auto adv = run_attack(net, x, y, AttackConfig::defaults(kind), rng()).perturbed;
      for (std::size_t i = 0; i < x.size(); ++i) {
        CHECK(std::abs(adv[i] - x[i]) <= kEps + 1e-7);
        CHECK((adv[i] >= 0 && adv[i] <= 1));
      }
    }
  }
}

TEST_CASE("check_ball rejects violations") {
  Tensor<double> x({1, 1, 1, 2}, {0.5, 0.5});
  Tensor<double> ok({1, 1, 1, 2}, {0.5 + kEps, 0.5 - kEps});
  Tensor<double> far({1, 1, 1, 2}, {0.5 + 2 * kEps, 0.5});
  Tensor<double> out({1, 1, 1, 2}, {1.01, 0.5});
  check_ball(x, ok, kEps);
  CHECK_THROWS_AS(check_ball(x, far, kEps), NumericError);
  CHECK_THROWS_AS(check_ball(x, out, 0.1), NumericError);
}

TEST_CASE("fgsm equals one-step pgd without random start") {
  Network<double> net(sample_random(5), toy_spec(), 5);
  std::mt19937_64 rng(5);
  const auto x = random_tensor({6, 3, 8, 8}, rng, 0, 1);
  const auto y = random_labels(6, 4, rng);
  const auto a = fgsm(net, x, y, AttackConfig::defaults(AttackKind::fgsm));
  AttackConfig one{AttackKind::pgd, kEps, kEps, 1, false};
  const auto b = pgd(net, x, y, one, 77);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(a.perturbed[i] - b.perturbed[i]) <= 1e-6);
  AttackConfig ff{AttackKind::ffgsm, kEps, kEps, 1, false};
  CHECK(ffgsm(net, x, y, ff, 9).perturbed == a.perturbed);
}

TEST_CASE("attacks leave parameters and running statistics bitwise unchanged") {
  Network<float> net(sample_random(6), toy_spec(), 6);
  std::mt19937_64 rng(6);
  // Give the running statistics non-default values first.
  {
    Tape<float> tape(GradMode::none);
    net.forward_train(tape, make_constant(random_tensor({4, 3, 8, 8}, rng, 0, 1).cast<float>()));
  }
  const auto before = snapshot(net.state());
  const auto x = random_tensor({4, 3, 8, 8}, rng, 0, 1).cast<float>();
  const auto y = random_labels(4, 4, rng);
  for (auto kind : {AttackKind::fgsm, AttackKind::ffgsm, AttackKind::pgd}) run_attack(net, x, y, AttackConfig::defaults(kind), 1);
  const auto after = snapshot(net.state());
  REQUIRE(before.size() == after.size());
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(before[i] == after[i]);
  for (const auto& p : net.parameters()) CHECK_FALSE(p->has_grad());
}

TEST_CASE("attacks are deterministic given the seed") {
  Network<double> net(sample_random(7), toy_spec(), 7);
  std::mt19937_64 rng(7);
  const auto x = random_tensor({4, 3, 8, 8}, rng, 0, 1);
  const auto y = random_labels(4, 4, rng);
  for (auto kind : {AttackKind::ffgsm, AttackKind::pgd}) {
    const auto cfg = AttackConfig::defaults(kind);
    const auto a = run_attack(net, x, y, cfg, 11).perturbed;
    CHECK(run_attack(net, x, y, cfg, 11).perturbed == a);
    CHECK_FALSE(run_attack(net, x, y, cfg, 12).perturbed == a);
  }
  const Dataset d = toy_data(40, 8);
  EvalOptions opt{.batch_size = 16, .seed = 3, .threads = 1};
  const double one = adversarial_accuracy(net, d, AttackConfig::defaults(AttackKind::pgd), opt);
  opt.threads = 3;
  CHECK(adversarial_accuracy(net, d, AttackConfig::defaults(AttackKind::pgd), opt) == one);
}

TEST_CASE("epsilon zero equals clean accuracy") {
  Network<double> net(sample_random(8), toy_spec(), 8);
  const Dataset d = toy_data(48, 9);
  const double clean = clean_accuracy(net, d);
  for (auto kind : {AttackKind::fgsm, AttackKind::ffgsm, AttackKind::pgd}) {
    const auto cfg = AttackConfig::defaults(kind, 0.0);
    CHECK(adversarial_accuracy(net, d, cfg, {.batch_size = 20}) == clean);
    Network<double> other(sample_random(9), toy_spec(), 9);
    CHECK(transfer_eval(other, net, d, cfg, {.batch_size = 20}) == clean);
  }
}

TEST_CASE("transfer with source == target is white-box") {
  Network<double> net(sample_random(10), toy_spec(), 10);
  const Dataset d = toy_data(48, 11);
  for (auto kind : {AttackKind::fgsm, AttackKind::ffgsm, AttackKind::pgd}) {
    const auto cfg = AttackConfig::defaults(kind);
    const EvalOptions opt{.batch_size = 16, .seed = 5};
    CHECK(transfer_eval(net, net, d, cfg, opt) == adversarial_accuracy(net, d, cfg, opt));
  }
}

TEST_CASE("random labels give chance-level adversarial accuracy") {
  const auto& net = trained_toy(0);
  Dataset d = toy_data(400, 12);
  std::mt19937_64 rng(12);
  for (auto& l : d.labels) l = std::int32_t(rng() % 4);
  const double acc = adversarial_accuracy(net, d, AttackConfig::defaults(AttackKind::fgsm), {.batch_size = 100});
  // Binomial(400, 1/4): sd 2.17 points; allow about four sd.
  CHECK(acc <= 25 + 9);
  CHECK(clean_accuracy(net, d) == doctest::Approx(25).epsilon(0.36));
}

TEST_CASE("trained toy nets: adversarial <= clean, pgd <= fgsm") {
  int pgd_wins = 0;
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const auto& net = trained_toy(seed);
    const Dataset test = toy_data(128, 100 + seed);
    const double clean = clean_accuracy(net, test);
    const double f = adversarial_accuracy(net, test, AttackConfig::defaults(AttackKind::fgsm), {.batch_size = 64});
    const double p = adversarial_accuracy(net, test, AttackConfig::defaults(AttackKind::pgd), {.batch_size = 64});
    CHECK(clean > 60);
    CHECK(f <= clean);
    CHECK(p <= clean);
    if (p <= f) ++pgd_wins;
  }
  CHECK(pgd_wins >= 3);
}

TEST_CASE("pgd raises the loss beyond fgsm on a trained toy net") {
  for (std::uint64_t seed = 0; seed < 2; ++seed) {
    const auto& net = trained_toy(seed);
    const Dataset test = toy_data(256, 200 + seed);
    const std::vector<std::size_t> all = [] {
      std::vector<std::size_t> v(256);
      for (std::size_t i = 0; i < v.size(); ++i) v[i] = i;
      return v;
    }();
    const auto x = gather_rows<double>(test.images, all);
    const auto f = fgsm(net, x, test.labels, AttackConfig::defaults(AttackKind::fgsm));
    const auto p = pgd(net, x, test.labels, AttackConfig::defaults(AttackKind::pgd), seed);
    CHECK(batch_loss(net, p.perturbed, test.labels) >= batch_loss(net, f.perturbed, test.labels));
  }
}

TEST_CASE("ffgsm perturbations saturate the ball") {
  const auto& net = trained_toy(1);
  const Dataset test = toy_data(64, 300);
  std::vector<std::size_t> idx(64);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const auto x = gather_rows<double>(test.images, idx);
  // A step of 2 eps from any random start lands on the ball boundary.
  auto cfg = AttackConfig::defaults(AttackKind::ffgsm);
  cfg.step_size = 2 * kEps;
  std::size_t interior = 0, saturated = 0, default_saturated = 0;
  for (std::uint64_t s = 0; s < 3; ++s) {
    const auto adv = ffgsm(net, x, test.labels, cfg, s).perturbed;
    const auto adv_default = ffgsm(net, x, test.labels, AttackConfig::defaults(AttackKind::ffgsm), s).perturbed;
    for (std::size_t i = 0; i < x.size(); ++i) {
      CHECK(std::abs(adv[i] - x[i]) <= kEps + 1e-7);
      CHECK(std::abs(adv_default[i] - x[i]) <= kEps + 1e-7);
      if (x[i] < kEps || x[i] > 1 - kEps) continue;  // clipping to [0,1] can shorten the step
      ++interior;
      if (std::abs(std::abs(adv[i] - x[i]) - kEps) <= 1e-6) ++saturated;
      if (std::abs(std::abs(adv_default[i] - x[i]) - kEps) <= 1e-6) ++default_saturated;
    }
  }
  REQUIRE(interior > 0);
  CHECK(double(saturated) >= 0.99 * double(interior));
  // With step eps only starts on the gradient's side of x saturate.
  CHECK(double(default_saturated) >= 0.4 * double(interior));
}

TEST_CASE("transfer from an independent net is weaker than white-box (majority of seeds)") {
  int holds = 0;
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const auto& target = trained_toy(seed);
    const auto& source = trained_toy(seed + 10);
    const Dataset test = toy_data(128, 400 + seed);
    const auto cfg = AttackConfig::defaults(AttackKind::pgd);
    const EvalOptions opt{.batch_size = 64, .seed = seed};
    if (transfer_eval(source, target, test, cfg, opt) >= adversarial_accuracy(target, test, cfg, opt)) ++holds;
  }
  CHECK(holds >= 3);
}

TEST_CASE("shape and data errors") {
  Network<double> net(sample_random(11), toy_spec(), 11);
  std::mt19937_64 rng(13);
  const auto wrong = random_tensor({2, 3, 16, 16}, rng, 0, 1);
  const std::vector<std::int32_t> y{0, 1};
  CHECK_THROWS_AS(fgsm(net, wrong, y, AttackConfig::defaults(AttackKind::fgsm)), ShapeError);
  const auto x = random_tensor({2, 3, 8, 8}, rng, 0, 1);
  const std::vector<std::int32_t> short_labels{0};
  CHECK_THROWS(fgsm(net, x, short_labels, AttackConfig::defaults(AttackKind::fgsm)));
}
