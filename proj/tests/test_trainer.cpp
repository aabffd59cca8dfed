#include <limits>
#include <sstream>

#include "doctest.h"
#include "rnas/linear_model.hpp"
#include "rnas/metrics.hpp"
#include "rnas/network.hpp"
#include "rnas/trainer.hpp"

using namespace rnas;

namespace {

NetworkSpec net_spec(std::size_t cells, std::size_t channels, std::size_t hw) {
  NetworkSpec s;
  s.num_cells = cells;
  s.init_channels = channels;
  s.num_classes = 4;
  s.input_shape = {3, hw, hw};
  return s;
}

template <typename T>
std::string checkpoint_bytes(const Network<T>& net) {
  std::ostringstream out(std::ios::binary);
  save_checkpoint(net, out);
  return out.str();
}

double slope(const std::vector<double>& y) {
  const double n = double(y.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    sx += double(i);
    sy += y[i];
    sxx += double(i) * double(i);
    sxy += double(i) * y[i];
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace

TEST_CASE("epoch budget") {
  CHECK(epoch_budget(16) == 480);
  CHECK(epoch_budget(2) == 60);
  CHECK(epoch_budget(12) == 360);
  CHECK(epoch_budget(6) == 180);
  CHECK(epoch_budget(20) == 600);
  CHECK(epoch_budget(1, 6, 30) == 5);
  CHECK(epoch_budget(1, 3, 10) == 3);
  CHECK(epoch_budget(1, 4, 10) == 3);  // 2.5 rounds up
  CHECK_THROWS_AS(epoch_budget(0), UsageError);
  CHECK_THROWS_AS(epoch_budget(21), UsageError);
  CHECK_THROWS_AS(epoch_budget(1, 0, 10), UsageError);
}

TEST_CASE("partition budgets sum to the total within rounding") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t total = 2 + rng() % 40;
    const std::size_t epochs = 1 + rng() % 700;
    std::vector<std::size_t> parts;
    std::size_t left = total;
    while (left > 0) {
      const std::size_t s = 1 + rng() % left;
      parts.push_back(s);
      left -= s;
    }
    long sum = 0;
    for (auto p : parts) sum += long(epoch_budget(p, total, epochs));
    CHECK(2 * std::abs(sum - long(epochs)) <= long(parts.size()));
  }
}

TEST_CASE("config JSON") {
  TrainConfig c;
  c.epochs = 7;
  c.lr = 0.125;
  c.augment = false;
  c.seed = 99;
  const auto back = train_config_from_json(train_config_to_json(c));
  CHECK(train_config_to_json(back) == train_config_to_json(c));
  CHECK(train_config_from_json(nlohmann::json::object()).epochs == TrainConfig{}.epochs);
  CHECK_THROWS_AS(train_config_from_json({{"epoch", 3}}), UsageError);
  CHECK_THROWS_AS(train_config_from_json({{"epochs", 0}}), UsageError);
  CHECK_THROWS_AS(train_config_from_json({{"batch_size", 1}}), UsageError);
  CHECK_THROWS_AS(train_config_from_json({{"lr", "fast"}}), UsageError);
}

TEST_CASE("two separable points are learned in one epoch") {
  LinearModel<double> model({1, 1, 2}, 2, 3);
  Dataset d;
  d.images = Tensor<double>({2, 1, 1, 2}, {1, 0, 0, 1});
  d.labels = {0, 1};
  d.num_classes = 2;
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 2;
  cfg.lr = 10;
  cfg.momentum = 0;
  cfg.weight_decay = 0;
  cfg.augment = false;
  const auto log = train(model, d, cfg);
  CHECK(log.epochs.size() == 1);
  CHECK(clean_accuracy(model, d) == 100);
}

TEST_CASE("lr 0 leaves parameters bitwise unchanged") {
  Network<float> net(sample_random(4), net_spec(2, 4, 8), 4);
  std::vector<Tensor<float>> before;
  for (const auto& p : net.parameters()) before.push_back(p->value);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 16;
  cfg.lr = 0;
  train(net, make_synthetic({.samples = 40, .size = 8, .seed = 4}), cfg);
  const auto after = net.parameters();
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(after[i]->value == before[i]);
}

TEST_CASE("training is deterministic given the seed") {
  const Dataset d = make_synthetic({.samples = 64, .size = 8, .seed = 5});
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 16;
  cfg.seed = 17;
  auto run = [&](std::uint64_t seed) {
    Network<float> net(sample_random(5), net_spec(2, 4, 8), 5);
    TrainConfig c = cfg;
    c.seed = seed;
    const auto log = train(net, d, c);
    return std::make_pair(checkpoint_bytes(net), log.to_json(false));
  };
  const auto a = run(17), b = run(17), c = run(18);
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
  CHECK(a.first != c.first);
}

TEST_CASE("toy 2-cell net fits the synthetic task") {
  const Dataset d = make_synthetic({.samples = 512, .classes = 4, .size = 16, .seed = 6});
  Network<float> net(sample_random(6), net_spec(2, 8, 16), 6);
  TrainConfig cfg;
  cfg.epochs = 20;
  cfg.batch_size = 32;
  cfg.seed = 6;
  std::size_t callbacks = 0;
  const auto log = train(net, d, cfg, [&](const EpochLog& e) { CHECK(e.epoch == callbacks++); });
  CHECK(callbacks == 20);
  REQUIRE(log.epochs.size() == 20);
  double best = 0;
  for (const auto& e : log.epochs) best = std::max(best, e.accuracy);
  CHECK(best > 90);
  CHECK(log.epochs.back().lr < log.epochs.front().lr);

  std::vector<double> tail;
  for (std::size_t e = 15; e < 20; ++e) tail.push_back(log.epochs[e].loss);
  CHECK(slope(tail) <= 0);
}

TEST_CASE("non-finite loss names the epoch") {
  LinearModel<double> model({1, 1, 2}, 2, 3);
  Tensor<double> x({4, 1, 1, 2}, {0, 1, 1, 0, std::numeric_limits<double>::quiet_NaN(), 0, 1, 1});
  const std::vector<std::int32_t> y{0, 1, 0, 1};
  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.augment = false;
  try {
    train(model, x, y, cfg);
    FAIL("expected divergence");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("epoch 0") != std::string::npos);
  }
}

TEST_CASE("shape and data errors") {
  LinearModel<double> model({1, 1, 2}, 2, 3);
  Tensor<double> x({2, 1, 1, 3});
  const std::vector<std::int32_t> y{0, 1};
  CHECK_THROWS_AS(train(model, x, y, TrainConfig{}), ShapeError);
  Tensor<double> ok({2, 1, 1, 2});
  const std::vector<std::int32_t> few{0};
  CHECK_THROWS_AS(train(model, ok, few, TrainConfig{}), ShapeError);
  CHECK_THROWS_AS(train(model, ok, {}, TrainConfig{}), DataError);
}

TEST_CASE("train log JSON") {
  TrainLog log;
  log.epochs.push_back({0, 1.5, 50, 0.1, 2.0});
  CHECK(log.to_json(true)["epochs"][0]["seconds"] == 2.0);
  CHECK_FALSE(log.to_json(false)["epochs"][0].contains("seconds"));
}
