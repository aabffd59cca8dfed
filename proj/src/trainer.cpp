#include "rnas/trainer.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include "rnas/ops.hpp"
#include "rnas/optim.hpp"
#include "rnas/parallel.hpp"

namespace rnas {

void TrainConfig::validate() const {
  if (epochs < 1) throw UsageError("train: epochs must be >= 1");
  if (batch_size < 2) throw UsageError("train: batch_size must be >= 2 (batch norm needs two samples)");
  if (!(lr >= 0)) throw UsageError("train: lr must be non-negative");
  if (!(momentum >= 0 && momentum < 1)) throw UsageError("train: momentum must lie in [0,1)");
  if (!(weight_decay >= 0)) throw UsageError("train: weight_decay must be non-negative");
}

nlohmann::json train_config_to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},     {"batch_size", c.batch_size},     {"lr", c.lr},
          {"cosine", c.cosine},     {"momentum", c.momentum},         {"weight_decay", c.weight_decay},
          {"augment", c.augment},   {"max_shift", c.max_shift},       {"seed", c.seed}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  if (!j.is_object()) throw UsageError("train config must be a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "epochs") c.epochs = value.get<std::size_t>();
      else if (key == "batch_size") c.batch_size = value.get<std::size_t>();
      else if (key == "lr") c.lr = value.get<double>();
      else if (key == "cosine") c.cosine = value.get<bool>();
      else if (key == "momentum") c.momentum = value.get<double>();
      else if (key == "weight_decay") c.weight_decay = value.get<double>();
      else if (key == "augment") c.augment = value.get<bool>();
      else if (key == "max_shift") c.max_shift = value.get<std::size_t>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else throw UsageError("train config: unknown key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

nlohmann::json TrainLog::to_json(bool with_timing) const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : epochs) {
    nlohmann::json j = {{"epoch", e.epoch}, {"loss", e.loss}, {"accuracy", e.accuracy}, {"lr", e.lr}};
    if (with_timing) j["seconds"] = e.seconds;
    arr.push_back(j);
  }
  return {{"epochs", arr}};
}

template <typename T>
TrainLog train(TrainableModel<T>& model, const Tensor<double>& inputs, std::span<const std::int32_t> labels,
               const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  if (labels.empty()) throw DataError("train: empty dataset");
  if (inputs.rank() < 2 || inputs.dim(0) != labels.size()) {
    throw ShapeError("train: " + std::to_string(labels.size()) + " labels for inputs " + shape_string(inputs.shape()));
  }
  const Shape sample(inputs.shape().begin() + 1, inputs.shape().end());
  if (sample != model.input_shape()) {
    throw ShapeError("train: samples are " + shape_string(sample) + " but the model expects " +
                     shape_string(model.input_shape()));
  }
  const std::size_t n = labels.size();
  const auto params = model.parameters();
  Sgd<T> opt(params, cfg.momentum, cfg.weight_decay);
  TrainLog log;
  std::vector<std::size_t> order(n);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const double lr = cfg.cosine ? cosine_lr(cfg.lr, epoch, cfg.epochs) : cfg.lr;
    std::mt19937_64 rng(derive_seed(cfg.seed, epoch));
    std::iota(order.begin(), order.end(), std::size_t(0));
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0;
    std::size_t seen = 0, correct = 0;
    for (std::size_t begin = 0; begin < n; begin += cfg.batch_size) {
      const std::size_t end = std::min(n, begin + cfg.batch_size);
      if (end - begin < 2) break;
      const std::span<const std::size_t> idx(order.data() + begin, end - begin);
      Tensor<T> x = gather_rows<T>(inputs, idx);
      if (cfg.augment) augment_batch(x, cfg.max_shift, rng);
      const auto y = gather_labels(labels, idx);
      opt.zero_grad();
      Tape<T> tape(GradMode::all);
      auto logits = model.forward_train(tape, make_constant(std::move(x)));
      auto loss = ops::softmax_cross_entropy(tape, logits, y);
      const double l = double(loss->value[0]);
      if (!std::isfinite(l)) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch) + ": loss is not finite");
      }
      const std::size_t k = logits->value.dim(1);
      for (std::size_t i = 0; i < y.size(); ++i) {
        const T* row = logits->value.ptr() + i * k;
        if (std::size_t(std::max_element(row, row + k) - row) == std::size_t(y[i])) ++correct;
      }
      tape.backward(loss);
      for (const auto& p : params) {
        if (p->has_grad() && !p->grad.all_finite()) {
          throw NumericError("training diverged at epoch " + std::to_string(epoch) + ": gradient is not finite");
        }
      }
      opt.step(lr);
      loss_sum += l * double(y.size());
      seen += y.size();
    }
    if (seen == 0) throw DataError("train: need at least two samples per batch");
    EpochLog e;
    e.epoch = epoch;
    e.loss = loss_sum / double(seen);
    e.accuracy = 100.0 * double(correct) / double(seen);
    e.lr = lr;
    e.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    log.epochs.push_back(e);
    if (on_epoch) on_epoch(e);
  }
  return log;
}

template <typename T>
TrainLog train(TrainableModel<T>& model, const Dataset& data, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  return train(model, data.images, data.labels, cfg, on_epoch);
}

std::size_t epoch_budget(std::size_t num_cells, std::size_t total_cells, std::size_t total_epochs) {
  if (total_cells == 0 || num_cells == 0 || num_cells > total_cells) {
    throw UsageError("epoch_budget: need 1 <= num_cells <= total_cells, got " + std::to_string(num_cells) + " of " +
                     std::to_string(total_cells));
  }
  // Exact integer rounding, halves away from zero.
  return (2 * total_epochs * num_cells + total_cells) / (2 * total_cells);
}

template TrainLog train(TrainableModel<float>&, const Tensor<double>&, std::span<const std::int32_t>,
                        const TrainConfig&, const EpochCallback&);
template TrainLog train(TrainableModel<double>&, const Tensor<double>&, std::span<const std::int32_t>,
                        const TrainConfig&, const EpochCallback&);
template TrainLog train(TrainableModel<float>&, const Dataset&, const TrainConfig&, const EpochCallback&);
template TrainLog train(TrainableModel<double>&, const Dataset&, const TrainConfig&, const EpochCallback&);

}  // namespace rnas
