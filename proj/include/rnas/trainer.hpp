#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <json.hpp>

#include "rnas/dataset.hpp"
#include "rnas/model.hpp"

namespace rnas {

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 64;
  double lr = 0.05;
  bool cosine = true;  // anneal lr to zero over `epochs`; constant otherwise
  double momentum = 0.9;
  double weight_decay = 3e-4;
  bool augment = true;  // random flip + shift on image batches
  std::size_t max_shift = 2;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json train_config_to_json(const TrainConfig& c);
/// Missing keys keep their defaults; unknown keys are rejected.
TrainConfig train_config_from_json(const nlohmann::json& j);

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0;
  double accuracy = 0;
  double lr = 0;
  double seconds = 0;
};

struct TrainLog {
  std::vector<EpochLog> epochs;
  nlohmann::json to_json(bool with_timing = true) const;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Mini-batch SGD over (inputs, labels); inputs are [N, ...] with any
/// trailing shape. Samples are reshuffled each epoch; a trailing batch of a
/// single sample is dropped. Throws NumericError naming the epoch if the
/// loss becomes non-finite.
template <typename T>
TrainLog train(TrainableModel<T>& model, const Tensor<double>& inputs, std::span<const std::int32_t> labels,
               const TrainConfig& cfg, const EpochCallback& on_epoch = {});

template <typename T>
TrainLog train(TrainableModel<T>& model, const Dataset& data, const TrainConfig& cfg,
               const EpochCallback& on_epoch = {});

/// round(total_epochs * num_cells / total_cells), half away from zero.
std::size_t epoch_budget(std::size_t num_cells, std::size_t total_cells = 20, std::size_t total_epochs = 600);

}  // namespace rnas
