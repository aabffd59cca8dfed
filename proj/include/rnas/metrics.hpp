#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "rnas/dataset.hpp"
#include "rnas/model.hpp"

namespace rnas {

/// Harmonic robustness score 2CP/(C+P) of clean and PGD accuracy (percent).
/// Zero when C + P == 0. Throws UsageError outside [0,100].
double hrs(double clean, double pgd);

/// hrs * baseline_params / model_params. Throws UsageError unless both
/// parameter counts are positive.
double pp_hrs(double hrs_value, double baseline_params, double model_params);

/// Percent of rows whose label is among the k largest logits. Ties at the
/// k-th value are resolved by lower index.
template <typename T>
double topk_accuracy(const Tensor<T>& logits, std::span<const std::int32_t> labels, std::size_t k = 1);

template <typename T>
double clean_accuracy(const Classifier<T>& model, const Dataset& data, std::size_t k = 1,
                      std::size_t batch_size = 256);

struct ScalingCoefficients {
  double phi = 1;
  double alpha = 1;
  double beta = 1;
  double gamma = 1;
};

struct CompoundScale {
  double depth = 1;
  double width = 1;
  double resolution = 1;
  double residual = 0;  // |alpha * beta^2 * gamma^2 - 2|
  bool warning = false;  // residual > 0.1
};

/// (alpha^phi, beta^phi, gamma^phi). Throws UsageError if any coefficient < 1.
CompoundScale compound_scale(const ScalingCoefficients& c);

struct RobustnessReport {
  std::string model_id;
  double params_millions = 0;
  double clean = 0;
  std::map<std::string, double> adversarial;  // attack name -> percent
  double hrs = 0;
  std::optional<double> pp_hrs;
  std::uint64_t seed = 0;
  std::string accuracy_flavor = "top1";
  nlohmann::json config = nlohmann::json::object();

  /// Checks percent ranges and that hrs matches clean/pgd to 1e-9.
  void validate() const;
};

/// Builds a report; hrs is computed from clean and adversarial["pgd"] (0 if absent).
RobustnessReport make_report(std::string model_id, double params_millions, double clean,
                             std::map<std::string, double> adversarial, std::uint64_t seed);

nlohmann::json report_to_json(const RobustnessReport& r);
RobustnessReport report_from_json(const nlohmann::json& j);

/// Fills pp_hrs of every report against the smallest-parameter report.
void assign_pp_hrs(std::vector<RobustnessReport>& reports);

/// Header `model,params_m,clean,fgsm,ffgsm,pgd,hrs,pp_hrs`, rows sorted by
/// model_id, two decimals, empty cell for a missing value. Throws DataError
/// on duplicate model ids or an empty list.
std::string reports_to_csv(std::vector<RobustnessReport> reports);

}  // namespace rnas
