#include "rnas/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>

namespace rnas {

namespace {

void check_percent(double v, const char* what) {
  if (!(v >= 0.0 && v <= 100.0)) throw UsageError(std::string(what) + " must lie in [0,100], got " + std::to_string(v));
}

std::string two_decimals(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace

double hrs(double clean, double pgd) {
  check_percent(clean, "clean accuracy");
  check_percent(pgd, "pgd accuracy");
  if (clean + pgd == 0.0) return 0.0;
  return 2.0 * clean * pgd / (clean + pgd);
}

double pp_hrs(double hrs_value, double baseline_params, double model_params) {
  if (!(baseline_params > 0.0) || !(model_params > 0.0)) {
    throw UsageError("pp_hrs needs positive parameter counts, got baseline " + std::to_string(baseline_params) +
                     " and model " + std::to_string(model_params));
  }
  return hrs_value * baseline_params / model_params;
}

namespace {

template <typename T>
std::size_t topk_correct(const Tensor<T>& logits, std::span<const std::int32_t> labels, std::size_t k) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw ShapeError("accuracy: logits " + shape_string(logits.shape()) + " for " + std::to_string(labels.size()) +
                     " labels");
  }
  const std::size_t classes = logits.dim(1);
  if (k == 0 || k > classes) {
    throw UsageError("top-k accuracy needs 1 <= k <= " + std::to_string(classes) + ", got " + std::to_string(k));
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const T* row = logits.ptr() + i * classes;
    const auto y = std::size_t(labels[i]);
    if (y >= classes) throw DataError("label " + std::to_string(labels[i]) + " out of range");
    // Rank of the label: entries strictly larger, or equal with a lower index.
    std::size_t ahead = 0;
    for (std::size_t j = 0; j < classes; ++j)
      if (row[j] > row[y] || (row[j] == row[y] && j < y)) ++ahead;
    if (ahead < k) ++correct;
  }
  return correct;
}

}  // namespace

template <typename T>
double topk_accuracy(const Tensor<T>& logits, std::span<const std::int32_t> labels, std::size_t k) {
  if (labels.empty()) throw DataError("accuracy of an empty set");
  return 100.0 * double(topk_correct(logits, labels, k)) / double(labels.size());
}

template <typename T>
double clean_accuracy(const Classifier<T>& model, const Dataset& data, std::size_t k, std::size_t batch_size) {
  if (data.size() == 0) throw DataError("clean accuracy: empty dataset");
  if (data.sample_shape() != model.input_shape()) {
    throw ShapeError("clean accuracy: data samples are " + shape_string(data.sample_shape()) +
                     " but the model expects " + shape_string(model.input_shape()));
  }
  if (batch_size == 0) throw UsageError("batch size must be positive");
  std::size_t correct = 0;
  for (std::size_t begin = 0; begin < data.size(); begin += batch_size) {
    const std::size_t end = std::min(data.size(), begin + batch_size);
    std::vector<std::size_t> idx(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    const auto logits = predict_logits(model, gather_rows<T>(data.images, idx));
    correct += topk_correct(logits, std::span<const std::int32_t>(data.labels).subspan(begin, end - begin), k);
  }
  return 100.0 * double(correct) / double(data.size());
}

CompoundScale compound_scale(const ScalingCoefficients& c) {
  if (c.alpha < 1 || c.beta < 1 || c.gamma < 1) {
    throw UsageError("scaling coefficients must be >= 1");
  }
  CompoundScale s;
  s.depth = std::pow(c.alpha, c.phi);
  s.width = std::pow(c.beta, c.phi);
  s.resolution = std::pow(c.gamma, c.phi);
  s.residual = std::abs(c.alpha * c.beta * c.beta * c.gamma * c.gamma - 2.0);
  s.warning = s.residual > 0.1;
  return s;
}

void RobustnessReport::validate() const {
  if (model_id.empty()) throw DataError("report has an empty model id");
  if (!(params_millions >= 0)) throw DataError("report " + model_id + ": negative parameter count");
  auto pct = [&](double v, const std::string& what) {
    if (!(v >= 0.0 && v <= 100.0)) throw DataError("report " + model_id + ": " + what + " outside [0,100]");
  };
  pct(clean, "clean");
  for (const auto& [k, v] : adversarial) pct(v, k);
  const auto it = adversarial.find("pgd");
  const double expected = rnas::hrs(clean, it == adversarial.end() ? 0.0 : it->second);
  if (std::abs(expected - hrs) > 1e-9) throw DataError("report " + model_id + ": hrs does not match clean/pgd");
}

RobustnessReport make_report(std::string model_id, double params_millions, double clean,
                             std::map<std::string, double> adversarial, std::uint64_t seed) {
  RobustnessReport r;
  r.model_id = std::move(model_id);
  r.params_millions = params_millions;
  r.clean = clean;
  r.adversarial = std::move(adversarial);
  r.seed = seed;
  const auto it = r.adversarial.find("pgd");
  r.hrs = hrs(clean, it == r.adversarial.end() ? 0.0 : it->second);
  return r;
}

nlohmann::json report_to_json(const RobustnessReport& r) {
  nlohmann::json j;
  j["model_id"] = r.model_id;
  j["params_millions"] = r.params_millions;
  j["clean"] = r.clean;
  j["adversarial"] = r.adversarial;
  j["hrs"] = r.hrs;
  j["pp_hrs"] = r.pp_hrs ? nlohmann::json(*r.pp_hrs) : nlohmann::json(nullptr);
  j["seed"] = r.seed;
  j["accuracy_flavor"] = r.accuracy_flavor;
  j["config"] = r.config;
  return j;
}

RobustnessReport report_from_json(const nlohmann::json& j) {
  try {
    RobustnessReport r;
    r.model_id = j.at("model_id").get<std::string>();
    r.params_millions = j.at("params_millions").get<double>();
    r.clean = j.at("clean").get<double>();
    r.adversarial = j.at("adversarial").get<std::map<std::string, double>>();
    r.hrs = j.at("hrs").get<double>();
    if (j.contains("pp_hrs") && !j["pp_hrs"].is_null()) r.pp_hrs = j["pp_hrs"].get<double>();
    r.seed = j.value("seed", std::uint64_t(0));
    r.accuracy_flavor = j.value("accuracy_flavor", std::string("top1"));
    if (j.contains("config")) r.config = j["config"];
    r.validate();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed report JSON: ") + e.what());
  }
}

void assign_pp_hrs(std::vector<RobustnessReport>& reports) {
  if (reports.empty()) return;
  const auto base = std::min_element(reports.begin(), reports.end(), [](const auto& a, const auto& b) {
    return a.params_millions < b.params_millions;
  });
  const double baseline = base->params_millions;
  for (auto& r : reports) r.pp_hrs = pp_hrs(r.hrs, baseline, r.params_millions);
}

std::string reports_to_csv(std::vector<RobustnessReport> reports) {
  if (reports.empty()) throw DataError("no reports to emit");
  std::sort(reports.begin(), reports.end(), [](const auto& a, const auto& b) { return a.model_id < b.model_id; });
  for (std::size_t i = 1; i < reports.size(); ++i) {
    if (reports[i].model_id == reports[i - 1].model_id) {
      throw DataError("duplicate model id '" + reports[i].model_id + "' in reports");
    }
  }
  std::string out = "model,params_m,clean,fgsm,ffgsm,pgd,hrs,pp_hrs\n";
  auto attack = [](const RobustnessReport& r, const char* name) {
    const auto it = r.adversarial.find(name);
    return it == r.adversarial.end() ? std::string() : two_decimals(it->second);
  };
  for (const auto& r : reports) {
    out += r.model_id + "," + two_decimals(r.params_millions) + "," + two_decimals(r.clean) + "," +
           attack(r, "fgsm") + "," + attack(r, "ffgsm") + "," + attack(r, "pgd") + "," + two_decimals(r.hrs) + "," +
           (r.pp_hrs ? two_decimals(*r.pp_hrs) : std::string()) + "\n";
  }
  return out;
}

template double topk_accuracy(const Tensor<float>&, std::span<const std::int32_t>, std::size_t);
template double topk_accuracy(const Tensor<double>&, std::span<const std::int32_t>, std::size_t);
template double clean_accuracy(const Classifier<float>&, const Dataset&, std::size_t, std::size_t);
template double clean_accuracy(const Classifier<double>&, const Dataset&, std::size_t, std::size_t);

}  // namespace rnas
