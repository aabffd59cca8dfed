#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rnas/dataset.hpp"
#include "rnas/model.hpp"

namespace rnas {

enum class AttackKind { fgsm, ffgsm, pgd };

std::string attack_name(AttackKind kind);
AttackKind attack_from_name(const std::string& name);

/// L-infinity attack settings; pixels live in [0,1].
struct AttackConfig {
  AttackKind kind = AttackKind::pgd;
  double epsilon = 8.0 / 255.0;
  double step_size = 2.0 / 255.0;
  int iterations = 10;
  bool random_start = true;

  /// fgsm: one step of size epsilon, no random start.
  /// ffgsm: random start, one step of size epsilon.
  /// pgd: random start, 10 steps of 2/255.
  static AttackConfig defaults(AttackKind kind, double epsilon = 8.0 / 255.0);

  /// epsilon in [0,1], step_size > 0, iterations >= 1.
  void validate() const;
  friend bool operator==(const AttackConfig&, const AttackConfig&) = default;
};

template <typename T>
struct AdversarialBatch {
  Tensor<T> original;
  Tensor<T> perturbed;
  std::vector<std::int32_t> labels;
  AttackConfig config;
};

/// Gradient of the mean cross-entropy w.r.t. the input batch, with the model
/// in inference mode. Parameters receive no gradient.
template <typename T>
Tensor<T> input_gradient(const Classifier<T>& model, const Tensor<T>& x, std::span<const std::int32_t> labels,
                         double* loss = nullptr);

/// Mean cross-entropy of the model on (x, labels).
template <typename T>
double batch_loss(const Classifier<T>& model, const Tensor<T>& x, std::span<const std::int32_t> labels);

/// One sign-gradient step from `from`, projected to the epsilon-ball around
/// `origin` and to [0,1].
template <typename T>
Tensor<T> signed_step(const Tensor<T>& origin, const Tensor<T>& from, const Tensor<T>& grad, double step,
                      double epsilon);

template <typename T>
AdversarialBatch<T> fgsm(const Classifier<T>& model, const Tensor<T>& x, std::span<const std::int32_t> labels,
                         const AttackConfig& cfg);
template <typename T>
AdversarialBatch<T> ffgsm(const Classifier<T>& model, const Tensor<T>& x, std::span<const std::int32_t> labels,
                          const AttackConfig& cfg, std::uint64_t seed);
template <typename T>
AdversarialBatch<T> pgd(const Classifier<T>& model, const Tensor<T>& x, std::span<const std::int32_t> labels,
                        const AttackConfig& cfg, std::uint64_t seed);

/// Dispatches on cfg.kind.
template <typename T>
AdversarialBatch<T> run_attack(const Classifier<T>& model, const Tensor<T>& x, std::span<const std::int32_t> labels,
                               const AttackConfig& cfg, std::uint64_t seed);

/// Throws NumericError unless |adv - x| <= epsilon + 1e-7 and adv in [0,1].
template <typename T>
void check_ball(const Tensor<T>& x, const Tensor<T>& adv, double epsilon);

struct EvalOptions {
  std::size_t batch_size = 128;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

/// Percent of samples whose top-1 prediction on the attacked input is the label.
template <typename T>
double adversarial_accuracy(const Classifier<T>& model, const Dataset& data, const AttackConfig& cfg,
                            const EvalOptions& opt = {});

/// Adversarial examples are crafted on `source`, then `target` classifies them.
template <typename T>
double transfer_eval(const Classifier<T>& source, const Classifier<T>& target, const Dataset& data,
                     const AttackConfig& cfg, const EvalOptions& opt = {});

/// Attacked copy of a whole dataset (for export), batch seeds as above.
template <typename T>
AdversarialBatch<T> attack_dataset(const Classifier<T>& model, const Dataset& data, const AttackConfig& cfg,
                                   const EvalOptions& opt = {});

}  // namespace rnas
