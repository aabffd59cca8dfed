#include "rnas/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "rnas/ops.hpp"
#include "rnas/parallel.hpp"

namespace rnas {

std::string attack_name(AttackKind kind) {
  switch (kind) {
    case AttackKind::fgsm: return "fgsm";
    case AttackKind::ffgsm: return "ffgsm";
    case AttackKind::pgd: return "pgd";
  }
  return "?";
}

AttackKind attack_from_name(const std::string& name) {
  if (name == "fgsm") return AttackKind::fgsm;
  if (name == "ffgsm") return AttackKind::ffgsm;
  if (name == "pgd") return AttackKind::pgd;
  throw UsageError("unknown attack '" + name + "' (expected fgsm, ffgsm or pgd)");
}

AttackConfig AttackConfig::defaults(AttackKind kind, double epsilon) {
  AttackConfig c;
  c.kind = kind;
  c.epsilon = epsilon;
  switch (kind) {
    case AttackKind::fgsm:
      c.step_size = epsilon > 0 ? epsilon : 2.0 / 255.0;
      c.iterations = 1;
      c.random_start = false;
      break;
    case AttackKind::ffgsm:
      c.step_size = epsilon > 0 ? epsilon : 2.0 / 255.0;
      c.iterations = 1;
      c.random_start = true;
      break;
    case AttackKind::pgd:
      break;
  }
  return c;
}

void AttackConfig::validate() const {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw UsageError("attack epsilon must lie in [0,1], got " + std::to_string(epsilon));
  if (!(step_size > 0.0)) throw UsageError("attack step_size must be positive, got " + std::to_string(step_size));
  if (iterations < 1) throw UsageError("attack iterations must be >= 1, got " + std::to_string(iterations));
}

template <typename T>
Tensor<T> input_gradient(const Classifier<T>& model, const Tensor<T>& x, std::span<const std::int32_t> labels,
                         double* loss) {
  Tape<T> tape(GradMode::inputs_only);
  auto xv = make_input(x, true);
  auto logits = model.forward(tape, xv);
  if (!logits->value.all_finite()) throw NumericError("model produced non-finite logits");
  auto l = ops::softmax_cross_entropy(tape, logits, labels);
  if (loss) *loss = double(l->value[0]);
  tape.backward(l);
  return xv->has_grad() ? xv->grad : Tensor<T>(x.shape());
}

template <typename T>
double batch_loss(const Classifier<T>& model, const Tensor<T>& x, std::span<const std::int32_t> labels) {
  Tape<T> tape(GradMode::none);
  auto logits = model.forward(tape, make_constant(x));
  return double(ops::softmax_cross_entropy(tape, logits, labels)->value[0]);
}

template <typename T>
Tensor<T> signed_step(const Tensor<T>& origin, const Tensor<T>& from, const Tensor<T>& grad, double step,
                      double epsilon) {
  require_same_shape(origin.shape(), from.shape(), "signed_step");
  require_same_shape(origin.shape(), grad.shape(), "signed_step gradient");
  const T s = T(step), eps = T(epsilon);
  Tensor<T> out(origin.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T g = grad[i];
    const T dir = g > 0 ? T(1) : (g < 0 ? T(-1) : T(0));
    const T lo = std::max(T(0), origin[i] - eps);
    const T hi = std::min(T(1), origin[i] + eps);
    out[i] = std::clamp(from[i] + s * dir, lo, hi);
  }
  return out;
}

template <typename T>
void check_ball(const Tensor<T>& x, const Tensor<T>& adv, double epsilon) {
  require_same_shape(x.shape(), adv.shape(), "check_ball");
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double a = double(adv[i]);
    if (!(a >= 0.0 && a <= 1.0) || std::abs(a - double(x[i])) > epsilon + 1e-7) {
      throw NumericError("adversarial example leaves the epsilon-ball or [0,1] at flat index " + std::to_string(i));
    }
  }
}

namespace {

template <typename T>
void check_inputs(const Classifier<T>& model, const Tensor<T>& x, std::span<const std::int32_t> labels,
                  const AttackConfig& cfg) {
  cfg.validate();
  Shape expected{labels.size()};
  const Shape s = model.input_shape();
  expected.insert(expected.end(), s.begin(), s.end());
  if (x.shape() != expected) {
    throw ShapeError("attack: batch " + shape_string(x.shape()) + " does not match " + shape_string(expected));
  }
}

template <typename T>
Tensor<T> random_start(const Tensor<T>& x, double epsilon, std::uint64_t seed) {
  if (epsilon == 0.0) return x;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-epsilon, epsilon);
  Tensor<T> out(x.shape());
  const T eps = T(epsilon);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T lo = std::max(T(0), x[i] - eps), hi = std::min(T(1), x[i] + eps);
    out[i] = std::clamp(T(double(x[i]) + u(rng)), lo, hi);
  }
  return out;
}

template <typename T>
AdversarialBatch<T> iterate(const Classifier<T>& model, const Tensor<T>& x, std::span<const std::int32_t> labels,
                            const AttackConfig& cfg, std::uint64_t seed, bool use_random_start, double step,
                            int iterations) {
  check_inputs(model, x, labels, cfg);
  Tensor<T> cur = use_random_start ? random_start(x, cfg.epsilon, seed) : x;
  for (int it = 0; it < iterations; ++it) {
    cur = signed_step(x, cur, input_gradient(model, cur, labels), step, cfg.epsilon);
  }
  check_ball(x, cur, cfg.epsilon);
  return {x, std::move(cur), {labels.begin(), labels.end()}, cfg};
}

}  // namespace

template <typename T>
AdversarialBatch<T> fgsm(const Classifier<T>& model, const Tensor<T>& x, std::span<const std::int32_t> labels,
                         const AttackConfig& cfg) {
  return iterate(model, x, labels, cfg, 0, false, cfg.epsilon, 1);
}

template <typename T>
AdversarialBatch<T> ffgsm(const Classifier<T>& model, const Tensor<T>& x, std::span<const std::int32_t> labels,
                          const AttackConfig& cfg, std::uint64_t seed) {
  return iterate(model, x, labels, cfg, seed, cfg.random_start, cfg.step_size, 1);
}

template <typename T>
AdversarialBatch<T> pgd(const Classifier<T>& model, const Tensor<T>& x, std::span<const std::int32_t> labels,
                        const AttackConfig& cfg, std::uint64_t seed) {
  return iterate(model, x, labels, cfg, seed, cfg.random_start, cfg.step_size, cfg.iterations);
}

template <typename T>
AdversarialBatch<T> run_attack(const Classifier<T>& model, const Tensor<T>& x, std::span<const std::int32_t> labels,
                               const AttackConfig& cfg, std::uint64_t seed) {
  switch (cfg.kind) {
    case AttackKind::fgsm: return fgsm(model, x, labels, cfg);
    case AttackKind::ffgsm: return ffgsm(model, x, labels, cfg, seed);
    case AttackKind::pgd: return pgd(model, x, labels, cfg, seed);
  }
  throw UsageError("unknown attack kind");
}

namespace {

template <typename T>
std::size_t count_correct(const Tensor<T>& logits, std::span<const std::int32_t> labels) {
  const std::size_t k = logits.dim(1);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const T* row = logits.ptr() + i * k;
    if (std::size_t(std::max_element(row, row + k) - row) == std::size_t(labels[i])) ++correct;
  }
  return correct;
}

void check_data(const Dataset& data, const Shape& input_shape, const char* what) {
  if (data.size() == 0) throw DataError(std::string(what) + ": empty dataset");
  if (data.sample_shape() != input_shape) {
    throw ShapeError(std::string(what) + ": data samples are " + shape_string(data.sample_shape()) +
                     " but the model expects " + shape_string(input_shape));
  }
}

// Batch b covers [b*bs, min(N, (b+1)*bs)) and is attacked with seed derive_seed(seed, b).
template <typename T>
void for_each_batch(const Dataset& data, const EvalOptions& opt,
                    const std::function<void(std::size_t, const Tensor<T>&, std::span<const std::int32_t>)>& fn) {
  if (opt.batch_size == 0) throw UsageError("batch size must be positive");
  const std::size_t n = data.size();
  const std::size_t batches = (n + opt.batch_size - 1) / opt.batch_size;
  parallel_for(batches, opt.threads, [&](std::size_t b) {
    const std::size_t begin = b * opt.batch_size, end = std::min(n, begin + opt.batch_size);
    std::vector<std::size_t> idx(end - begin);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = begin + i;
    const Tensor<T> x = gather_rows<T>(data.images, idx);
    fn(b, x, std::span<const std::int32_t>(data.labels).subspan(begin, end - begin));
  });
}

}  // namespace

template <typename T>
double transfer_eval(const Classifier<T>& source, const Classifier<T>& target, const Dataset& data,
                     const AttackConfig& cfg, const EvalOptions& opt) {
  if (source.input_shape() != target.input_shape()) {
    throw ShapeError("transfer_eval: source expects " + shape_string(source.input_shape()) + " but target expects " +
                     shape_string(target.input_shape()));
  }
  check_data(data, source.input_shape(), "transfer_eval");
  cfg.validate();
  const std::size_t batches = (data.size() + std::max<std::size_t>(opt.batch_size, 1) - 1) / std::max<std::size_t>(opt.batch_size, 1);
  std::vector<std::size_t> correct(batches, 0);
  for_each_batch<T>(data, opt, [&](std::size_t b, const Tensor<T>& x, std::span<const std::int32_t> y) {
    auto adv = run_attack(source, x, y, cfg, derive_seed(opt.seed, b));
    correct[b] = count_correct(predict_logits(target, adv.perturbed), y);
  });
  std::size_t total = 0;
  for (std::size_t c : correct) total += c;
  return 100.0 * double(total) / double(data.size());
}

template <typename T>
double adversarial_accuracy(const Classifier<T>& model, const Dataset& data, const AttackConfig& cfg,
                            const EvalOptions& opt) {
  return transfer_eval(model, model, data, cfg, opt);
}

template <typename T>
AdversarialBatch<T> attack_dataset(const Classifier<T>& model, const Dataset& data, const AttackConfig& cfg,
                                   const EvalOptions& opt) {
  check_data(data, model.input_shape(), "attack");
  cfg.validate();
  AdversarialBatch<T> out;
  out.original = data.images.cast<T>();
  out.perturbed = Tensor<T>(data.images.shape());
  out.labels = data.labels;
  out.config = cfg;
  const std::size_t row = data.images.size() / data.size();
  for_each_batch<T>(data, opt, [&](std::size_t b, const Tensor<T>& x, std::span<const std::int32_t> y) {
    auto adv = run_attack(model, x, y, cfg, derive_seed(opt.seed, b));
    std::copy(adv.perturbed.data().begin(), adv.perturbed.data().end(), out.perturbed.ptr() + b * opt.batch_size * row);
  });
  return out;
}

#define RNAS_INSTANTIATE(T)                                                                                        \
  template Tensor<T> input_gradient(const Classifier<T>&, const Tensor<T>&, std::span<const std::int32_t>,        \
                                    double*);                                                                     \
  template double batch_loss(const Classifier<T>&, const Tensor<T>&, std::span<const std::int32_t>);             \
  template Tensor<T> signed_step(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double, double);           \
  template void check_ball(const Tensor<T>&, const Tensor<T>&, double);                                           \
  template AdversarialBatch<T> fgsm(const Classifier<T>&, const Tensor<T>&, std::span<const std::int32_t>,        \
                                    const AttackConfig&);                                                         \
  template AdversarialBatch<T> ffgsm(const Classifier<T>&, const Tensor<T>&, std::span<const std::int32_t>,       \
                                     const AttackConfig&, std::uint64_t);                                         \
  template AdversarialBatch<T> pgd(const Classifier<T>&, const Tensor<T>&, std::span<const std::int32_t>,         \
                                   const AttackConfig&, std::uint64_t);                                           \
  template AdversarialBatch<T> run_attack(const Classifier<T>&, const Tensor<T>&, std::span<const std::int32_t>,  \
                                          const AttackConfig&, std::uint64_t);                                    \
  template double adversarial_accuracy(const Classifier<T>&, const Dataset&, const AttackConfig&,                 \
                                       const EvalOptions&);                                                       \
  template double transfer_eval(const Classifier<T>&, const Classifier<T>&, const Dataset&, const AttackConfig&,  \
                                const EvalOptions&);                                                              \
  template AdversarialBatch<T> attack_dataset(const Classifier<T>&, const Dataset&, const AttackConfig&,          \
                                              const EvalOptions&);

RNAS_INSTANTIATE(float)
RNAS_INSTANTIATE(double)

}  // namespace rnas
