#pragma once

// Test-only oracles. Nothing here calls into the code paths it checks
// except through the public forward interface.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "rnas/autodiff.hpp"
#include "rnas/ops.hpp"

namespace rnas::testing {

inline Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

/// Direct six-nested-loop cross-correlation (plus the group loop).
inline Tensor<double> naive_conv2d(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>* bias,
                                   std::size_t stride, std::size_t pad, std::size_t dil, std::size_t groups) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t k = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const std::size_t cg = c / groups, kg = k / groups;
  const std::size_t ho = (h + 2 * pad - dil * (kh - 1) - 1) / stride + 1;
  const std::size_t wo = (wd + 2 * pad - dil * (kw - 1) - 1) / stride + 1;
  Tensor<double> out({n, k, ho, wo});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t f = 0; f < k; ++f) {
      const std::size_t g = f / kg;
      for (std::size_t oy = 0; oy < ho; ++oy)
        for (std::size_t ox = 0; ox < wo; ++ox) {
          double acc = bias ? (*bias)[f] : 0.0;
          for (std::size_t ci = 0; ci < cg; ++ci)
            for (std::size_t i = 0; i < kh; ++i)
              for (std::size_t j = 0; j < kw; ++j) {
                const long iy = long(oy * stride + i * dil) - long(pad);
                const long ix = long(ox * stride + j * dil) - long(pad);
                if (iy < 0 || ix < 0 || iy >= long(h) || ix >= long(wd)) continue;
                acc += x.at(b, g * cg + ci, std::size_t(iy), std::size_t(ix)) *
                       w[((f * cg + ci) * kh + i) * kw + j];
              }
          out.at(b, f, oy, ox) = acc;
        }
    }
  return out;
}

/// Elementwise |a - n| / max(|a|, |n|, 1e-6).
inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

struct GradCheckResult {
  double max_rel_error = 0;
  std::size_t coords_checked = 0;
};

/// Compares reverse-mode gradients of `loss` w.r.t. each of `leaves` with
/// central differences (step h). When `max_coords` is non-zero, each leaf is
/// checked on at most that many randomly chosen coordinates.
inline GradCheckResult grad_check(const std::function<Var<double>(Tape<double>&)>& loss,
                                  const std::vector<Var<double>>& leaves, std::mt19937_64& rng,
                                  std::size_t max_coords = 0, double h = 1e-5) {
  for (const auto& leaf : leaves) leaf->zero_grad();
  {
    Tape<double> tape(GradMode::all);
    tape.backward(loss(tape));
  }
  GradCheckResult result;
  for (const auto& leaf : leaves) {
    const Tensor<double> analytic = leaf->has_grad() ? leaf->grad : Tensor<double>(leaf->value.shape());
    std::vector<std::size_t> coords(leaf->value.size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (max_coords && coords.size() > max_coords) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(max_coords);
    }
    for (std::size_t i : coords) {
      const double saved = leaf->value[i];
      leaf->value[i] = saved + h;
      Tape<double> plus(GradMode::none);
      const double lp = loss(plus)->value[0];
      leaf->value[i] = saved - h;
      Tape<double> minus(GradMode::none);
      const double lm = loss(minus)->value[0];
      leaf->value[i] = saved;
      const double numeric = (lp - lm) / (2 * h);
      result.max_rel_error = std::max(result.max_rel_error, relative_error(analytic[i], numeric));
      ++result.coords_checked;
    }
  }
  return result;
}

/// sum(out * weights) with fixed random weights, so every output element
/// carries a distinct upstream gradient.
inline Var<double> weighted_sum(Tape<double>& tape, const Var<double>& out, const Var<double>& weights) {
  return ops::sum(tape, ops::mul(tape, out, weights));
}

}  // namespace rnas::testing
