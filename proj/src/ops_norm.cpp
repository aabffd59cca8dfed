#include <cmath>

#include "rnas/ops.hpp"

namespace rnas::ops {

namespace {

struct NormGeom {
  std::size_t n, c, plane;
  std::size_t count() const { return n * plane; }
  std::size_t index(std::size_t i, std::size_t ch, std::size_t p) const { return (i * c + ch) * plane + p; }
};

template <typename T>
NormGeom norm_geom(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, std::size_t stats_channels) {
  const Shape& s = x.shape();
  if (s.size() != 2 && s.size() != 4) {
    throw ShapeError("batch_norm: input must be [N,C] or [N,C,H,W], got " + shape_string(s));
  }
  NormGeom g{s[0], s[1], s.size() == 4 ? s[2] * s[3] : 1};
  if (gamma.shape() != Shape{g.c} || beta.shape() != Shape{g.c} || stats_channels != g.c) {
    throw ShapeError("batch_norm: channel axis 1 = " + std::to_string(g.c) + " does not match affine/statistics size");
  }
  return g;
}

// Shared reverse pass for y = gamma * xhat + beta where xhat was computed with
// per-channel `inv_std`. `batch_stats` adds the terms from the mean/var path.
template <typename T>
void norm_backward(const NormGeom& g, const Tensor<T>& dy, const std::vector<T>& xhat, const std::vector<T>& inv_std,
                   const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, bool gx, bool gg, bool gb,
                   bool batch_stats) {
  std::vector<T> dgamma(g.c, T(0)), dbeta(g.c, T(0));
  for (std::size_t i = 0; i < g.n; ++i)
    for (std::size_t ch = 0; ch < g.c; ++ch)
      for (std::size_t p = 0; p < g.plane; ++p) {
        const std::size_t k = g.index(i, ch, p);
        dbeta[ch] += dy[k];
        dgamma[ch] += dy[k] * xhat[k];
      }
  if (gx) {
    std::vector<T> dx(x->value.size());
    const T m = T(g.count());
    for (std::size_t i = 0; i < g.n; ++i)
      for (std::size_t ch = 0; ch < g.c; ++ch) {
        const T scale = gamma->value[ch] * inv_std[ch];
        for (std::size_t p = 0; p < g.plane; ++p) {
          const std::size_t k = g.index(i, ch, p);
          dx[k] = batch_stats ? scale * (dy[k] - dbeta[ch] / m - xhat[k] * dgamma[ch] / m) : scale * dy[k];
        }
      }
    x->accumulate_grad(dx);
  }
  if (gg) gamma->accumulate_grad(dgamma);
  if (gb) beta->accumulate_grad(dbeta);
}

}  // namespace

template <typename T>
Var<T> batch_norm(Tape<T>& tape, const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                  BatchNormState<T>& state, bool training) {
  if (!training) return batch_norm_eval(tape, x, gamma, beta, state);
  const NormGeom g = norm_geom(x->value, gamma->value, beta->value, state.running_mean.size());
  if (g.n < 2) throw UsageError("batch_norm: training mode needs a batch of at least 2, got " + std::to_string(g.n));

  const T m = T(g.count());
  std::vector<T> mean(g.c, T(0)), var(g.c, T(0)), inv_std(g.c);
  const T* xp = x->value.ptr();
  for (std::size_t i = 0; i < g.n; ++i)
    for (std::size_t ch = 0; ch < g.c; ++ch)
      for (std::size_t p = 0; p < g.plane; ++p) mean[ch] += xp[g.index(i, ch, p)];
  for (auto& v : mean) v /= m;
  for (std::size_t i = 0; i < g.n; ++i)
    for (std::size_t ch = 0; ch < g.c; ++ch)
      for (std::size_t p = 0; p < g.plane; ++p) {
        const T d = xp[g.index(i, ch, p)] - mean[ch];
        var[ch] += d * d;
      }
  for (std::size_t ch = 0; ch < g.c; ++ch) {
    var[ch] /= m;
    inv_std[ch] = T(1) / std::sqrt(var[ch] + state.eps);
    state.running_mean[ch] = (T(1) - state.momentum) * state.running_mean[ch] + state.momentum * mean[ch];
    state.running_var[ch] = (T(1) - state.momentum) * state.running_var[ch] + state.momentum * var[ch] * m / (m - T(1));
  }

  Tensor<T> out(x->value.shape());
  std::vector<T> xhat(out.size());
  for (std::size_t i = 0; i < g.n; ++i)
    for (std::size_t ch = 0; ch < g.c; ++ch)
      for (std::size_t p = 0; p < g.plane; ++p) {
        const std::size_t k = g.index(i, ch, p);
        xhat[k] = (xp[k] - mean[ch]) * inv_std[ch];
        out[k] = gamma->value[ch] * xhat[k] + beta->value[ch];
      }

  const bool gx = tape.tracks(x), gg = tape.tracks(gamma), gb = tape.tracks(beta);
  return tape.push(std::move(out), gx || gg || gb,
                   [g, xhat = std::move(xhat), inv_std = std::move(inv_std), x, gamma, beta, gx, gg, gb](const Tensor<T>& dy) {
                     norm_backward(g, dy, xhat, inv_std, x, gamma, beta, gx, gg, gb, true);
                   });
}

template <typename T>
Var<T> batch_norm_eval(Tape<T>& tape, const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                       const BatchNormState<T>& state) {
  const NormGeom g = norm_geom(x->value, gamma->value, beta->value, state.running_mean.size());
  std::vector<T> inv_std(g.c);
  for (std::size_t ch = 0; ch < g.c; ++ch) inv_std[ch] = T(1) / std::sqrt(state.running_var[ch] + state.eps);
  Tensor<T> out(x->value.shape());
  std::vector<T> xhat(out.size());
  const T* xp = x->value.ptr();
  for (std::size_t i = 0; i < g.n; ++i)
    for (std::size_t ch = 0; ch < g.c; ++ch)
      for (std::size_t p = 0; p < g.plane; ++p) {
        const std::size_t k = g.index(i, ch, p);
        xhat[k] = (xp[k] - state.running_mean[ch]) * inv_std[ch];
        out[k] = gamma->value[ch] * xhat[k] + beta->value[ch];
      }
  const bool gx = tape.tracks(x), gg = tape.tracks(gamma), gb = tape.tracks(beta);
  return tape.push(std::move(out), gx || gg || gb,
                   [g, xhat = std::move(xhat), inv_std = std::move(inv_std), x, gamma, beta, gx, gg, gb](const Tensor<T>& dy) {
                     norm_backward(g, dy, xhat, inv_std, x, gamma, beta, gx, gg, gb, false);
                   });
}

template Var<float> batch_norm(Tape<float>&, const Var<float>&, const Var<float>&, const Var<float>&,
                               BatchNormState<float>&, bool);
template Var<double> batch_norm(Tape<double>&, const Var<double>&, const Var<double>&, const Var<double>&,
                                BatchNormState<double>&, bool);
template Var<float> batch_norm_eval(Tape<float>&, const Var<float>&, const Var<float>&, const Var<float>&,
                                    const BatchNormState<float>&);
template Var<double> batch_norm_eval(Tape<double>&, const Var<double>&, const Var<double>&, const Var<double>&,
                                     const BatchNormState<double>&);

}  // namespace rnas::ops
