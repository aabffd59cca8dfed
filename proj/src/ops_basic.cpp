#include <algorithm>
#include <cmath>
#include <limits>

#include "rnas/ops.hpp"

namespace rnas::ops {

template <typename T>
Var<T> relu(Tape<T>& tape, const Var<T>& x) {
  Tensor<T> out(x->value.shape());
  const T* xp = x->value.ptr();
  T* yp = out.ptr();
  for (std::size_t i = 0; i < out.size(); ++i) yp[i] = !(xp[i] <= T(0)) ? xp[i] : T(0);  // NaN passes through
  const bool gx = tape.tracks(x);
  return tape.push(std::move(out), gx, [x](const Tensor<T>& dy) {
    std::vector<T> dx(dy.size());
    const T* xp = x->value.ptr();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = xp[i] > T(0) ? dy[i] : T(0);
    x->accumulate_grad(dx);
  });
}

template <typename T>
Var<T> add(Tape<T>& tape, const Var<T>& a, const Var<T>& b) {
  require_same_shape(a->value.shape(), b->value.shape(), "add");
  Tensor<T> out = a->value;
  const T* bp = b->value.ptr();
  T* yp = out.ptr();
  for (std::size_t i = 0; i < out.size(); ++i) yp[i] += bp[i];
  const bool ga = tape.tracks(a), gb = tape.tracks(b);
  return tape.push(std::move(out), ga || gb, [a, b, ga, gb](const Tensor<T>& dy) {
    if (ga) a->accumulate_grad(dy.data());
    if (gb) b->accumulate_grad(dy.data());
  });
}

template <typename T>
Var<T> mul(Tape<T>& tape, const Var<T>& a, const Var<T>& b) {
  require_same_shape(a->value.shape(), b->value.shape(), "mul");
  Tensor<T> out = a->value;
  const T* bp = b->value.ptr();
  T* yp = out.ptr();
  for (std::size_t i = 0; i < out.size(); ++i) yp[i] *= bp[i];
  const bool ga = tape.tracks(a), gb = tape.tracks(b);
  return tape.push(std::move(out), ga || gb, [a, b, ga, gb](const Tensor<T>& dy) {
    std::vector<T> g(dy.size());
    if (ga) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = dy[i] * b->value[i];
      a->accumulate_grad(g);
    }
    if (gb) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = dy[i] * a->value[i];
      b->accumulate_grad(g);
    }
  });
}

template <typename T>
Var<T> scale(Tape<T>& tape, const Var<T>& x, T factor) {
  Tensor<T> out = x->value;
  for (auto& v : out.data()) v *= factor;
  return tape.push(std::move(out), tape.tracks(x), [x, factor](const Tensor<T>& dy) {
    std::vector<T> dx(dy.data().begin(), dy.data().end());
    for (auto& v : dx) v *= factor;
    x->accumulate_grad(dx);
  });
}

template <typename T>
Var<T> sum(Tape<T>& tape, const Var<T>& x) {
  T total = 0;
  for (T v : x->value.data()) total += v;
  return tape.push(Tensor<T>({1}, total), tape.tracks(x), [x](const Tensor<T>& dy) {
    x->accumulate_grad(std::vector<T>(x->value.size(), dy[0]));
  });
}

template <typename T>
Var<T> reshape(Tape<T>& tape, const Var<T>& x, Shape shape) {
  Tensor<T> out = x->value.reshaped(std::move(shape));
  return tape.push(std::move(out), tape.tracks(x), [x](const Tensor<T>& dy) { x->accumulate_grad(dy.data()); });
}

template <typename T>
Var<T> concat_channels(Tape<T>& tape, const std::vector<Var<T>>& xs) {
  if (xs.empty()) throw ShapeError("concat_channels: no inputs");
  const Shape& s0 = xs.front()->value.shape();
  if (s0.size() < 2) throw ShapeError("concat_channels: inputs must have a channel axis, got " + shape_string(s0));
  std::size_t channels = 0;
  for (const auto& x : xs) {
    const Shape& s = x->value.shape();
    bool ok = s.size() == s0.size() && s[0] == s0[0];
    for (std::size_t a = 2; ok && a < s.size(); ++a) ok = s[a] == s0[a];
    if (!ok) {
      throw ShapeError("concat_channels: " + shape_string(s) + " incompatible with " + shape_string(s0) +
                       " outside the channel axis");
    }
    channels += s[1];
  }
  const std::size_t n = s0[0], plane = xs.front()->value.size() / (s0[0] * s0[1]);
  Shape out_shape = s0;
  out_shape[1] = channels;
  Tensor<T> out(out_shape);
  bool tracked = false;
  std::size_t c_off = 0;
  for (const auto& x : xs) {
    const std::size_t cx = x->value.dim(1);
    for (std::size_t i = 0; i < n; ++i) {
      std::copy_n(x->value.ptr() + i * cx * plane, cx * plane, out.ptr() + (i * channels + c_off) * plane);
    }
    c_off += cx;
    tracked = tracked || tape.tracks(x);
  }
  std::vector<bool> wants;
  for (const auto& x : xs) wants.push_back(tape.tracks(x));
  return tape.push(std::move(out), tracked, [xs, wants, n, channels, plane](const Tensor<T>& dy) {
    std::size_t c_off = 0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
      const std::size_t cx = xs[k]->value.dim(1);
      if (wants[k]) {
        std::vector<T> dx(xs[k]->value.size());
        for (std::size_t i = 0; i < n; ++i) {
          std::copy_n(dy.ptr() + (i * channels + c_off) * plane, cx * plane, dx.data() + i * cx * plane);
        }
        xs[k]->accumulate_grad(dx);
      }
      c_off += cx;
    }
  });
}

template <typename T>
Var<T> crop(Tape<T>& tape, const Var<T>& x, std::size_t offset) {
  const Shape& s = x->value.shape();
  if (s.size() != 4) throw ShapeError("crop: input must be rank 4, got " + shape_string(s));
  if (offset >= s[2] || offset >= s[3]) {
    throw ShapeError("crop: offset " + std::to_string(offset) + " leaves nothing of " + shape_string(s));
  }
  const std::size_t h = s[2] - offset, w = s[3] - offset, planes = s[0] * s[1];
  Tensor<T> out({s[0], s[1], h, w});
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t i = 0; i < h; ++i)
      std::copy_n(x->value.ptr() + (p * s[2] + i + offset) * s[3] + offset, w, out.ptr() + (p * h + i) * w);
  return tape.push(std::move(out), tape.tracks(x), [x, offset, h, w, planes](const Tensor<T>& dy) {
    const Shape& s = x->value.shape();
    std::vector<T> dx(x->value.size(), T(0));
    for (std::size_t p = 0; p < planes; ++p)
      for (std::size_t i = 0; i < h; ++i)
        std::copy_n(dy.ptr() + (p * h + i) * w, w, dx.data() + (p * s[2] + i + offset) * s[3] + offset);
    x->accumulate_grad(dx);
  });
}

namespace {

struct PoolGeom {
  std::size_t planes, h, w, ho, wo, stride;
};

template <typename T>
PoolGeom pool_geom(const Tensor<T>& x, std::size_t stride, const char* name) {
  if (x.rank() != 4) throw ShapeError(std::string(name) + ": input must be rank 4, got " + shape_string(x.shape()));
  if (stride == 0) throw ShapeError(std::string(name) + ": stride must be positive");
  PoolGeom g{x.dim(0) * x.dim(1), x.dim(2), x.dim(3), 0, 0, stride};
  g.ho = conv_out_extent(g.h, 3, stride, 1, 1);
  g.wo = conv_out_extent(g.w, 3, stride, 1, 1);
  return g;
}

}  // namespace

template <typename T>
Var<T> max_pool_3x3(Tape<T>& tape, const Var<T>& x, std::size_t stride) {
  const PoolGeom g = pool_geom(x->value, stride, "max_pool_3x3");
  const Shape& s = x->value.shape();
  Tensor<T> out({s[0], s[1], g.ho, g.wo});
  std::vector<std::uint32_t> argmax(out.size());
  const T* xp = x->value.ptr();
  for (std::size_t p = 0; p < g.planes; ++p) {
    for (std::size_t oh = 0; oh < g.ho; ++oh) {
      for (std::size_t ow = 0; ow < g.wo; ++ow) {
        T best = -std::numeric_limits<T>::infinity();
        std::size_t best_idx = 0;
        for (std::ptrdiff_t i = -1; i <= 1; ++i) {
          const std::ptrdiff_t ih = std::ptrdiff_t(oh * stride) + i;
          if (ih < 0 || ih >= std::ptrdiff_t(g.h)) continue;
          for (std::ptrdiff_t j = -1; j <= 1; ++j) {
            const std::ptrdiff_t iw = std::ptrdiff_t(ow * stride) + j;
            if (iw < 0 || iw >= std::ptrdiff_t(g.w)) continue;
            const std::size_t idx = std::size_t(ih) * g.w + std::size_t(iw);
            const T v = xp[p * g.h * g.w + idx];
            if (v > best) {
              best = v;
              best_idx = idx;
            }
          }
        }
        const std::size_t o = (p * g.ho + oh) * g.wo + ow;
        out[o] = best;
        argmax[o] = std::uint32_t(best_idx);
      }
    }
  }
  return tape.push(std::move(out), tape.tracks(x), [x, g, argmax = std::move(argmax)](const Tensor<T>& dy) {
    std::vector<T> dx(x->value.size(), T(0));
    const std::size_t out_plane = g.ho * g.wo, in_plane = g.h * g.w;
    for (std::size_t p = 0; p < g.planes; ++p)
      for (std::size_t o = 0; o < out_plane; ++o) dx[p * in_plane + argmax[p * out_plane + o]] += dy[p * out_plane + o];
    x->accumulate_grad(dx);
  });
}

template <typename T>
Var<T> avg_pool_3x3(Tape<T>& tape, const Var<T>& x, std::size_t stride) {
  const PoolGeom g = pool_geom(x->value, stride, "avg_pool_3x3");
  const Shape& s = x->value.shape();
  Tensor<T> out({s[0], s[1], g.ho, g.wo});
  const T* xp = x->value.ptr();
  auto window = [g](std::size_t o, std::ptrdiff_t extent) {
    const std::ptrdiff_t c = std::ptrdiff_t(o * g.stride);
    return std::pair<std::ptrdiff_t, std::ptrdiff_t>(std::max<std::ptrdiff_t>(c - 1, 0),
                                                     std::min<std::ptrdiff_t>(c + 1, extent - 1));
  };
  for (std::size_t p = 0; p < g.planes; ++p) {
    const T* xc = xp + p * g.h * g.w;
    for (std::size_t oh = 0; oh < g.ho; ++oh) {
      const auto [h0, h1] = window(oh, std::ptrdiff_t(g.h));
      for (std::size_t ow = 0; ow < g.wo; ++ow) {
        const auto [w0, w1] = window(ow, std::ptrdiff_t(g.w));
        T acc = 0;
        for (std::ptrdiff_t ih = h0; ih <= h1; ++ih)
          for (std::ptrdiff_t iw = w0; iw <= w1; ++iw) acc += xc[ih * std::ptrdiff_t(g.w) + iw];
        out[(p * g.ho + oh) * g.wo + ow] = acc / T((h1 - h0 + 1) * (w1 - w0 + 1));
      }
    }
  }
  return tape.push(std::move(out), tape.tracks(x), [x, g, window](const Tensor<T>& dy) {
    std::vector<T> dx(x->value.size(), T(0));
    for (std::size_t p = 0; p < g.planes; ++p) {
      T* dxc = dx.data() + p * g.h * g.w;
      for (std::size_t oh = 0; oh < g.ho; ++oh) {
        const auto [h0, h1] = window(oh, std::ptrdiff_t(g.h));
        for (std::size_t ow = 0; ow < g.wo; ++ow) {
          const auto [w0, w1] = window(ow, std::ptrdiff_t(g.w));
          const T share = dy[(p * g.ho + oh) * g.wo + ow] / T((h1 - h0 + 1) * (w1 - w0 + 1));
          for (std::ptrdiff_t ih = h0; ih <= h1; ++ih)
            for (std::ptrdiff_t iw = w0; iw <= w1; ++iw) dxc[ih * std::ptrdiff_t(g.w) + iw] += share;
        }
      }
    }
    x->accumulate_grad(dx);
  });
}

template <typename T>
Var<T> global_avg_pool(Tape<T>& tape, const Var<T>& x) {
  const Shape& s = x->value.shape();
  if (s.size() != 4) throw ShapeError("global_avg_pool: input must be rank 4, got " + shape_string(s));
  const std::size_t planes = s[0] * s[1], plane = s[2] * s[3];
  Tensor<T> out({s[0], s[1]});
  for (std::size_t p = 0; p < planes; ++p) {
    T acc = 0;
    const T* xc = x->value.ptr() + p * plane;
    for (std::size_t i = 0; i < plane; ++i) acc += xc[i];
    out[p] = acc / T(plane);
  }
  return tape.push(std::move(out), tape.tracks(x), [x, planes, plane](const Tensor<T>& dy) {
    std::vector<T> dx(x->value.size());
    for (std::size_t p = 0; p < planes; ++p) std::fill_n(dx.data() + p * plane, plane, dy[p] / T(plane));
    x->accumulate_grad(dx);
  });
}

template <typename T>
Var<T> linear(Tape<T>& tape, const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  const Shape& xs = x->value.shape();
  const Shape& ws = weight->value.shape();
  if (xs.size() != 2) throw ShapeError("linear: input must be [N,F], got " + shape_string(xs));
  if (ws.size() != 2 || ws[1] != xs[1]) {
    throw ShapeError("linear: weight " + shape_string(ws) + " does not accept input features (axis 1) = " +
                     std::to_string(xs[1]));
  }
  const std::size_t n = xs[0], f = xs[1], o = ws[0];
  if (bias && (bias->value.rank() != 1 || bias->value.dim(0) != o)) {
    throw ShapeError("linear: bias must be [" + std::to_string(o) + "], got " + shape_string(bias->value.shape()));
  }
  // Plain loops keep each output row independent of the batch it sits in.
  Tensor<T> out({n, o});
  for (std::size_t i = 0; i < n; ++i) {
    const T* xr = x->value.ptr() + i * f;
    for (std::size_t k = 0; k < o; ++k) {
      const T* wr = weight->value.ptr() + k * f;
      T acc = bias ? bias->value[k] : T(0);
      for (std::size_t j = 0; j < f; ++j) acc += xr[j] * wr[j];
      out[i * o + k] = acc;
    }
  }
  const bool gx = tape.tracks(x), gw = tape.tracks(weight), gb = tape.tracks(bias);
  return tape.push(std::move(out), gx || gw || gb, [x, weight, bias, n, f, o, gx, gw, gb](const Tensor<T>& dy) {
    if (gx) {
      std::vector<T> dx(n * f, T(0));
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < o; ++k) {
          const T g = dy[i * o + k];
          const T* wr = weight->value.ptr() + k * f;
          for (std::size_t j = 0; j < f; ++j) dx[i * f + j] += g * wr[j];
        }
      x->accumulate_grad(dx);
    }
    if (gw) {
      std::vector<T> dw(o * f, T(0));
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < o; ++k) {
          const T g = dy[i * o + k];
          const T* xr = x->value.ptr() + i * f;
          for (std::size_t j = 0; j < f; ++j) dw[k * f + j] += g * xr[j];
        }
      weight->accumulate_grad(dw);
    }
    if (gb) {
      std::vector<T> db(o, T(0));
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < o; ++k) db[k] += dy[i * o + k];
      bias->accumulate_grad(db);
    }
  });
}

template <typename T>
Var<T> softmax_cross_entropy(Tape<T>& tape, const Var<T>& logits, std::span<const std::int32_t> labels) {
  const Shape& s = logits->value.shape();
  if (s.size() != 2) throw ShapeError("softmax_cross_entropy: logits must be [N,K], got " + shape_string(s));
  const std::size_t n = s[0], k = s[1];
  if (labels.size() != n) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                     std::to_string(n));
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || std::size_t(labels[i]) >= k) {
      throw DataError("softmax_cross_entropy: label " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
                      " outside [0, " + std::to_string(k) + ")");
    }
  }
  Tensor<T> probs = softmax(logits->value);
  T loss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = logits->value.ptr() + i * k;
    const T mx = *std::max_element(row, row + k);
    T total = 0;
    for (std::size_t j = 0; j < k; ++j) total += std::exp(row[j] - mx);
    loss += std::log(total) + mx - row[labels[i]];
  }
  loss /= T(n);
  std::vector<std::int32_t> y(labels.begin(), labels.end());
  return tape.push(Tensor<T>({1}, loss), tape.tracks(logits),
                   [logits, probs = std::move(probs), y = std::move(y), n, k](const Tensor<T>& dy) {
                     std::vector<T> dx(probs.data().begin(), probs.data().end());
                     for (std::size_t i = 0; i < n; ++i) dx[i * k + std::size_t(y[i])] -= T(1);
                     const T factor = dy[0] / T(n);
                     for (auto& v : dx) v *= factor;
                     logits->accumulate_grad(dx);
                   });
}

#define RNAS_INSTANTIATE(T)                                                                                 \
  template Var<T> relu(Tape<T>&, const Var<T>&);                                                            \
  template Var<T> add(Tape<T>&, const Var<T>&, const Var<T>&);                                              \
  template Var<T> mul(Tape<T>&, const Var<T>&, const Var<T>&);                                              \
  template Var<T> scale(Tape<T>&, const Var<T>&, T);                                                        \
  template Var<T> sum(Tape<T>&, const Var<T>&);                                                             \
  template Var<T> reshape(Tape<T>&, const Var<T>&, Shape);                                                  \
  template Var<T> concat_channels(Tape<T>&, const std::vector<Var<T>>&);                                    \
  template Var<T> crop(Tape<T>&, const Var<T>&, std::size_t);                                               \
  template Var<T> max_pool_3x3(Tape<T>&, const Var<T>&, std::size_t);                                       \
  template Var<T> avg_pool_3x3(Tape<T>&, const Var<T>&, std::size_t);                                       \
  template Var<T> global_avg_pool(Tape<T>&, const Var<T>&);                                                 \
  template Var<T> linear(Tape<T>&, const Var<T>&, const Var<T>&, const Var<T>&);                            \
  template Var<T> softmax_cross_entropy(Tape<T>&, const Var<T>&, std::span<const std::int32_t>);

RNAS_INSTANTIATE(float)
RNAS_INSTANTIATE(double)

#undef RNAS_INSTANTIATE

}  // namespace rnas::ops
