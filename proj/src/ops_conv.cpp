#include <Eigen/Core>
#include <algorithm>

#include "rnas/ops.hpp"

namespace rnas::ops {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

using Index = std::ptrdiff_t;

struct ConvGeom {
  Index n, c, h, w;     // input
  Index k, kh, kw;      // filters
  Index ho, wo;         // output
  Index stride, pad, dil, groups;
  Index cg, kg;         // channels per group

  Index in_plane() const { return h * w; }
  Index out_plane() const { return ho * wo; }
  Index patch() const { return cg * kh * kw; }
  bool depthwise() const { return cg == 1 && kg == 1; }
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

// First and one-past-last output index whose tap `tap` lands inside [0, extent).
inline void valid_range(Index extent, Index out_extent, Index stride, Index pad, Index offset, Index& lo,
                        Index& hi) {
  // in = o*stride - pad + offset must satisfy 0 <= in < extent
  const Index a = pad - offset;
  lo = a > 0 ? (a + stride - 1) / stride : 0;
  const Index b = extent - 1 + pad - offset;
  hi = b < 0 ? 0 : std::min(out_extent, b / stride + 1);
  if (hi < lo) hi = lo;
}

template <typename T>
void im2col(const T* x, const ConvGeom& g, T* cols) {
  const Index plane = g.out_plane();
  std::fill(cols, cols + g.patch() * plane, T(0));
  for (Index c = 0; c < g.cg; ++c) {
    const T* xc = x + c * g.in_plane();
    for (Index i = 0; i < g.kh; ++i) {
      Index oh_lo, oh_hi;
      valid_range(g.h, g.ho, g.stride, g.pad, i * g.dil, oh_lo, oh_hi);
      for (Index j = 0; j < g.kw; ++j) {
        Index ow_lo, ow_hi;
        valid_range(g.w, g.wo, g.stride, g.pad, j * g.dil, ow_lo, ow_hi);
        T* row = cols + ((c * g.kh + i) * g.kw + j) * plane;
        for (Index oh = oh_lo; oh < oh_hi; ++oh) {
          const T* src = xc + (oh * g.stride - g.pad + i * g.dil) * g.w - g.pad + j * g.dil;
          T* dst = row + oh * g.wo;
          for (Index ow = ow_lo; ow < ow_hi; ++ow) dst[ow] = src[ow * g.stride];
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeom& g, T* dx) {
  const Index plane = g.out_plane();
  for (Index c = 0; c < g.cg; ++c) {
    T* dxc = dx + c * g.in_plane();
    for (Index i = 0; i < g.kh; ++i) {
      Index oh_lo, oh_hi;
      valid_range(g.h, g.ho, g.stride, g.pad, i * g.dil, oh_lo, oh_hi);
      for (Index j = 0; j < g.kw; ++j) {
        Index ow_lo, ow_hi;
        valid_range(g.w, g.wo, g.stride, g.pad, j * g.dil, ow_lo, ow_hi);
        const T* row = cols + ((c * g.kh + i) * g.kw + j) * plane;
        for (Index oh = oh_lo; oh < oh_hi; ++oh) {
          T* dst = dxc + (oh * g.stride - g.pad + i * g.dil) * g.w - g.pad + j * g.dil;
          const T* src = row + oh * g.wo;
          for (Index ow = ow_lo; ow < ow_hi; ++ow) dst[ow * g.stride] += src[ow];
        }
      }
    }
  }
}

template <typename T>
void depthwise_forward(const T* x, const T* w, const ConvGeom& g, T* y) {
  for (Index nc = 0; nc < g.n * g.c; ++nc) {
    const Index c = nc % g.c;
    const T* xc = x + nc * g.in_plane();
    const T* wc = w + c * g.kh * g.kw;
    T* yc = y + nc * g.out_plane();
    for (Index i = 0; i < g.kh; ++i) {
      Index oh_lo, oh_hi;
      valid_range(g.h, g.ho, g.stride, g.pad, i * g.dil, oh_lo, oh_hi);
      for (Index j = 0; j < g.kw; ++j) {
        Index ow_lo, ow_hi;
        valid_range(g.w, g.wo, g.stride, g.pad, j * g.dil, ow_lo, ow_hi);
        const T wv = wc[i * g.kw + j];
        for (Index oh = oh_lo; oh < oh_hi; ++oh) {
          const T* src = xc + (oh * g.stride - g.pad + i * g.dil) * g.w - g.pad + j * g.dil;
          T* dst = yc + oh * g.wo;
          for (Index ow = ow_lo; ow < ow_hi; ++ow) dst[ow] += wv * src[ow * g.stride];
        }
      }
    }
  }
}

template <typename T>
void depthwise_backward(const T* x, const T* w, const T* dy, const ConvGeom& g, T* dx, T* dw) {
  for (Index nc = 0; nc < g.n * g.c; ++nc) {
    const Index c = nc % g.c;
    const T* xc = x + nc * g.in_plane();
    const T* wc = w + c * g.kh * g.kw;
    const T* dyc = dy + nc * g.out_plane();
    T* dxc = dx ? dx + nc * g.in_plane() : nullptr;
    T* dwc = dw ? dw + c * g.kh * g.kw : nullptr;
    for (Index i = 0; i < g.kh; ++i) {
      Index oh_lo, oh_hi;
      valid_range(g.h, g.ho, g.stride, g.pad, i * g.dil, oh_lo, oh_hi);
      for (Index j = 0; j < g.kw; ++j) {
        Index ow_lo, ow_hi;
        valid_range(g.w, g.wo, g.stride, g.pad, j * g.dil, ow_lo, ow_hi);
        const T wv = wc[i * g.kw + j];
        T acc = 0;
        for (Index oh = oh_lo; oh < oh_hi; ++oh) {
          const Index offset = (oh * g.stride - g.pad + i * g.dil) * g.w - g.pad + j * g.dil;
          const T* gy = dyc + oh * g.wo;
          if (dxc) {
            T* dst = dxc + offset;
            for (Index ow = ow_lo; ow < ow_hi; ++ow) dst[ow * g.stride] += wv * gy[ow];
          }
          if (dwc) {
            const T* src = xc + offset;
            for (Index ow = ow_lo; ow < ow_hi; ++ow) acc += gy[ow] * src[ow * g.stride];
          }
        }
        if (dwc) dwc[i * g.kw + j] += acc;
      }
    }
  }
}

template <typename T>
ConvGeom make_geom(const Tensor<T>& x, const Tensor<T>& w, const Conv2dParams& p) {
  if (x.rank() != 4) throw ShapeError("conv2d: input must be rank 4 [N,C,H,W], got " + shape_string(x.shape()));
  if (w.rank() != 4) throw ShapeError("conv2d: weight must be rank 4 [K,C/groups,kh,kw], got " + shape_string(w.shape()));
  if (p.groups == 0 || p.stride == 0 || p.dilation == 0) throw ShapeError("conv2d: stride, dilation and groups must be positive");
  ConvGeom g{};
  g.n = Index(x.dim(0)); g.c = Index(x.dim(1)); g.h = Index(x.dim(2)); g.w = Index(x.dim(3));
  g.k = Index(w.dim(0)); g.kh = Index(w.dim(2)); g.kw = Index(w.dim(3));
  g.stride = Index(p.stride); g.pad = Index(p.padding); g.dil = Index(p.dilation); g.groups = Index(p.groups);
  if (g.c % g.groups != 0) {
    throw ShapeError("conv2d: input channels (axis 1) = " + std::to_string(g.c) + " not divisible by groups " +
                     std::to_string(g.groups));
  }
  if (g.k % g.groups != 0) {
    throw ShapeError("conv2d: filters (weight axis 0) = " + std::to_string(g.k) + " not divisible by groups " +
                     std::to_string(g.groups));
  }
  g.cg = g.c / g.groups;
  g.kg = g.k / g.groups;
  if (Index(w.dim(1)) != g.cg) {
    throw ShapeError("conv2d: weight axis 1 = " + std::to_string(w.dim(1)) + ", expected C/groups = " +
                     std::to_string(g.cg));
  }
  g.ho = Index(conv_out_extent(x.dim(2), w.dim(2), p.stride, p.padding, p.dilation));
  g.wo = Index(conv_out_extent(x.dim(3), w.dim(3), p.stride, p.padding, p.dilation));
  if (g.ho < 1) throw ShapeError("conv2d: output height (axis 2) empty for input height " + std::to_string(g.h));
  if (g.wo < 1) throw ShapeError("conv2d: output width (axis 3) empty for input width " + std::to_string(g.w));
  return g;
}

}  // namespace

std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding,
                            std::size_t dilation) {
  const std::ptrdiff_t span = std::ptrdiff_t(in + 2 * padding) - std::ptrdiff_t(dilation * (kernel - 1)) - 1;
  if (span < 0 || stride == 0) return 0;
  return std::size_t(span) / stride + 1;
}

template <typename T>
Var<T> conv2d(Tape<T>& tape, const Var<T>& x, const Var<T>& weight, const Var<T>& bias, const Conv2dParams& p) {
  const ConvGeom g = make_geom(x->value, weight->value, p);
  if (bias && (bias->value.rank() != 1 || Index(bias->value.dim(0)) != g.k)) {
    throw ShapeError("conv2d: bias must be [" + std::to_string(g.k) + "], got " + shape_string(bias->value.shape()));
  }
  Tensor<T> out({std::size_t(g.n), std::size_t(g.k), std::size_t(g.ho), std::size_t(g.wo)});
  const T* xp = x->value.ptr();
  const T* wp = weight->value.ptr();
  T* yp = out.ptr();

  if (g.depthwise()) {
    depthwise_forward(xp, wp, g, yp);
  } else {
    std::vector<T> cols(g.pointwise() ? 0 : std::size_t(g.patch() * g.out_plane()));
    for (Index n = 0; n < g.n; ++n) {
      for (Index gi = 0; gi < g.groups; ++gi) {
        const T* xg = xp + (n * g.c + gi * g.cg) * g.in_plane();
        const T* cp = xg;
        if (!g.pointwise()) {
          im2col(xg, g, cols.data());
          cp = cols.data();
        }
        ConstMatMap<T> wm(wp + gi * g.kg * g.patch(), g.kg, g.patch());
        ConstMatMap<T> cm(cp, g.patch(), g.out_plane());
        MatMap<T> ym(yp + (n * g.k + gi * g.kg) * g.out_plane(), g.kg, g.out_plane());
        ym.noalias() = wm * cm;
      }
    }
  }
  if (bias) {
    const T* bp = bias->value.ptr();
    for (Index n = 0; n < g.n; ++n)
      for (Index k = 0; k < g.k; ++k) {
        T* row = yp + (n * g.k + k) * g.out_plane();
        for (Index i = 0; i < g.out_plane(); ++i) row[i] += bp[k];
      }
  }

  const bool gx = tape.tracks(x), gw = tape.tracks(weight), gb = tape.tracks(bias);
  return tape.push(std::move(out), gx || gw || gb, [x, weight, bias, g, gx, gw, gb](const Tensor<T>& dy) {
    const T* xp = x->value.ptr();
    const T* wp = weight->value.ptr();
    const T* dyp = dy.ptr();
    std::vector<T> dx(gx ? x->value.size() : 0), dw(gw ? weight->value.size() : 0);
    if (g.depthwise()) {
      depthwise_backward(xp, wp, dyp, g, gx ? dx.data() : nullptr, gw ? dw.data() : nullptr);
    } else {
      std::vector<T> cols(std::size_t(g.patch() * g.out_plane()));
      for (Index n = 0; n < g.n; ++n) {
        for (Index gi = 0; gi < g.groups; ++gi) {
          const Index x_off = (n * g.c + gi * g.cg) * g.in_plane();
          ConstMatMap<T> dym(dyp + (n * g.k + gi * g.kg) * g.out_plane(), g.kg, g.out_plane());
          if (gw) {
            const T* cp = xp + x_off;
            if (!g.pointwise()) {
              im2col(xp + x_off, g, cols.data());
              cp = cols.data();
            }
            ConstMatMap<T> cm(cp, g.patch(), g.out_plane());
            MatMap<T> dwm(dw.data() + gi * g.kg * g.patch(), g.kg, g.patch());
            dwm.noalias() += dym * cm.transpose();
          }
          if (gx) {
            ConstMatMap<T> wm(wp + gi * g.kg * g.patch(), g.kg, g.patch());
            if (g.pointwise()) {
              MatMap<T> dxm(dx.data() + x_off, g.patch(), g.out_plane());
              dxm.noalias() += wm.transpose() * dym;
            } else {
              MatMap<T> dcols(cols.data(), g.patch(), g.out_plane());
              dcols.noalias() = wm.transpose() * dym;
              col2im_add(cols.data(), g, dx.data() + x_off);
            }
          }
        }
      }
    }
    if (gx) x->accumulate_grad(dx);
    if (gw) weight->accumulate_grad(dw);
    if (gb) {
      std::vector<T> db(std::size_t(g.k), T(0));
      for (Index n = 0; n < g.n; ++n)
        for (Index k = 0; k < g.k; ++k) {
          const T* row = dyp + (n * g.k + k) * g.out_plane();
          T acc = 0;
          for (Index i = 0; i < g.out_plane(); ++i) acc += row[i];
          db[std::size_t(k)] += acc;
        }
      bias->accumulate_grad(db);
    }
  });
}

template Var<float> conv2d(Tape<float>&, const Var<float>&, const Var<float>&, const Var<float>&, const Conv2dParams&);
template Var<double> conv2d(Tape<double>&, const Var<double>&, const Var<double>&, const Var<double>&,
                            const Conv2dParams&);

}  // namespace rnas::ops
