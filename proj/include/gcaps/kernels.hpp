#pragma once

// Low-level loops shared by the differentiable ops. Nothing in here knows
// about graphs; everything works on raw row-major buffers.

#include <vector>

#include "gcaps/tensor.hpp"

namespace gcaps::kernels {

/// Equal-rank broadcasting plan: every extent of `a` and `b` matches the
/// output or is 1. Adjacent dimensions with identical stride patterns are
/// merged so the innermost loop runs as long as possible.
struct BroadcastLayout {
  Shape out;                     // uncollapsed output shape
  std::vector<Index> dims;       // collapsed extents
  std::vector<Index> a_strides;  // collapsed strides into a (0 = broadcast)
  std::vector<Index> b_strides;
};

inline BroadcastLayout broadcast_layout(const Shape& a, const Shape& b, const char* op) {
  if (a.size() != b.size())
    throw ShapeError(op, shape_string(a) + " and " + shape_string(b));
  const std::size_t rank = a.size();
  BroadcastLayout L;
  L.out.resize(rank);
  for (std::size_t d = 0; d < rank; ++d) {
    if (a[d] != b[d] && a[d] != 1 && b[d] != 1)
      throw ShapeError(op, shape_string(a) + " and " + shape_string(b));
    L.out[d] = std::max(a[d], b[d]);
  }
  std::vector<Index> sa(rank), sb(rank);
  Index ra = 1, rb = 1;
  for (std::size_t k = rank; k-- > 0;) {
    sa[k] = a[k] == 1 ? 0 : ra;
    sb[k] = b[k] == 1 ? 0 : rb;
    ra *= a[k];
    rb *= b[k];
  }
  for (std::size_t d = 0; d < rank; ++d) {
    if (L.out[d] == 1) continue;
    if (!L.dims.empty() && L.a_strides.back() == sa[d] * L.out[d] &&
        L.b_strides.back() == sb[d] * L.out[d]) {
      L.dims.back() *= L.out[d];
      L.a_strides.back() = sa[d];
      L.b_strides.back() = sb[d];
      continue;
    }
    L.dims.push_back(L.out[d]);
    L.a_strides.push_back(sa[d]);
    L.b_strides.push_back(sb[d]);
  }
  if (L.dims.empty()) {
    L.dims.push_back(1);
    L.a_strides.push_back(0);
    L.b_strides.push_back(0);
  }
  return L;
}

/// Calls f(out_index, a_index, b_index) for every output element, in
/// row-major output order.
template <typename F>
void broadcast_apply(const BroadcastLayout& L, F&& f) {
  const std::size_t rank = L.dims.size();
  const Index inner = L.dims.back();
  const Index sa = L.a_strides.back();
  const Index sb = L.b_strides.back();
  Index outer = 1;
  for (std::size_t d = 0; d + 1 < rank; ++d) outer *= L.dims[d];
  std::vector<Index> counter(rank, 0);
  Index ai = 0, bi = 0, oi = 0;
  for (Index o = 0; o < outer; ++o) {
    for (Index k = 0; k < inner; ++k) f(oi + k, ai + k * sa, bi + k * sb);
    oi += inner;
    for (std::size_t d = rank - 1; d-- > 0;) {
      ai += L.a_strides[d];
      bi += L.b_strides[d];
      if (++counter[d] < L.dims[d]) break;
      ai -= L.a_strides[d] * L.dims[d];
      bi -= L.b_strides[d] * L.dims[d];
      counter[d] = 0;
    }
  }
}

/// A tensor viewed as [outer, n, inner] around one axis.
struct AxisView {
  Index outer = 1;
  Index n = 1;
  Index inner = 1;

  Index at(Index o, Index k, Index i) const { return (o * n + k) * inner + i; }
};

inline Index normalize_axis(Index axis, Index rank, const char* op) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank)
    throw ShapeError(op, "axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  return axis;
}

inline AxisView axis_view(const Shape& shape, Index axis) {
  AxisView v;
  for (Index d = 0; d < axis; ++d) v.outer *= shape[static_cast<std::size_t>(d)];
  v.n = shape[static_cast<std::size_t>(axis)];
  for (std::size_t d = static_cast<std::size_t>(axis) + 1; d < shape.size(); ++d) v.inner *= shape[d];
  return v;
}

struct ConvGeometry {
  Index channels, height, width;
  Index kernel_h, kernel_w;
  Index stride, pad;

  Index out_h() const { return (height + 2 * pad - kernel_h) / stride + 1; }
  Index out_w() const { return (width + 2 * pad - kernel_w) / stride + 1; }
  Index patch() const { return channels * kernel_h * kernel_w; }
};

/// Unfolds one [C,H,W] image into a [C*KH*KW, OH*OW] row-major column matrix.
template <typename Scalar>
void im2col(const Scalar* image, const ConvGeometry& g, Scalar* cols) {
  const Index oh = g.out_h(), ow = g.out_w();
  Index row = 0;
  for (Index c = 0; c < g.channels; ++c)
    for (Index ky = 0; ky < g.kernel_h; ++ky)
      for (Index kx = 0; kx < g.kernel_w; ++kx, ++row) {
        Scalar* dst = cols + row * oh * ow;
        for (Index y = 0; y < oh; ++y) {
          const Index iy = y * g.stride - g.pad + ky;
          for (Index x = 0; x < ow; ++x) {
            const Index ix = x * g.stride - g.pad + kx;
            dst[y * ow + x] = (iy >= 0 && iy < g.height && ix >= 0 && ix < g.width)
                                  ? image[(c * g.height + iy) * g.width + ix]
                                  : Scalar(0);
          }
        }
      }
}

/// Adjoint of im2col: scatters-adds a column matrix back into an image.
template <typename Scalar>
void col2im_add(const Scalar* cols, const ConvGeometry& g, Scalar* image) {
  const Index oh = g.out_h(), ow = g.out_w();
  Index row = 0;
  for (Index c = 0; c < g.channels; ++c)
    for (Index ky = 0; ky < g.kernel_h; ++ky)
      for (Index kx = 0; kx < g.kernel_w; ++kx, ++row) {
        const Scalar* src = cols + row * oh * ow;
        for (Index y = 0; y < oh; ++y) {
          const Index iy = y * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.height) continue;
          for (Index x = 0; x < ow; ++x) {
            const Index ix = x * g.stride - g.pad + kx;
            if (ix < 0 || ix >= g.width) continue;
            image[(c * g.height + iy) * g.width + ix] += src[y * ow + x];
          }
        }
      }
}

}  // namespace gcaps::kernels
