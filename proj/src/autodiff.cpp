#include "gcaps/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>

#include "gcaps/kernels.hpp"

namespace gcaps {

using kernels::AxisView;
using kernels::BroadcastLayout;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

const Tensor& Var::value() const {
  if (!graph_) throw GraphError("value of an unbound Var");
  return graph_->value(*this);
}

// ---------------------------------------------------------------------------
// Graph

Var Graph::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), Tensor{}, false, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Graph::variable(Tensor value) {
  nodes_.push_back(Node{std::move(value), Tensor{}, true, nullptr});
  return Var(this, nodes_.size() - 1);
}

const Graph::Node& Graph::node(Var v) const {
  check_owner(v, "graph");
  return nodes_[v.id()];
}

void Graph::check_owner(Var v, const char* op) const {
  if (v.graph() != this || v.id() >= nodes_.size())
    throw GraphError(std::string(op) + ": Var does not belong to this graph");
}

Tensor Graph::grad(Var v) const {
  const Node& n = node(v);
  if (n.grad.size() > 0) return n.grad;
  return Tensor::zeros(n.value.shape());
}

Tensor& Graph::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) n.grad = Tensor::zeros(n.value.shape());
  return n.grad;
}

Var Graph::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
  bool tracked = false;
  for (Var v : inputs) {
    check_owner(v, "record");
    tracked = tracked || nodes_[v.id()].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), Tensor{}, tracked, tracked ? std::move(fn) : nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Graph::record(Tensor value, const std::vector<Var>& inputs, BackwardFn fn) {
  bool tracked = false;
  for (Var v : inputs) {
    check_owner(v, "record");
    tracked = tracked || nodes_[v.id()].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), Tensor{}, tracked, tracked ? std::move(fn) : nullptr});
  return Var(this, nodes_.size() - 1);
}

void Graph::backward(Var loss) {
  check_owner(loss, "backward");
  if (backward_done_) throw GraphError("backward called twice on one graph without reset");
  if (nodes_[loss.id()].value.size() != 1)
    throw ShapeError("backward", "loss must be scalar, got " + shape_string(nodes_[loss.id()].value.shape()));
  backward_done_ = true;
  grad_buffer(loss.id())[0] += 1.0;
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.backward && n.grad.size() > 0) n.backward(*this, id);
  }
}

void Graph::reset_gradients() {
  for (Node& n : nodes_) n.grad = Tensor{};
  backward_done_ = false;
}

// ---------------------------------------------------------------------------
// Helpers

namespace {

Graph& graph_of(Var a, const char* op) {
  if (!a.valid()) throw GraphError(std::string(op) + ": unbound Var");
  return *a.graph();
}

Graph& graph_of(Var a, Var b, const char* op) {
  if (!a.valid() || a.graph() != b.graph())
    throw GraphError(std::string(op) + ": operands belong to different graphs");
  return *a.graph();
}

double* grad_if_tracked(Graph& g, std::size_t id) {
  return g.tracked(id) ? g.grad_buffer(id).data() : nullptr;
}

// fwd(x, y) -> z; dgrad(x, y, z) -> {dz/dx, dz/dy}.
template <typename Fwd, typename Dgrad>
Var binary(const char* op, Var a, Var b, Fwd fwd, Dgrad dgrad) {
  Graph& g = graph_of(a, b, op);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  BroadcastLayout L = kernels::broadcast_layout(x.shape(), y.shape(), op);
  Tensor out(L.out);
  {
    const double* xp = x.data();
    const double* yp = y.data();
    double* zp = out.data();
    kernels::broadcast_apply(L, [&](Index o, Index i, Index j) { zp[o] = fwd(xp[i], yp[j]); });
  }
  const std::size_t ia = a.id(), ib = b.id();
  return g.record(std::move(out), {a, b}, [L = std::move(L), ia, ib, dgrad](Graph& g, std::size_t self) {
    const double* gp = g.grad_buffer(self).data();
    const double* xp = g.value_at(ia).data();
    const double* yp = g.value_at(ib).data();
    const double* zp = g.value_at(self).data();
    double* ga = grad_if_tracked(g, ia);
    double* gb = grad_if_tracked(g, ib);
    kernels::broadcast_apply(L, [&](Index o, Index i, Index j) {
      const auto [dx, dy] = dgrad(xp[i], yp[j], zp[o]);
      if (ga) ga[i] += gp[o] * dx;
      if (gb) gb[j] += gp[o] * dy;
    });
  });
}

// fwd(x) -> y; dgrad(x, y) -> dy/dx.
template <typename Fwd, typename Dgrad>
Var unary(const char* op, Var a, Fwd fwd, Dgrad dgrad) {
  Graph& g = graph_of(a, op);
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (Index k = 0; k < x.size(); ++k) out[k] = fwd(x[k]);
  const std::size_t ia = a.id();
  return g.record(std::move(out), {a}, [ia, dgrad](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad_buffer(self);
    const Tensor& x = g.value_at(ia);
    const Tensor& y = g.value_at(self);
    double* gx = g.grad_buffer(ia).data();
    for (Index k = 0; k < x.size(); ++k) gx[k] += gy[k] * dgrad(x[k], y[k]);
  });
}

Shape keepdim_shape(const Shape& s, Index axis) {
  Shape out = s;
  out[static_cast<std::size_t>(axis)] = 1;
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise

Var add(Var a, Var b) {
  return binary("add", a, b, [](double x, double y) { return x + y; },
                [](double, double, double) { return std::pair{1.0, 1.0}; });
}

Var sub(Var a, Var b) {
  return binary("sub", a, b, [](double x, double y) { return x - y; },
                [](double, double, double) { return std::pair{1.0, -1.0}; });
}

Var mul(Var a, Var b) {
  return binary("mul", a, b, [](double x, double y) { return x * y; },
                [](double x, double y, double) { return std::pair{y, x}; });
}

Var div(Var a, Var b) {
  const Tensor& y = b.value();
  if ((y.array() == 0.0).any()) throw DomainError("div", "division by zero");
  return binary("div", a, b, [](double x, double y) { return x / y; },
                [](double, double y, double z) { return std::pair{1.0 / y, -z / y}; });
}

Var minimum(Var a, Var b) {
  return binary("minimum", a, b, [](double x, double y) { return x <= y ? x : y; },
                [](double x, double y, double) {
                  return x <= y ? std::pair{1.0, 0.0} : std::pair{0.0, 1.0};
                });
}

Var scale(Var x, double factor) {
  return unary("scale", x, [factor](double v) { return v * factor; },
               [factor](double, double) { return factor; });
}

Var add_scalar(Var x, double offset) {
  return unary("add_scalar", x, [offset](double v) { return v + offset; },
               [](double, double) { return 1.0; });
}

Var relu(Var x) {
  return unary("relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
               [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var square(Var x) {
  return unary("square", x, [](double v) { return v * v; },
               [](double v, double) { return 2.0 * v; });
}

Var log(Var x) {
  if ((x.value().array() <= 0.0).any()) throw DomainError("log", "argument must be positive");
  return unary("log", x, [](double v) { return std::log(v); },
               [](double v, double) { return 1.0 / v; });
}

Var exp(Var x) {
  return unary("exp", x, [](double v) { return std::exp(v); },
               [](double, double y) { return y; });
}

Var sign(Var x) {
  Graph& g = graph_of(x, "sign");
  const Tensor& v = x.value();
  Tensor out(v.shape());
  for (Index k = 0; k < v.size(); ++k) out[k] = (v[k] > 0.0) - (v[k] < 0.0);
  return g.constant(std::move(out));
}

Var clip(Var x, double lo, double hi) {
  if (lo > hi) throw DomainError("clip", "lo > hi");
  return unary("clip", x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
               [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// Linear algebra

Var matmul(Var a, Var b) {
  Graph& g = graph_of(a, b, "matmul");
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sa.size() != sb.size() || sa[sa.size() - 1] != sb[sb.size() - 2])
    throw ShapeError("matmul", shape_string(sa) + " x " + shape_string(sb));
  const Index m = sa[sa.size() - 2], k = sa.back(), n = sb.back();
  const Shape batch_a(sa.begin(), sa.end() - 2), batch_b(sb.begin(), sb.end() - 2);
  BroadcastLayout L = kernels::broadcast_layout(batch_a, batch_b, "matmul");
  Shape out_shape = L.out;
  out_shape.push_back(m);
  out_shape.push_back(n);
  Tensor out(out_shape);
  {
    const double* ap = a.value().data();
    const double* bp = b.value().data();
    double* cp = out.data();
    kernels::broadcast_apply(L, [&](Index o, Index i, Index j) {
      MatrixMap(cp + o * m * n, m, n).noalias() =
          ConstMatrixMap(ap + i * m * k, m, k) * ConstMatrixMap(bp + j * k * n, k, n);
    });
  }
  const std::size_t ia = a.id(), ib = b.id();
  return g.record(std::move(out), {a, b}, [L = std::move(L), ia, ib, m, k, n](Graph& g, std::size_t self) {
    const double* gp = g.grad_buffer(self).data();
    const double* ap = g.value_at(ia).data();
    const double* bp = g.value_at(ib).data();
    double* ga = grad_if_tracked(g, ia);
    double* gb = grad_if_tracked(g, ib);
    kernels::broadcast_apply(L, [&](Index o, Index i, Index j) {
      ConstMatrixMap gc(gp + o * m * n, m, n);
      if (ga) MatrixMap(ga + i * m * k, m, k).noalias() += gc * ConstMatrixMap(bp + j * k * n, k, n).transpose();
      if (gb) MatrixMap(gb + j * k * n, k, n).noalias() += ConstMatrixMap(ap + i * m * k, m, k).transpose() * gc;
    });
  });
}

Var conv2d(Var input, Var kernel, Index stride, Index pad) {
  Graph& g = graph_of(input, kernel, "conv2d");
  const Shape& si = input.shape();
  const Shape& sk = kernel.shape();
  if (si.size() != 4 || sk.size() != 4 || si[1] != sk[1] || stride < 1 || pad < 0 ||
      si[2] + 2 * pad < sk[2] || si[3] + 2 * pad < sk[3])
    throw ShapeError("conv2d", shape_string(si) + " * " + shape_string(sk));
  const kernels::ConvGeometry geo{si[1], si[2], si[3], sk[2], sk[3], stride, pad};
  const Index batch = si[0], out_ch = sk[0], oh = geo.out_h(), ow = geo.out_w();
  const Index patch = geo.patch(), pixels = oh * ow, image = si[1] * si[2] * si[3];
  Tensor out({batch, out_ch, oh, ow});
  {
    RowMatrix cols(patch, pixels);
    ConstMatrixMap K(kernel.value().data(), out_ch, patch);
    for (Index b = 0; b < batch; ++b) {
      kernels::im2col(input.value().data() + b * image, geo, cols.data());
      MatrixMap(out.data() + b * out_ch * pixels, out_ch, pixels).noalias() = K * cols;
    }
  }
  const std::size_t ii = input.id(), ik = kernel.id();
  return g.record(std::move(out), {input, kernel},
                  [geo, ii, ik, batch, out_ch, patch, pixels, image](Graph& g, std::size_t self) {
                    const double* gp = g.grad_buffer(self).data();
                    const double* xp = g.value_at(ii).data();
                    ConstMatrixMap K(g.value_at(ik).data(), out_ch, patch);
                    double* gx = grad_if_tracked(g, ii);
                    double* gk = grad_if_tracked(g, ik);
                    RowMatrix cols(patch, pixels);
                    for (Index b = 0; b < batch; ++b) {
                      ConstMatrixMap gout(gp + b * out_ch * pixels, out_ch, pixels);
                      if (gk) {
                        kernels::im2col(xp + b * image, geo, cols.data());
                        MatrixMap(gk, out_ch, patch).noalias() += gout * cols.transpose();
                      }
                      if (gx) {
                        cols.noalias() = K.transpose() * gout;
                        kernels::col2im_add(cols.data(), geo, gx + b * image);
                      }
                    }
                  });
}

// ---------------------------------------------------------------------------
// Axis ops

Var softmax(Var x, Index axis) {
  Graph& g = graph_of(x, "softmax");
  const Tensor& v = x.value();
  axis = kernels::normalize_axis(axis, v.rank(), "softmax");
  const AxisView A = kernels::axis_view(v.shape(), axis);
  Tensor out(v.shape());
  for (Index o = 0; o < A.outer; ++o)
    for (Index i = 0; i < A.inner; ++i) {
      double hi = -std::numeric_limits<double>::infinity();
      for (Index k = 0; k < A.n; ++k) hi = std::max(hi, v[A.at(o, k, i)]);
      double total = 0.0;
      for (Index k = 0; k < A.n; ++k) total += (out[A.at(o, k, i)] = std::exp(v[A.at(o, k, i)] - hi));
      for (Index k = 0; k < A.n; ++k) out[A.at(o, k, i)] /= total;
    }
  const std::size_t ix = x.id();
  return g.record(std::move(out), {x}, [A, ix](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad_buffer(self);
    const Tensor& y = g.value_at(self);
    double* gx = g.grad_buffer(ix).data();
    for (Index o = 0; o < A.outer; ++o)
      for (Index i = 0; i < A.inner; ++i) {
        double dot = 0.0;
        for (Index k = 0; k < A.n; ++k) dot += gy[A.at(o, k, i)] * y[A.at(o, k, i)];
        for (Index k = 0; k < A.n; ++k) gx[A.at(o, k, i)] += y[A.at(o, k, i)] * (gy[A.at(o, k, i)] - dot);
      }
  });
}

Var l2_norm(Var x, Index axis, double guard) {
  Graph& g = graph_of(x, "l2_norm");
  const Tensor& v = x.value();
  axis = kernels::normalize_axis(axis, v.rank(), "l2_norm");
  const AxisView A = kernels::axis_view(v.shape(), axis);
  Tensor out(keepdim_shape(v.shape(), axis));
  for (Index o = 0; o < A.outer; ++o)
    for (Index i = 0; i < A.inner; ++i) {
      double sq = 0.0;
      for (Index k = 0; k < A.n; ++k) sq += v[A.at(o, k, i)] * v[A.at(o, k, i)];
      out[o * A.inner + i] = std::sqrt(sq + guard);
    }
  const std::size_t ix = x.id();
  const double denom_guard = std::max(guard, kNormGuard);
  return g.record(std::move(out), {x}, [A, ix, guard, denom_guard](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad_buffer(self);
    const Tensor& y = g.value_at(self);
    const Tensor& v = g.value_at(ix);
    double* gx = g.grad_buffer(ix).data();
    for (Index o = 0; o < A.outer; ++o)
      for (Index i = 0; i < A.inner; ++i) {
        const Index r = o * A.inner + i;
        const double sq = y[r] * y[r] - guard;
        const double coef = gy[r] / std::sqrt(std::max(sq, 0.0) + denom_guard);
        for (Index k = 0; k < A.n; ++k) gx[A.at(o, k, i)] += coef * v[A.at(o, k, i)];
      }
  });
}

namespace {

// Squash gain f(q) = q / ((1 + q) sqrt(q + guard)) with q = |s|^2, and f'(q).
struct SquashGain {
  double f, df;
  explicit SquashGain(double q) {
    const double r = std::sqrt(q + kNormGuard);
    const double d = (1.0 + q) * r;
    const double dd = r + (1.0 + q) / (2.0 * r);
    f = q / d;
    df = (d - q * dd) / (d * d);
  }
};

}  // namespace

Var squash(Var x, Index axis) {
  Graph& g = graph_of(x, "squash");
  const Tensor& v = x.value();
  axis = kernels::normalize_axis(axis, v.rank(), "squash");
  const AxisView A = kernels::axis_view(v.shape(), axis);
  Tensor out(v.shape());
  for (Index o = 0; o < A.outer; ++o)
    for (Index i = 0; i < A.inner; ++i) {
      double q = 0.0;
      for (Index k = 0; k < A.n; ++k) q += v[A.at(o, k, i)] * v[A.at(o, k, i)];
      const double f = SquashGain(q).f;
      for (Index k = 0; k < A.n; ++k) out[A.at(o, k, i)] = f * v[A.at(o, k, i)];
    }
  const std::size_t ix = x.id();
  return g.record(std::move(out), {x}, [A, ix](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad_buffer(self);
    const Tensor& v = g.value_at(ix);
    double* gx = g.grad_buffer(ix).data();
    for (Index o = 0; o < A.outer; ++o)
      for (Index i = 0; i < A.inner; ++i) {
        double q = 0.0, gs = 0.0;
        for (Index k = 0; k < A.n; ++k) {
          const double s = v[A.at(o, k, i)];
          q += s * s;
          gs += gy[A.at(o, k, i)] * s;
        }
        const SquashGain sg(q);
        for (Index k = 0; k < A.n; ++k)
          gx[A.at(o, k, i)] += sg.f * gy[A.at(o, k, i)] + 2.0 * sg.df * gs * v[A.at(o, k, i)];
      }
  });
}

Var sum(Var x, Index axis) {
  Graph& g = graph_of(x, "sum");
  const Tensor& v = x.value();
  axis = kernels::normalize_axis(axis, v.rank(), "sum");
  const AxisView A = kernels::axis_view(v.shape(), axis);
  Tensor out(keepdim_shape(v.shape(), axis));
  for (Index o = 0; o < A.outer; ++o)
    for (Index k = 0; k < A.n; ++k)
      for (Index i = 0; i < A.inner; ++i) out[o * A.inner + i] += v[A.at(o, k, i)];
  const std::size_t ix = x.id();
  return g.record(std::move(out), {x}, [A, ix](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad_buffer(self);
    double* gx = g.grad_buffer(ix).data();
    for (Index o = 0; o < A.outer; ++o)
      for (Index k = 0; k < A.n; ++k)
        for (Index i = 0; i < A.inner; ++i) gx[A.at(o, k, i)] += gy[o * A.inner + i];
  });
}

Var sum(Var x) {
  Graph& g = graph_of(x, "sum");
  Tensor out(Shape{});
  out[0] = x.value().array().sum();
  const std::size_t ix = x.id();
  return g.record(std::move(out), {x}, [ix](Graph& g, std::size_t self) {
    const double gy = g.grad_buffer(self)[0];
    g.grad_buffer(ix).array() += gy;
  });
}

Var mean(Var x, Index axis) {
  axis = kernels::normalize_axis(axis, x.value().rank(), "mean");
  const double n = static_cast<double>(x.shape()[static_cast<std::size_t>(axis)]);
  return scale(sum(x, axis), 1.0 / n);
}

Var max(Var x, Index axis) {
  Graph& g = graph_of(x, "max");
  const Tensor& v = x.value();
  axis = kernels::normalize_axis(axis, v.rank(), "max");
  const AxisView A = kernels::axis_view(v.shape(), axis);
  Tensor out(keepdim_shape(v.shape(), axis));
  std::vector<Index> arg(static_cast<std::size_t>(out.size()));
  for (Index o = 0; o < A.outer; ++o)
    for (Index i = 0; i < A.inner; ++i) {
      Index best = A.at(o, 0, i);
      for (Index k = 1; k < A.n; ++k)
        if (v[A.at(o, k, i)] > v[best]) best = A.at(o, k, i);
      out[o * A.inner + i] = v[best];
      arg[static_cast<std::size_t>(o * A.inner + i)] = best;
    }
  const std::size_t ix = x.id();
  return g.record(std::move(out), {x}, [arg = std::move(arg), ix](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad_buffer(self);
    double* gx = g.grad_buffer(ix).data();
    for (std::size_t r = 0; r < arg.size(); ++r) gx[arg[r]] += gy[static_cast<Index>(r)];
  });
}

// ---------------------------------------------------------------------------
// Layout

Var reshape(Var x, Shape shape) {
  Graph& g = graph_of(x, "reshape");
  Tensor out = x.value();
  out.reshape(std::move(shape));
  const std::size_t ix = x.id();
  return g.record(std::move(out), {x}, [ix](Graph& g, std::size_t self) {
    g.grad_buffer(ix).array() += g.grad_buffer(self).array();
  });
}

Var permute(Var x, const std::vector<Index>& order) {
  Graph& g = graph_of(x, "permute");
  const Tensor& v = x.value();
  const std::size_t rank = v.shape().size();
  std::vector<bool> seen(rank, false);
  if (order.size() != rank) throw ShapeError("permute", shape_string(v.shape()) + " with order of size " + std::to_string(order.size()));
  for (Index d : order) {
    if (d < 0 || static_cast<std::size_t>(d) >= rank || seen[static_cast<std::size_t>(d)])
      throw ShapeError("permute", "invalid axis order for " + shape_string(v.shape()));
    seen[static_cast<std::size_t>(d)] = true;
  }
  std::vector<Index> in_strides(rank, 1);
  for (std::size_t d = rank - 1; d-- > 0;) in_strides[d] = in_strides[d + 1] * v.shape()[d + 1];
  Shape out_shape(rank);
  std::vector<Index> src_strides(rank);
  for (std::size_t d = 0; d < rank; ++d) {
    out_shape[d] = v.shape()[static_cast<std::size_t>(order[d])];
    src_strides[d] = in_strides[static_cast<std::size_t>(order[d])];
  }
  // Source offset of every output element, in output order.
  std::vector<Index> src(static_cast<std::size_t>(v.size()));
  {
    std::vector<Index> counter(rank, 0);
    Index off = 0;
    for (std::size_t o = 0; o < src.size(); ++o) {
      src[o] = off;
      for (std::size_t d = rank; d-- > 0;) {
        off += src_strides[d];
        if (++counter[d] < out_shape[d]) break;
        off -= src_strides[d] * out_shape[d];
        counter[d] = 0;
      }
    }
  }
  Tensor out(out_shape);
  for (std::size_t o = 0; o < src.size(); ++o) out[static_cast<Index>(o)] = v[src[o]];
  const std::size_t ix = x.id();
  return g.record(std::move(out), {x}, [src = std::move(src), ix](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad_buffer(self);
    double* gx = g.grad_buffer(ix).data();
    for (std::size_t o = 0; o < src.size(); ++o) gx[src[o]] += gy[static_cast<Index>(o)];
  });
}

Var concat(const std::vector<Var>& parts, Index axis) {
  if (parts.empty()) throw ShapeError("concat", "no inputs");
  Graph& g = graph_of(parts.front(), "concat");
  const Shape& first = parts.front().shape();
  axis = kernels::normalize_axis(axis, static_cast<Index>(first.size()), "concat");
  Shape out_shape = first;
  out_shape[static_cast<std::size_t>(axis)] = 0;
  std::vector<Index> extents;
  for (Var p : parts) {
    graph_of(p, parts.front(), "concat");
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d)
      ok = d == static_cast<std::size_t>(axis) || s[d] == first[d];
    if (!ok) throw ShapeError("concat", shape_string(first) + " and " + shape_string(s));
    extents.push_back(s[static_cast<std::size_t>(axis)]);
    out_shape[static_cast<std::size_t>(axis)] += extents.back();
  }
  Tensor out(out_shape);
  const AxisView O = kernels::axis_view(out_shape, axis);
  Index offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Tensor& v = parts[p].value();
    const AxisView A = kernels::axis_view(v.shape(), axis);
    for (Index o = 0; o < A.outer; ++o)
      for (Index k = 0; k < A.n; ++k)
        for (Index i = 0; i < A.inner; ++i) out[O.at(o, offset + k, i)] = v[A.at(o, k, i)];
    offset += extents[p];
  }
  std::vector<std::size_t> ids;
  for (Var p : parts) ids.push_back(p.id());
  return g.record(std::move(out), parts, [ids, extents, O](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad_buffer(self);
    Index offset = 0;
    for (std::size_t p = 0; p < ids.size(); ++p) {
      if (g.tracked(ids[p])) {
        double* gx = g.grad_buffer(ids[p]).data();
        const AxisView A{O.outer, extents[p], O.inner};
        for (Index o = 0; o < A.outer; ++o)
          for (Index k = 0; k < A.n; ++k)
            for (Index i = 0; i < A.inner; ++i) gx[A.at(o, k, i)] += gy[O.at(o, offset + k, i)];
      }
      offset += extents[p];
    }
  });
}

}  // namespace gcaps
