#include "trinet/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace trinet {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw std::invalid_argument("negative extent in shape " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

}  // namespace trinet

namespace trinet::ad {

// ---------------------------------------------------------------- Tape

template <typename T>
Var<T> Tape<T>::leaf(Tensor<T> value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var<T>(this, static_cast<int>(nodes_.size()) - 1);
}

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var<T>(this, static_cast<int>(nodes_.size()) - 1);
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, std::vector<int> inputs, BackwardFn backward) {
  for (T v : value.data()) {
    if (!std::isfinite(v)) {
      throw std::runtime_error("non-finite value produced by op #" +
                               std::to_string(nodes_.size()) + " with shape " +
                               shape_str(value.shape()));
    }
  }
  Node n;
  n.value = std::move(value);
  for (int id : inputs) n.requires_grad = n.requires_grad || requires_grad(id);
  if (n.requires_grad) n.backward = std::move(backward);
  n.inputs = std::move(inputs);
  nodes_.push_back(std::move(n));
  return Var<T>(this, static_cast<int>(nodes_.size()) - 1);
}

template <typename T>
std::vector<T>& Tape<T>::grad_buffer(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.empty()) n.grad.assign(n.value.numel(), T(0));
  return n.grad;
}

template <typename T>
void Tape<T>::backward(Var<T> root) {
  if (root.tape() != this) throw std::invalid_argument("backward: root belongs to another tape");
  if (value(root.id()).numel() != 1) {
    throw std::invalid_argument("backward: root must be scalar, got shape " +
                                shape_str(value(root.id()).shape()));
  }
  for (Node& n : nodes_) n.grad.clear();
  if (!requires_grad(root.id())) return;
  grad_buffer(root.id())[0] = T(1);
  for (int id = root.id(); id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.empty() || !n.backward) continue;
    n.backward(*this, id);
  }
}

template <typename T>
Tensor<T> Tape<T>::grad(Var<T> v) const {
  const Node& n = nodes_[static_cast<std::size_t>(v.id())];
  if (n.grad.empty()) return Tensor<T>(n.value.shape());
  return Tensor<T>(n.value.shape(), n.grad);
}

// ---------------------------------------------------------------- helpers

namespace {

template <typename T>
Tape<T>& tape_of(Var<T> a) {
  if (!a.valid()) throw std::invalid_argument("op on an unbound Var");
  return *a.tape();
}

template <typename T>
Tape<T>& tape_of(Var<T> a, Var<T> b) {
  if (a.tape() != b.tape()) throw std::invalid_argument("op mixes Vars from different tapes");
  return tape_of(a);
}

template <typename T>
void require_4d(Var<T> a, const char* op) {
  if (a.value().rank() != 4) {
    throw std::invalid_argument(std::string(op) + ": expected [B,C,H,W] input, got " +
                                shape_str(a.shape()));
  }
}

// Unary elementwise op from forward f(x) and derivative df(x, y).
template <typename T, typename F, typename DF>
Var<T> unary(Var<T> a, F f, DF df) {
  Tape<T>& tape = tape_of(a);
  const Tensor<T>& x = a.value();
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) y[i] = f(x[i]);
  const int ia = a.id();
  return tape.record(std::move(y), {ia}, [ia, df](Tape<T>& t, int self) {
    if (!t.requires_grad(ia)) return;
    const auto& g = t.grad_of(self);
    const Tensor<T>& x = t.value(ia);
    const Tensor<T>& y = t.value(self);
    auto& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df(x[i], y[i]);
  });
}

enum class Bcast { none, a_scalar, b_scalar };

template <typename T>
Bcast broadcast_mode(Var<T> a, Var<T> b, const char* op) {
  if (a.shape() == b.shape()) return Bcast::none;
  if (b.numel() == 1) return Bcast::b_scalar;
  if (a.numel() == 1) return Bcast::a_scalar;
  throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                              " vs " + shape_str(b.shape()));
}

// Binary elementwise op with partials da(x, y, out), db(x, y, out).
template <typename T, typename F, typename DA, typename DB>
Var<T> binary(Var<T> a, Var<T> b, const char* op, F f, DA da, DB db) {
  Tape<T>& tape = tape_of(a, b);
  const Bcast mode = broadcast_mode(a, b, op);
  const Tensor<T>& xa = a.value();
  const Tensor<T>& xb = b.value();
  const Shape& shape = mode == Bcast::a_scalar ? xb.shape() : xa.shape();
  const std::size_t n = shape_numel(shape);
  Tensor<T> y(shape);
  for (std::size_t i = 0; i < n; ++i) {
    const T va = mode == Bcast::a_scalar ? xa[0] : xa[i];
    const T vb = mode == Bcast::b_scalar ? xb[0] : xb[i];
    y[i] = f(va, vb);
  }
  const int ia = a.id(), ib = b.id();
  return tape.record(std::move(y), {ia, ib}, [ia, ib, mode, da, db](Tape<T>& t, int self) {
    const auto& g = t.grad_of(self);
    const Tensor<T>& xa = t.value(ia);
    const Tensor<T>& xb = t.value(ib);
    const Tensor<T>& y = t.value(self);
    const bool ga_on = t.requires_grad(ia), gb_on = t.requires_grad(ib);
    std::vector<T>* ga = ga_on ? &t.grad_buffer(ia) : nullptr;
    std::vector<T>* gb = gb_on ? &t.grad_buffer(ib) : nullptr;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const std::size_t ja = mode == Bcast::a_scalar ? 0 : i;
      const std::size_t jb = mode == Bcast::b_scalar ? 0 : i;
      if (ga) (*ga)[ja] += g[i] * da(xa[ja], xb[jb], y[i]);
      if (gb) (*gb)[jb] += g[i] * db(xa[ja], xb[jb], y[i]);
    }
  });
}

}  // namespace

// ---------------------------------------------------------------- elementwise

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  return binary(
      a, b, "add", [](T x, T y) { return x + y; }, [](T, T, T) { return T(1); },
      [](T, T, T) { return T(1); });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  return binary(
      a, b, "sub", [](T x, T y) { return x - y; }, [](T, T, T) { return T(1); },
      [](T, T, T) { return T(-1); });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  return binary(
      a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y, T) { return y; },
      [](T x, T, T) { return x; });
}

template <typename T>
Var<T> div(Var<T> a, Var<T> b) {
  for (T v : b.value().data()) {
    if (v == T(0)) throw std::domain_error("div: zero denominator");
  }
  return binary(
      a, b, "div", [](T x, T y) { return x / y; }, [](T, T y, T) { return T(1) / y; },
      [](T, T y, T out) { return -out / y; });
}

template <typename T>
Var<T> add_scalar(Var<T> a, std::type_identity_t<T> s) {
  return unary(a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <typename T>
Var<T> mul_scalar(Var<T> a, std::type_identity_t<T> s) {
  return unary(a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <typename T>
Var<T> neg(Var<T> a) {
  return unary(a, [](T x) { return -x; }, [](T, T) { return T(-1); });
}

template <typename T>
Var<T> abs(Var<T> a) {
  return unary(
      a, [](T x) { return std::abs(x); },
      [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Var<T> square(Var<T> a) {
  return unary(a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <typename T>
Var<T> exp(Var<T> a) {
  return unary(a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Var<T> log(Var<T> a) {
  for (T v : a.value().data()) {
    if (!(v > T(0))) throw std::domain_error("log: non-positive input");
  }
  return unary(a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Var<T> sigmoid(Var<T> a) {
  return unary(
      a, [](T x) { return T(1) / (T(1) + std::exp(-x)); },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> elu(Var<T> a) {
  return unary(
      a, [](T x) { return x > T(0) ? x : std::expm1(x); },
      [](T x, T y) { return x > T(0) ? T(1) : y + T(1); });
}

template <typename T>
Var<T> clamp(Var<T> a, std::type_identity_t<T> lo, std::type_identity_t<T> hi) {
  if (lo > hi) throw std::invalid_argument("clamp: lo > hi");
  return unary(
      a, [lo, hi](T x) { return std::clamp(x, lo, hi); },
      [lo, hi](T x, T) { return (x >= lo && x <= hi) ? T(1) : T(0); });
}

// ---------------------------------------------------------------- reductions

template <typename T>
Var<T> sum(Var<T> a) {
  Tape<T>& tape = tape_of(a);
  T s = T(0);
  for (T v : a.value().data()) s += v;
  const int ia = a.id();
  return tape.record(Tensor<T>::scalar(s), {ia}, [ia](Tape<T>& t, int self) {
    if (!t.requires_grad(ia)) return;
    const T g = t.grad_of(self)[0];
    for (T& v : t.grad_buffer(ia)) v += g;
  });
}

template <typename T>
Var<T> mean(Var<T> a) {
  const std::size_t n = a.numel();
  if (n == 0) throw std::invalid_argument("mean of empty tensor");
  Tape<T>& tape = tape_of(a);
  T s = T(0);
  for (T v : a.value().data()) s += v;
  const T inv = T(1) / static_cast<T>(n);
  const int ia = a.id();
  return tape.record(Tensor<T>::scalar(s * inv), {ia}, [ia, inv](Tape<T>& t, int self) {
    if (!t.requires_grad(ia)) return;
    const T g = t.grad_of(self)[0] * inv;
    for (T& v : t.grad_buffer(ia)) v += g;
  });
}

// ---------------------------------------------------------------- image ops

template <typename T>
Var<T> box_mean3(Var<T> a) {
  require_4d(a, "box_mean3");
  Tape<T>& tape = tape_of(a);
  const Tensor<T>& x = a.value();
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor<T> y(x.shape());
  const T ninth = T(1) / T(9);
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
          T s = T(0);
          for (int di = -1; di <= 1; ++di) {
            const int ii = std::clamp(i + di, 0, H - 1);
            for (int dj = -1; dj <= 1; ++dj) s += x.at(b, c, ii, std::clamp(j + dj, 0, W - 1));
          }
          y.at(b, c, i, j) = s * ninth;
        }
  const int ia = a.id();
  return tape.record(std::move(y), {ia}, [ia, B, C, H, W, ninth](Tape<T>& t, int self) {
    if (!t.requires_grad(ia)) return;
    const Tensor<T> g(t.value(self).shape(), t.grad_of(self));
    Tensor<T> ga(t.value(ia).shape(), t.grad_buffer(ia));
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c)
        for (int i = 0; i < H; ++i)
          for (int j = 0; j < W; ++j) {
            const T gv = g.at(b, c, i, j) * ninth;
            for (int di = -1; di <= 1; ++di) {
              const int ii = std::clamp(i + di, 0, H - 1);
              for (int dj = -1; dj <= 1; ++dj) ga.at(b, c, ii, std::clamp(j + dj, 0, W - 1)) += gv;
            }
          }
    t.grad_buffer(ia) = std::move(ga.storage());
  });
}

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ConvGeom {
  int B, Cin, H, W, Cout, kH, kW, stride, pad, Ho, Wo;
  int K() const { return Cin * kH * kW; }
  int N() const { return B * Ho * Wo; }
};

// cols[(ci*kH+ky)*kW+kx][(b*Ho+oy)*Wo+ox]
template <typename T>
void im2col(const Tensor<T>& x, const ConvGeom& g, std::vector<T>& cols) {
  const std::size_t N = static_cast<std::size_t>(g.N());
  cols.assign(static_cast<std::size_t>(g.K()) * N, T(0));
  for (int ci = 0; ci < g.Cin; ++ci)
    for (int ky = 0; ky < g.kH; ++ky)
      for (int kx = 0; kx < g.kW; ++kx) {
        T* row = cols.data() + static_cast<std::size_t>((ci * g.kH + ky) * g.kW + kx) * N;
        for (int b = 0; b < g.B; ++b)
          for (int oy = 0; oy < g.Ho; ++oy) {
            const int iy = oy * g.stride - g.pad + ky;
            if (iy < 0 || iy >= g.H) continue;
            const T* src = &x.at(b, ci, iy, 0);
            T* dst = row + (static_cast<std::size_t>(b) * g.Ho + oy) * g.Wo;
            for (int ox = 0; ox < g.Wo; ++ox) {
              const int ix = ox * g.stride - g.pad + kx;
              if (ix >= 0 && ix < g.W) dst[ox] = src[ix];
            }
          }
      }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeom& g, std::vector<T>& gx) {
  const std::size_t N = static_cast<std::size_t>(g.N());
  for (int ci = 0; ci < g.Cin; ++ci)
    for (int ky = 0; ky < g.kH; ++ky)
      for (int kx = 0; kx < g.kW; ++kx) {
        const T* row = cols + static_cast<std::size_t>((ci * g.kH + ky) * g.kW + kx) * N;
        for (int b = 0; b < g.B; ++b)
          for (int oy = 0; oy < g.Ho; ++oy) {
            const int iy = oy * g.stride - g.pad + ky;
            if (iy < 0 || iy >= g.H) continue;
            T* dst = gx.data() + ((static_cast<std::size_t>(b) * g.Cin + ci) * g.H + iy) * g.W;
            const T* src = row + (static_cast<std::size_t>(b) * g.Ho + oy) * g.Wo;
            for (int ox = 0; ox < g.Wo; ++ox) {
              const int ix = ox * g.stride - g.pad + kx;
              if (ix >= 0 && ix < g.W) dst[ix] += src[ox];
            }
          }
      }
}

}  // namespace

template <typename T>
Var<T> conv2d(Var<T> input, Var<T> kernel, int stride, int padding) {
  Tape<T>& tape = tape_of(input, kernel);
  require_4d(input, "conv2d input");
  if (kernel.value().rank() != 4) {
    throw std::invalid_argument("conv2d: kernel must be [Cout,Cin,kH,kW], got " +
                                shape_str(kernel.shape()));
  }
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  if (padding < 0) throw std::invalid_argument("conv2d: negative padding");
  const Tensor<T>& x = input.value();
  const Tensor<T>& k = kernel.value();
  ConvGeom g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), k.dim(0), k.dim(2), k.dim(3),
             stride, padding, 0, 0};
  if (k.dim(1) != g.Cin) {
    throw std::invalid_argument("conv2d: input channel dimension " + std::to_string(g.Cin) +
                                " does not match kernel Cin " + std::to_string(k.dim(1)));
  }
  if (g.kH > g.H + 2 * padding) {
    throw std::invalid_argument("conv2d: kernel height " + std::to_string(g.kH) +
                                " exceeds padded input height " + std::to_string(g.H + 2 * padding));
  }
  if (g.kW > g.W + 2 * padding) {
    throw std::invalid_argument("conv2d: kernel width " + std::to_string(g.kW) +
                                " exceeds padded input width " + std::to_string(g.W + 2 * padding));
  }
  g.Ho = (g.H + 2 * padding - g.kH) / stride + 1;
  g.Wo = (g.W + 2 * padding - g.kW) / stride + 1;

  std::vector<T> cols;
  im2col(x, g, cols);
  const Eigen::Map<const RowMat<T>> Wm(k.data().data(), g.Cout, g.K());
  const Eigen::Map<const RowMat<T>> Cm(cols.data(), g.K(), g.N());
  RowMat<T> Om = Wm * Cm;

  Tensor<T> y({g.B, g.Cout, g.Ho, g.Wo});
  const std::size_t plane = static_cast<std::size_t>(g.Ho) * g.Wo;
  for (int b = 0; b < g.B; ++b)
    for (int co = 0; co < g.Cout; ++co)
      std::copy_n(Om.data() + static_cast<std::size_t>(co) * g.N() + b * plane, plane,
                  y.data().data() + (static_cast<std::size_t>(b) * g.Cout + co) * plane);

  const int ix = input.id(), ik = kernel.id();
  return tape.record(
      std::move(y), {ix, ik}, [ix, ik, g, cols = std::move(cols)](Tape<T>& t, int self) {
        const auto& gy = t.grad_of(self);
        const std::size_t plane = static_cast<std::size_t>(g.Ho) * g.Wo;
        RowMat<T> G(g.Cout, g.N());
        for (int b = 0; b < g.B; ++b)
          for (int co = 0; co < g.Cout; ++co)
            std::copy_n(gy.data() + (static_cast<std::size_t>(b) * g.Cout + co) * plane, plane,
                        G.data() + static_cast<std::size_t>(co) * g.N() + b * plane);
        if (t.requires_grad(ik)) {
          const Eigen::Map<const RowMat<T>> Cm(cols.data(), g.K(), g.N());
          auto& gk = t.grad_buffer(ik);
          Eigen::Map<RowMat<T>> Gk(gk.data(), g.Cout, g.K());
          Gk.noalias() += G * Cm.transpose();
        }
        if (t.requires_grad(ix)) {
          const Tensor<T>& k = t.value(ik);
          const Eigen::Map<const RowMat<T>> Wm(k.data().data(), g.Cout, g.K());
          RowMat<T> gcols = Wm.transpose() * G;
          col2im_add(gcols.data(), g, t.grad_buffer(ix));
        }
      });
}

template <typename T>
Var<T> add_channel_bias(Var<T> input, Var<T> bias) {
  Tape<T>& tape = tape_of(input, bias);
  require_4d(input, "add_channel_bias");
  const Tensor<T>& x = input.value();
  const int B = x.dim(0), C = x.dim(1);
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  if (bias.numel() != static_cast<std::size_t>(C)) {
    throw std::invalid_argument("add_channel_bias: bias has " + std::to_string(bias.numel()) +
                                " entries for " + std::to_string(C) + " channels");
  }
  Tensor<T> y = x;
  const Tensor<T>& bv = bias.value();
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      T* p = y.data().data() + (static_cast<std::size_t>(b) * C + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) p[i] += bv[static_cast<std::size_t>(c)];
    }
  const int ix = input.id(), ib = bias.id();
  return tape.record(std::move(y), {ix, ib}, [ix, ib, B, C, plane](Tape<T>& t, int self) {
    const auto& g = t.grad_of(self);
    if (t.requires_grad(ix)) {
      auto& gx = t.grad_buffer(ix);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (t.requires_grad(ib)) {
      auto& gb = t.grad_buffer(ib);
      for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
          const T* p = g.data() + (static_cast<std::size_t>(b) * C + c) * plane;
          T s = T(0);
          for (std::size_t i = 0; i < plane; ++i) s += p[i];
          gb[static_cast<std::size_t>(c)] += s;
        }
    }
  });
}

namespace {

// Linear interpolation taps for one output coordinate of upsample2x.
struct Tap {
  int i0, i1;
  double w1;  // weight of i1; i0 gets 1 - w1
};

std::vector<Tap> upsample_taps(int in_extent) {
  std::vector<Tap> taps(static_cast<std::size_t>(2 * in_extent));
  for (int o = 0; o < 2 * in_extent; ++o) {
    double src = (o + 0.5) / 2.0 - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in_extent - 1));
    const int i0 = static_cast<int>(std::floor(src));
    const int i1 = std::min(i0 + 1, in_extent - 1);
    taps[static_cast<std::size_t>(o)] = {i0, i1, src - i0};
  }
  return taps;
}

}  // namespace

template <typename T>
Var<T> upsample2x(Var<T> input) {
  require_4d(input, "upsample2x");
  Tape<T>& tape = tape_of(input);
  const Tensor<T>& x = input.value();
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H < 1 || W < 1) throw std::invalid_argument("upsample2x: empty input");
  auto ty = upsample_taps(H), tx = upsample_taps(W);
  Tensor<T> y({B, C, 2 * H, 2 * W});
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int oy = 0; oy < 2 * H; ++oy) {
        const Tap& a = ty[static_cast<std::size_t>(oy)];
        const T wy1 = static_cast<T>(a.w1), wy0 = T(1) - wy1;
        for (int ox = 0; ox < 2 * W; ++ox) {
          const Tap& e = tx[static_cast<std::size_t>(ox)];
          const T wx1 = static_cast<T>(e.w1), wx0 = T(1) - wx1;
          y.at(b, c, oy, ox) = wy0 * (wx0 * x.at(b, c, a.i0, e.i0) + wx1 * x.at(b, c, a.i0, e.i1)) +
                               wy1 * (wx0 * x.at(b, c, a.i1, e.i0) + wx1 * x.at(b, c, a.i1, e.i1));
        }
      }
  const int ia = input.id();
  return tape.record(std::move(y), {ia}, [ia, B, C, H, W, ty, tx](Tape<T>& t, int self) {
    if (!t.requires_grad(ia)) return;
    const Tensor<T> g(t.value(self).shape(), t.grad_of(self));
    Tensor<T> ga(t.value(ia).shape(), t.grad_buffer(ia));
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c)
        for (int oy = 0; oy < 2 * H; ++oy) {
          const Tap& a = ty[static_cast<std::size_t>(oy)];
          const T wy1 = static_cast<T>(a.w1), wy0 = T(1) - wy1;
          for (int ox = 0; ox < 2 * W; ++ox) {
            const Tap& e = tx[static_cast<std::size_t>(ox)];
            const T wx1 = static_cast<T>(e.w1), wx0 = T(1) - wx1;
            const T gv = g.at(b, c, oy, ox);
            ga.at(b, c, a.i0, e.i0) += gv * wy0 * wx0;
            ga.at(b, c, a.i0, e.i1) += gv * wy0 * wx1;
            ga.at(b, c, a.i1, e.i0) += gv * wy1 * wx0;
            ga.at(b, c, a.i1, e.i1) += gv * wy1 * wx1;
          }
        }
    t.grad_buffer(ia) = std::move(ga.storage());
  });
}

template <typename T>
Var<T> avg_pool2(Var<T> input) {
  require_4d(input, "avg_pool2");
  Tape<T>& tape = tape_of(input);
  const Tensor<T>& x = input.value();
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H % 2 != 0 || W % 2 != 0) {
    throw std::invalid_argument("avg_pool2: odd extents " + shape_str(x.shape()));
  }
  Tensor<T> y({B, C, H / 2, W / 2});
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < H / 2; ++i)
        for (int j = 0; j < W / 2; ++j)
          y.at(b, c, i, j) = T(0.25) * (x.at(b, c, 2 * i, 2 * j) + x.at(b, c, 2 * i, 2 * j + 1) +
                                        x.at(b, c, 2 * i + 1, 2 * j) + x.at(b, c, 2 * i + 1, 2 * j + 1));
  const int ia = input.id();
  return tape.record(std::move(y), {ia}, [ia, B, C, H, W](Tape<T>& t, int self) {
    if (!t.requires_grad(ia)) return;
    const Tensor<T> g(t.value(self).shape(), t.grad_of(self));
    Tensor<T> ga(t.value(ia).shape(), t.grad_buffer(ia));
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c)
        for (int i = 0; i < H; ++i)
          for (int j = 0; j < W; ++j) ga.at(b, c, i, j) += T(0.25) * g.at(b, c, i / 2, j / 2);
    t.grad_buffer(ia) = std::move(ga.storage());
  });
}

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_channels: no inputs");
  Tape<T>& tape = tape_of(parts.front());
  const Shape& s0 = parts.front().shape();
  int C = 0;
  std::vector<int> ids, chans;
  for (const auto& p : parts) {
    require_4d(p, "concat_channels");
    if (p.tape() != &tape) throw std::invalid_argument("concat_channels: mixed tapes");
    const Shape& s = p.shape();
    if (s[0] != s0[0] || s[2] != s0[2] || s[3] != s0[3]) {
      throw std::invalid_argument("concat_channels: " + shape_str(s) + " incompatible with " +
                                  shape_str(s0));
    }
    ids.push_back(p.id());
    chans.push_back(s[1]);
    C += s[1];
  }
  const int B = s0[0];
  const std::size_t plane = static_cast<std::size_t>(s0[2]) * s0[3];
  Tensor<T> y({B, C, s0[2], s0[3]});
  for (int b = 0; b < B; ++b) {
    int off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const Tensor<T>& v = parts[k].value();
      const std::size_t n = static_cast<std::size_t>(chans[k]) * plane;
      std::copy_n(v.data().data() + b * n, n,
                  y.data().data() + (static_cast<std::size_t>(b) * C + off) * plane);
      off += chans[k];
    }
  }
  std::vector<int> inputs = ids;
  return tape.record(std::move(y), std::move(inputs),
                     [ids, chans, B, C, plane](Tape<T>& t, int self) {
                       const auto& g = t.grad_of(self);
                       int off = 0;
                       for (std::size_t k = 0; k < ids.size(); ++k) {
                         const std::size_t n = static_cast<std::size_t>(chans[k]) * plane;
                         if (t.requires_grad(ids[k])) {
                           auto& gk = t.grad_buffer(ids[k]);
                           for (int b = 0; b < B; ++b) {
                             const T* src = g.data() + (static_cast<std::size_t>(b) * C + off) * plane;
                             T* dst = gk.data() + b * n;
                             for (std::size_t i = 0; i < n; ++i) dst[i] += src[i];
                           }
                         }
                         off += chans[k];
                       }
                     });
}

template <typename T>
Var<T> slice_channels(Var<T> input, int begin, int count) {
  require_4d(input, "slice_channels");
  Tape<T>& tape = tape_of(input);
  const Tensor<T>& x = input.value();
  const int B = x.dim(0), C = x.dim(1);
  if (begin < 0 || count < 1 || begin + count > C) {
    throw std::invalid_argument("slice_channels: range [" + std::to_string(begin) + "," +
                                std::to_string(begin + count) + ") outside " + std::to_string(C) +
                                " channels");
  }
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  Tensor<T> y({B, count, x.dim(2), x.dim(3)});
  for (int b = 0; b < B; ++b)
    std::copy_n(x.data().data() + (static_cast<std::size_t>(b) * C + begin) * plane,
                count * plane, y.data().data() + static_cast<std::size_t>(b) * count * plane);
  const int ia = input.id();
  return tape.record(std::move(y), {ia}, [ia, B, C, begin, count, plane](Tape<T>& t, int self) {
    if (!t.requires_grad(ia)) return;
    const auto& g = t.grad_of(self);
    auto& ga = t.grad_buffer(ia);
    for (int b = 0; b < B; ++b) {
      const T* src = g.data() + static_cast<std::size_t>(b) * count * plane;
      T* dst = ga.data() + (static_cast<std::size_t>(b) * C + begin) * plane;
      for (std::size_t i = 0; i < count * plane; ++i) dst[i] += src[i];
    }
  });
}

template <typename T>
Var<T> channel_mean(Var<T> input) {
  require_4d(input, "channel_mean");
  Tape<T>& tape = tape_of(input);
  const Tensor<T>& x = input.value();
  const int B = x.dim(0), C = x.dim(1);
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  const T inv = T(1) / static_cast<T>(C);
  Tensor<T> y({B, 1, x.dim(2), x.dim(3)});
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const T* src = x.data().data() + (static_cast<std::size_t>(b) * C + c) * plane;
      T* dst = y.data().data() + static_cast<std::size_t>(b) * plane;
      for (std::size_t i = 0; i < plane; ++i) dst[i] += src[i];
    }
  for (T& v : y.data()) v *= inv;
  const int ia = input.id();
  return tape.record(std::move(y), {ia}, [ia, B, C, plane, inv](Tape<T>& t, int self) {
    if (!t.requires_grad(ia)) return;
    const auto& g = t.grad_of(self);
    auto& ga = t.grad_buffer(ia);
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c) {
        const T* src = g.data() + static_cast<std::size_t>(b) * plane;
        T* dst = ga.data() + (static_cast<std::size_t>(b) * C + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) dst[i] += src[i] * inv;
      }
  });
}

template <typename T>
Var<T> diff_x(Var<T> input) {
  require_4d(input, "diff_x");
  Tape<T>& tape = tape_of(input);
  const Tensor<T>& x = input.value();
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (W < 2) throw std::invalid_argument("diff_x: width must be >= 2");
  Tensor<T> y({B, C, H, W - 1});
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < H; ++i)
        for (int j = 0; j + 1 < W; ++j) y.at(b, c, i, j) = x.at(b, c, i, j + 1) - x.at(b, c, i, j);
  const int ia = input.id();
  return tape.record(std::move(y), {ia}, [ia, B, C, H, W](Tape<T>& t, int self) {
    if (!t.requires_grad(ia)) return;
    const Tensor<T> g(t.value(self).shape(), t.grad_of(self));
    Tensor<T> ga(t.value(ia).shape(), t.grad_buffer(ia));
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c)
        for (int i = 0; i < H; ++i)
          for (int j = 0; j + 1 < W; ++j) {
            ga.at(b, c, i, j + 1) += g.at(b, c, i, j);
            ga.at(b, c, i, j) -= g.at(b, c, i, j);
          }
    t.grad_buffer(ia) = std::move(ga.storage());
  });
}

template <typename T>
Var<T> diff_y(Var<T> input) {
  require_4d(input, "diff_y");
  Tape<T>& tape = tape_of(input);
  const Tensor<T>& x = input.value();
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H < 2) throw std::invalid_argument("diff_y: height must be >= 2");
  Tensor<T> y({B, C, H - 1, W});
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int i = 0; i + 1 < H; ++i)
        for (int j = 0; j < W; ++j) y.at(b, c, i, j) = x.at(b, c, i + 1, j) - x.at(b, c, i, j);
  const int ia = input.id();
  return tape.record(std::move(y), {ia}, [ia, B, C, H, W](Tape<T>& t, int self) {
    if (!t.requires_grad(ia)) return;
    const Tensor<T> g(t.value(self).shape(), t.grad_of(self));
    Tensor<T> ga(t.value(ia).shape(), t.grad_buffer(ia));
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c)
        for (int i = 0; i + 1 < H; ++i)
          for (int j = 0; j < W; ++j) {
            ga.at(b, c, i + 1, j) += g.at(b, c, i, j);
            ga.at(b, c, i, j) -= g.at(b, c, i, j);
          }
    t.grad_buffer(ia) = std::move(ga.storage());
  });
}

template <typename T>
Var<T> flip_x(Var<T> input) {
  require_4d(input, "flip_x");
  Tape<T>& tape = tape_of(input);
  Tensor<T> y = flip_horizontal(input.value());
  const int ia = input.id();
  return tape.record(std::move(y), {ia}, [ia](Tape<T>& t, int self) {
    if (!t.requires_grad(ia)) return;
    const Tensor<T> g = flip_horizontal(Tensor<T>(t.value(self).shape(), t.grad_of(self)));
    auto& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
  });
}

// ---------------------------------------------------------------- instantiation

#define TRINET_INSTANTIATE(T)                                                              \
  template class Tape<T>;                                                                  \
  template Var<T> add(Var<T>, Var<T>);                                                     \
  template Var<T> sub(Var<T>, Var<T>);                                                     \
  template Var<T> mul(Var<T>, Var<T>);                                                     \
  template Var<T> div(Var<T>, Var<T>);                                                     \
  template Var<T> add_scalar(Var<T>, std::type_identity_t<T>);                             \
  template Var<T> mul_scalar(Var<T>, std::type_identity_t<T>);                             \
  template Var<T> neg(Var<T>);                                                             \
  template Var<T> abs(Var<T>);                                                             \
  template Var<T> square(Var<T>);                                                          \
  template Var<T> exp(Var<T>);                                                             \
  template Var<T> log(Var<T>);                                                             \
  template Var<T> sigmoid(Var<T>);                                                         \
  template Var<T> elu(Var<T>);                                                             \
  template Var<T> clamp(Var<T>, std::type_identity_t<T>, std::type_identity_t<T>);         \
  template Var<T> sum(Var<T>);                                                             \
  template Var<T> mean(Var<T>);                                                            \
  template Var<T> box_mean3(Var<T>);                                                       \
  template Var<T> conv2d(Var<T>, Var<T>, int, int);                                        \
  template Var<T> add_channel_bias(Var<T>, Var<T>);                                        \
  template Var<T> upsample2x(Var<T>);                                                      \
  template Var<T> avg_pool2(Var<T>);                                                       \
  template Var<T> concat_channels(const std::vector<Var<T>>&);                             \
  template Var<T> slice_channels(Var<T>, int, int);                                        \
  template Var<T> channel_mean(Var<T>);                                                    \
  template Var<T> diff_x(Var<T>);                                                          \
  template Var<T> diff_y(Var<T>);                                                          \
  template Var<T> flip_x(Var<T>);

TRINET_INSTANTIATE(float)
TRINET_INSTANTIATE(double)

#undef TRINET_INSTANTIATE

}  // namespace trinet::ad
