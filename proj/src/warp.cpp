#include "trinet/warp.hpp"

#include <algorithm>
#include <cmath>

namespace trinet {

std::string_view to_string(DispTag tag) {
  switch (tag) {
    case DispTag::cl: return "cl";
    case DispTag::lc: return "lc";
    case DispTag::cr: return "cr";
    case DispTag::rc: return "rc";
    case DispTag::c: return "c";
  }
  return "?";
}

View aligned_view(DispTag tag) {
  switch (tag) {
    case DispTag::lc: return View::left;
    case DispTag::rc: return View::right;
    default: return View::center;
  }
}

namespace warp {

namespace {

template <typename T>
void check_sampler_args(const Tensor<T>& source, const Tensor<T>& disp, int sign) {
  require_image(source, "sample_horizontal source");
  require_image(disp, "sample_horizontal disparity");
  if (sign != 1 && sign != -1) throw std::invalid_argument("sample_horizontal: sign must be +1 or -1");
  if (disp.dim(1) != 1 || disp.dim(0) != source.dim(0) || disp.dim(2) != source.dim(2) ||
      disp.dim(3) != source.dim(3)) {
    throw std::invalid_argument("sample_horizontal: disparity " + shape_str(disp.shape()) +
                                " does not match source " + shape_str(source.shape()));
  }
  for (T v : disp.data()) {
    if (v < T(0)) throw std::invalid_argument("sample_horizontal: negative disparity");
  }
}

// Interpolation position for one pixel. `inside` is false when the position
// was clamped, in which case the output does not depend on the disparity.
template <typename T>
struct Lookup {
  int x0, x1;
  T frac;
  bool inside;
};

template <typename T>
Lookup<T> locate(int x, T d, int sign, int W) {
  const T pos = static_cast<T>(x) + static_cast<T>(sign) * d;
  const T hi = static_cast<T>(W - 1);
  if (pos < T(0)) return {0, 0, T(0), false};
  if (pos >= hi) return {W - 1, W - 1, T(0), false};
  const int x0 = static_cast<int>(std::floor(pos));
  return {x0, x0 + 1, pos - static_cast<T>(x0), true};
}

template <typename T>
Tensor<T> sample_forward(const Tensor<T>& src, const Tensor<T>& disp, int sign) {
  const int B = src.dim(0), C = src.dim(1), H = src.dim(2), W = src.dim(3);
  Tensor<T> out(src.shape());
  for (int b = 0; b < B; ++b)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const Lookup<T> l = locate(x, disp.at(b, 0, y, x), sign, W);
        for (int c = 0; c < C; ++c) {
          const T a = src.at(b, c, y, l.x0), e = src.at(b, c, y, l.x1);
          out.at(b, c, y, x) = a + l.frac * (e - a);
        }
      }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> sample_horizontal(const Tensor<T>& source, const Tensor<T>& disp, int sign) {
  check_sampler_args(source, disp, sign);
  return sample_forward(source, disp, sign);
}

template <typename T>
ad::Var<T> sample_horizontal(ad::Var<T> source, ad::Var<T> disp, int sign) {
  if (!source.valid() || source.tape() != disp.tape()) {
    throw std::invalid_argument("sample_horizontal: operands must share a tape");
  }
  check_sampler_args(source.value(), disp.value(), sign);
  Tensor<T> out = sample_forward(source.value(), disp.value(), sign);
  const int is = source.id(), id = disp.id();
  return source.tape()->record(std::move(out), {is, id}, [is, id, sign](ad::Tape<T>& t, int self) {
    const Tensor<T>& src = t.value(is);
    const Tensor<T>& d = t.value(id);
    const Tensor<T> g(t.value(self).shape(), t.grad_of(self));
    const int B = src.dim(0), C = src.dim(1), H = src.dim(2), W = src.dim(3);
    const bool want_src = t.requires_grad(is), want_d = t.requires_grad(id);
    Tensor<T> gs = want_src ? Tensor<T>(src.shape(), t.grad_buffer(is)) : Tensor<T>();
    Tensor<T> gd = want_d ? Tensor<T>(d.shape(), t.grad_buffer(id)) : Tensor<T>();
    for (int b = 0; b < B; ++b)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          const Lookup<T> l = locate(x, d.at(b, 0, y, x), sign, W);
          T dd = T(0);
          for (int c = 0; c < C; ++c) {
            const T gv = g.at(b, c, y, x);
            if (want_src) {
              gs.at(b, c, y, l.x0) += gv * (T(1) - l.frac);
              if (l.frac != T(0)) gs.at(b, c, y, l.x1) += gv * l.frac;
            }
            if (want_d && l.inside) dd += gv * (src.at(b, c, y, l.x1) - src.at(b, c, y, l.x0));
          }
          if (want_d) gd.at(b, 0, y, x) += static_cast<T>(sign) * dd;
        }
    if (want_src) t.grad_buffer(is) = std::move(gs.storage());
    if (want_d) t.grad_buffer(id) = std::move(gd.storage());
  });
}

int sampling_sign(DispTag tag) {
  switch (tag) {
    case DispTag::cl:
    case DispTag::rc: return +1;
    case DispTag::lc:
    case DispTag::cr: return -1;
    case DispTag::c: break;
  }
  throw std::invalid_argument("sampling_sign: fused map has no sampling direction");
}

template <typename T>
ImagePyramid<T> build_pyramid(const Tensor<T>& image, int levels) {
  require_image(image, "build_pyramid");
  if (levels < 1) throw std::invalid_argument("build_pyramid: levels must be >= 1");
  const int H = image.dim(2), W = image.dim(3);
  const int min_extent = std::min(H, W);
  if ((1 << (levels - 1)) > min_extent) {
    throw std::invalid_argument("build_pyramid: " + std::to_string(levels) +
                                " levels exceed log2 of min extent " + std::to_string(min_extent));
  }
  const int div = 1 << (levels - 1);
  if (H % div != 0 || W % div != 0) {
    throw std::invalid_argument("build_pyramid: extents " + std::to_string(H) + "x" +
                                std::to_string(W) + " not divisible by " + std::to_string(div));
  }
  ImagePyramid<T> pyr;
  pyr.push_back(image);
  for (int s = 1; s < levels; ++s) {
    const Tensor<T>& x = pyr.back();
    const int B = x.dim(0), C = x.dim(1), h = x.dim(2) / 2, w = x.dim(3) / 2;
    Tensor<T> y({B, C, h, w});
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c)
        for (int i = 0; i < h; ++i)
          for (int j = 0; j < w; ++j)
            y.at(b, c, i, j) = T(0.25) * (x.at(b, c, 2 * i, 2 * j) + x.at(b, c, 2 * i, 2 * j + 1) +
                                          x.at(b, c, 2 * i + 1, 2 * j) + x.at(b, c, 2 * i + 1, 2 * j + 1));
    pyr.push_back(std::move(y));
  }
  return pyr;
}

template ad::Var<float> sample_horizontal(ad::Var<float>, ad::Var<float>, int);
template ad::Var<double> sample_horizontal(ad::Var<double>, ad::Var<double>, int);
template Tensor<float> sample_horizontal(const Tensor<float>&, const Tensor<float>&, int);
template Tensor<double> sample_horizontal(const Tensor<double>&, const Tensor<double>&, int);
template ImagePyramid<float> build_pyramid(const Tensor<float>&, int);
template ImagePyramid<double> build_pyramid(const Tensor<double>&, int);

}  // namespace warp
}  // namespace trinet
