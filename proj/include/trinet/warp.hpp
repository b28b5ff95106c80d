#pragma once

#include <array>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "trinet/autodiff.hpp"

namespace trinet {

enum class View { left, center, right };

/// Disparity map identity: the view it is aligned to and the view it points at.
/// cl: aligned to center, target left. lc: aligned to left, target center.
/// cr / rc likewise on the right. `c` is the fused center map.
enum class DispTag { cl, lc, cr, rc, c };

std::string_view to_string(DispTag tag);
View aligned_view(DispTag tag);

/// A disparity map in pixel units of its pyramid level.
template <typename X>
struct Tagged {
  X map;
  DispTag tag = DispTag::c;
  int level = 0;
};

using DisparityMap = Tagged<Tensor<float>>;

/// The four network disparity pyramids, indexed by tag (cl, lc, cr, rc).
/// A pyramid is empty when its decoder was not evaluated.
template <typename X>
struct DisparityOutputs {
  std::array<std::vector<X>, 4> pyramids;

  static std::size_t index(DispTag tag) {
    if (tag == DispTag::c) throw std::invalid_argument("network outputs carry no fused map");
    return static_cast<std::size_t>(tag);
  }
  bool has(DispTag tag) const { return !pyramids[index(tag)].empty(); }
  std::vector<X>& operator[](DispTag tag) { return pyramids[index(tag)]; }
  const std::vector<X>& at(DispTag tag) const {
    const auto& p = pyramids[index(tag)];
    if (p.empty()) throw std::invalid_argument("missing disparity pyramid " + std::string(to_string(tag)));
    return p;
  }
};

constexpr int kScales = 4;

/// Four image levels: full, 1/2, 1/4 and 1/8 resolution.
template <typename T>
using ImagePyramid = std::vector<Tensor<T>>;

namespace warp {

/// output(x) = source(x + sign * disp(x)) on the same row, linear
/// interpolation, coordinates clamped to [0, W-1]. Differentiable in both
/// source and disp. Throws on negative disparities.
///
///   left  from center: sign -1 with d_lc     center from left:  sign +1 with d_cl
///   right from center: sign +1 with d_rc     center from right: sign -1 with d_cr
template <typename T>
ad::Var<T> sample_horizontal(ad::Var<T> source, ad::Var<T> disp, int sign);

/// Plain-tensor variant of sample_horizontal.
template <typename T>
Tensor<T> sample_horizontal(const Tensor<T>& source, const Tensor<T>& disp, int sign);

/// Sign to use with a map of this tag when it samples its target view:
/// +1 when the target camera lies to the left (cl, rc), -1 otherwise (lc, cr).
int sampling_sign(DispTag tag);

/// Level s+1 is the 2x2 mean of level s. Extents must stay even down to the
/// last level.
template <typename T>
ImagePyramid<T> build_pyramid(const Tensor<T>& image, int levels = kScales);

}  // namespace warp
}  // namespace trinet
