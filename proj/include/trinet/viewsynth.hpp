#pragma once

// View synthesis from a single image and a classical Semi-Global Matching
// baseline used to inspect the synthesized narrow / wide stereo pairs.

#include <cstdint>
#include <vector>

#include "trinet/model.hpp"
#include "trinet/warp.hpp"

namespace trinet::viewsynth {

struct SynthesizedViews {
  Tensor<float> left;   // I~l(x) = I^c(x - d_lc(x))
  Tensor<float> right;  // I~r(x) = I^c(x + d_rc(x))
};

/// Backward warping of the centre image; tags must be lc and rc.
SynthesizedViews synthesize_views(const Tensor<float>& center, const DisparityMap& d_lc,
                                  const DisparityMap& d_rc);

/// [1,C,H,W] -> [H*W] channel mean.
std::vector<float> to_gray(const Tensor<float>& image);

/// Census descriptor per pixel: bit b set iff the b-th neighbour (raster
/// order over the window, centre skipped) is strictly darker than the centre.
/// Neighbourhoods are clamped at the borders. Odd windows up to 7x7.
std::vector<std::uint64_t> census(const std::vector<float>& gray, int height, int width,
                                  int window = 5);

int hamming(std::uint64_t a, std::uint64_t b);

struct SgmParams {
  int max_disparity = 32;
  int census_window = 5;
  int p1 = 10;
  int p2 = 120;
  /// 8 paths (4 axis + 4 diagonal) or 4 (axis only).
  int paths = 8;
  /// Left-right consistency: pixels whose left and right winners disagree by
  /// more than 1 px are marked invalid.
  bool uniqueness_check = false;

  void validate(int width) const;
};

/// Invalid pixels (left-right check) carry this value.
inline constexpr float kInvalidDisparity = -1.0f;

/// Left-aligned integer disparity: left pixel x matches right pixel x - d.
/// Winner-take-all ties go to the smallest disparity.
Tensor<float> sgm(const Tensor<float>& left, const Tensor<float>& right, const SgmParams& p);

struct MultiBaseline {
  SynthesizedViews views;
  Tensor<float> narrow_lc;  // sgm(I~l, I^c)
  Tensor<float> narrow_cr;  // sgm(I^c, I~r)
  Tensor<float> wide;       // sgm(I~l, I~r)
};

/// Synthesizes both views from the given maps and runs SGM on the two narrow
/// pairs and the wide pair. (I~l, I^c) and (I~l, I~r) share I~l as reference.
MultiBaseline multi_baseline(const Tensor<float>& center, const DisparityMap& d_lc,
                             const DisparityMap& d_rc, const SgmParams& p);

/// multi_baseline with the network's full-resolution d_lc and d_rc.
MultiBaseline multi_baseline_demo(const model::NetworkParams& params, const Tensor<float>& center,
                                  const SgmParams& p);

}  // namespace trinet::viewsynth
