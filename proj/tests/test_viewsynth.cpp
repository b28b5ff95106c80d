#include <cmath>
#include <map>

#include "doctest.h"
#include "test_util.hpp"
#include "trinet/synthdata.hpp"
#include "trinet/viewsynth.hpp"

using namespace trinet;
using namespace trinet::viewsynth;

namespace {

// Per-pixel random texture: unambiguous for census matching.
Tensor<float> texture(int H, int W, std::uint64_t seed) {
  return testing::random_tensor<float>({1, 3, H, W}, seed, 0.0, 1.0);
}

// out(x) = img(x + D): as the right view of `img`, left pixel x matches
// right x - D.
Tensor<float> shift_left_by(const Tensor<float>& img, int D) {
  Tensor<float> out(img.shape());
  const int W = img.dim(3);
  for (int c = 0; c < img.dim(1); ++c)
    for (int y = 0; y < img.dim(2); ++y)
      for (int x = 0; x < W; ++x) out.at(0, c, y, x) = img.at(0, c, y, std::min(W - 1, x + D));
  return out;
}

double fraction_within(const Tensor<float>& disp, double target, int margin_left, int margin) {
  const int H = disp.dim(2), W = disp.dim(3);
  int ok = 0, n = 0;
  for (int y = margin; y < H - margin; ++y)
    for (int x = margin_left; x < W - margin; ++x) {
      ok += std::abs(disp.at(0, 0, y, x) - target) <= 1.0;
      ++n;
    }
  return static_cast<double>(ok) / n;
}

DisparityMap constant_map(int H, int W, float d, DispTag tag) {
  return {Tensor<float>({1, 1, H, W}, d), tag, 0};
}

}  // namespace

TEST_CASE("zero and constant disparity synthesis") {
  const Tensor<float> ic = texture(8, 20, 1);
  const auto zero = synthesize_views(ic, constant_map(8, 20, 0.0f, DispTag::lc), constant_map(8, 20, 0.0f, DispTag::rc));
  CHECK(zero.left == ic);
  CHECK(zero.right == ic);

  const auto shifted = synthesize_views(ic, constant_map(8, 20, 3.0f, DispTag::lc), constant_map(8, 20, 2.0f, DispTag::rc));
  for (int x = 0; x < 20; ++x) {
    CHECK(shifted.left.at(0, 1, 4, x) == ic.at(0, 1, 4, std::max(0, x - 3)));
    CHECK(shifted.right.at(0, 1, 4, x) == ic.at(0, 1, 4, std::min(19, x + 2)));
  }
  CHECK_THROWS_AS(synthesize_views(ic, constant_map(8, 20, 1.0f, DispTag::cl), constant_map(8, 20, 1.0f, DispTag::rc)),
                  std::invalid_argument);
}

TEST_CASE("ground-truth synthesis reproduces the true side views") {
  synth::SceneSpec spec;
  for (std::uint64_t seed : {2u, 5u}) {
    const auto s = synth::generate_scene(spec, seed);
    const auto views = synthesize_views(s.ic, {s.gt_lc, DispTag::lc, 0}, {s.gt_rc, DispTag::rc, 0});
    const int W = spec.width;
    int checked = 0;
    for (int y = 0; y < spec.height; ++y)
      for (int x = 0; x < W; ++x) {
        // A left pixel is visible in the centre view when the centre pixel it
        // maps to carries the same disparity.
        const int dl = static_cast<int>(s.gt_lc.at(0, 0, y, x));
        if (x - dl >= 0 && s.gt_cl.at(0, 0, y, x - dl) == dl) {
          for (int c = 0; c < 3; ++c) CHECK(views.left.at(0, c, y, x) == s.il.at(0, c, y, x));
          ++checked;
        }
        const int dr = static_cast<int>(s.gt_rc.at(0, 0, y, x));
        if (x + dr < W && s.gt_cr.at(0, 0, y, x + dr) == dr)
          for (int c = 0; c < 3; ++c) CHECK(views.right.at(0, c, y, x) == s.ir.at(0, c, y, x));
      }
    CHECK(checked > W * spec.height / 2);
  }
}

TEST_CASE("census examples") {
  CHECK(census(std::vector<float>(25, 0.3f), 5, 5) == std::vector<std::uint64_t>(25, 0));
  const std::vector<float> patch{1, 2, 3, 4, 5, 6, 7, 8, 9};
  const auto bits = census(patch, 3, 3, 3);
  CHECK(std::popcount(bits[4]) == 4);
  CHECK(bits[4] == 0b1111u);  // the four darker neighbours come first in raster order
  CHECK(hamming(bits[4], bits[4]) == 0);
  CHECK(hamming(0b1011, 0b0110) == 3);
  CHECK_THROWS_AS(census(patch, 3, 3, 4), std::invalid_argument);
  CHECK_THROWS_AS(census(patch, 3, 3, 9), std::invalid_argument);
}

TEST_CASE("sgm parameter validation") {
  SgmParams p;
  CHECK_NOTHROW(p.validate(64));
  p.max_disparity = 64;
  CHECK_THROWS_AS(p.validate(64), std::invalid_argument);
  p = SgmParams{};
  p.p2 = p.p1;
  CHECK_THROWS_AS(p.validate(64), std::invalid_argument);
  const Tensor<float> img = texture(8, 16, 1);
  SgmParams wide;
  wide.max_disparity = 16;
  CHECK_THROWS_AS(sgm(img, img, wide), std::invalid_argument);
}

TEST_CASE("identical images give zero disparity") {
  const Tensor<float> img = texture(16, 48, 3);
  SgmParams p;
  p.max_disparity = 12;
  const Tensor<float> d = sgm(img, img, p);
  for (float v : d.data()) CHECK(v == 0.0f);
  // A constant image has all-equal costs: the tie goes to disparity 0.
  const Tensor<float> flat({1, 3, 8, 24}, 0.4f);
  const Tensor<float> flat_d = sgm(flat, flat, p);
  for (float v : flat_d.data()) CHECK(v == 0.0f);
}

TEST_CASE("constant shift is recovered") {
  const Tensor<float> left = texture(32, 96, 4);
  for (int D : {3, 7, 15}) {
    SgmParams p;
    p.max_disparity = 24;
    const Tensor<float> est = sgm(left, shift_left_by(left, D), p);
    CHECK(fraction_within(est, D, D + 2, 2) >= 0.95);
    for (float v : est.data()) {
      CHECK(v >= 0.0f);
      CHECK(v <= 24.0f);
    }
  }
}

TEST_CASE("census cost is invariant to monotone rescaling") {
  const Tensor<float> left = texture(16, 48, 6);
  const Tensor<float> right = shift_left_by(left, 4);
  Tensor<float> l2 = left, r2 = right;
  for (auto& v : l2.data()) v *= 0.5f;
  for (auto& v : r2.data()) v *= 0.5f;
  SgmParams p;
  p.max_disparity = 10;
  CHECK(sgm(left, right, p) == sgm(l2, r2, p));
}

TEST_CASE("left-right check invalidates occlusions only") {
  const Tensor<float> base = texture(24, 64, 8);
  const Tensor<float> right = shift_left_by(base, 5);
  SgmParams p;
  p.max_disparity = 12;
  p.uniqueness_check = true;
  const Tensor<float> d = sgm(base, right, p);
  int invalid_interior = 0;
  for (int y = 2; y < 22; ++y)
    for (int x = 8; x < 60; ++x) invalid_interior += d.at(0, 0, y, x) == kInvalidDisparity;
  CHECK(invalid_interior < 20 * 52 / 20);
  // Left border pixels have no match in the other view.
  int invalid_border = 0;
  for (int y = 0; y < 24; ++y)
    for (int x = 0; x < 3; ++x) invalid_border += d.at(0, 0, y, x) == kInvalidDisparity;
  CHECK(invalid_border > 24);
}

TEST_CASE("two-plane synthetic scene: modal disparity per plane") {
  synth::SceneLayout layout;
  synth::Layer bg;
  bg.y0 = 0;
  bg.y1 = 64;
  bg.d_ref = 4;
  bg.texture_seed = 11;
  bg.period = 3.0;
  bg.contrast = 0.4;
  synth::Layer fg = bg;
  fg.x0 = 40;
  fg.x1 = 90;
  fg.y0 = 12;
  fg.y1 = 52;
  fg.d_ref = 11;
  fg.texture_seed = 12;
  layout.layers = {bg, fg};
  const auto s = synth::render(layout, synth::SceneSpec{}, 0);
  SgmParams p;
  p.max_disparity = 20;
  const Tensor<float> d = sgm(s.il, s.ic, p);
  std::map<int, std::map<int, int>> hist;
  for (int y = 4; y < 60; ++y)
    for (int x = 24; x < 124; ++x) {
      const int truth = static_cast<int>(s.gt_lc.at(0, 0, y, x));
      hist[truth][static_cast<int>(d.at(0, 0, y, x))]++;
    }
  for (int plane : {4, 11}) {
    const auto& h = hist.at(plane);
    const auto mode = std::max_element(h.begin(), h.end(), [](auto a, auto b) { return a.second < b.second; });
    CHECK(mode->first == plane);
  }
}

TEST_CASE("narrow and wide baselines with injected constant maps") {
  const int H = 32, W = 128, d = 6;
  const Tensor<float> ic = texture(H, W, 21);
  SgmParams p;
  p.max_disparity = 20;
  const MultiBaseline mb =
      multi_baseline(ic, constant_map(H, W, float(d), DispTag::lc), constant_map(H, W, float(d), DispTag::rc), p);
  CHECK(fraction_within(mb.narrow_lc, d, d + 2, 2) >= 0.95);
  CHECK(fraction_within(mb.narrow_cr, d, d + 2, 2) >= 0.95);
  CHECK(fraction_within(mb.wide, 2 * d, 3 * d + 2, 2) >= 0.95);
}

TEST_CASE("multi_baseline_demo runs on network outputs") {
  model::NetworkConfig c;
  c.height = 16;
  c.width = 32;
  c.encoder_channels = {4, 6, 8, 8};
  c.decoder_channels = {6, 4, 4, 4};
  const auto params = model::init_network(c);
  SgmParams p;
  p.max_disparity = 8;
  const MultiBaseline mb = multi_baseline_demo(params, texture(16, 32, 2), p);
  CHECK(mb.views.left.shape() == Shape{1, 3, 16, 32});
  CHECK(mb.wide.shape() == Shape{1, 1, 16, 32});
}
