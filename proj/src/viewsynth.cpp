#include "trinet/viewsynth.hpp"

#include <algorithm>
#include <bit>
#include <limits>
#include <stdexcept>
#include <string>

#include "trinet/parallel.hpp"

namespace trinet::viewsynth {

SynthesizedViews synthesize_views(const Tensor<float>& center, const DisparityMap& d_lc,
                                  const DisparityMap& d_rc) {
  if (d_lc.tag != DispTag::lc || d_rc.tag != DispTag::rc) {
    throw std::invalid_argument("synthesize_views: expected tags (lc, rc), got (" +
                                std::string(to_string(d_lc.tag)) + ", " +
                                std::string(to_string(d_rc.tag)) + ")");
  }
  return {warp::sample_horizontal(center, d_lc.map, warp::sampling_sign(DispTag::lc)),
          warp::sample_horizontal(center, d_rc.map, warp::sampling_sign(DispTag::rc))};
}

std::vector<float> to_gray(const Tensor<float>& image) {
  require_image(image, "to_gray");
  if (image.dim(0) != 1) throw std::invalid_argument("to_gray: expected a single image");
  const int C = image.dim(1), H = image.dim(2), W = image.dim(3);
  std::vector<float> g(static_cast<std::size_t>(H) * W, 0.0f);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double s = 0.0;
      for (int c = 0; c < C; ++c) s += image.at(0, c, y, x);
      g[static_cast<std::size_t>(y) * W + x] = static_cast<float>(s / C);
    }
  return g;
}

std::vector<std::uint64_t> census(const std::vector<float>& gray, int height, int width, int window) {
  if (window < 1 || window % 2 == 0 || window > 7) {
    throw std::invalid_argument("census: window must be odd and at most 7, got " + std::to_string(window));
  }
  if (gray.size() != static_cast<std::size_t>(height) * width) {
    throw std::invalid_argument("census: image size does not match extents");
  }
  const int r = window / 2;
  std::vector<std::uint64_t> out(gray.size(), 0);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const float c = gray[static_cast<std::size_t>(y) * width + x];
      std::uint64_t bits = 0;
      int b = 0;
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          if (dx == 0 && dy == 0) continue;
          const int yy = std::clamp(y + dy, 0, height - 1);
          const int xx = std::clamp(x + dx, 0, width - 1);
          if (gray[static_cast<std::size_t>(yy) * width + xx] < c) bits |= std::uint64_t{1} << b;
          ++b;
        }
      out[static_cast<std::size_t>(y) * width + x] = bits;
    }
  return out;
}

int hamming(std::uint64_t a, std::uint64_t b) { return std::popcount(a ^ b); }

void SgmParams::validate(int width) const {
  if (max_disparity < 0) throw std::invalid_argument("sgm: max disparity must be non-negative");
  if (max_disparity >= width) {
    throw std::invalid_argument("sgm: max disparity " + std::to_string(max_disparity) +
                                " must be smaller than the image width " + std::to_string(width));
  }
  if (!(p1 > 0 && p2 > p1)) throw std::invalid_argument("sgm: penalties need P2 > P1 > 0");
  if (paths != 8 && paths != 4) throw std::invalid_argument("sgm: path count must be 4 or 8");
}

namespace {

struct Volume {
  int H, W, D;
  std::vector<std::uint32_t> v;
  std::uint32_t& at(int y, int x, int d) {
    return v[(static_cast<std::size_t>(y) * W + x) * D + d];
  }
  std::uint32_t at(int y, int x, int d) const {
    return v[(static_cast<std::size_t>(y) * W + x) * D + d];
  }
};

// Aggregates along direction (dx, dy): L(p,d) = C(p,d) + min(L(q,d),
// L(q,d+-1) + P1, min_k L(q,k) + P2) - min_k L(q,k), q = p - (dx, dy).
Volume aggregate_path(const Volume& cost, int dx, int dy, int p1, int p2) {
  const int H = cost.H, W = cost.W, D = cost.D;
  Volume L{H, W, D, std::vector<std::uint32_t>(cost.v.size())};
  const int y_begin = dy > 0 ? 0 : H - 1, y_end = dy > 0 ? H : -1, y_step = dy > 0 ? 1 : -1;
  const int x_begin = dx > 0 ? 0 : W - 1, x_end = dx > 0 ? W : -1, x_step = dx > 0 ? 1 : -1;
  for (int y = y_begin; y != y_end; y += y_step) {
    for (int x = x_begin; x != x_end; x += x_step) {
      const int qy = y - dy, qx = x - dx;
      if (qy < 0 || qy >= H || qx < 0 || qx >= W) {
        for (int d = 0; d < D; ++d) L.at(y, x, d) = cost.at(y, x, d);
        continue;
      }
      std::uint32_t best = std::numeric_limits<std::uint32_t>::max();
      for (int d = 0; d < D; ++d) best = std::min(best, L.at(qy, qx, d));
      for (int d = 0; d < D; ++d) {
        std::uint32_t m = L.at(qy, qx, d);
        if (d > 0) m = std::min(m, L.at(qy, qx, d - 1) + static_cast<std::uint32_t>(p1));
        if (d + 1 < D) m = std::min(m, L.at(qy, qx, d + 1) + static_cast<std::uint32_t>(p1));
        m = std::min(m, best + static_cast<std::uint32_t>(p2));
        L.at(y, x, d) = cost.at(y, x, d) + m - best;
      }
    }
  }
  return L;
}

}  // namespace

Tensor<float> sgm(const Tensor<float>& left, const Tensor<float>& right, const SgmParams& p) {
  require_image(left, "sgm left");
  require_image(right, "sgm right");
  if (left.shape() != right.shape()) {
    throw std::invalid_argument("sgm: left " + shape_str(left.shape()) + " and right " +
                                shape_str(right.shape()) + " differ");
  }
  const int H = left.dim(2), W = left.dim(3);
  p.validate(W);
  const int D = p.max_disparity + 1;
  const auto cl = census(to_gray(left), H, W, p.census_window);
  const auto cr = census(to_gray(right), H, W, p.census_window);
  const std::uint32_t invalid_cost = static_cast<std::uint32_t>(p.census_window * p.census_window - 1);

  Volume cost{H, W, D, std::vector<std::uint32_t>(static_cast<std::size_t>(H) * W * D)};
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int d = 0; d < D; ++d) {
        cost.at(y, x, d) = x - d >= 0
                               ? static_cast<std::uint32_t>(hamming(cl[static_cast<std::size_t>(y) * W + x],
                                                                    cr[static_cast<std::size_t>(y) * W + x - d]))
                               : invalid_cost;
      }

  const int dirs[8][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}, {1, 1}, {-1, -1}, {1, -1}, {-1, 1}};
  std::vector<Volume> paths(static_cast<std::size_t>(p.paths));
  parallel_for(paths.size(), [&](std::size_t i) {
    paths[i] = aggregate_path(cost, dirs[i][0], dirs[i][1], p.p1, p.p2);
  });
  std::vector<std::uint32_t> total(cost.v.size(), 0);
  for (const auto& L : paths)
    for (std::size_t i = 0; i < total.size(); ++i) total[i] += L.v[i];
  const Volume S{H, W, D, std::move(total)};

  Tensor<float> disp({1, 1, H, W});
  std::vector<int> winner(static_cast<std::size_t>(H) * W);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      int best_d = 0;
      for (int d = 1; d < D; ++d)
        if (S.at(y, x, d) < S.at(y, x, best_d)) best_d = d;
      winner[static_cast<std::size_t>(y) * W + x] = best_d;
      disp.at(0, 0, y, x) = static_cast<float>(best_d);
    }

  if (p.uniqueness_check) {
    for (int y = 0; y < H; ++y) {
      // Right-view winners from the same aggregated volume: right pixel xr
      // matches left pixel xr + d.
      std::vector<int> right_winner(static_cast<std::size_t>(W), 0);
      for (int xr = 0; xr < W; ++xr) {
        int best_d = 0;
        std::uint32_t best = S.at(y, xr, 0);
        for (int d = 1; d < D && xr + d < W; ++d) {
          if (S.at(y, xr + d, d) < best) {
            best = S.at(y, xr + d, d);
            best_d = d;
          }
        }
        right_winner[static_cast<std::size_t>(xr)] = best_d;
      }
      for (int x = 0; x < W; ++x) {
        const int d = winner[static_cast<std::size_t>(y) * W + x];
        const int xr = x - d;
        if (xr < 0 || std::abs(right_winner[static_cast<std::size_t>(xr)] - d) > 1) {
          disp.at(0, 0, y, x) = kInvalidDisparity;
        }
      }
    }
  }
  return disp;
}

MultiBaseline multi_baseline(const Tensor<float>& center, const DisparityMap& d_lc,
                             const DisparityMap& d_rc, const SgmParams& p) {
  MultiBaseline out;
  out.views = synthesize_views(center, d_lc, d_rc);
  out.narrow_lc = sgm(out.views.left, center, p);
  out.narrow_cr = sgm(center, out.views.right, p);
  out.wide = sgm(out.views.left, out.views.right, p);
  return out;
}

MultiBaseline multi_baseline_demo(const model::NetworkParams& params, const Tensor<float>& center,
                                  const SgmParams& p) {
  const auto outputs = model::forward(params, center);
  return multi_baseline(center, {outputs.at(DispTag::lc)[0], DispTag::lc, 0},
                        {outputs.at(DispTag::rc)[0], DispTag::rc, 0}, p);
}

}  // namespace trinet::viewsynth
