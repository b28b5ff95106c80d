#include "trinet/fusion.hpp"

#include <stdexcept>
#include <string>
#include <vector>

namespace trinet::fusion {

namespace {

std::vector<double> column_weights(int W, const OmegaFn& w) {
  std::vector<double> out(static_cast<std::size_t>(W));
  for (int x = 0; x < W; ++x) {
    const double j = W > 1 ? static_cast<double>(x) / static_cast<double>(W - 1) : 0.0;
    out[static_cast<std::size_t>(x)] = w(j);
  }
  return out;
}

// out = w * a + (1 - w) * b per column.
Tensor<float> blend(const Tensor<float>& a, const Tensor<float>& b, const std::vector<double>& w) {
  Tensor<float> out(a.shape());
  const int B = a.dim(0), C = a.dim(1), H = a.dim(2), W = a.dim(3);
  for (int n = 0; n < B; ++n)
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          const double wx = w[static_cast<std::size_t>(x)];
          // Exact selection at the band weights keeps the border bands bit-equal.
          float v;
          if (wx == 1.0) v = a.at(n, c, y, x);
          else if (wx == 0.0) v = b.at(n, c, y, x);
          else v = static_cast<float>(wx * a.at(n, c, y, x) + (1.0 - wx) * b.at(n, c, y, x));
          out.at(n, c, y, x) = v;
        }
  return out;
}

void require_pair(const Tensor<float>& a, const Tensor<float>& b, const char* what) {
  require_image(a, what);
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(what) + ": shape " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
}

}  // namespace

double omega(double j) {
  if (!(j >= 0.0 && j <= 1.0)) {
    throw std::invalid_argument("omega: normalized column " + std::to_string(j) + " outside [0,1]");
  }
  if (j <= 0.05) return 0.0;
  if (j > 0.95) return 1.0;
  return 0.5;
}

DisparityMap fuse(const DisparityMap& d_cl, const DisparityMap& d_cr, const OmegaFn& w) {
  if (d_cl.tag != DispTag::cl || d_cr.tag != DispTag::cr) {
    throw std::invalid_argument("fuse: expected tags (cl, cr), got (" +
                                std::string(to_string(d_cl.tag)) + ", " +
                                std::string(to_string(d_cr.tag)) + ")");
  }
  require_pair(d_cl.map, d_cr.map, "fuse");
  const auto weights = column_weights(d_cl.map.dim(3), w);
  return {blend(d_cr.map, d_cl.map, weights), DispTag::c, d_cl.level};
}

DisparityMap predict(const model::NetworkParams& params, const Tensor<float>& image,
                     const OmegaFn& w) {
  const auto out = model::forward(params, image);
  return fuse({out.at(DispTag::cl)[0], DispTag::cl, 0}, {out.at(DispTag::cr)[0], DispTag::cr, 0}, w);
}

PostProcessed post_process(const model::NetworkParams& params, const Tensor<float>& image,
                           const OmegaFn& w) {
  const auto direct = model::forward(params, image);
  const auto mirrored = model::forward(params, flip_horizontal(image));
  const Tensor<float>& d_cl = direct.at(DispTag::cl)[0];
  const Tensor<float>& d_cr = direct.at(DispTag::cr)[0];
  const Tensor<float> hat_cl = flip_horizontal(mirrored.at(DispTag::cl)[0]);
  const Tensor<float> hat_cr = flip_horizontal(mirrored.at(DispTag::cr)[0]);

  const auto weights = column_weights(d_cl.dim(3), w);
  PostProcessed pp;
  pp.d_cr_pp = {blend(d_cr, hat_cr, weights), DispTag::cr, 0};
  pp.d_cl_pp = {blend(hat_cl, d_cl, weights), DispTag::cl, 0};
  pp.d_c = fuse(pp.d_cl_pp, pp.d_cr_pp, w);
  return pp;
}

}  // namespace trinet::fusion
