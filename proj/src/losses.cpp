#include "trinet/losses.hpp"

#include <numeric>
#include <stdexcept>

namespace trinet::loss {

using ad::Var;

void LossWeights::validate() const {
  if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("loss alpha must lie in [0,1]");
  if (beta_ap < 0.0 || beta_ds < 0.0 || beta_lcr < 0.0 || beta_cc < 0.0) {
    throw std::invalid_argument("loss weights must be non-negative");
  }
}

namespace {
double total_of(const std::array<double, kScales>& a) {
  return std::accumulate(a.begin(), a.end(), 0.0);
}
double attenuation(const LossWeights& w, int s) {
  return w.attenuate_smoothness ? 1.0 / static_cast<double>(1 << s) : 1.0;
}
}  // namespace

double LossTerms::appearance_sum() const { return total_of(appearance); }
double LossTerms::smoothness_sum() const { return total_of(smoothness); }
double LossTerms::consistency_sum() const { return total_of(consistency); }
double LossTerms::center_sum() const { return total_of(center); }

double weighted_total(const LossTerms& t, const LossWeights& w) {
  double total = 0.0;
  for (int s = 0; s < kScales; ++s) {
    const auto i = static_cast<std::size_t>(s);
    total += w.beta_ap * t.appearance[i] + w.beta_ds * attenuation(w, s) * t.smoothness[i] +
             w.beta_lcr * t.consistency[i];
    if (w.center_consistency) total += w.beta_cc * t.center[i];
  }
  return total;
}

template <typename T>
Var<T> ssim_map(Var<T> a, Var<T> b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("ssim_map: shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
  const T c1 = static_cast<T>(kSsimC1), c2 = static_cast<T>(kSsimC2);
  Var<T> mu_a = ad::box_mean3(a);
  Var<T> mu_b = ad::box_mean3(b);
  Var<T> mu_ab = mu_a * mu_b;
  Var<T> mu_aa = ad::square(mu_a);
  Var<T> mu_bb = ad::square(mu_b);
  Var<T> sigma_a = ad::box_mean3(ad::square(a)) - mu_aa;
  Var<T> sigma_b = ad::box_mean3(ad::square(b)) - mu_bb;
  Var<T> sigma_ab = ad::box_mean3(a * b) - mu_ab;
  Var<T> num = (T(2) * mu_ab + c1) * (T(2) * sigma_ab + c2);
  Var<T> den = (mu_aa + mu_bb + c1) * (sigma_a + sigma_b + c2);
  return num / den;
}

template <typename T>
Var<T> appearance_loss(Var<T> real, Var<T> warped, double alpha) {
  if (real.shape() != warped.shape()) {
    throw std::invalid_argument("appearance_loss: shape mismatch " + shape_str(real.shape()) +
                                " vs " + shape_str(warped.shape()));
  }
  const T a = static_cast<T>(alpha);
  Var<T> dssim = ad::mean((T(1) - ssim_map(real, warped)) * T(0.5));
  Var<T> l1 = ad::mean(ad::abs(real - warped));
  return a * dssim + (T(1) - a) * l1;
}

template <typename T>
Var<T> smoothness_loss(Var<T> disp, Var<T> image) {
  const Shape& ds = disp.shape();
  const Shape& is = image.shape();
  if (ds.size() != 4 || is.size() != 4 || ds[0] != is[0] || ds[2] != is[2] || ds[3] != is[3]) {
    throw std::invalid_argument("smoothness_loss: disparity " + shape_str(ds) +
                                " and image " + shape_str(is) + " differ in extent");
  }
  Var<T> wx = ad::exp(-ad::channel_mean(ad::abs(ad::diff_x(image))));
  Var<T> wy = ad::exp(-ad::channel_mean(ad::abs(ad::diff_y(image))));
  Var<T> sx = ad::mean(ad::abs(ad::diff_x(disp)) * wx);
  Var<T> sy = ad::mean(ad::abs(ad::diff_y(disp)) * wy);
  return sx + sy;
}

template <typename T>
Var<T> lr_consistency_loss(Var<T> d_ref, Var<T> d_tgt, int sign) {
  if (d_ref.shape() != d_tgt.shape()) {
    throw std::invalid_argument("lr_consistency_loss: shape mismatch " + shape_str(d_ref.shape()) +
                                " vs " + shape_str(d_tgt.shape()));
  }
  Var<T> projected = warp::sample_horizontal(d_tgt, d_ref, sign);
  return ad::mean(ad::abs(d_ref - projected));
}

template <typename T>
Var<T> center_consistency_loss(const Tagged<Var<T>>& d_cl, const Tagged<Var<T>>& d_cr) {
  if (d_cl.tag != DispTag::cl || d_cr.tag != DispTag::cr) {
    throw std::invalid_argument("center_consistency_loss: expected tags (cl, cr), got (" +
                                std::string(to_string(d_cl.tag)) + ", " +
                                std::string(to_string(d_cr.tag)) + ")");
  }
  if (d_cl.map.shape() != d_cr.map.shape()) {
    throw std::invalid_argument("center_consistency_loss: shape mismatch");
  }
  return ad::mean(ad::abs(d_cl.map - d_cr.map));
}

namespace {

// One phase: `center_tag` is aligned to the centre and points at the side
// view; `side_tag` is aligned to the side view and points at the centre.
template <typename T>
LossBreakdown<T> phase_loss(ad::Tape<T>& tape, const ImagePyramid<T>& center,
                            const ImagePyramid<T>& side, const DisparityOutputs<Var<T>>& outputs,
                            const LossWeights& w, DispTag center_tag, DispTag side_tag) {
  w.validate();
  const auto& d_center = outputs.at(center_tag);
  const auto& d_side = outputs.at(side_tag);
  if (center.size() < kScales || side.size() < kScales || d_center.size() < kScales ||
      d_side.size() < kScales) {
    throw std::invalid_argument("phase loss: every input needs " + std::to_string(kScales) +
                                " pyramid levels");
  }
  const bool with_cc = w.center_consistency;
  const DispTag other_tag = center_tag == DispTag::cl ? DispTag::cr : DispTag::cl;
  if (with_cc && !outputs.has(other_tag)) {
    throw std::invalid_argument("phase loss: center consistency needs both cl and cr outputs");
  }
  const int sign_center = warp::sampling_sign(center_tag);
  const int sign_side = warp::sampling_sign(side_tag);

  LossBreakdown<T> out;
  Var<T> total;
  for (int s = 0; s < kScales; ++s) {
    const auto i = static_cast<std::size_t>(s);
    Var<T> img_c = tape.constant(center[i]);
    Var<T> img_s = tape.constant(side[i]);
    Var<T> dc = d_center[i];
    Var<T> dsd = d_side[i];

    Var<T> rec_c = warp::sample_horizontal(img_s, dc, sign_center);
    Var<T> rec_s = warp::sample_horizontal(img_c, dsd, sign_side);
    Var<T> ap = appearance_loss(img_c, rec_c, w.alpha) + appearance_loss(img_s, rec_s, w.alpha);
    Var<T> ds = smoothness_loss(dc, img_c) + smoothness_loss(dsd, img_s);
    Var<T> lr = lr_consistency_loss(dc, dsd, sign_center);
    // Both terms are linear in the disparity scale, so measuring disparity as
    // a fraction of the level width is a constant factor.
    const T unit = w.width_normalized ? T(1) / static_cast<T>(img_c.shape()[3]) : T(1);
    if (w.width_normalized) {
      ds = unit * ds;
      lr = unit * lr;
    }

    Var<T> scale_total = static_cast<T>(w.beta_ap) * ap +
                         static_cast<T>(w.beta_ds * attenuation(w, s)) * ds +
                         static_cast<T>(w.beta_lcr) * lr;
    out.terms.appearance[i] = ap.item();
    out.terms.smoothness[i] = ds.item();
    out.terms.consistency[i] = lr.item();
    if (with_cc) {
      Tagged<Var<T>> a{dc, center_tag, s};
      Tagged<Var<T>> b{outputs.at(other_tag)[i], other_tag, s};
      Var<T> cc = center_tag == DispTag::cl ? center_consistency_loss(a, b)
                                            : center_consistency_loss(b, a);
      if (w.width_normalized) cc = unit * cc;
      out.terms.center[i] = cc.item();
      scale_total = scale_total + static_cast<T>(w.beta_cc) * cc;
    }
    total = s == 0 ? scale_total : total + scale_total;
  }
  out.total = total;
  out.terms.total = total.item();
  return out;
}

}  // namespace

template <typename T>
LossBreakdown<T> phase1_loss(ad::Tape<T>& tape, const ImagePyramid<T>& left,
                             const ImagePyramid<T>& center,
                             const DisparityOutputs<Var<T>>& outputs, const LossWeights& w) {
  return phase_loss(tape, center, left, outputs, w, DispTag::cl, DispTag::lc);
}

template <typename T>
LossBreakdown<T> phase2_loss(ad::Tape<T>& tape, const ImagePyramid<T>& center,
                             const ImagePyramid<T>& right,
                             const DisparityOutputs<Var<T>>& outputs, const LossWeights& w) {
  return phase_loss(tape, center, right, outputs, w, DispTag::cr, DispTag::rc);
}

#define TRINET_INSTANTIATE(T)                                                                   \
  template Var<T> ssim_map(Var<T>, Var<T>);                                                     \
  template Var<T> appearance_loss(Var<T>, Var<T>, double);                                      \
  template Var<T> smoothness_loss(Var<T>, Var<T>);                                              \
  template Var<T> lr_consistency_loss(Var<T>, Var<T>, int);                                     \
  template Var<T> center_consistency_loss(const Tagged<Var<T>>&, const Tagged<Var<T>>&);        \
  template LossBreakdown<T> phase1_loss(ad::Tape<T>&, const ImagePyramid<T>&,                   \
                                        const ImagePyramid<T>&, const DisparityOutputs<Var<T>>&, \
                                        const LossWeights&);                                    \
  template LossBreakdown<T> phase2_loss(ad::Tape<T>&, const ImagePyramid<T>&,                   \
                                        const ImagePyramid<T>&, const DisparityOutputs<Var<T>>&, \
                                        const LossWeights&);

TRINET_INSTANTIATE(float)
TRINET_INSTANTIATE(double)

#undef TRINET_INSTANTIATE

}  // namespace trinet::loss
