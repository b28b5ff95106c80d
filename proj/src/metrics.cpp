#include "trinet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace trinet::metrics {

namespace {

bool selected(std::span<const std::uint8_t> mask, std::size_t i) {
  return mask.empty() || mask[i] != 0;
}

void require_sizes(std::size_t a, std::size_t b, std::size_t mask, const char* what) {
  if (a != b) {
    throw std::invalid_argument(std::string(what) + ": prediction has " + std::to_string(a) +
                                " pixels, ground truth " + std::to_string(b));
  }
  if (mask != 0 && mask != a) {
    throw std::invalid_argument(std::string(what) + ": mask has " + std::to_string(mask) +
                                " entries for " + std::to_string(a) + " pixels");
  }
}

}  // namespace

void CameraModel::validate() const {
  if (!(focal > 0.0) || !(baseline > 0.0)) {
    throw std::invalid_argument("camera focal length and baseline must be positive");
  }
}

DepthMap disparity_to_depth(std::span<const float> disparity, const CameraModel& cam) {
  cam.validate();
  DepthMap out;
  out.depth.resize(disparity.size(), 0.0);
  out.valid.resize(disparity.size(), 0);
  const double fb = cam.focal_baseline();
  for (std::size_t i = 0; i < disparity.size(); ++i) {
    const double d = disparity[i];
    if (d > 0.0 && std::isfinite(d)) {
      out.depth[i] = fb / d;
      out.valid[i] = 1;
    }
  }
  return out;
}

MetricsRecord depth_metrics(std::span<const double> pred, std::span<const double> gt, double cap,
                            std::span<const std::uint8_t> mask) {
  require_sizes(pred.size(), gt.size(), mask.size(), "depth_metrics");
  if (!(cap > kMinDepth)) throw std::invalid_argument("depth_metrics: cap must exceed the depth floor");
  double abs_rel = 0, sq_rel = 0, sq = 0, sq_log = 0;
  std::size_t n = 0, d1 = 0, d2 = 0, d3 = 0;
  const double t1 = 1.25, t2 = 1.25 * 1.25, t3 = 1.25 * 1.25 * 1.25;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double g = gt[i];
    if (!selected(mask, i) || !std::isfinite(g) || g <= 0.0 || g > cap) continue;
    const double p = std::clamp(std::isnan(pred[i]) ? cap : pred[i], kMinDepth, cap);
    const double e = p - g;
    abs_rel += std::abs(e) / g;
    sq_rel += e * e / g;
    sq += e * e;
    const double le = std::log(p) - std::log(g);
    sq_log += le * le;
    const double ratio = std::max(p / g, g / p);
    d1 += ratio < t1;
    d2 += ratio < t2;
    d3 += ratio < t3;
    ++n;
  }
  if (n == 0) throw std::invalid_argument("depth_metrics: no valid pixels");
  const double dn = static_cast<double>(n);
  MetricsRecord r;
  r.abs_rel = abs_rel / dn;
  r.sq_rel = sq_rel / dn;
  r.rmse = std::sqrt(sq / dn);
  r.rmse_log = std::sqrt(sq_log / dn);
  r.delta1 = static_cast<double>(d1) / dn;
  r.delta2 = static_cast<double>(d2) / dn;
  r.delta3 = static_cast<double>(d3) / dn;
  r.d1_all = std::numeric_limits<double>::quiet_NaN();
  r.count = n;
  r.cap = cap;
  return r;
}

double d1_all(std::span<const float> pred_disp, std::span<const float> gt_disp,
              std::span<const std::uint8_t> mask) {
  require_sizes(pred_disp.size(), gt_disp.size(), mask.size(), "d1_all");
  std::size_t n = 0, bad = 0;
  for (std::size_t i = 0; i < pred_disp.size(); ++i) {
    if (!selected(mask, i)) continue;
    ++n;
    bad += std::abs(static_cast<double>(pred_disp[i]) - static_cast<double>(gt_disp[i])) > 3.0;
  }
  if (n == 0) throw std::invalid_argument("d1_all: empty mask");
  return 100.0 * static_cast<double>(bad) / static_cast<double>(n);
}

MetricsRecord evaluate_disparity(std::span<const float> pred_disp, std::span<const float> gt_disp,
                                 const CameraModel& cam, double cap,
                                 std::span<const std::uint8_t> mask) {
  require_sizes(pred_disp.size(), gt_disp.size(), mask.size(), "evaluate_disparity");
  const DepthMap pred = disparity_to_depth(pred_disp, cam);
  const DepthMap gt = disparity_to_depth(gt_disp, cam);
  std::vector<double> pred_depth = pred.depth;
  std::vector<std::uint8_t> valid(gt.valid.size());
  for (std::size_t i = 0; i < valid.size(); ++i) {
    if (!pred.valid[i]) pred_depth[i] = cap;
    valid[i] = gt.valid[i] && selected(mask, i);
  }
  MetricsRecord r = depth_metrics(pred_depth, gt.depth, cap, valid);
  r.d1_all = d1_all(pred_disp, gt_disp, valid);
  r.d1_count = static_cast<std::size_t>(std::count(valid.begin(), valid.end(), 1));
  return r;
}

MetricsRecord aggregate(std::span<const MetricsRecord> records) {
  if (records.empty()) throw std::invalid_argument("aggregate: no records");
  MetricsRecord out;
  out.cap = records.front().cap;
  double sq = 0, sq_log = 0, d1 = 0;
  for (const auto& r : records) {
    if (r.cap != out.cap) throw std::invalid_argument("aggregate: records use different caps");
    const double w = static_cast<double>(r.count);
    out.abs_rel += w * r.abs_rel;
    out.sq_rel += w * r.sq_rel;
    sq += w * r.rmse * r.rmse;
    sq_log += w * r.rmse_log * r.rmse_log;
    out.delta1 += w * r.delta1;
    out.delta2 += w * r.delta2;
    out.delta3 += w * r.delta3;
    out.count += r.count;
    if (r.d1_count > 0) {
      d1 += static_cast<double>(r.d1_count) * r.d1_all;
      out.d1_count += r.d1_count;
    }
  }
  const double n = static_cast<double>(out.count);
  if (out.count == 0) throw std::invalid_argument("aggregate: records hold no pixels");
  out.abs_rel /= n;
  out.sq_rel /= n;
  out.rmse = std::sqrt(sq / n);
  out.rmse_log = std::sqrt(sq_log / n);
  out.delta1 /= n;
  out.delta2 /= n;
  out.delta3 /= n;
  out.d1_all = out.d1_count > 0 ? d1 / static_cast<double>(out.d1_count)
                                : std::numeric_limits<double>::quiet_NaN();
  return out;
}

std::string csv_header() {
  return "abs_rel,sq_rel,rmse,rmse_log,delta1,delta2,delta3,d1_all,count,d1_count,cap";
}

std::string csv_row(const MetricsRecord& r) {
  std::ostringstream os;
  os << std::setprecision(10) << r.abs_rel << ',' << r.sq_rel << ',' << r.rmse << ',' << r.rmse_log
     << ',' << r.delta1 << ',' << r.delta2 << ',' << r.delta3 << ',' << r.d1_all << ',' << r.count
     << ',' << r.d1_count << ',' << r.cap;
  return os.str();
}

}  // namespace trinet::metrics
