#include <cmath>
#include <limits>
#include <vector>

#include "doctest.h"
#include "test_util.hpp"
#include "trinet/metrics.hpp"

using namespace trinet;
using namespace trinet::metrics;

TEST_CASE("hand-computed depth record") {
  const std::vector<double> gt{10, 20}, pred{12, 25};
  const MetricsRecord r = depth_metrics(pred, gt, 80.0);
  CHECK(std::abs(r.abs_rel - 0.225) < 1e-12);
  CHECK(std::abs(r.sq_rel - 0.825) < 1e-12);
  CHECK(std::abs(r.rmse - std::sqrt(14.5)) < 1e-12);
  const double l1 = std::log(1.2), l2 = std::log(1.25);
  CHECK(std::abs(r.rmse_log - std::sqrt((l1 * l1 + l2 * l2) / 2)) < 1e-12);
  CHECK(r.delta1 == 0.5);
  CHECK(r.delta2 == 1.0);
  CHECK(r.delta3 == 1.0);
  CHECK(r.count == 2);
  CHECK(std::isnan(r.d1_all));

  const MetricsRecord capped = depth_metrics(pred, gt, 15.0);
  CHECK(capped.count == 1);
  CHECK(std::abs(capped.abs_rel - 0.2) < 1e-12);
  CHECK(capped.cap == 15.0);
}

TEST_CASE("perfect prediction") {
  const std::vector<double> gt{3, 7, 11, 40};
  const MetricsRecord r = depth_metrics(gt, gt, 80.0);
  CHECK(r.abs_rel == 0.0);
  CHECK(r.sq_rel == 0.0);
  CHECK(r.rmse == 0.0);
  CHECK(r.rmse_log == 0.0);
  CHECK(r.delta1 == 1.0);
}

TEST_CASE("masking and empty sets") {
  const std::vector<double> gt{10, 0, -1, std::numeric_limits<double>::quiet_NaN(), 90};
  const std::vector<double> pred{10, 5, 5, 5, 5};
  CHECK(depth_metrics(pred, gt, 80.0).count == 1);
  const std::vector<std::uint8_t> none{0, 1, 1, 1, 1};
  CHECK_THROWS_AS(depth_metrics(pred, gt, 80.0, none), std::invalid_argument);
  CHECK_THROWS_AS(depth_metrics(std::vector<double>{1}, std::vector<double>{1, 2}, 80.0), std::invalid_argument);
}

TEST_CASE("predictions are clamped to [1e-3, cap]") {
  const std::vector<double> gt{10, 10};
  const MetricsRecord far = depth_metrics(std::vector<double>{500, 500}, gt, 80.0);
  CHECK(std::abs(far.abs_rel - 7.0) < 1e-12);
  const MetricsRecord near = depth_metrics(std::vector<double>{0, -3}, gt, 80.0);
  CHECK(std::isfinite(near.rmse_log));
  CHECK(std::abs(near.rmse_log - std::abs(std::log(kMinDepth / 10.0))) < 1e-12);
}

TEST_CASE("delta monotonicity and scale behaviour") {
  const auto g = testing::random_tensor<double>({1, 1, 8, 8}, 3, 1.0, 60.0);
  const auto p = testing::random_tensor<double>({1, 1, 8, 8}, 4, 1.0, 60.0);
  const MetricsRecord a = depth_metrics(p.data(), g.data(), 1e9);
  CHECK(a.delta1 <= a.delta2);
  CHECK(a.delta2 <= a.delta3);

  std::vector<double> g2(g.data().begin(), g.data().end()), p2(p.data().begin(), p.data().end());
  for (auto& v : g2) v *= 2.5;
  for (auto& v : p2) v *= 2.5;
  const MetricsRecord b = depth_metrics(p2, g2, 1e9);
  CHECK(b.abs_rel == doctest::Approx(a.abs_rel).epsilon(1e-12));
  CHECK(b.rmse_log == doctest::Approx(a.rmse_log).epsilon(1e-12));
  CHECK(b.rmse == doctest::Approx(2.5 * a.rmse).epsilon(1e-12));
  CHECK(b.delta1 == a.delta1);
}

TEST_CASE("d1_all uses a strict 3 px threshold") {
  const std::vector<float> gt{10, 20, 30, 40};
  CHECK(d1_all(gt, gt) == 0.0);
  std::vector<float> plus3 = gt, plus4 = gt;
  for (auto& v : plus3) v += 3.0f;
  for (auto& v : plus4) v += 4.0f;
  CHECK(d1_all(plus3, gt) == 0.0);
  CHECK(d1_all(plus4, gt) == 100.0);
  const std::vector<float> mixed{10, 24, 30, 44};
  CHECK(d1_all(mixed, gt) == 50.0);
  // Invariant under a common offset.
  std::vector<float> m2 = mixed, g2 = gt;
  for (auto& v : m2) v += 7.0f;
  for (auto& v : g2) v += 7.0f;
  CHECK(d1_all(m2, g2) == 50.0);
  CHECK_THROWS_AS(d1_all(gt, gt, std::vector<std::uint8_t>(4, 0)), std::invalid_argument);
}

TEST_CASE("disparity to depth") {
  CameraModel cam{100.0, 1.0};
  const DepthMap d = disparity_to_depth(std::vector<float>{4, 8, 0, -1}, cam);
  CHECK(d.depth[0] == 25.0);
  CHECK(d.depth[1] == 12.5);
  CHECK(d.valid == std::vector<std::uint8_t>{1, 1, 0, 0});
  CHECK(d.depth[2] == 0.0);
  CHECK_THROWS_AS((CameraModel{0.0, 1.0}.validate()), std::invalid_argument);
}

TEST_CASE("evaluate_disparity combines depth metrics and d1") {
  const CameraModel cam{100.0, 1.0};
  const std::vector<float> gt{10, 5, 4, 0};     // depths 10, 20, 25, masked
  const std::vector<float> pred{10, 4, 0, 3};  // depths 10, 25, cap
  const MetricsRecord r = evaluate_disparity(pred, gt, cam, 80.0);
  CHECK(r.count == 3);
  CHECK(r.d1_count == 3);
  CHECK(r.d1_all == doctest::Approx(100.0 / 3.0));  // |0-4| > 3
  const double expected_abs_rel = (0.0 + 5.0 / 20.0 + 55.0 / 25.0) / 3.0;
  CHECK(r.abs_rel == doctest::Approx(expected_abs_rel).epsilon(1e-12));
}

TEST_CASE("aggregate is count weighted") {
  const std::vector<double> g1{10, 20, 30}, p1{11, 18, 33};
  const std::vector<double> g2{5, 7}, p2{6, 7};
  std::vector<double> g = g1, p = p1;
  g.insert(g.end(), g2.begin(), g2.end());
  p.insert(p.end(), p2.begin(), p2.end());
  MetricsRecord a = depth_metrics(p1, g1, 80), b = depth_metrics(p2, g2, 80);
  a.d1_all = 0.0;
  a.d1_count = 3;
  b.d1_all = 50.0;
  b.d1_count = 2;
  const std::vector<MetricsRecord> both{a, b};
  const MetricsRecord agg = aggregate(both);
  const MetricsRecord whole = depth_metrics(p, g, 80);
  CHECK(agg.count == 5);
  CHECK(agg.abs_rel == doctest::Approx(whole.abs_rel).epsilon(1e-12));
  CHECK(agg.sq_rel == doctest::Approx(whole.sq_rel).epsilon(1e-12));
  CHECK(agg.rmse == doctest::Approx(whole.rmse).epsilon(1e-12));
  CHECK(agg.rmse_log == doctest::Approx(whole.rmse_log).epsilon(1e-12));
  CHECK(agg.delta1 == doctest::Approx(whole.delta1).epsilon(1e-12));
  CHECK(agg.d1_all == doctest::Approx(20.0));

  MetricsRecord c = b;
  c.cap = 50.0;
  const std::vector<MetricsRecord> mixed{a, c};
  CHECK_THROWS_AS(aggregate(mixed), std::invalid_argument);
}

TEST_CASE("csv layout") {
  CHECK(csv_header() == "abs_rel,sq_rel,rmse,rmse_log,delta1,delta2,delta3,d1_all,count,d1_count,cap");
  MetricsRecord r;
  r.abs_rel = 0.5;
  r.count = 3;
  const std::string row = csv_row(r);
  CHECK(row.rfind("0.5,", 0) == 0);
  CHECK(std::count(row.begin(), row.end(), ',') == 10);
}
