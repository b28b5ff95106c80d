#include "trinet/gradsuite.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <random>
#include <stdexcept>

#include "trinet/losses.hpp"
#include "trinet/warp.hpp"

namespace trinet::gradsuite {

using ad::Tape;
using ad::Var;

namespace {

// Values in [lo, hi) whose horizontal and vertical neighbours (same image,
// same channel) differ by at least `margin`: |.| terms of neighbour
// differences stay away from their knot.
Tensor<double> separated(Shape shape, std::uint64_t seed, double lo, double hi, double margin) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<double> t(std::move(shape));
  for (int b = 0; b < t.dim(0); ++b)
    for (int c = 0; c < t.dim(1); ++c)
      for (int y = 0; y < t.dim(2); ++y)
        for (int x = 0; x < t.dim(3); ++x) {
          double v;
          do {
            v = u(rng);
          } while ((x > 0 && std::abs(v - t.at(b, c, y, x - 1)) < margin) ||
                   (y > 0 && std::abs(v - t.at(b, c, y - 1, x)) < margin));
          t.at(b, c, y, x) = v;
        }
  return t;
}

// Disparities in [lo_int, hi_int] + [0.2, 0.8]: bilinear lookups stay at
// least 0.2 px from the integer knots, and neighbours differ by >= 0.05.
Tensor<double> off_knot(Shape shape, std::uint64_t seed, int lo_int, int hi_int) {
  Tensor<double> t = separated(std::move(shape), seed, 0.0, 1.0, 0.05);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_int_distribution<int> whole(lo_int, hi_int);
  for (int b = 0; b < t.dim(0); ++b)
    for (int y = 0; y < t.dim(2); ++y)
      for (int x = 0; x < t.dim(3); ++x) {
        // Neighbours that differ in their integer part are >= 0.4 apart.
        const int k = whole(rng);
        double& v = t.at(b, 0, y, x);
        v = k + 0.2 + 0.6 * v;
      }
  return t;
}

template <typename T>
Tensor<T> as(const Tensor<double>& t) {
  if constexpr (std::is_same_v<T, double>) {
    return t;
  } else {
    return t.template cast<T>();
  }
}

template <typename T, typename Fn>
double evaluate(const Fn& fn, const Tensor<double>& x) {
  Tape<T> tape;
  Var<T> out = fn(tape, tape.constant(as<T>(x)));
  if (out.numel() != 1) throw std::logic_error("gradient suite: case must return a scalar");
  return static_cast<double>(out.item());
}

class Suite {
 public:
  Suite(int precision, std::uint64_t seed) : precision_(precision), seed_(seed) {}

  // Rounds case data through the working precision so the analytic pass and
  // the double reference see the same point.
  Tensor<double> prep(Tensor<double> t) const {
    if (precision_ == 32) t = t.cast<float>().cast<double>();
    return t;
  }
  Tensor<double> image(Shape shape, double lo, double hi) {
    return prep(separated(std::move(shape), next(), lo, hi, 0.05));
  }
  Tensor<double> disparity(Shape shape, int lo_int, int hi_int) {
    return prep(gradsuite::off_knot(std::move(shape), next(), lo_int, hi_int));
  }

  // `fn` is callable as fn(Tape<T>&, Var<T>) for T in {float, double}.
  template <typename Fn>
  void check(const std::string& name, const Fn& fn, const Tensor<double>& x, double eps) {
    const Tensor<double> analytic = precision_ == 64 ? analytic_grad<double>(fn, x) : analytic_grad<float>(fn, x);
    // Derivatives that cancel to far below the tensor's largest one are
    // measured against that floor instead of their own vanishing magnitude,
    // which the difference quotient's round-off (~1e-16 / eps) would swamp.
    double scale = 0.0;
    for (double v : analytic.data()) scale = std::max(scale, std::abs(v));
    const double floor = std::max(1e-8, relative_floor(precision_) * scale);
    Tensor<double> probe = x;
    double worst = 0.0, worst_a = 0.0, worst_n = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) {
      auto at = [&](double offset) {
        probe[i] = x[i] + offset;
        return evaluate<double>(fn, probe);
      };
      // Fourth-order central difference: truncation O(eps^4).
      const double numeric = (8.0 * (at(eps) - at(-eps)) - (at(2 * eps) - at(-2 * eps))) / (12.0 * eps);
      probe[i] = x[i];
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
      const double rel = std::abs(analytic[i] - numeric) / denom;
      if (rel >= worst) {
        worst = rel;
        worst_a = analytic[i];
        worst_n = numeric;
      }
    }
    merge({name, x.numel(), worst, worst_a, worst_n, false});
  }

  Report finish() && {
    Report r;
    r.precision = precision_;
    r.seed = seed_;
    r.tolerance = tolerance(precision_);
    r.cases = std::move(cases_);
    for (auto& c : r.cases) c.passed = c.max_rel_error < r.tolerance;
    return r;
  }

 private:
  template <typename T, typename Fn>
  Tensor<double> analytic_grad(const Fn& fn, const Tensor<double>& x) const {
    Tape<T> tape;
    Var<T> leaf = tape.leaf(as<T>(x));
    Var<T> out = fn(tape, leaf);
    tape.backward(out);
    return tape.grad(leaf).template cast<double>();
  }

  // Cases checked over several variables report one combined line.
  void merge(const CaseResult& r) {
    for (auto& c : cases_) {
      if (c.name == r.name) {
        c.elements += r.elements;
        if (r.max_rel_error >= c.max_rel_error) {
          c.max_rel_error = r.max_rel_error;
          c.analytic = r.analytic;
          c.numeric = r.numeric;
        }
        return;
      }
    }
    cases_.push_back(r);
  }

  std::uint64_t next() { return seed_ * 1000003ULL + counter_++; }

  int precision_;
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
  std::vector<CaseResult> cases_;
};

// Non-degenerate points by construction: a side image in [0, 0.4] against a
// centre image in [0.6, 1] keeps every photometric |residual| (also after
// interpolation) >= 0.2 away from zero; disparity bands cl in [2.2, 3.8],
// lc in [0.2, 1.8] and cr in [4.2, 5.8] do the same for the consistency
// terms. Every knot is then far outside the difference step.
constexpr double kEps = 1e-3;

void loss_terms(Suite& s) {
  const Shape img{1, 3, 5, 9}, disp{1, 1, 5, 9};
  const Tensor<double> side = s.image(img, 0.0, 0.4);
  const Tensor<double> center = s.image(img, 0.6, 1.0);
  const Tensor<double> weights = s.image(img, 0.5, 1.5);
  const Tensor<double> d_cl = s.disparity(disp, 2, 3);
  const Tensor<double> d_lc = s.disparity(disp, 0, 1);
  const Tensor<double> d_cr = s.disparity(disp, 4, 5);

  s.check("ssim_map", [&]<typename T>(Tape<T>& t, Var<T> x) {
    return ad::sum(loss::ssim_map(t.constant(as<T>(side)), x) * t.constant(as<T>(weights)));
  }, center, kEps);
  s.check("appearance_loss", [&]<typename T>(Tape<T>& t, Var<T> x) {
    return loss::appearance_loss(t.constant(as<T>(side)), x, 0.85);
  }, center, kEps);
  s.check("smoothness_loss", [&]<typename T>(Tape<T>& t, Var<T> x) {
    return loss::smoothness_loss(x, t.constant(as<T>(center)));
  }, d_cl, kEps);
  s.check("smoothness_loss", [&]<typename T>(Tape<T>& t, Var<T> x) {
    return loss::smoothness_loss(t.constant(as<T>(d_cl)), x);
  }, center, kEps);
  for (int sign : {1, -1}) {
    s.check("lr_consistency_loss", [&]<typename T>(Tape<T>& t, Var<T> x) {
      return loss::lr_consistency_loss(x, t.constant(as<T>(d_lc)), sign);
    }, d_cl, kEps);
    s.check("lr_consistency_loss", [&]<typename T>(Tape<T>& t, Var<T> x) {
      return loss::lr_consistency_loss(t.constant(as<T>(d_cl)), x, sign);
    }, d_lc, kEps);
  }
  s.check("center_consistency_loss", [&]<typename T>(Tape<T>& t, Var<T> x) {
    return loss::center_consistency_loss<T>({x, DispTag::cl, 0}, {t.constant(as<T>(d_cr)), DispTag::cr, 0});
  }, d_cl, kEps);
  s.check("center_consistency_loss", [&]<typename T>(Tape<T>& t, Var<T> x) {
    return loss::center_consistency_loss<T>({t.constant(as<T>(d_cl)), DispTag::cl, 0}, {x, DispTag::cr, 0});
  }, d_cr, kEps);
}

void sampler(Suite& s) {
  const Tensor<double> src = s.image({2, 3, 3, 12}, 0.0, 1.0);
  const Tensor<double> disp = s.disparity({2, 1, 3, 12}, 0, 4);
  const Tensor<double> weights = s.image({2, 3, 3, 12}, 0.5, 1.5);
  for (int sign : {-1, 1}) {
    s.check("sample_horizontal (disparity)", [&]<typename T>(Tape<T>& t, Var<T> x) {
      return ad::sum(warp::sample_horizontal(t.constant(as<T>(src)), x, sign) * t.constant(as<T>(weights)));
    }, disp, kEps);
    s.check("sample_horizontal (source)", [&]<typename T>(Tape<T>& t, Var<T> x) {
      return ad::sum(warp::sample_horizontal(x, t.constant(as<T>(disp)), sign) * t.constant(as<T>(weights)));
    }, src, kEps);
  }
}

// The full phase-1 objective (all scales: appearance, smoothness, LR and
// centre consistency) differentiated with respect to each of its eight
// disparity maps in turn.
void phase1_composite(Suite& s) {
  const int H = 16, W = 32;
  const Tensor<double> left = s.image({1, 3, H, W}, 0.0, 0.4);
  const Tensor<double> center = s.image({1, 3, H, W}, 0.6, 1.0);
  std::vector<Tensor<double>> maps[3];  // cl, lc, cr
  const int bands[3][2] = {{2, 3}, {0, 1}, {4, 5}};
  for (int m = 0; m < 3; ++m)
    for (int l = 0; l < kScales; ++l) maps[m].push_back(s.disparity({1, 1, H >> l, W >> l}, bands[m][0], bands[m][1]));
  loss::LossWeights w;
  w.center_consistency = true;

  for (int which = 0; which < 2; ++which) {
    for (int level = 0; level < kScales; ++level) {
      const auto lvl = static_cast<std::size_t>(level);
      s.check("phase1 composite", [&]<typename T>(Tape<T>& t, Var<T> x) {
        DisparityOutputs<Var<T>> out;
        const DispTag tags[3] = {DispTag::cl, DispTag::lc, DispTag::cr};
        for (int m = 0; m < 3; ++m)
          for (int l = 0; l < kScales; ++l)
            out[tags[m]].push_back(m == which && l == level ? x
                                                            : t.constant(as<T>(maps[m][static_cast<std::size_t>(l)])));
        return loss::phase1_loss(t, warp::build_pyramid(as<T>(left)), warp::build_pyramid(as<T>(center)), out, w)
            .total;
      }, maps[which][lvl], kEps);
    }
  }
}

}  // namespace

double Report::max_rel_error() const {
  double e = 0.0;
  for (const auto& c : cases) e = std::max(e, c.max_rel_error);
  return e;
}

bool Report::passed() const {
  return !cases.empty() && std::all_of(cases.begin(), cases.end(), [](const CaseResult& c) { return c.passed; });
}

double relative_floor(int precision) {
  tolerance(precision);
  return precision == 64 ? 1e-3 : 1e-2;
}

double tolerance(int precision) {
  if (precision == 64) return 1e-5;
  if (precision == 32) return 5e-3;
  throw std::invalid_argument("gradient suite: precision must be 32 or 64, got " + std::to_string(precision));
}

Report run(int precision, std::uint64_t seed) {
  tolerance(precision);
  const auto start = std::chrono::steady_clock::now();
  Suite suite(precision, seed);
  loss_terms(suite);
  sampler(suite);
  phase1_composite(suite);
  Report r = std::move(suite).finish();
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

void print(std::ostream& os, const Report& r) {
  const auto flags = os.flags();
  os << std::scientific << std::setprecision(3);
  for (const auto& c : r.cases) {
    os << (c.passed ? "ok   " : "FAIL ") << std::left << std::setw(32) << c.name << std::right
       << " elements " << std::setw(5) << c.elements << "  max rel. err " << c.max_rel_error
       << "  (analytic " << std::setw(10) << c.analytic << ", numeric " << std::setw(10) << c.numeric << ")\n";
  }
  os << (r.passed() ? "PASS" : "FAIL") << " precision " << r.precision << " seed " << r.seed
     << " max rel. err " << r.max_rel_error() << " (tolerance " << r.tolerance << ")\n";
  os.flags(flags);
}

}  // namespace trinet::gradsuite
