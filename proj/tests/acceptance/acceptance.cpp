// Acceptance harness: one PASS/FAIL line per criterion, then a summary.
//
//   trinet_acceptance            all criteria
//   trinet_acceptance 1 5 8      a subset
//
// Exit code 0 iff every selected criterion passes.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "trinet/commands.hpp"
#include "trinet/fusion.hpp"
#include "trinet/gradsuite.hpp"
#include "trinet/losses.hpp"
#include "trinet/metrics.hpp"
#include "trinet/synthdata.hpp"
#include "trinet/trainer.hpp"
#include "trinet/viewsynth.hpp"

using namespace trinet;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

bool bit_equal(const Tensor<float>& a, const Tensor<float>& b) {
  return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(float)) == 0;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// 1. Gradient suite in 64-bit, under two minutes.
Outcome gradients() {
  const auto r = gradsuite::run(64, 1);
  const bool pass = r.passed() && r.max_rel_error() < 1e-5 && r.seconds < 120.0;
  std::string worst;
  for (const auto& c : r.cases)
    if (!c.passed) worst += " " + c.name;
  return {pass, fmt("%zu checks (loss terms, sampler, phase-1 composite), max rel. err %.3e < 1e-5, %.1f s < 120 s%s",
                    r.cases.size(), r.max_rel_error(), r.seconds, worst.empty() ? "" : (" failing:" + worst).c_str())};
}

// 2. Routing bit-exactness over 100 random steps, phase by phase.
Outcome routing() {
  model::NetworkParams params = model::init_network({});
  train::AdamState adam = train::AdamState::for_params(params);
  const auto groups = [&] {
    std::vector<model::ParamGroup> g;
    for (const auto& e : params.entries()) g.push_back(e.group);
    return g;
  }();
  const synth::SceneSpec spec;
  int right_touched = 0, left_touched = 0, encoder_frozen = 0;
  for (int step = 0; step < 100; ++step) {
    const auto scene = synth::generate_scene(spec, synth::sample_seed(3, static_cast<std::size_t>(step)));
    const auto pair = synth::to_binocular(scene, step % 2 ? synth::PairMode::cr : synth::PairMode::lc);
    for (auto phase : {train::Phase::one, train::Phase::two}) {
      const model::NetworkParams before = params;
      train::StepOptions opt;
      opt.verify_routing = false;  // checked here, independently
      train::train_phase(params, adam, pair, {}, 1e-4, phase, opt);
      bool encoder_changed = false;
      for (std::size_t i = 0; i < params.size(); ++i) {
        const bool same = bit_equal(before.entries()[i].value, params.entries()[i].value);
        if (groups[i] == model::ParamGroup::encoder) encoder_changed |= !same;
        if (phase == train::Phase::one && groups[i] == model::ParamGroup::right_decoder && !same) ++right_touched;
        if (phase == train::Phase::two && groups[i] == model::ParamGroup::left_decoder && !same) ++left_touched;
      }
      encoder_frozen += !encoder_changed;
    }
  }
  return {right_touched == 0 && left_touched == 0 && encoder_frozen == 0,
          fmt("100 steps x 2 phases: right-decoder tensors changed in phase 1: %d, left-decoder tensors changed "
              "in phase 2: %d, phases without an encoder change: %d",
              right_touched, left_touched, encoder_frozen)};
}

// 3. Exact zeros on the analytic minimum cases, in both precisions.
template <typename T>
std::vector<std::pair<std::string, double>> zero_cases() {
  using ad::Tape;
  using ad::Var;
  std::vector<std::pair<std::string, double>> out;
  auto image = [](int H, int W, std::uint64_t seed) {
    Tensor<T> t({1, 3, H, W});
    std::uint64_t s = seed;
    for (auto& v : t.data()) {
      s = s * 6364136223846793005ULL + 1442695040888963407ULL;
      v = static_cast<T>((s >> 11) * 0x1.0p-53);
    }
    return t;
  };
  const Tensor<T> img = image(16, 32, 1);
  for (double alpha : {0.0, 0.85, 1.0}) {
    Tape<T> t;
    out.push_back({fmt("appearance(real = warped, alpha %.2f)", alpha),
                   loss::appearance_loss(t.constant(img), t.constant(img), alpha).item()});
  }
  for (T c : {T(0), T(2.5), T(7)}) {
    Tape<T> t;
    const Tensor<T> d({1, 1, 16, 32}, c);
    out.push_back({fmt("smoothness(constant d = %g)", double(c)), loss::smoothness_loss(t.constant(d), t.constant(img)).item()});
    for (int sign : {1, -1}) {
      out.push_back({fmt("lr consistency(d_ref = d_tgt = %g, sign %+d)", double(c), sign),
                     loss::lr_consistency_loss(t.constant(d), t.constant(d), sign).item()});
    }
    out.push_back({fmt("center consistency(d_cl = d_cr = %g)", double(c)),
                   loss::center_consistency_loss<T>({t.constant(d), DispTag::cl, 0}, {t.constant(d), DispTag::cr, 0}).item()});
  }
  const auto pyr = warp::build_pyramid(img);
  for (int phase = 1; phase <= 2; ++phase) {
    Tape<T> t;
    DisparityOutputs<Var<T>> o;
    for (int s = 0; s < kScales; ++s)
      for (DispTag tag : {DispTag::cl, DispTag::lc, DispTag::cr, DispTag::rc})
        o[tag].push_back(t.constant(Tensor<T>({1, 1, 16 >> s, 32 >> s}, T(0))));
    loss::LossWeights w;
    w.center_consistency = true;
    const double total = phase == 1 ? loss::phase1_loss(t, pyr, pyr, o, w).total.item()
                                    : loss::phase2_loss(t, pyr, pyr, o, w).total.item();
    out.push_back({fmt("phase %d total (zero disparities, identical images)", phase), total});
  }
  return out;
}

Outcome analytic_zeros() {
  int n = 0;
  std::string bad;
  for (const auto& [name, v] : zero_cases<float>()) {
    ++n;
    if (v != 0.0) bad += fmt(" [float %s = %g]", name.c_str(), v);
  }
  for (const auto& [name, v] : zero_cases<double>()) {
    ++n;
    if (v != 0.0) bad += fmt(" [double %s = %g]", name.c_str(), v);
  }
  return {bad.empty(), fmt("%d cases (appearance, smoothness, LR, centre consistency, phase totals; float and "
                           "double) evaluate to exactly 0%s",
                           n, bad.c_str())};
}

// 4. Fusion and post-processing.
Outcome fusion_exactness() {
  const double js[5] = {0.02, 0.05, 0.5, 0.95, 0.96};
  const double expect[5] = {0.0, 0.0, 0.5, 0.5, 1.0};
  bool omega_ok = true;
  for (int i = 0; i < 5; ++i) omega_ok &= fusion::omega(js[i]) == expect[i];

  const model::NetworkParams params = model::init_network({});
  const auto scene = synth::generate_scene({}, 77);
  const auto outputs = model::forward(params, scene.ic);
  const DisparityMap d_c = fusion::predict(params, scene.ic);
  const auto before = model::forward_count();
  const fusion::PostProcessed pp = fusion::post_process(params, scene.ic);
  const auto forwards = model::forward_count() - before;

  const Tensor<float>& d_cl = outputs.at(DispTag::cl)[0];
  const int H = d_cl.dim(2), W = d_cl.dim(3);
  int band_cols = 0, band_mismatch = 0;
  for (int x = 0; x < W; ++x) {
    if (static_cast<double>(x) / (W - 1) > 0.05) continue;
    ++band_cols;
    for (int y = 0; y < H; ++y) {
      band_mismatch += std::memcmp(&d_c.map.at(0, 0, y, x), &d_cl.at(0, 0, y, x), sizeof(float)) != 0;
      band_mismatch += std::memcmp(&pp.d_c.map.at(0, 0, y, x), &pp.d_cl_pp.map.at(0, 0, y, x), sizeof(float)) != 0;
    }
  }
  return {omega_ok && band_mismatch == 0 && band_cols > 0 && forwards == 2,
          fmt("omega(0.02, 0.05, 0.5, 0.95, 0.96) = (%g, %g, %g, %g, %g); left band (%d columns) of d_c bit-equal "
              "to d_cl: %d mismatches; post_process forwards: %llu",
              fusion::omega(js[0]), fusion::omega(js[1]), fusion::omega(js[2]), fusion::omega(js[3]),
              fusion::omega(js[4]), band_cols, band_mismatch, static_cast<unsigned long long>(forwards))};
}

// 5. Metrics oracle.
Outcome metrics_oracle() {
  const std::vector<double> gt{10.0, 20.0}, pred{12.0, 25.0};
  const auto r = metrics::depth_metrics(pred, gt, 80.0);
  const bool record_ok = std::abs(r.abs_rel - 0.225) <= 1e-12 && std::abs(r.sq_rel - 0.825) <= 1e-12 &&
                         std::abs(r.rmse - std::sqrt(14.5)) <= 1e-12 && std::abs(r.delta1 - 0.5) <= 1e-12;
  std::vector<float> g(64), p(64);
  for (int i = 0; i < 64; ++i) {
    g[static_cast<std::size_t>(i)] = 2.0f + static_cast<float>(i % 9);
    p[static_cast<std::size_t>(i)] = g[static_cast<std::size_t>(i)] + 3.0f;
  }
  const double d1 = metrics::d1_all(p, g);
  return {record_ok && d1 == 0.0,
          fmt("abs_rel %.15g, sq_rel %.15g, rmse %.15g (sqrt 14.5 = %.15g), delta1 %g; d1_all at error exactly 3: %g%%",
              r.abs_rel, r.sq_rel, r.rmse, std::sqrt(14.5), r.delta1, d1)};
}

// Phase-1 appearance of the current network on a pair, without an update.
double phase1_appearance(const model::NetworkParams& params, const train::StereoPair& pair) {
  ad::Tape<float> tape;
  const auto bound = model::bind_params(tape, params, false);
  const auto out = model::forward(params, bound, tape.constant(pair.right), model::Decoders::left);
  return loss::phase1_loss(tape, warp::build_pyramid(pair.left), warp::build_pyramid(pair.right), out, {})
      .terms.appearance_sum();
}

// 6. Overfit one synthetic pair.
Outcome overfit() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto scene = synth::generate_scene({}, 1);
  const auto pair = synth::to_binocular(scene, synth::PairMode::lc);
  model::NetworkParams params = model::init_network({});
  train::AdamState adam = train::AdamState::for_params(params);
  const double initial = phase1_appearance(params, pair);
  for (int step = 0; step < 500; ++step) train::train_step(params, adam, pair, {}, 1e-4);
  const double final_loss = phase1_appearance(params, pair);
  const double drop = 1.0 - final_loss / initial;

  const auto d_cl = model::forward(params, scene.ic).at(DispTag::cl)[0];
  std::vector<double> err;
  for (std::size_t i = 0; i < d_cl.numel(); ++i)
    if (scene.occ_cl[i] == 0.0f) err.push_back(std::abs(d_cl[i] - scene.gt_cl[i]));
  std::nth_element(err.begin(), err.begin() + static_cast<std::ptrdiff_t>(err.size() / 2), err.end());
  const double median = err[err.size() / 2];
  const double secs = seconds_since(t0);
  return {drop >= 0.90 && median < 1.0 && secs < 600.0,
          fmt("phase-1 appearance %.4f -> %.4f (drop %.1f%% >= 90%%), median |d_cl - gt| on %zu non-occluded pixels "
              "%.3f px < 1, %.0f s < 600 s",
              initial, final_loss, 100.0 * drop, err.size(), median, secs)};
}

// 7. Desk-scale generalization.
Outcome desk_scale() {
  const auto t0 = std::chrono::steady_clock::now();
  const synth::SceneSpec spec;
  std::vector<train::StereoPair> data;
  for (std::size_t i = 0; i < 2000; ++i)
    data.push_back(synth::to_binocular(synth::generate_scene(spec, synth::sample_seed(1, i)), synth::PairMode::lc));
  std::vector<synth::TrinocularSample> held;
  for (std::size_t i = 0; i < 200; ++i) held.push_back(synth::generate_scene(spec, synth::sample_seed(2, i)));

  model::NetworkParams params = model::init_network({});
  train::TrainPlan plan;
  plan.epochs = 10;
  train::TrainIO io;
  io.camera = synth::synthetic_camera();
  io.on_step = [&](std::int64_t step, int epoch, const train::StepResult& r) {
    if ((step + 1) % 500 == 0) {
      std::printf("  [7] step %lld epoch %d phase-1 appearance %.4f (%.0f s)\n", static_cast<long long>(step + 1),
                  epoch + 1, r.phase1.appearance_sum(), seconds_since(t0));
      std::fflush(stdout);
    }
  };
  train::train(params, data, plan, {}, {}, io);

  std::vector<metrics::MetricsRecord> recs;
  double occ_c = 0, occ_l = 0, band_c = 0, band_l = 0;
  std::size_t n_occ = 0, n_band = 0, bad_c = 0, bad_l = 0, n = 0;
  for (const auto& s : held) {
    const auto out = model::forward(params, s.ic);
    const Tensor<float>& d_cl = out.at(DispTag::cl)[0];
    const Tensor<float> d_c = fusion::fuse({d_cl, DispTag::cl, 0}, {out.at(DispTag::cr)[0], DispTag::cr, 0}).map;
    recs.push_back(metrics::evaluate_disparity(d_c.data(), s.gt_cl.data(), io.camera, 80.0));
    const int W = d_cl.dim(3);
    for (int y = 0; y < d_cl.dim(2); ++y)
      for (int x = 0; x < W; ++x) {
        const double g = s.gt_cl.at(0, 0, y, x);
        const double ec = std::abs(d_c.at(0, 0, y, x) - g), el = std::abs(d_cl.at(0, 0, y, x) - g);
        if (s.occ_cl.at(0, 0, y, x) > 0 || s.occ_cr.at(0, 0, y, x) > 0) {
          occ_c += ec;
          occ_l += el;
          ++n_occ;
        }
        if (static_cast<double>(x) / (W - 1) <= 0.05) {
          band_c += ec;
          band_l += el;
          ++n_band;
        }
        bad_c += ec > 3.0;
        bad_l += el > 3.0;
        ++n;
      }
  }
  const auto agg = metrics::aggregate(recs);
  occ_c /= static_cast<double>(n_occ);
  occ_l /= static_cast<double>(n_occ);
  band_c /= static_cast<double>(n_band);
  band_l /= static_cast<double>(n_band);
  const double d1_c = 100.0 * static_cast<double>(bad_c) / static_cast<double>(n);
  const double d1_l = 100.0 * static_cast<double>(bad_l) / static_cast<double>(n);
  return {agg.abs_rel < 0.15 && occ_c <= occ_l && band_c <= band_l && d1_c <= d1_l,
          fmt("2000 pairs x 10 epochs, 200 held-out scenes: abs_rel(d_c) %.4f < 0.15; occlusion error d_c %.3f <= "
              "d_cl %.3f; left-band error d_c %.3f <= d_cl %.3f; d1_all d_c %.2f%% <= d_cl %.2f%%; %.0f s",
              agg.abs_rel, occ_c, occ_l, band_c, band_l, d1_c, d1_l, seconds_since(t0))};
}

// 8. SGM on views synthesized from injected ground truth.
Outcome sgm_baselines() {
  const int H = 64, W = 128;
  auto plane = [](double d, std::uint64_t seed) {
    synth::Layer l;
    l.y0 = 0;
    l.y1 = 64;
    l.d_ref = d;
    l.texture_seed = seed;
    l.period = 3.0;
    l.contrast = 0.4;
    return l;
  };
  viewsynth::SgmParams p;
  p.max_disparity = 32;

  // (a) One constant plane: both narrow pairs recover d, the wide pair 2d.
  std::string detail;
  bool pass = true;
  for (int d : {4, 7}) {
    synth::SceneLayout layout;
    layout.layers = {plane(d, 10 + static_cast<std::uint64_t>(d))};
    const auto s = synth::render(layout, {}, 0);
    const auto mb = viewsynth::multi_baseline(s.ic, {s.gt_lc, DispTag::lc, 0}, {s.gt_rc, DispTag::rc, 0}, p);
    auto frac = [&](const Tensor<float>& est, double target, int x0) {
      int ok = 0, cnt = 0;
      for (int y = 3; y < H - 3; ++y)
        for (int x = x0; x < W - 3; ++x) {
          ok += std::abs(est.at(0, 0, y, x) - target) <= 1.0;
          ++cnt;
        }
      return static_cast<double>(ok) / cnt;
    };
    const double n_lc = frac(mb.narrow_lc, d, d + 3), n_cr = frac(mb.narrow_cr, d, d + 3);
    const double wide = frac(mb.wide, 2 * d, 3 * d + 3);
    pass &= n_lc >= 0.95 && n_cr >= 0.95 && wide >= 0.95;
    detail += fmt("plane d=%d: narrow %.1f%%/%.1f%%, wide(2d) %.1f%%; ", d, 100 * n_lc, 100 * n_cr, 100 * wide);
  }

  // (b) Two planes: the wide pair recovers 2x each plane's disparity, scored
  // per plane away from its boundary (occlusions of the wide pair excluded).
  synth::SceneLayout layout;
  synth::Layer fg = plane(9, 31);
  fg.x0 = 44;
  fg.x1 = 100;
  fg.y0 = 12;
  fg.y1 = 52;
  layout.layers = {plane(3, 30), fg};
  const auto s = synth::render(layout, {}, 0);
  const auto mb = viewsynth::multi_baseline(s.ic, {s.gt_lc, DispTag::lc, 0}, {s.gt_rc, DispTag::rc, 0}, p);
  const int reach = 2 * (9 - 3) + 3;
  for (int d : {3, 9}) {
    int ok = 0, cnt = 0;
    for (int y = 3; y < H - 3; ++y)
      for (int x = 3 * d + 3; x < W - 3; ++x) {
        bool interior = true;
        for (int dy = -3; dy <= 3 && interior; ++dy)
          for (int dx = -reach; dx <= reach && interior; ++dx) {
            const int yy = std::clamp(y + dy, 0, H - 1), xx = std::clamp(x + dx, 0, W - 1);
            interior = s.gt_lc.at(0, 0, yy, xx) == static_cast<float>(d);
          }
        if (!interior) continue;
        ok += std::abs(mb.wide.at(0, 0, y, x) - 2.0 * d) <= 1.0;
        ++cnt;
      }
    const double f = cnt ? static_cast<double>(ok) / cnt : 0.0;
    pass &= cnt > 0 && f >= 0.95;
    detail += fmt("two-plane wide, plane d=%d: %.1f%% of %d px within 1 px of %d; ", d, 100 * f, cnt, 2 * d);
  }
  detail += "threshold 95%";
  return {pass, detail};
}

// 9. gen-data -> train -> eval twice with the same seed.
Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "trinet_acceptance_determinism";
  fs::remove_all(root);
  config::RunConfig cfg;
  cfg.seed = 5;
  cfg.data.count = 8;
  cfg.plan.epochs = 2;
  cfg.plan.augmentation.color_jitter = true;  // exercise every seeded draw
  cfg.validate();
  std::string files[2][4];
  for (int run = 0; run < 2; ++run) {
    const fs::path dir = root / ("run" + std::to_string(run));
    app::gen_data(cfg, dir / "data");
    app::train(cfg, dir / "data", {}, dir / "train");
    app::evaluate(cfg, dir / "train" / "checkpoint", dir / "data", dir / "eval");
    files[run][0] = slurp(dir / "train" / "checkpoint" / "model.bin");
    files[run][1] = slurp(dir / "train" / "checkpoint" / "model.manifest");
    files[run][2] = slurp(dir / "eval" / "metrics.csv");
    files[run][3] = slurp(dir / "train" / "log.csv");
  }
  fs::remove_all(root);
  const bool same = files[0][0] == files[1][0] && files[0][1] == files[1][1] && files[0][2] == files[1][2] &&
                    files[0][3] == files[1][3];
  return {same && !files[0][0].empty(),
          fmt("two seeded gen-data -> train -> eval runs: checkpoint (%zu bytes) %s, metrics.csv %s, log.csv %s",
              files[0][0].size(), files[0][0] == files[1][0] ? "identical" : "DIFFERENT",
              files[0][2] == files[1][2] ? "identical" : "DIFFERENT",
              files[0][3] == files[1][3] ? "identical" : "DIFFERENT")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::map<int, std::pair<const char*, std::function<Outcome()>>> criteria = {
      {1, {"gradient suite", gradients}},
      {2, {"routing bit-exactness", routing}},
      {3, {"analytic zeros", analytic_zeros}},
      {4, {"fusion / post-processing exactness", fusion_exactness}},
      {5, {"metrics oracle", metrics_oracle}},
      {6, {"overfit convergence", overfit}},
      {7, {"desk-scale generalization", desk_scale}},
      {8, {"view synthesis / SGM baselines", sgm_baselines}},
      {9, {"determinism", determinism}},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) {
    const int k = std::atoi(argv[i]);
    if (!criteria.count(k)) {
      std::fprintf(stderr, "usage: %s [criterion 1-9 ...]\n", argv[0]);
      return 2;
    }
    selected.insert(k);
  }
  if (selected.empty())
    for (const auto& [k, _] : criteria) selected.insert(k);

  int failed = 0;
  for (int k : selected) {
    const auto& [name, fn] = criteria.at(k);
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("criterion %d: %s  %s -- %s [%.1f s]\n", k, o.pass ? "PASS" : "FAIL", name, o.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
  }
  std::printf("%zu criteria, %zu passed, %d failed\n", selected.size(), selected.size() - static_cast<std::size_t>(failed),
              failed);
  return failed == 0 ? 0 : 1;
}
