#include "trinet/commands.hpp"

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "trinet/fusion.hpp"
#include "trinet/imageio.hpp"
#include "trinet/synthdata.hpp"
#include "trinet/viewsynth.hpp"

namespace trinet::app {

namespace {

// The echo lives in the output directory, so it does not name it: two runs
// that differ only in where they write produce identical files.
void echo_config(config::RunConfig cfg, const fs::path& dir) {
  cfg.paths.out.clear();
  config::echo(cfg, dir);
}

void require_extents(const Tensor<float>& image, const model::NetworkConfig& net, const std::string& what) {
  if (image.rank() != 4 || image.dim(0) != 1 || image.dim(1) != 3 || image.dim(2) != net.height ||
      image.dim(3) != net.width) {
    std::ostringstream msg;
    msg << what << ": expected a 3-channel " << net.height << "x" << net.width << " image, got shape [";
    for (int i = 0; i < image.rank(); ++i) msg << (i ? "," : "") << image.dim(i);
    msg << "]";
    throw std::runtime_error(msg.str());
  }
}

std::string scene_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "scene_%06zu", i);
  return buf;
}

void write_map(const fs::path& dir, const std::string& name, const Tensor<float>& map, float heat_max) {
  io::write_image(dir / (name + ".pfm"), map);
  io::write_image(dir / (name + "_heat.ppm"), io::heatmap(map, heat_max));
}

}  // namespace

void gen_data(config::RunConfig cfg, const fs::path& out) {
  cfg.validate();
  synth::write_dataset(out, cfg.scene, cfg.data.count, cfg.seed);
  echo_config(cfg, out);
}

train::TrainSummary train(config::RunConfig cfg, const fs::path& data, const fs::path& val,
                          const fs::path& out, std::ostream* progress) {
  cfg.paths.data = data;
  cfg.paths.val = val;
  cfg.validate();
  echo_config(cfg, out);

  std::vector<train::StereoPair> pairs;
  {
    const auto scenes = synth::read_dataset(data);
    if (scenes.empty()) throw std::runtime_error("dataset " + data.string() + " contains no scenes");
    for (std::size_t i = 0; i < scenes.size(); ++i) {
      require_extents(scenes[i].ic, cfg.network, (data / scene_name(i)).string());
      pairs.push_back(synth::to_binocular(scenes[i], cfg.data.pair));
    }
  }
  std::vector<train::ValidationSample> validation;
  if (!val.empty()) {
    for (auto& s : synth::read_dataset(val)) {
      require_extents(s.ic, cfg.network, val.string());
      validation.push_back({std::move(s.ic), std::move(s.gt_cl)});
    }
  }

  model::NetworkParams params = model::init_network(cfg.network);
  train::TrainIO io;
  io.out_dir = out;
  io.camera = cfg.eval.camera;
  io.cap = cfg.eval.cap;
  const std::size_t steps_per_epoch =
      (pairs.size() + static_cast<std::size_t>(cfg.plan.batch_size) - 1) / static_cast<std::size_t>(cfg.plan.batch_size);
  if (progress) {
    *progress << "training on " << pairs.size() << " pairs, " << cfg.plan.epochs << " epochs of "
              << steps_per_epoch << " steps, " << params.scalar_count() << " parameters\n";
    io.on_step = [progress, steps_per_epoch](std::int64_t step, int epoch, const train::StepResult& r) {
      if ((static_cast<std::size_t>(step) + 1) % steps_per_epoch == 0) {
        *progress << "epoch " << epoch + 1 << " step " << step + 1 << " phase1 appearance "
                  << r.phase1.appearance_sum() << " phase2 appearance " << r.phase2.appearance_sum() << std::endl;
      }
    };
  }
  auto summary = train::train(params, pairs, cfg.plan, cfg.loss, validation, io);
  if (progress && !summary.validation.empty()) {
    const auto& v = summary.validation.back();
    *progress << "validation abs_rel " << v.abs_rel << " d1_all " << v.d1_all << "\n";
  }
  return summary;
}

EvalResult evaluate(config::RunConfig cfg, const fs::path& checkpoint, const fs::path& data,
                    const fs::path& out) {
  cfg.paths.checkpoint = checkpoint;
  cfg.paths.data = data;
  cfg.validate();
  const model::NetworkParams params = model::load_checkpoint(checkpoint);
  const auto scenes = synth::read_dataset(data);
  if (scenes.empty()) throw std::runtime_error("dataset " + data.string() + " contains no scenes");

  EvalResult result;
  std::vector<metrics::MetricsRecord> records;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    require_extents(scenes[i].ic, params.config(), (data / scene_name(i)).string());
    const auto before = model::forward_count();
    const DisparityMap d_c = cfg.eval.post_process ? fusion::post_process(params, scenes[i].ic).d_c
                                                   : fusion::predict(params, scenes[i].ic);
    EvalRow row;
    row.scene = scene_name(i);
    row.forwards = model::forward_count() - before;
    row.record = metrics::evaluate_disparity(d_c.map.data(), scenes[i].gt_cl.data(), cfg.eval.camera, cfg.eval.cap);
    result.total.forwards += row.forwards;
    records.push_back(row.record);
    result.rows.push_back(std::move(row));
  }
  result.total.scene = "all";
  result.total.record = metrics::aggregate(records);

  echo_config(cfg, out);
  const auto path = out / "metrics.csv";
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << eval_csv(result);
  if (!f.good()) throw std::runtime_error("write failed: " + path.string());
  return result;
}

std::string eval_csv(const EvalResult& result) {
  std::string s = "scene,forwards," + metrics::csv_header() + "\n";
  for (const auto& r : result.rows) s += r.scene + "," + std::to_string(r.forwards) + "," + metrics::csv_row(r.record) + "\n";
  s += result.total.scene + "," + std::to_string(result.total.forwards) + "," + metrics::csv_row(result.total.record) + "\n";
  return s;
}

void synthesize(config::RunConfig cfg, const fs::path& checkpoint, const fs::path& image,
                const fs::path& out, bool with_sgm) {
  cfg.paths.checkpoint = checkpoint;
  const model::NetworkParams params = model::load_checkpoint(checkpoint);
  const Tensor<float> center = io::read_image(image);
  require_extents(center, params.config(), image.string());
  if (with_sgm) cfg.sgm.validate(center.dim(3));

  const auto outputs = model::forward(params, center);
  const DisparityMap d_cl{outputs.at(DispTag::cl)[0], DispTag::cl, 0};
  const DisparityMap d_cr{outputs.at(DispTag::cr)[0], DispTag::cr, 0};
  const DisparityMap d_lc{outputs.at(DispTag::lc)[0], DispTag::lc, 0};
  const DisparityMap d_rc{outputs.at(DispTag::rc)[0], DispTag::rc, 0};
  const DisparityMap d_c = fusion::fuse(d_cl, d_cr);
  const auto views = viewsynth::synthesize_views(center, d_lc, d_rc);

  echo_config(cfg, out);
  io::write_image(out / "left.ppm", views.left);
  io::write_image(out / "right.ppm", views.right);
  // One fixed scale for every network map: the largest representable value.
  const auto heat_max = static_cast<float>(params.config().dmax_frac * center.dim(3));
  write_map(out, "d_cl", d_cl.map, heat_max);
  write_map(out, "d_c", d_c.map, heat_max);
  write_map(out, "d_cr", d_cr.map, heat_max);
  write_map(out, "d_lc", d_lc.map, heat_max);
  write_map(out, "d_rc", d_rc.map, heat_max);

  if (with_sgm) {
    const auto mb = viewsynth::multi_baseline(center, d_lc, d_rc, cfg.sgm);
    const auto sgm_max = static_cast<float>(cfg.sgm.max_disparity);
    write_map(out, "sgm_narrow_lc", mb.narrow_lc, sgm_max);
    write_map(out, "sgm_narrow_cr", mb.narrow_cr, sgm_max);
    write_map(out, "sgm_wide", mb.wide, sgm_max);
  }
}

Tensor<float> sgm(config::RunConfig cfg, const fs::path& left, const fs::path& right, const fs::path& out) {
  const Tensor<float> l = io::read_image(left);
  const Tensor<float> r = io::read_image(right);
  if (l.shape() != r.shape()) {
    throw std::runtime_error("sgm: " + left.string() + " and " + right.string() + " differ in shape");
  }
  const Tensor<float> disp = viewsynth::sgm(l, r, cfg.sgm);
  const fs::path dir = out.has_parent_path() ? out.parent_path() : fs::path(".");
  echo_config(cfg, dir);
  io::write_image(out, disp);
  fs::path heat = out;
  heat.replace_filename(out.stem().string() + "_heat.ppm");
  io::write_image(heat, io::heatmap(disp, static_cast<float>(cfg.sgm.max_disparity)));
  return disp;
}

}  // namespace trinet::app
