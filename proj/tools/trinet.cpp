// Command-line front end. Exit codes: 0 success, 1 runtime failure, 2 usage.
// Flags override the matching config values; the worker-thread count comes
// from TRINET_THREADS.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "trinet/commands.hpp"
#include "trinet/config.hpp"
#include "trinet/gradsuite.hpp"
#include "trinet/parallel.hpp"

namespace fs = std::filesystem;
using trinet::config::RunConfig;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A path comes from its flag or else from the config's [paths] section.
fs::path require_path(const fs::path& flag, const fs::path& from_config, const std::string& name) {
  if (!flag.empty()) return flag;
  if (!from_config.empty()) return from_config;
  throw UsageError("--" + name + " is required (or set " + name + " in [paths])");
}

RunConfig load_config(const fs::path& path) {
  return path.empty() ? RunConfig{} : trinet::config::load(path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Monocular disparity from binocular pairs with a trinocular shared-encoder network"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every command");

  fs::path config_path, out, data, val, checkpoint, image, left, right;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> count;
  std::optional<int> cap, max_disp;
  std::string pp;
  int precision = 64;
  bool with_sgm = false;

  auto add_config = [&](CLI::App* c) {
    c->add_option("--config", config_path, "Run configuration (INI)")->check(CLI::ExistingFile);
  };

  CLI::App* gen = app.add_subcommand("gen-data", "Generate a synthetic trinocular dataset");
  add_config(gen);
  gen->add_option("--out", out, "Dataset directory to write");
  gen->add_option("--count", count, "Number of scenes (overrides [data] count)")->check(CLI::PositiveNumber);
  gen->add_option("--seed", seed, "Dataset seed (overrides [run] seed)");

  CLI::App* tr = app.add_subcommand("train", "Train a network on a dataset's binocular pairs");
  add_config(tr);
  tr->add_option("--data", data, "Training dataset directory");
  tr->add_option("--val", val, "Held-out dataset for validation (optional)");
  tr->add_option("--out", out, "Output directory (log.csv, val.csv, checkpoint/)");
  tr->add_option("--seed", seed, "Seed for init, shuffling and augmentation (overrides [run] seed)");

  CLI::App* ev = app.add_subcommand("eval", "Score the fused centre map against ground truth");
  add_config(ev);
  ev->add_option("--checkpoint", checkpoint, "Checkpoint directory");
  ev->add_option("--data", data, "Dataset directory");
  ev->add_option("--cap", cap, "Depth cap in metres")->check(CLI::IsMember({80, 50}));
  ev->add_option("--pp", pp, "Post-processing (two forwards per image)")->check(CLI::IsMember({"on", "off"}));
  ev->add_option("--out", out, "Output directory (metrics.csv)");

  CLI::App* syn = app.add_subcommand("synthesize", "Predict disparities and synthesize side views from one image");
  add_config(syn);
  syn->add_option("--checkpoint", checkpoint, "Checkpoint directory");
  syn->add_option("--image", image, "Input image (PPM or PFM)")->required()->check(CLI::ExistingFile);
  syn->add_option("--out", out, "Output directory");
  syn->add_flag("--sgm", with_sgm, "Also run SGM on the synthesized narrow and wide pairs");
  syn->add_option("--max-disp", max_disp, "SGM disparity range (overrides [sgm] max_disparity)")
      ->check(CLI::PositiveNumber);

  CLI::App* sg = app.add_subcommand("sgm", "Semi-global matching on a rectified pair");
  add_config(sg);
  sg->add_option("--left", left, "Left image")->required()->check(CLI::ExistingFile);
  sg->add_option("--right", right, "Right image")->required()->check(CLI::ExistingFile);
  sg->add_option("--max-disp", max_disp, "Largest disparity searched")->required()->check(CLI::PositiveNumber);
  sg->add_option("--out", out, "Output disparity map (.pfm)")->required();

  CLI::App* gc = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  gc->add_option("--precision", precision, "Floating-point precision")->check(CLI::IsMember({32, 64}));
  gc->add_option("--seed", seed, "Seed for the random evaluation points");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error: " << e.what() << "\n";
    const auto subs = app.get_subcommands();
    std::cerr << (subs.empty() ? app.help() : subs.front()->help());
    return 2;
  }

  try {
    if (gc->parsed()) {
      const auto report = trinet::gradsuite::run(precision, seed.value_or(1));
      trinet::gradsuite::print(std::cout, report);
      return report.passed() ? 0 : 1;
    }

    RunConfig cfg = load_config(config_path);
    if (seed) cfg.seed = *seed;
    if (count) cfg.data.count = *count;
    if (cap) cfg.eval.cap = *cap;
    if (!pp.empty()) cfg.eval.post_process = pp == "on";
    if (max_disp) cfg.sgm.max_disparity = *max_disp;
    cfg.resolve();

    if (gen->parsed()) {
      const fs::path dir = require_path(out, cfg.paths.out, "out");
      trinet::app::gen_data(cfg, dir);
      std::cout << "wrote " << cfg.data.count << " scenes to " << dir.string() << "\n";
    } else if (tr->parsed()) {
      const fs::path d = require_path(data, cfg.paths.data, "data");
      const fs::path o = require_path(out, cfg.paths.out, "out");
      std::cout << "threads " << trinet::thread_count() << "\n";
      trinet::app::train(cfg, d, val.empty() ? cfg.paths.val : val, o, &std::cout);
      std::cout << "wrote " << (o / "checkpoint").string() << "\n";
    } else if (ev->parsed()) {
      const fs::path c = require_path(checkpoint, cfg.paths.checkpoint, "checkpoint");
      const fs::path d = require_path(data, cfg.paths.data, "data");
      const fs::path o = require_path(out, cfg.paths.out, "out");
      const auto result = trinet::app::evaluate(cfg, c, d, o);
      const auto& t = result.total.record;
      std::cout << result.rows.size() << " images, " << result.total.forwards << " forwards, abs_rel "
                << t.abs_rel << " rmse " << t.rmse << " delta1 " << t.delta1 << " d1_all " << t.d1_all
                << "\nwrote " << (o / "metrics.csv").string() << "\n";
    } else if (syn->parsed()) {
      const fs::path c = require_path(checkpoint, cfg.paths.checkpoint, "checkpoint");
      const fs::path o = require_path(out, cfg.paths.out, "out");
      trinet::app::synthesize(cfg, c, image, o, with_sgm);
      std::cout << "wrote views and disparity maps to " << o.string() << "\n";
    } else if (sg->parsed()) {
      trinet::app::sgm(cfg, left, right, out);
      std::cout << "wrote " << out.string() << "\n";
    }
    return 0;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
