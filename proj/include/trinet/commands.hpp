#pragma once

// The command-line operations as library calls. Each command takes a
// resolved RunConfig, writes its outputs plus the echoed config.ini into its
// output directory, and is deterministic given the config (seed included).

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "trinet/config.hpp"
#include "trinet/metrics.hpp"
#include "trinet/trainer.hpp"

namespace trinet::app {

namespace fs = std::filesystem;

/// cfg.data.count scenes of cfg.scene from dataset seed cfg.seed.
void gen_data(config::RunConfig cfg, const fs::path& out);

/// Trains a fresh network (cfg.network, seeded by cfg.seed) on the binocular
/// pairs cfg.data.pair of the dataset at `data`; `val` (optional) supplies
/// held-out scenes scored on the centre map. Writes log.csv, val.csv and
/// checkpoint/ into `out`. Progress lines go to `progress` when non-null.
train::TrainSummary train(config::RunConfig cfg, const fs::path& data, const fs::path& val,
                          const fs::path& out, std::ostream* progress = nullptr);

struct EvalRow {
  std::string scene;
  std::uint64_t forwards = 0;
  metrics::MetricsRecord record;
};

struct EvalResult {
  std::vector<EvalRow> rows;
  /// Count-weighted aggregate; `forwards` holds the total.
  EvalRow total;
};

/// Scores the fused centre map (one forward, or two with
/// cfg.eval.post_process) against each scene's centre ground truth with
/// cap cfg.eval.cap. Writes metrics.csv into `out`.
EvalResult evaluate(config::RunConfig cfg, const fs::path& checkpoint, const fs::path& data,
                    const fs::path& out);

/// metrics.csv content: one row per scene, then the aggregate row "all".
std::string eval_csv(const EvalResult& result);

/// One forward on an image: writes left.ppm / right.ppm (synthesized side
/// views), d_cl, d_c, d_cr, d_lc, d_rc as PFM plus heat-mapped PPMs
/// (<name>_heat.ppm). With `with_sgm`, also runs SGM on the narrow and wide
/// synthesized pairs (sgm_narrow_lc, sgm_narrow_cr, sgm_wide).
void synthesize(config::RunConfig cfg, const fs::path& checkpoint, const fs::path& image,
                const fs::path& out, bool with_sgm);

/// SGM with cfg.sgm on two image files; writes `out` (PFM) and a heat map
/// next to it (same stem, _heat.ppm) plus config.ini in its directory.
Tensor<float> sgm(config::RunConfig cfg, const fs::path& left, const fs::path& right,
                  const fs::path& out);

}  // namespace trinet::app
