#include "trinet/trainer.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>
#include <stdexcept>

#include "trinet/fusion.hpp"

namespace trinet::train {

using ad::Tape;
using ad::Var;
using model::NetworkParams;
using model::ParamGroup;

namespace {

double unit_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

bool bit_equal(const Tensor<float>& a, const Tensor<float>& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(float)) == 0;
}

void require_finite(const Tensor<float>& t, const std::string& what) {
  for (float v : t.data()) {
    if (!std::isfinite(v)) throw NonFiniteLoss("non-finite gradient for " + what);
  }
}

void require_pair(const StereoPair& pair) {
  require_image(pair.left, "stereo pair left");
  require_image(pair.right, "stereo pair right");
  if (pair.left.shape() != pair.right.shape()) {
    throw std::invalid_argument("stereo pair: left " + shape_str(pair.left.shape()) +
                                " and right " + shape_str(pair.right.shape()) + " differ");
  }
}

// Gamma, brightness and per-channel gain, then clamp to [0,1].
Tensor<float> jitter(const Tensor<float>& img, std::mt19937_64& rng) {
  const double gamma = 0.8 + 0.4 * unit_uniform(rng);
  const double brightness = 0.5 + 1.5 * unit_uniform(rng);
  double gain[3];
  for (double& g : gain) g = 0.8 + 0.4 * unit_uniform(rng);
  Tensor<float> out(img.shape());
  const int C = img.dim(1), H = img.dim(2), W = img.dim(3);
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const double v = std::pow(std::max(0.0, static_cast<double>(img.at(0, c, y, x))), gamma) *
                         brightness * gain[c % 3];
        out.at(0, c, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
  return out;
}

std::string format_terms(const loss::LossTerms& t) {
  std::ostringstream os;
  os << std::setprecision(9) << t.appearance_sum() << ',' << t.smoothness_sum() << ','
     << t.consistency_sum() << ',' << t.center_sum() << ',' << t.total;
  return os.str();
}

}  // namespace

AdamState AdamState::for_params(const NetworkParams& params, AdamConfig config) {
  AdamState s;
  s.config = config;
  for (const auto& e : params.entries()) {
    s.slots.push_back({Tensor<float>(e.value.shape()), Tensor<float>(e.value.shape()), 0});
  }
  return s;
}

bool AdamState::operator==(const AdamState& other) const {
  if (slots.size() != other.slots.size()) return false;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (slots[i].step != other.slots[i].step || !bit_equal(slots[i].m, other.slots[i].m) ||
        !bit_equal(slots[i].v, other.slots[i].v))
      return false;
  }
  return config.beta1 == other.config.beta1 && config.beta2 == other.config.beta2 &&
         config.eps == other.config.eps;
}

void adam_step(Tensor<float>& param, const Tensor<float>& grad, AdamSlot& slot, double lr,
               const AdamConfig& c) {
  if (param.shape() != grad.shape() || param.shape() != slot.m.shape() ||
      param.shape() != slot.v.shape()) {
    throw std::invalid_argument("adam_step: parameter " + shape_str(param.shape()) + ", gradient " +
                                shape_str(grad.shape()) + ", moments " + shape_str(slot.m.shape()));
  }
  if (!(lr > 0.0)) throw std::invalid_argument("adam_step: learning rate must be positive");
  ++slot.step;
  const double t = static_cast<double>(slot.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < param.numel(); ++i) {
    const double g = grad[i];
    const double m = c.beta1 * slot.m[i] + (1.0 - c.beta1) * g;
    const double v = c.beta2 * slot.v[i] + (1.0 - c.beta2) * g * g;
    slot.m[i] = static_cast<float>(m);
    slot.v[i] = static_cast<float>(v);
    const double m_hat = m / bc1;
    const double v_hat = v / bc2;
    param[i] = static_cast<float>(param[i] - lr * m_hat / (std::sqrt(v_hat) + c.eps));
  }
}

void adam_update(NetworkParams& params, const std::vector<std::size_t>& indices,
                 const std::vector<Tensor<float>>& grads, AdamState& state, double lr) {
  if (indices.size() != grads.size()) {
    throw std::invalid_argument("adam_update: " + std::to_string(indices.size()) +
                                " parameters but " + std::to_string(grads.size()) + " gradients");
  }
  if (state.slots.size() != params.size()) {
    throw std::invalid_argument("adam_update: optimizer state does not match the network");
  }
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const std::size_t i = indices[k];
    adam_step(params.entries().at(i).value, grads[k], state.slots.at(i), lr, state.config);
  }
}

void TrainPlan::validate() const {
  if (epochs <= 0) throw std::invalid_argument("train plan: epochs must be positive");
  if (batch_size <= 0) throw std::invalid_argument("train plan: batch size must be positive");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("train plan: learning rate must be positive");
  if (checkpoint_every < 0 || validate_every < 0) {
    throw std::invalid_argument("train plan: intervals must be non-negative");
  }
}

double lr_schedule(const TrainPlan& plan, int epoch) {
  plan.validate();
  if (epoch < 0 || epoch >= plan.epochs) {
    throw std::out_of_range("lr_schedule: epoch " + std::to_string(epoch) + " outside [0, " +
                            std::to_string(plan.epochs) + ")");
  }
  // Integer comparisons: epoch < 0.6 E  <=>  5 epoch < 3 E.
  if (5 * epoch < 3 * plan.epochs) return plan.learning_rate;
  if (5 * epoch < 4 * plan.epochs) return plan.learning_rate / 2.0;
  return plan.learning_rate / 4.0;
}

std::vector<std::size_t> routed_indices(const NetworkParams& params, Phase phase) {
  const bool single = params.config().single_decoder;
  const ParamGroup decoder =
      (phase == Phase::one || single) ? ParamGroup::left_decoder : ParamGroup::right_decoder;
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const ParamGroup g = params.entries()[i].group;
    if (g == ParamGroup::encoder || g == decoder) out.push_back(i);
  }
  return out;
}

loss::LossTerms train_phase(NetworkParams& params, AdamState& adam, const StereoPair& pair,
                            const loss::LossWeights& w, double lr, Phase phase,
                            const StepOptions& opt) {
  require_pair(pair);
  const bool one = phase == Phase::one;
  // Phase 1: centre := R, left := L. Phase 2: centre := L, right := R.
  const Tensor<float>& center = one ? pair.right : pair.left;
  const Tensor<float>& side = one ? pair.left : pair.right;
  const auto center_pyr = warp::build_pyramid(center);
  const auto side_pyr = warp::build_pyramid(side);

  Tape<float> tape;
  const model::BoundParams bound = model::bind_params(tape, params, true);
  const model::Decoders which = w.center_consistency ? model::Decoders::both
                                : one                 ? model::Decoders::left
                                                      : model::Decoders::right;
  const auto outputs = model::forward(params, bound, tape.constant(center), which);
  const auto breakdown = one ? loss::phase1_loss(tape, side_pyr, center_pyr, outputs, w)
                             : loss::phase2_loss(tape, center_pyr, side_pyr, outputs, w);
  if (!std::isfinite(breakdown.terms.total)) {
    throw NonFiniteLoss(std::string("non-finite phase-") + (one ? "1" : "2") + " loss");
  }
  tape.backward(breakdown.total);

  const auto indices = routed_indices(params, phase);
  std::vector<Tensor<float>> grads;
  grads.reserve(indices.size());
  for (std::size_t i : indices) {
    grads.push_back(tape.grad(bound.vars[i]));
    require_finite(grads.back(), params.entries()[i].name);
  }

  std::vector<std::pair<std::size_t, Tensor<float>>> frozen;
  if (opt.verify_routing) {
    std::size_t k = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (k < indices.size() && indices[k] == i) { ++k; continue; }
      frozen.emplace_back(i, params.entries()[i].value);
    }
  }
  adam_update(params, indices, grads, adam, lr);
  for (const auto& [i, before] : frozen) {
    if (!bit_equal(before, params.entries()[i].value)) {
      throw std::logic_error("routing violated: " + params.entries()[i].name + " changed");
    }
  }
  return breakdown.terms;
}

StepResult train_step(NetworkParams& params, AdamState& adam, const StereoPair& pair,
                      const loss::LossWeights& w, double lr, const StepOptions& opt) {
  const NetworkParams params_before = params;
  const AdamState adam_before = adam;
  try {
    StepResult r;
    r.phase1 = train_phase(params, adam, pair, w, lr, Phase::one, opt);
    r.phase2 = train_phase(params, adam, pair, w, lr, Phase::two, opt);
    return r;
  } catch (const std::runtime_error& e) {
    params = params_before;
    adam = adam_before;
    // Non-finite values from any op surface as NonFiniteLoss with context.
    if (dynamic_cast<const NonFiniteLoss*>(&e)) throw;
    const std::string what = e.what();
    if (what.find("non-finite") != std::string::npos) throw NonFiniteLoss("train_step aborted: " + what);
    throw;
  }
}

metrics::MetricsRecord validate(const NetworkParams& params,
                                const std::vector<ValidationSample>& samples,
                                const metrics::CameraModel& cam, double cap, bool post_process) {
  if (samples.empty()) throw std::invalid_argument("validate: no samples");
  std::vector<metrics::MetricsRecord> records;
  records.reserve(samples.size());
  for (const auto& s : samples) {
    const DisparityMap d_c = post_process ? fusion::post_process(params, s.image).d_c
                                          : fusion::predict(params, s.image);
    records.push_back(metrics::evaluate_disparity(d_c.map.data(), s.gt_disp.data(), cam, cap));
  }
  return metrics::aggregate(records);
}

std::string log_header() {
  return "step,epoch,lr,p1_appearance,p1_smoothness,p1_consistency,p1_center,p1_total,"
         "p2_appearance,p2_smoothness,p2_consistency,p2_center,p2_total";
}

TrainSummary train(NetworkParams& params, const std::vector<StereoPair>& data,
                   const TrainPlan& plan, const loss::LossWeights& w,
                   const std::vector<ValidationSample>& validation, const TrainIO& io) {
  plan.validate();
  w.validate();
  if (data.empty()) throw std::invalid_argument("train: empty dataset");
  for (const auto& p : data) {
    require_pair(p);
    if (p.left.dim(0) != 1 || p.left.shape() != data.front().left.shape()) {
      throw std::invalid_argument("train: every pair must be [1,3,H,W] with equal extents");
    }
  }

  std::ofstream log, val;
  if (!io.out_dir.empty()) {
    std::filesystem::create_directories(io.out_dir);
    log.open(io.out_dir / "log.csv");
    val.open(io.out_dir / "val.csv");
    if (!log) throw std::runtime_error("cannot write " + (io.out_dir / "log.csv").string());
    if (!val) throw std::runtime_error("cannot write " + (io.out_dir / "val.csv").string());
    log << log_header() << "\n";
    val << "epoch," << metrics::csv_header() << "\n";
  }

  std::mt19937_64 rng(plan.seed);
  AdamState adam = AdamState::for_params(params);
  TrainSummary summary;
  std::vector<std::size_t> order(data.size());
  std::int64_t step = 0;

  for (int epoch = 0; epoch < plan.epochs; ++epoch) {
    const double lr = lr_schedule(plan, epoch);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(rng() % i);
      std::swap(order[i - 1], order[j]);
    }
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(plan.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(plan.batch_size));
      std::vector<Tensor<float>> lefts, rights;
      for (std::size_t k = start; k < end; ++k) {
        const StereoPair& p = data[order[k]];
        Tensor<float> l = p.left, r = p.right;
        if (plan.augmentation.flip && unit_uniform(rng) < 0.5) {
          Tensor<float> fl = flip_horizontal(r);
          r = flip_horizontal(l);
          l = std::move(fl);
        }
        if (plan.augmentation.color_jitter) {
          if (unit_uniform(rng) < 0.5) l = jitter(l, rng);
          if (unit_uniform(rng) < 0.5) r = jitter(r, rng);
        }
        lefts.push_back(std::move(l));
        rights.push_back(std::move(r));
      }
      const StereoPair batch{stack_batch<float>(lefts), stack_batch<float>(rights)};
      StepResult r;
      try {
        r = train_step(params, adam, batch, w, lr);
      } catch (const NonFiniteLoss& e) {
        throw NonFiniteLoss("step " + std::to_string(step) + " (epoch " + std::to_string(epoch) +
                            "): " + e.what());
      }
      if (log.is_open()) {
        log << step << ',' << epoch << ',' << std::setprecision(9) << lr << ','
            << format_terms(r.phase1) << ',' << format_terms(r.phase2) << "\n";
      }
      if (io.on_step) io.on_step(step, epoch, r);
      summary.steps.push_back(r);
      ++step;
    }

    const bool last = epoch + 1 == plan.epochs;
    const bool do_val = !validation.empty() &&
                        (last || (plan.validate_every > 0 && (epoch + 1) % plan.validate_every == 0));
    if (do_val) {
      const auto rec = validate(params, validation, io.camera, io.cap, false);
      summary.validation.push_back(rec);
      if (val.is_open()) val << epoch << ',' << metrics::csv_row(rec) << "\n";
    }
    if (!io.out_dir.empty() && plan.checkpoint_every > 0 && !last &&
        (epoch + 1) % plan.checkpoint_every == 0) {
      std::ostringstream name;
      name << "checkpoint_e" << std::setw(3) << std::setfill('0') << epoch + 1;
      model::save_checkpoint(params, io.out_dir / name.str());
    }
  }
  if (!io.out_dir.empty()) {
    model::save_checkpoint(params, io.out_dir / "checkpoint");
    log.flush();
    val.flush();
    if (!log.good()) throw std::runtime_error("write failed: " + (io.out_dir / "log.csv").string());
  }
  return summary;
}

}  // namespace trinet::train
