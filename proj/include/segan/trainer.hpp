// Alternating adversarial training: n discriminator ADAM steps then one
// generator ADAM step on SSEL + adversarial loss per outer iteration, with
// loss/metric logging, a divergence guard, and bound-constant measurement
// for the regret report.
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "segan/analysis.hpp"
#include "segan/autodiff.hpp"
#include "segan/correlation.hpp"
#include "segan/losses.hpp"
#include "segan/models.hpp"
#include "segan/rng.hpp"
#include "segan/tensor.hpp"

namespace segan::trainer {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;  // decoupled: param -= lr*wd*param
};

// Raised when training cannot continue (runaway loss or non-finite
// gradients); carries the iteration for diagnostics.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, int iteration)
      : std::runtime_error(what), iteration(iteration) {}
  int iteration = 0;
};

// Bias-corrected ADAM moments for one parameter list; `step` consumes the
// gradients currently stored on the parameters.
class AdamState {
 public:
  explicit AdamState(const std::vector<Parameter>& params);
  void step(std::vector<Parameter>& params, const AdamConfig& cfg,
            int iteration);
  long step_count() const { return t_; }

 private:
  long t_ = 0;
  std::vector<Tensor> m_, v_;
};

// One training pair: ground truth and its zero-filled reconstruction.
struct TrainSample {
  Tensor x;
  Tensor zf;
};

struct TrainConfig {
  AdamConfig adam;
  int batch_size = 4;
  int n_disc_steps = 1;
  int total_iterations = 2000;
  std::uint64_t seed = 1;
  losses::LossWeights weights;
  correlation::CorrelationFunction corr =
      correlation::CorrelationFunction::polynomial();
  double alpha_bar = 0.1;
  int n_patches = 64;
  losses::SsimConfig ssim;
  int eval_every = 100;        // metrics cadence (iterations)
  int checkpoint_every = 500;  // 0 disables intermediate checkpoints
  double divergence_factor = 1000.0;
};

struct IterationLog {
  int iter = 0;
  double spcr = 0.0;       // batch means of the unweighted loss components
  double ssimr = 0.0;
  double mse = 0.0;
  double adv_g = 0.0;      // generator's adversarial term
  double loss_d = 0.0;     // last discriminator loss of the iteration
  double sel_total = 0.0;  // weighted SSEL (the regret trace entry)
};

// Step-level access so the freezing and seeding contracts stay testable; the
// full loop with logging lives in train_segan below.
//
// Per iteration the master RNG stream is consumed in a fixed order —
// batch_size index draws per discriminator step, batch_size index draws for
// the generator step, then exactly one u64 for the pair-selection seed — so
// discriminator updates are independent of the loss weights.
class Trainer {
 public:
  Trainer(std::vector<TrainSample> train_set, TrainConfig cfg,
          models::SuNet& gen, models::Discriminator& disc);

  double disc_step();        // one ADAM update of D; G untouched
  IterationLog gen_step();   // one ADAM update of G; D params untouched
  IterationLog iterate(int iter);

  // max ||w_t - w_0|| over generator parameters seen so far
  double max_drift() const { return max_drift_; }
  const TrainConfig& config() const { return cfg_; }

 private:
  std::vector<TrainSample> train_;
  TrainConfig cfg_;
  models::SuNet& gen_;
  models::Discriminator& disc_;
  AdamState g_state_, d_state_;
  SplitMix64 rng_;
  std::vector<Tensor> w0_;
  double max_drift_ = 0.0;
  int iteration_ = 0;

  std::vector<int> draw_batch();
  void update_drift();
};

struct MetricsRow {
  int iter = 0;
  analysis::MetricBundle mean;  // averaged over the validation set
};

struct TrainOutput {
  std::vector<IterationLog> log;
  std::vector<MetricsRow> metrics;
  analysis::BoundConstants constants;
  std::vector<analysis::RegretRow> regret;
};

// Runs the full loop: divergence guard (halts once SSEL exceeds
// divergence_factor x its mean over iterations 1-10), periodic validation
// metrics and gradient-bound measurements, and — when out_dir is non-empty —
// train_log.csv, metrics.csv, regret.csv and checkpoints (named parameter
// tensors of both models under "G."/"D." prefixes, config_text embedded).
TrainOutput train_segan(const std::vector<TrainSample>& train_set,
                        const std::vector<TrainSample>& val_set,
                        const TrainConfig& cfg, models::SuNet& gen,
                        models::Discriminator& disc,
                        const std::string& out_dir = "",
                        const std::string& config_text = "");

}  // namespace segan::trainer
