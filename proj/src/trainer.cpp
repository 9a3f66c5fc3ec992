#include "segan/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "segan/patches.hpp"

namespace segan::trainer {

namespace {

[[noreturn]] void fail(const std::string& msg) {
  throw std::invalid_argument("trainer: " + msg);
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};

using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_out(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) fail("cannot open '" + path + "' for writing");
  return f;
}

}  // namespace

// ---- ADAM -------------------------------------------------------------------

AdamState::AdamState(const std::vector<Parameter>& params) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (const auto& p : params) {
    m_.push_back(Tensor::zeros(p.var.value().shape()));
    v_.push_back(Tensor::zeros(p.var.value().shape()));
  }
}

void AdamState::step(std::vector<Parameter>& params, const AdamConfig& cfg,
                     int iteration) {
  if (params.size() != m_.size())
    fail("ADAM state was built for a different parameter list");
  if (!(cfg.learning_rate > 0.0) || !(cfg.eps > 0.0))
    fail("learning_rate and eps must be positive");
  if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0) ||
      !(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0))
    fail("ADAM betas must lie in [0,1)");
  if (!(cfg.weight_decay >= 0.0)) fail("weight_decay must be non-negative");

  ++t_;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (!p.trainable) continue;
    if (!p.var.node()->has_grad())
      fail("parameter '" + p.name + "' has no gradient to apply");
    const auto& g = p.var.grad().array();
    if (!g.isFinite().all())
      throw DivergenceError("non-finite gradient in parameter '" + p.name +
                                "' at iteration " + std::to_string(iteration),
                            iteration);
    auto& m = m_[i].array();
    auto& v = v_[i].array();
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.square();
    auto& w = p.var.value().array();
    // decoupled weight decay and the moment update both read the old weights
    w -= cfg.learning_rate * cfg.weight_decay * w +
         cfg.learning_rate * (m / bc1) / ((v / bc2).sqrt() + cfg.eps);
  }
}

// ---- stepper ----------------------------------------------------------------

Trainer::Trainer(std::vector<TrainSample> train_set, TrainConfig cfg,
                 models::SuNet& gen, models::Discriminator& disc)
    : train_(std::move(train_set)),
      cfg_(std::move(cfg)),
      gen_(gen),
      disc_(disc),
      g_state_(gen.params()),
      d_state_(disc.params()),
      rng_(cfg_.seed) {
  if (train_.empty()) fail("empty training set");
  if (cfg_.batch_size < 1) fail("batch_size must be >= 1");
  if (cfg_.n_disc_steps < 0) fail("n_disc_steps must be >= 0");
  if (!(cfg_.alpha_bar > 0.0 && cfg_.alpha_bar <= 1.0))
    fail("alpha_bar must lie in (0,1]");
  const auto& shape = train_.front().x.shape();
  for (const auto& s : train_) {
    if (!(s.x.shape() == shape) || !(s.zf.shape() == shape))
      fail("training samples must all share one image shape");
  }
  (void)correlation::bound_M(cfg_.corr, 1.0);  // validates the function eagerly
  w0_.reserve(gen_.params().size());
  for (const auto& p : gen_.params()) w0_.push_back(p.var.value());
}

std::vector<int> Trainer::draw_batch() {
  std::vector<int> idx(static_cast<std::size_t>(cfg_.batch_size));
  for (auto& i : idx)
    i = static_cast<int>(rng_.next_below(train_.size()));
  return idx;
}

double Trainer::disc_step() {
  const std::vector<int> idx = draw_batch();
  zero_grads(disc_.params());
  std::vector<Var> d_real, d_fake;
  d_real.reserve(idx.size());
  d_fake.reserve(idx.size());
  for (int i : idx) {
    const auto& sample = train_[static_cast<std::size_t>(i)];
    Tensor fake;
    {
      // Algorithm 1 freezes G while D learns: sample without a tape.
      NoGradGuard ng;
      fake = gen_.forward(Var::constant(sample.zf)).value();
    }
    d_real.push_back(disc_.forward(Var::constant(sample.x),
                                   models::Discriminator::Mode::train));
    d_fake.push_back(disc_.forward(Var::constant(fake),
                                   models::Discriminator::Mode::train));
  }
  auto [loss_d, loss_g_adv] =
      losses::adversarial_losses(stack_scalars(d_real), stack_scalars(d_fake));
  (void)loss_g_adv;
  backward(loss_d);
  d_state_.step(disc_.params(), cfg_.adam, iteration_);
  return loss_d.item();
}

IterationLog Trainer::gen_step() {
  const std::vector<int> idx = draw_batch();
  // One selection per generator update, shared across the minibatch. The
  // draw happens unconditionally so the master stream's layout does not
  // depend on the loss weights.
  const std::uint64_t sel_seed = rng_.next_u64();
  patches::PairSelection selection;
  if (cfg_.weights.lambda1 > 0.0)
    selection = patches::sample_pairs(cfg_.n_patches, cfg_.alpha_bar, sel_seed);

  zero_grads(gen_.params());
  IterationLog row;
  std::vector<Var> totals, d_fake;
  totals.reserve(idx.size());
  d_fake.reserve(idx.size());
  for (int i : idx) {
    const auto& sample = train_[static_cast<std::size_t>(i)];
    Var g = gen_.forward(Var::constant(sample.zf));
    losses::SelParts parts = losses::sel_components(
        Var::constant(sample.x), g, cfg_.weights, cfg_.corr, cfg_.ssim,
        cfg_.n_patches, cfg_.weights.lambda1 > 0.0 ? &selection : nullptr);
    totals.push_back(parts.total);
    // D scores the fake with frozen statistics; its parameters pick up
    // gradients that the next disc_step zeroes before use.
    d_fake.push_back(
        disc_.forward(g, models::Discriminator::Mode::train_frozen));
    const double inv_b = 1.0 / static_cast<double>(idx.size());
    row.spcr += inv_b * parts.pcr_term.item();
    row.ssimr += inv_b * parts.ssimr_term.item();
    row.mse += inv_b * parts.mse_term.item();
  }
  Var sel_mean = mean(stack_scalars(totals));
  Var adv = losses::adversarial_generator(stack_scalars(d_fake));
  Var objective = add(sel_mean, adv);
  backward(objective);
  g_state_.step(gen_.params(), cfg_.adam, iteration_);
  update_drift();

  row.sel_total = sel_mean.item();
  row.adv_g = adv.item();
  return row;
}

IterationLog Trainer::iterate(int iter) {
  iteration_ = iter;
  double loss_d = 0.0;
  for (int s = 0; s < cfg_.n_disc_steps; ++s) loss_d = disc_step();
  IterationLog row = gen_step();
  row.iter = iter;
  row.loss_d = loss_d;
  return row;
}

void Trainer::update_drift() {
  double s = 0.0;
  const auto& params = gen_.params();
  for (std::size_t i = 0; i < params.size(); ++i)
    s += (params[i].var.value().array() - w0_[i].array()).square().sum();
  max_drift_ = std::max(max_drift_, std::sqrt(s));
}

// ---- full loop ----------------------------------------------------------------

namespace {

// Max observed gradient norms of the bound's three constituents, measured on
// one validation sample: the SSIM term (S), single correlation values on
// generated patch pairs (F), and single output pixels (G). Each probe builds
// a fresh graph; generator grads are zeroed afterwards.
struct GradProbes {
  double S = 0.0, F = 0.0, G = 0.0;
};

double param_grad_norm(const std::vector<Parameter>& params) {
  double s = 0.0;
  for (const auto& p : params)
    if (p.var.node()->has_grad()) s += p.var.grad().array().square().sum();
  return std::sqrt(s);
}

GradProbes measure_grad_bounds(models::SuNet& gen, const TrainSample& sample,
                               const TrainConfig& cfg) {
  GradProbes probes;
  auto& params = gen.params();

  zero_grads(params);
  {
    Var g = gen.forward(Var::constant(sample.zf));
    backward(losses::ssim(Var::constant(sample.x), g, cfg.ssim));
    probes.S = param_grad_norm(params);
  }
  const int n_pairs_probed = std::min(3, cfg.n_patches - 1);
  for (int k = 0; k < n_pairs_probed; ++k) {
    zero_grads(params);
    Var g = gen.forward(Var::constant(sample.zf));
    auto gp = patches::split(g, cfg.n_patches);
    backward(corr(cfg.corr, gp[static_cast<std::size_t>(k)],
                  gp[static_cast<std::size_t>(k) + 1]));
    probes.F = std::max(probes.F, param_grad_norm(params));
  }
  const int side = sample.x.dim(0);
  const int probe_px[3][2] = {{0, 0}, {side / 2, side / 2}, {side - 1, side - 1}};
  for (const auto& rc : probe_px) {
    zero_grads(params);
    Var g = gen.forward(Var::constant(sample.zf));
    Var g3 = reshape(g, {1, side, side});
    backward(sum(crop_hw(g3, rc[0], rc[1], 1, 1)));
    probes.G = std::max(probes.G, param_grad_norm(params));
  }
  zero_grads(params);
  return probes;
}

analysis::MetricBundle mean_metrics(const std::vector<TrainSample>& val,
                                    models::SuNet& gen, const TrainConfig& cfg) {
  NoGradGuard ng;
  analysis::MetricBundle acc;
  for (std::size_t i = 0; i < val.size(); ++i) {
    Tensor g = gen.forward(Var::constant(val[i].zf)).value();
    Tensor flat(val[i].x.shape(), g.array());
    const auto m = analysis::evaluate_pair(
        val[i].x, flat, cfg.ssim,
        analysis::lssm_seed(cfg.seed, static_cast<int>(i)));
    acc.nmse += m.nmse;
    acc.psnr += m.psnr;
    acc.ssim += m.ssim;
    acc.lssm20 += m.lssm20;
    acc.lssm40 += m.lssm40;
  }
  const double inv = 1.0 / static_cast<double>(val.size());
  acc.nmse *= inv;
  acc.psnr *= inv;
  acc.ssim *= inv;
  acc.lssm20 *= inv;
  acc.lssm40 *= inv;
  return acc;
}

std::vector<std::pair<std::string, Tensor>> combined_tensors(
    const models::SuNet& gen, const models::Discriminator& disc) {
  std::vector<std::pair<std::string, Tensor>> out;
  for (auto& [name, t] : gen.named_tensors()) out.emplace_back("G." + name, t);
  for (auto& [name, t] : disc.named_tensors()) out.emplace_back("D." + name, t);
  return out;
}

std::string checkpoint_name(int iter) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "checkpoint_%06d.ckpt", iter);
  return buf;
}

}  // namespace

TrainOutput train_segan(const std::vector<TrainSample>& train_set,
                        const std::vector<TrainSample>& val_set,
                        const TrainConfig& cfg, models::SuNet& gen,
                        models::Discriminator& disc, const std::string& out_dir,
                        const std::string& config_text) {
  if (cfg.total_iterations < 1) fail("total_iterations must be >= 1");
  Trainer stepper(train_set, cfg, gen, disc);

  TrainOutput out;
  out.log.reserve(static_cast<std::size_t>(cfg.total_iterations));
  out.constants.lambda1 = cfg.weights.lambda1;
  out.constants.lambda2 = cfg.weights.lambda2;
  out.constants.lambda3 = cfg.weights.lambda3;
  out.constants.M = correlation::bound_M(cfg.corr, 1.0);
  out.constants.alpha_bar = cfg.alpha_bar;
  out.constants.N = static_cast<double>(cfg.n_patches);
  out.constants.d = 1.0;  // images and generator outputs both live in [0,1]
  out.constants.K = static_cast<double>(train_set.front().x.dim(0));

  double baseline = 0.0;
  for (int t = 1; t <= cfg.total_iterations; ++t) {
    IterationLog row = stepper.iterate(t);
    out.log.push_back(row);

    if (!std::isfinite(row.sel_total) || !std::isfinite(row.loss_d) ||
        !std::isfinite(row.adv_g))
      throw DivergenceError(
          "non-finite loss at iteration " + std::to_string(t), t);
    if (t <= 10) {
      baseline += row.sel_total / 10.0;
    } else if (row.sel_total > cfg.divergence_factor * baseline) {
      throw DivergenceError(
          "SSEL " + std::to_string(row.sel_total) + " at iteration " +
              std::to_string(t) + " exceeds " +
              std::to_string(cfg.divergence_factor) + "x the startup mean " +
              std::to_string(baseline),
          t);
    }

    const bool at_eval =
        cfg.eval_every > 0 && (t % cfg.eval_every == 0 || t == cfg.total_iterations);
    if (at_eval) {
      if (!val_set.empty())
        out.metrics.push_back({t, mean_metrics(val_set, gen, cfg)});
      const GradProbes p = measure_grad_bounds(
          gen, val_set.empty() ? train_set.front() : val_set.front(), cfg);
      out.constants.S = std::max(out.constants.S, p.S);
      out.constants.F = std::max(out.constants.F, p.F);
      out.constants.G = std::max(out.constants.G, p.G);
    }

    if (!out_dir.empty() && cfg.checkpoint_every > 0 &&
        t % cfg.checkpoint_every == 0 && t != cfg.total_iterations) {
      models::save_checkpoint(out_dir + "/" + checkpoint_name(t), config_text,
                              combined_tensors(gen, disc));
    }
  }

  out.constants.D_diam = 2.0 * stepper.max_drift();
  std::vector<double> trace;
  trace.reserve(out.log.size());
  for (const auto& row : out.log) trace.push_back(row.sel_total);
  out.regret = analysis::regret_curve(trace, analysis::CStarMode::best_iterate,
                                      {}, &out.constants);

  if (!out_dir.empty()) {
    models::save_checkpoint(out_dir + "/checkpoint_final.ckpt", config_text,
                            combined_tensors(gen, disc));
    {
      FilePtr f = open_out(out_dir + "/train_log.csv");
      std::fprintf(f.get(), "iter,spcr,ssimr,mse,adv_g,loss_d,sel_total\n");
      for (const auto& r : out.log)
        std::fprintf(f.get(), "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                     r.iter, r.spcr, r.ssimr, r.mse, r.adv_g, r.loss_d,
                     r.sel_total);
    }
    {
      FilePtr f = open_out(out_dir + "/metrics.csv");
      std::fprintf(f.get(), "iter,nmse,psnr,ssim,lssm20,lssm40\n");
      for (const auto& r : out.metrics)
        std::fprintf(f.get(), "%d,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.iter,
                     r.mean.nmse, r.mean.psnr, r.mean.ssim, r.mean.lssm20,
                     r.mean.lssm40);
    }
    analysis::write_regret_csv(out_dir + "/regret.csv", out.regret);
    analysis::write_bound_constants(out_dir + "/bound_constants.txt",
                                    out.constants);
  }
  return out;
}

}  // namespace segan::trainer
