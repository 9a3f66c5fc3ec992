#include "segan/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace segan::losses {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

Var as_chw(const Var& v) {
  if (v.value().rank() == 2) return reshape(v, {1, v.value().dim(0), v.value().dim(1)});
  if (v.value().rank() == 3 && v.value().dim(0) == 1) return v;
  fail("losses: expected [H,W] or [1,H,W] image, got " + v.value().shape_str());
}

// Normalized Gaussian window as a [1,1,w,w] convolution kernel.
Tensor gaussian_window(const SsimConfig& cfg) {
  const int w = cfg.window_side;
  Tensor k({1, 1, w, w});
  const double c = (w - 1) / 2.0;
  double total = 0.0;
  for (int i = 0; i < w; ++i)
    for (int j = 0; j < w; ++j) {
      const double d2 = (i - c) * (i - c) + (j - c) * (j - c);
      const double v = std::exp(-d2 / (2.0 * cfg.gaussian_sigma * cfg.gaussian_sigma));
      k[idx4(0, 0, i, j, 1, w, w)] = v;
      total += v;
    }
  k.array() /= total;
  return k;
}

}  // namespace

Var mse_frobenius(const Var& x, const Var& g) {
  if (!x.value().same_shape(g.value())) {
    fail("mse_frobenius: shape mismatch " + x.value().shape_str() + " vs " +
         g.value().shape_str());
  }
  return mean(square(sub(x, g)));
}

Var ssim(const Var& x_in, const Var& g_in, const SsimConfig& cfg) {
  Var x = as_chw(x_in), g = as_chw(g_in);
  if (!x.value().same_shape(g.value())) {
    fail("ssim: shape mismatch " + x_in.value().shape_str() + " vs " +
         g_in.value().shape_str());
  }
  if (cfg.window_side < 1 || cfg.window_side % 2 == 0) {
    fail("ssim: window_side must be a positive odd number");
  }
  if (cfg.window_side > x.value().dim(1) || cfg.window_side > x.value().dim(2)) {
    fail("ssim: window " + std::to_string(cfg.window_side) +
         " larger than image " + x_in.value().shape_str());
  }
  if (!(cfg.k1 > 0.0) || !(cfg.k2 > 0.0) || !(cfg.gaussian_sigma > 0.0)) {
    fail("ssim: k1, k2 and gaussian_sigma must be positive");
  }

  const double c1 = cfg.k1 * cfg.dynamic_range * cfg.k1 * cfg.dynamic_range;
  const double c2 = cfg.k2 * cfg.dynamic_range * cfg.k2 * cfg.dynamic_range;
  Var win = Var::constant(gaussian_window(cfg));

  Var mu_x = conv2d(x, win, 1, 0);
  Var mu_y = conv2d(g, win, 1, 0);
  Var var_x = sub(conv2d(mul(x, x), win, 1, 0), mul(mu_x, mu_x));
  Var var_y = sub(conv2d(mul(g, g), win, 1, 0), mul(mu_y, mu_y));
  Var cov = sub(conv2d(mul(x, g), win, 1, 0), mul(mu_x, mu_y));

  Var num = mul(add_scalar(mul_scalar(mul(mu_x, mu_y), 2.0), c1),
                add_scalar(mul_scalar(cov, 2.0), c2));
  Var den = mul(add_scalar(add(mul(mu_x, mu_x), mul(mu_y, mu_y)), c1),
                add_scalar(add(var_x, var_y), c2));
  return mean(div(num, den));
}

Var ssimr(const Var& x, const Var& g, const SsimConfig& cfg) {
  return square(add_scalar(neg(ssim(x, g, cfg)), 1.0));
}

namespace {

Var pair_sum(const std::vector<Var>& x_patches, const std::vector<Var>& g_patches,
             const correlation::CorrelationFunction& f,
             const patches::PairSelection* selection) {
  const int n = static_cast<int>(x_patches.size());
  if (n < 2) fail("pcr: need at least 2 patches");
  if (g_patches.size() != x_patches.size()) {
    fail("pcr: patch count mismatch, " + std::to_string(x_patches.size()) + " vs " +
         std::to_string(g_patches.size()));
  }
  if (selection && selection->n_patches != n) {
    fail("spcr: selection sized for " + std::to_string(selection->n_patches) +
         " patches, got " + std::to_string(n));
  }
  const double n_pairs = static_cast<double>(n) * (n - 1) / 2.0;
  Var acc;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      if (selection && !selection->at(i, j)) continue;
      Var d = sub(corr(f, x_patches[i], x_patches[j]),
                  corr(f, g_patches[i], g_patches[j]));
      Var sq = square(d);
      acc = acc.valid() ? add(acc, sq) : sq;
    }
  if (!acc.valid()) return Var::constant(Tensor::scalar(0.0));  // nothing selected
  return mul_scalar(acc, 1.0 / n_pairs);
}

}  // namespace

Var pcr(const std::vector<Var>& x_patches, const std::vector<Var>& g_patches,
        const correlation::CorrelationFunction& f) {
  return pair_sum(x_patches, g_patches, f, nullptr);
}

Var spcr(const std::vector<Var>& x_patches, const std::vector<Var>& g_patches,
         const correlation::CorrelationFunction& f,
         const patches::PairSelection& selection) {
  return pair_sum(x_patches, g_patches, f, &selection);
}

SelParts sel_components(const Var& x, const Var& g, const LossWeights& w,
                        const correlation::CorrelationFunction& f,
                        const SsimConfig& cfg, int n_patches,
                        const patches::PairSelection* selection) {
  if (!(w.lambda1 >= 0.0) || !(w.lambda2 >= 0.0) || !(w.lambda3 >= 0.0)) {
    fail("sel: loss weights must be non-negative");
  }
  SelParts parts;
  const Var zero = Var::constant(Tensor::scalar(0.0));

  if (w.lambda1 > 0.0) {
    // the x side carries no gradient; detach so its patch graph stays dead
    const std::vector<Var> xp = patches::split(detach(x), n_patches);
    const std::vector<Var> gp = patches::split(g, n_patches);
    parts.pcr_term = selection ? spcr(xp, gp, f, *selection) : pcr(xp, gp, f);
  } else {
    parts.pcr_term = zero;
  }
  parts.ssimr_term = w.lambda2 > 0.0 ? ssimr(x, g, cfg) : zero;
  parts.mse_term = w.lambda3 > 0.0 ? mse_frobenius(x, g) : zero;

  Var total = zero;
  if (w.lambda1 > 0.0) total = add(total, mul_scalar(parts.pcr_term, w.lambda1));
  if (w.lambda2 > 0.0) total = add(total, mul_scalar(parts.ssimr_term, w.lambda2));
  if (w.lambda3 > 0.0) total = add(total, mul_scalar(parts.mse_term, w.lambda3));
  parts.total = total;
  return parts;
}

Var sel(const Var& x, const Var& g, const LossWeights& w,
        const correlation::CorrelationFunction& f, const SsimConfig& cfg,
        int n_patches, const patches::PairSelection* selection) {
  return sel_components(x, g, w, f, cfg, n_patches, selection).total;
}

namespace {

void require_scores(const Var& scores) {
  const auto& a = scores.value().array();
  if (!((a >= 0.0) && (a <= 1.0)).all()) {
    fail("adversarial_losses: scores outside [0,1] — missing sigmoid?");
  }
}

}  // namespace

Var adversarial_generator(const Var& d_fake) {
  require_scores(d_fake);
  Var df = clamp(d_fake, 1e-7, 1.0 - 1e-7);
  return mean(log(add_scalar(neg(df), 1.0)));
}

std::pair<Var, Var> adversarial_losses(const Var& d_real, const Var& d_fake) {
  require_scores(d_real);
  Var log_one_minus_fake = adversarial_generator(d_fake);
  Var dr = clamp(d_real, 1e-7, 1.0 - 1e-7);
  Var loss_d = neg(add(mean(log(dr)), log_one_minus_fake));
  return {loss_d, log_one_minus_fake};
}

}  // namespace segan::losses
