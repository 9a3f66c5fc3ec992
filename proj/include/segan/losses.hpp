// The Structure-Enhanced loss family: normalized Frobenius/MSE term,
// windowed SSIM and its regularizer, patch-correlation regularization in
// exact and stochastic-pair forms, their weighted sum SEL/SSEL, and the
// adversarial objectives for both players.
#pragma once

#include <utility>
#include <vector>

#include "segan/autodiff.hpp"
#include "segan/correlation.hpp"
#include "segan/patches.hpp"

namespace segan::losses {

struct LossWeights {
  double lambda1 = 10.0;  // (s)pcr
  double lambda2 = 1.0;   // ssimr
  double lambda3 = 100.0; // mse
};

struct SsimConfig {
  int window_side = 7;  // odd
  double gaussian_sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
};

// ||x - g||_F^2 / pixel count.
Var mse_frobenius(const Var& x, const Var& g);

// Mean of local SSIM over all fully-interior Gaussian-weighted windows;
// ssim(x,x) == 1 exactly. Inputs [side,side] or [1,H,W].
Var ssim(const Var& x, const Var& g, const SsimConfig& cfg);

// (1 - ssim)^2.
Var ssimr(const Var& x, const Var& g, const SsimConfig& cfg);

// sum_{i<j} [f(x_i,x_j) - f(g_i,g_j)]^2 / (N(N-1)/2).
Var pcr(const std::vector<Var>& x_patches, const std::vector<Var>& g_patches,
        const correlation::CorrelationFunction& f);

// Same sum restricted to selected pairs but normalized by the full pair
// count, so E_alpha[spcr] = alpha_bar * pcr.
Var spcr(const std::vector<Var>& x_patches, const std::vector<Var>& g_patches,
         const correlation::CorrelationFunction& f,
         const patches::PairSelection& selection);

struct SelParts {
  Var pcr_term;    // before lambda weighting; exact or stochastic
  Var ssimr_term;
  Var mse_term;
  Var total;       // lambda1*pcr + lambda2*ssimr + lambda3*mse
};

// Components priced separately so the trainer can log them; terms with a zero
// lambda are skipped (their logged value is exactly 0).
SelParts sel_components(const Var& x, const Var& g, const LossWeights& w,
                        const correlation::CorrelationFunction& f,
                        const SsimConfig& cfg, int n_patches,
                        const patches::PairSelection* selection = nullptr);

// The generator's Structure-Enhanced Loss; with a selection present this is
// the stochastic variant (SSEL).
Var sel(const Var& x, const Var& g, const LossWeights& w,
        const correlation::CorrelationFunction& f, const SsimConfig& cfg,
        int n_patches, const patches::PairSelection* selection = nullptr);

// d_real/d_fake are stacked post-sigmoid scores in [0,1]; both are clamped to
// [1e-7, 1-1e-7] before the logs. Returns (loss_D, loss_G_adv):
//   loss_D     = -mean log d_real - mean log(1 - d_fake)   (D descends)
//   loss_G_adv =  mean log(1 - d_fake)                     (G descends)
std::pair<Var, Var> adversarial_losses(const Var& d_real, const Var& d_fake);

// Just the generator's side, for steps where no real scores exist.
Var adversarial_generator(const Var& d_fake);

}  // namespace segan::losses
