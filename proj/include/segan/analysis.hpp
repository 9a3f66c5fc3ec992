// Reconstruction quality metrics (NMSE, PSNR, SSIM, N-LSSM), the online
// regret accounting for the GD-SSEL guarantee, its closed-form bound, and a
// convex surrogate run that makes every bound constant measurable exactly.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "segan/losses.hpp"
#include "segan/tensor.hpp"

namespace segan::analysis {

// ||x - g||_2 / ||x||_2 by default; `squared` selects the squared-ratio
// convention. x must not be all zero.
double nmse(const Tensor& x, const Tensor& g, bool squared = false);

// 10*log10(peak^2 / MSE); +infinity when the images match exactly.
double psnr(const Tensor& x, const Tensor& g, double peak = 1.0);

// Plain value of the windowed SSIM (no gradient tape).
double ssim_value(const Tensor& x, const Tensor& g,
                  const losses::SsimConfig& cfg);

// Mean SSIM over n random patch positions (identical positions in x and g,
// deterministic per seed); the SSIM window shrinks to fit the patch if
// needed. patch_side must not exceed the image side.
double n_lssm(const Tensor& x, const Tensor& g, int n, int patch_side,
              const losses::SsimConfig& cfg, std::uint64_t seed);

// The standard evaluation bundle: NMSE, PSNR, SSIM plus 20- and 40-position
// LSSM at patch side min(20, image side). The two LSSM draws use seed_base
// and seed_base+1.
struct MetricBundle {
  double nmse = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
  double lssm20 = 0.0;
  double lssm40 = 0.0;
};
MetricBundle evaluate_pair(const Tensor& x, const Tensor& g,
                           const losses::SsimConfig& cfg,
                           std::uint64_t seed_base);

// Shared derivation of the per-item LSSM seed so training-time metrics and
// later standalone evaluation agree bit-exactly.
std::uint64_t lssm_seed(std::uint64_t run_seed, int item_index);

// ---- regret ----------------------------------------------------------------

// Comparator convention for C*(T): the best single recorded loss value held
// for all T steps, or the final parameters re-scored on the same per-
// iteration sample sequence.
enum class CStarMode { best_iterate, final_params };

struct RegretRow {
  int T = 0;
  double C = 0.0;
  double C_star = 0.0;
  double R = 0.0;
  double avg_regret = 0.0;
  double bound = 0.0;  // NaN when no constants are supplied
};

// Everything the guarantee's right-hand side consumes. D_diam is taken from
// the actual parameter trajectory; gradient bounds are max observed norms;
// M comes from correlation::bound_M and d from the [0,1] pixel range.
struct BoundConstants {
  double D_diam = 0.0;
  double lambda1 = 0.0, lambda2 = 0.0, lambda3 = 0.0;
  double M = 0.0;        // correlation value bound
  double alpha_bar = 0.0;
  double N = 0.0;        // patch count
  double F = 0.0;        // correlation gradient bound
  double S = 0.0;        // SSIM-term gradient bound
  double d = 0.0;        // pixel range bound
  double K = 0.0;        // image side
  double G = 0.0;        // generator output gradient bound
};

// D_diam^2*sqrt(T)/2 + (l1*M*alpha_bar*N^2*F + l2*S + l3*d*K^2*G)^2*(4*sqrt(T)-2)
double theorem1_bound(const BoundConstants& c, double T);

// One row per prefix T = 1..trace size. `comparator` is required (same
// length, L_t at the final parameters) in final_params mode and ignored
// otherwise; pass constants to fill the bound column.
std::vector<RegretRow> regret_curve(const std::vector<double>& trace,
                                    CStarMode mode,
                                    const std::vector<double>& comparator = {},
                                    const BoundConstants* constants = nullptr);

// Columns: T,C,C_star,R,avg_regret,bound.
void write_regret_csv(const std::string& path,
                      const std::vector<RegretRow>& rows);

// Constants as "name = value" lines, full precision, so a bound column can
// be reproduced from a finished run's artifacts.
void write_bound_constants(const std::string& path, const BoundConstants& c);
BoundConstants read_bound_constants(const std::string& path);

// ---- convex surrogate -------------------------------------------------------

// Online gradient descent (step 1/sqrt(t)) on MSE only, with a single-layer
// linear 3x3 convolution as the generator: convex in its 10 parameters, so
// the guarantee's hypotheses hold with constants measured from the run
// itself (exact pairwise trajectory diameter included).
struct ConvexRunResult {
  std::vector<double> trace;       // L_t at the iterate actually used
  std::vector<double> comparator;  // L_t at the final parameters
  BoundConstants constants;
  std::vector<RegretRow> rows;     // final_params mode, bound filled in
};
ConvexRunResult run_convex_surrogate(int total_steps, int side, int n_images,
                                     double sampling_rate, std::uint64_t seed);

}  // namespace segan::analysis
