#include "segan/analysis.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <memory>
#include <stdexcept>

#include "segan/autodiff.hpp"
#include "segan/kspace.hpp"
#include "segan/phantom.hpp"
#include "segan/rng.hpp"

namespace segan::analysis {

namespace {

[[noreturn]] void fail(const std::string& msg) {
  throw std::invalid_argument("analysis: " + msg);
}

void require_pair(const Tensor& x, const Tensor& g) {
  if (!x.same_shape(g))
    fail("image shapes differ: " + x.shape_str() + " vs " + g.shape_str());
  if (x.numel() == 0) fail("empty images");
}

}  // namespace

double nmse(const Tensor& x, const Tensor& g, bool squared) {
  require_pair(x, g);
  const double ref = x.array().square().sum();
  if (ref == 0.0) fail("nmse: reference image is all zero");
  const double err = (x.array() - g.array()).square().sum();
  return squared ? err / ref : std::sqrt(err) / std::sqrt(ref);
}

double psnr(const Tensor& x, const Tensor& g, double peak) {
  require_pair(x, g);
  if (!(peak > 0.0)) fail("psnr: peak must be positive");
  const double mse =
      (x.array() - g.array()).square().sum() / static_cast<double>(x.numel());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

double ssim_value(const Tensor& x, const Tensor& g,
                  const losses::SsimConfig& cfg) {
  NoGradGuard ng;
  return losses::ssim(Var::constant(x), Var::constant(g), cfg).item();
}

double n_lssm(const Tensor& x, const Tensor& g, int n, int patch_side,
              const losses::SsimConfig& cfg, std::uint64_t seed) {
  require_pair(x, g);
  if (x.rank() != 2 || x.dim(0) != x.dim(1))
    fail("n_lssm: expected square [side,side] images, got " + x.shape_str());
  const int side = x.dim(0);
  if (n < 1) fail("n_lssm: need at least one patch position");
  if (patch_side < 1 || patch_side > side)
    fail("n_lssm: patch side " + std::to_string(patch_side) +
         " does not fit a " + std::to_string(side) + "-pixel image");

  losses::SsimConfig local = cfg;
  if (local.window_side > patch_side)
    local.window_side = patch_side % 2 == 1 ? patch_side : patch_side - 1;

  SplitMix64 rng(seed);
  NoGradGuard ng;
  const auto span = static_cast<std::uint64_t>(side - patch_side + 1);
  double acc = 0.0;
  for (int k = 0; k < n; ++k) {
    const int r = static_cast<int>(rng.next_below(span));
    const int c = static_cast<int>(rng.next_below(span));
    Tensor px({patch_side, patch_side}), pg({patch_side, patch_side});
    for (int i = 0; i < patch_side; ++i)
      for (int j = 0; j < patch_side; ++j) {
        px[idx2(i, j, patch_side)] = x[idx2(r + i, c + j, side)];
        pg[idx2(i, j, patch_side)] = g[idx2(r + i, c + j, side)];
      }
    acc += losses::ssim(Var::constant(px), Var::constant(pg), local).item();
  }
  return acc / n;
}

MetricBundle evaluate_pair(const Tensor& x, const Tensor& g,
                           const losses::SsimConfig& cfg,
                           std::uint64_t seed_base) {
  MetricBundle m;
  m.nmse = nmse(x, g);
  m.psnr = psnr(x, g);
  m.ssim = ssim_value(x, g, cfg);
  const int patch = std::min(20, x.dim(0));
  m.lssm20 = n_lssm(x, g, 20, patch, cfg, seed_base);
  m.lssm40 = n_lssm(x, g, 40, patch, cfg, seed_base + 1);
  return m;
}

std::uint64_t lssm_seed(std::uint64_t run_seed, int item_index) {
  SplitMix64 rng(run_seed +
                 0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(item_index + 1));
  return rng.next_u64();
}

// ---- regret ----------------------------------------------------------------

double theorem1_bound(const BoundConstants& c, double T) {
  if (!(T >= 1.0)) fail("theorem1_bound: T must be >= 1");
  const double b = c.lambda1 * c.M * c.alpha_bar * c.N * c.N * c.F +
                   c.lambda2 * c.S + c.lambda3 * c.d * c.K * c.K * c.G;
  const double rt = std::sqrt(T);
  return c.D_diam * c.D_diam * rt / 2.0 + b * b * (4.0 * rt - 2.0);
}

std::vector<RegretRow> regret_curve(const std::vector<double>& trace,
                                    CStarMode mode,
                                    const std::vector<double>& comparator,
                                    const BoundConstants* constants) {
  if (trace.empty()) fail("regret: empty trace");
  for (double v : trace)
    if (!std::isfinite(v)) fail("regret: non-finite loss in trace");
  if (mode == CStarMode::final_params) {
    if (comparator.size() != trace.size())
      fail("regret: final_params mode needs one comparator loss per step");
    for (double v : comparator)
      if (!std::isfinite(v)) fail("regret: non-finite comparator loss");
  }

  std::vector<RegretRow> rows;
  rows.reserve(trace.size());
  double c_sum = 0.0, comp_sum = 0.0;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < trace.size(); ++t) {
    c_sum += trace[t];
    best = std::min(best, trace[t]);
    RegretRow row;
    row.T = static_cast<int>(t + 1);
    row.C = c_sum;
    if (mode == CStarMode::best_iterate) {
      row.C_star = best * row.T;
    } else {
      comp_sum += comparator[t];
      row.C_star = comp_sum;
    }
    row.R = row.C - row.C_star;
    row.avg_regret = row.R / row.T;
    row.bound = constants ? theorem1_bound(*constants, row.T)
                          : std::numeric_limits<double>::quiet_NaN();
    rows.push_back(row);
  }
  return rows;
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};

}  // namespace

void write_regret_csv(const std::string& path,
                      const std::vector<RegretRow>& rows) {
  std::unique_ptr<std::FILE, FileCloser> f(std::fopen(path.c_str(), "wb"));
  if (!f) fail("cannot open '" + path + "' for writing");
  std::fprintf(f.get(), "T,C,C_star,R,avg_regret,bound\n");
  for (const auto& r : rows)
    std::fprintf(f.get(), "%d,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.T, r.C,
                 r.C_star, r.R, r.avg_regret, r.bound);
}

namespace {

// field table so the text form and the struct cannot drift apart
struct ConstField {
  const char* name;
  double BoundConstants::* member;
};
constexpr ConstField kConstFields[] = {
    {"D_diam", &BoundConstants::D_diam}, {"lambda1", &BoundConstants::lambda1},
    {"lambda2", &BoundConstants::lambda2}, {"lambda3", &BoundConstants::lambda3},
    {"M", &BoundConstants::M},           {"alpha_bar", &BoundConstants::alpha_bar},
    {"N", &BoundConstants::N},           {"F", &BoundConstants::F},
    {"S", &BoundConstants::S},           {"d", &BoundConstants::d},
    {"K", &BoundConstants::K},           {"G", &BoundConstants::G},
};

}  // namespace

void write_bound_constants(const std::string& path, const BoundConstants& c) {
  std::unique_ptr<std::FILE, FileCloser> f(std::fopen(path.c_str(), "wb"));
  if (!f) fail("cannot open '" + path + "' for writing");
  for (const auto& field : kConstFields)
    std::fprintf(f.get(), "%s = %.17g\n", field.name, c.*(field.member));
}

BoundConstants read_bound_constants(const std::string& path) {
  std::unique_ptr<std::FILE, FileCloser> f(std::fopen(path.c_str(), "rb"));
  if (!f) fail("cannot open '" + path + "' for reading");
  BoundConstants c;
  bool seen[std::size(kConstFields)] = {};
  char name[64];
  double value = 0.0;
  while (std::fscanf(f.get(), " %63[^= \t] = %lf", name, &value) == 2) {
    bool known = false;
    for (std::size_t i = 0; i < std::size(kConstFields); ++i) {
      if (std::string(name) == kConstFields[i].name) {
        c.*(kConstFields[i].member) = value;
        seen[i] = known = true;
        break;
      }
    }
    if (!known) fail("unknown bound constant '" + std::string(name) + "'");
  }
  for (std::size_t i = 0; i < std::size(kConstFields); ++i)
    if (!seen[i])
      fail("bound constants file is missing '" +
           std::string(kConstFields[i].name) + "'");
  return c;
}

// ---- convex surrogate -------------------------------------------------------

ConvexRunResult run_convex_surrogate(int total_steps, int side, int n_images,
                                     double sampling_rate, std::uint64_t seed) {
  if (total_steps < 1) fail("convex surrogate: need at least one step");
  if (n_images < 1) fail("convex surrogate: need at least one image");

  // Fixed task: reconstruct phantoms from their zero-filled aliases with a
  // single same-padded 3x3 convolution plus bias (10 parameters, no
  // squashing), minimizing MSE only. Linear model + convex loss => the
  // objective is convex in the parameters.
  const auto phantoms = cli_io::generate_phantoms(n_images, side, seed);
  const auto mask = kspace::make_gaussian_mask(side, sampling_rate, seed + 1);
  std::vector<Tensor> inputs;
  inputs.reserve(phantoms.size());
  for (const auto& x : phantoms)
    inputs.push_back(kspace::zero_fill(kspace::undersample(x, mask, 0.0, 0)));

  std::vector<Parameter> params;
  params.push_back({"w", Var::leaf(Tensor::zeros({1, 1, 3, 3})), true});
  params.push_back({"b", Var::leaf(Tensor::zeros({1})), true});

  const auto forward = [&](int img) {
    Var zf = reshape(Var::constant(inputs[static_cast<std::size_t>(img)]),
                     {1, side, side});
    Var x = Var::constant(phantoms[static_cast<std::size_t>(img)]);
    Var g = add_channel_bias(conv2d(zf, params[0].var, 1, same_padding(3)),
                             params[1].var);
    return losses::mse_frobenius(x, reshape(g, {side, side}));
  };

  ConvexRunResult out;
  out.trace.reserve(static_cast<std::size_t>(total_steps));
  std::vector<int> sample_at;           // the index sequence, for re-scoring
  std::vector<std::array<double, 10>> iterates;
  iterates.reserve(static_cast<std::size_t>(total_steps));
  double d_max = 0.0;

  SplitMix64 rng(seed + 2);
  for (int t = 1; t <= total_steps; ++t) {
    const int img = static_cast<int>(rng.next_below(
        static_cast<std::uint64_t>(n_images)));
    sample_at.push_back(img);

    std::array<double, 10> w_t{};
    for (int i = 0; i < 9; ++i) w_t[static_cast<std::size_t>(i)] = params[0].var.value()[i];
    w_t[9] = params[1].var.value()[0];
    iterates.push_back(w_t);

    zero_grads(params);
    Var loss = forward(img);
    out.trace.push_back(loss.item());
    backward(loss);

    const double eta = 1.0 / std::sqrt(static_cast<double>(t));
    params[0].var.value().array() -= eta * params[0].var.grad().array();
    params[1].var.value().array() -= eta * params[1].var.grad().array();
  }

  // L_t at the final parameters, same sample sequence.
  {
    NoGradGuard ng;
    out.comparator.reserve(out.trace.size());
    for (int img : sample_at) out.comparator.push_back(forward(img).item());
  }

  // Range bound: the linear model is not squashed, so measure the largest
  // pixel error seen at the final parameters as well as along the run.
  {
    NoGradGuard ng;
    for (int img = 0; img < n_images; ++img) {
      const auto ii = static_cast<std::size_t>(img);
      Var zf = reshape(Var::constant(inputs[ii]), {1, side, side});
      Var g = add_channel_bias(conv2d(zf, params[0].var, 1, same_padding(3)),
                               params[1].var);
      const double m =
          (phantoms[ii].array() - g.value().array()).abs().maxCoeff();
      d_max = std::max(d_max, m);
    }
  }
  d_max = std::max(d_max, 1.0);

  // Exact pairwise trajectory diameter over the recorded iterates.
  double diam2 = 0.0;
  for (std::size_t a = 0; a < iterates.size(); ++a)
    for (std::size_t b = a + 1; b < iterates.size(); ++b) {
      double s = 0.0;
      for (int i = 0; i < 10; ++i) {
        const double d = iterates[a][static_cast<std::size_t>(i)] -
                         iterates[b][static_cast<std::size_t>(i)];
        s += d * d;
      }
      diam2 = std::max(diam2, s);
    }

  // Per-pixel output gradients are the input patch plus a 1 for the bias,
  // independent of the parameters, so the exact bound is a dataset maximum.
  double g_max2 = 0.0;
  for (const auto& zf : inputs) {
    for (int r = 0; r < side; ++r)
      for (int c = 0; c < side; ++c) {
        double s = 1.0;
        for (int dr = -1; dr <= 1; ++dr)
          for (int dc = -1; dc <= 1; ++dc) {
            const int rr = r + dr, cc = c + dc;
            if (rr < 0 || rr >= side || cc < 0 || cc >= side) continue;
            const double v = zf[idx2(rr, cc, side)];
            s += v * v;
          }
        g_max2 = std::max(g_max2, s);
      }
  }

  out.constants.D_diam = std::sqrt(diam2);
  out.constants.lambda3 = 1.0;
  out.constants.d = d_max;
  out.constants.K = static_cast<double>(side);
  out.constants.G = std::sqrt(g_max2);
  out.rows = regret_curve(out.trace, CStarMode::final_params, out.comparator,
                          &out.constants);
  return out;
}

}  // namespace segan::analysis
