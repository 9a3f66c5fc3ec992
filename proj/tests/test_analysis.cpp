#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "segan/analysis.hpp"
#include "segan/losses.hpp"
#include "segan/rng.hpp"
#include "segan/tensor.hpp"

using namespace segan;
using namespace segan::analysis;

namespace {

Tensor random_image(int side, SplitMix64& rng) {
  Tensor t({side, side});
  for (Eigen::Index i = 0; i < t.numel(); ++i) t[i] = rng.next_double();
  return t;
}

const losses::SsimConfig kSsim{7, 1.5, 0.01, 0.03, 1.0};

std::string tmp_path(const char* name) {
  const std::string dir = "/tmp/segan_test_analysis";
  std::filesystem::create_directories(dir);
  std::string path = dir + "/" + name;
  std::remove(path.c_str());
  return path;
}

}  // namespace

TEST_CASE("nmse and psnr reproduce their textbook values") {
  SplitMix64 rng(80);
  const Tensor x = random_image(16, rng);

  CHECK(nmse(x, x) == 0.0);
  CHECK(std::isinf(psnr(x, x)));
  CHECK(psnr(x, x) > 0.0);

  // +0.1 everywhere: mse = 0.01, so psnr = 10*log10(1/0.01) = 20 dB
  Tensor g = x;
  g.array() += 0.1;
  CHECK(std::abs(psnr(x, g) - 20.0) < 1e-12);

  for (int i = 0; i < 20; ++i) {
    const Tensor a = random_image(12, rng), b = random_image(12, rng);
    CHECK(std::abs(nmse(a, b) - oracle::nmse_naive(a, b)) < 1e-12);
    CHECK(std::abs(psnr(a, b, 1.0) - oracle::psnr_naive(a, b, 1.0)) < 1e-12);
  }
}

TEST_CASE("nmse is scale invariant and its squared variant is the square") {
  SplitMix64 rng(81);
  const Tensor x = random_image(8, rng);
  const Tensor g = random_image(8, rng);
  const double base = nmse(x, g);

  Tensor xs = x, gs = g;
  xs.array() *= 7.5;
  gs.array() *= 7.5;
  CHECK(std::abs(nmse(xs, gs) - base) < 1e-12);
  CHECK(std::abs(nmse(x, g, true) - base * base) < 1e-12);

  CHECK_THROWS(nmse(Tensor::zeros({4, 4}), g));        // all-zero reference
  CHECK_THROWS(nmse(Tensor({4, 4}), Tensor({4, 5})));  // shape mismatch
  CHECK_THROWS(psnr(x, g, 0.0));                       // peak must be positive
}

TEST_CASE("n_lssm of an image with itself is one") {
  SplitMix64 rng(82);
  const Tensor x = random_image(32, rng);
  CHECK(n_lssm(x, x, 20, 20, kSsim, 123) == 1.0);
}

TEST_CASE("a full-size patch reduces n_lssm to the global ssim") {
  SplitMix64 rng(83);
  const Tensor x = random_image(16, rng);
  const Tensor g = random_image(16, rng);
  // patch side == image side: every draw lands at (0,0)
  const double got = n_lssm(x, g, 5, 16, kSsim, 7);
  CHECK(std::abs(got - ssim_value(x, g, kSsim)) < 1e-12);
}

TEST_CASE("n_lssm matches a position-by-position recomputation") {
  SplitMix64 rng(84);
  const Tensor x = random_image(32, rng);
  const Tensor g = [&] {
    Tensor t = x;
    for (Eigen::Index i = 0; i < t.numel(); ++i)
      t[i] += 0.05 * (rng.next_double() - 0.5);
    return t;
  }();

  const int n = 10, patch = 12;
  const std::uint64_t seed = 20260817;
  // replay the documented position stream: row then column, next_below(span)
  SplitMix64 positions(seed);
  const auto span = static_cast<std::uint64_t>(32 - patch + 1);
  double acc = 0.0;
  for (int k = 0; k < n; ++k) {
    const int r = static_cast<int>(positions.next_below(span));
    const int c = static_cast<int>(positions.next_below(span));
    Tensor px({patch, patch}), pg({patch, patch});
    for (int i = 0; i < patch; ++i)
      for (int j = 0; j < patch; ++j) {
        px[idx2(i, j, patch)] = x[idx2(r + i, c + j, 32)];
        pg[idx2(i, j, patch)] = g[idx2(r + i, c + j, 32)];
      }
    acc += oracle::ssim_naive(px, pg, 7, 1.5, 0.01, 0.03, 1.0);
  }
  CHECK(std::abs(n_lssm(x, g, n, patch, kSsim, seed) - acc / n) < 1e-10);

  // determinism per seed, and values stay inside the SSIM range
  CHECK(n_lssm(x, g, n, patch, kSsim, seed) == n_lssm(x, g, n, patch, kSsim, seed));
  const double v = n_lssm(x, g, 40, 8, kSsim, 99);
  CHECK(v >= -1.0);
  CHECK(v <= 1.0);
}

TEST_CASE("the evaluation bundle bundles the documented pieces") {
  SplitMix64 rng(85);
  const Tensor x = random_image(32, rng);
  const Tensor g = random_image(32, rng);
  const MetricBundle m = evaluate_pair(x, g, kSsim, 1000);
  CHECK(m.nmse == nmse(x, g));
  CHECK(m.psnr == psnr(x, g));
  CHECK(m.ssim == ssim_value(x, g, kSsim));
  CHECK(m.lssm20 == n_lssm(x, g, 20, 20, kSsim, 1000));
  CHECK(m.lssm40 == n_lssm(x, g, 40, 20, kSsim, 1001));
  // patch side shrinks with small images
  const Tensor sx = random_image(12, rng), sg = random_image(12, rng);
  CHECK(evaluate_pair(sx, sg, kSsim, 5).lssm20 == n_lssm(sx, sg, 20, 12, kSsim, 5));
}

TEST_CASE("regret accounting on a hand-computed trace") {
  const std::vector<double> trace = {3.0, 2.0, 1.0};
  const auto rows = regret_curve(trace, CStarMode::best_iterate);
  REQUIRE(rows.size() == 3);

  CHECK(rows[0].C == 3.0);
  CHECK(rows[0].C_star == 3.0);
  CHECK(rows[0].R == 0.0);

  CHECK(rows[2].C == 6.0);
  CHECK(rows[2].C_star == 3.0);  // best single loss (1.0) held for 3 steps
  CHECK(rows[2].R == 3.0);
  CHECK(rows[2].avg_regret == 1.0);
  CHECK(std::isnan(rows[2].bound));  // no constants supplied

  // a constant trace accumulates no regret at all
  for (const auto& row : regret_curve({0.7, 0.7, 0.7, 0.7}, CStarMode::best_iterate)) {
    CHECK(row.R == 0.0);
    CHECK(row.avg_regret == 0.0);
  }
}

TEST_CASE("final-parameter comparators use the supplied loss sequence") {
  const std::vector<double> trace = {3.0, 2.0, 1.0};
  const std::vector<double> comparator = {0.5, 0.5, 0.5};
  const auto rows = regret_curve(trace, CStarMode::final_params, comparator);
  CHECK(rows[2].C_star == 1.5);
  CHECK(rows[2].R == 4.5);
  CHECK(std::abs(rows[2].avg_regret - 1.5) < 1e-15);

  CHECK_THROWS(regret_curve(trace, CStarMode::final_params));  // missing comparator
  CHECK_THROWS(regret_curve(trace, CStarMode::final_params, {0.5}));
  CHECK_THROWS(regret_curve({}, CStarMode::best_iterate));
}

TEST_CASE("gradient descent on a quadratic meets the sublinear regret law") {
  // online GD on f(w) = (w - 3)^2 with step 1/sqrt(t); regret vs the best
  // fixed point in hindsight must grow slower than T
  double w = 0.0;
  std::vector<double> trace;
  for (int t = 1; t <= 400; ++t) {
    trace.push_back((w - 3.0) * (w - 3.0));
    w -= (1.0 / std::sqrt(static_cast<double>(t))) * 2.0 * (w - 3.0);
  }
  const auto rows = regret_curve(trace, CStarMode::best_iterate);

  // independent accounting of the same quantities
  double best = trace[0], cum = 0.0;
  for (std::size_t i = 0; i < trace.size(); ++i) {
    cum += trace[i];
    best = std::min(best, trace[i]);
    const auto& row = rows[i];
    CHECK(std::abs(row.C - cum) < 1e-10);
    CHECK(std::abs(row.C_star - best * static_cast<double>(i + 1)) < 1e-10);
    CHECK(std::abs(row.R - (cum - best * static_cast<double>(i + 1))) < 1e-10);
  }

  // R(T)/sqrt(T) stays bounded: its late maximum cannot exceed its early one
  double early = 0.0, late = 0.0;
  for (int t = 1; t <= 400; ++t) {
    const double scaled = rows[static_cast<std::size_t>(t - 1)].R / std::sqrt(t);
    if (t <= 50) early = std::max(early, scaled);
    else late = std::max(late, scaled);
  }
  CHECK(late <= early);
  CHECK(rows.back().avg_regret < rows[49].avg_regret);
}

TEST_CASE("the closed-form bound reproduces its plug-in examples") {
  BoundConstants c;
  c.D_diam = 1.0;
  // all lambdas zero: bound(T) = sqrt(T)/2, so T = 4 gives 1.0
  CHECK(std::abs(theorem1_bound(c, 4.0) - 1.0) < 1e-15);

  // with a composite gradient bound B, T = 1 gives D^2/2 + 2 B^2
  c.lambda2 = 1.0;
  c.S = 2.0;  // B = lambda2 * S = 2
  CHECK(std::abs(theorem1_bound(c, 1.0) - (0.5 + 2.0 * 4.0)) < 1e-15);

  // composite: l1*M*alpha*N^2*F + l2*S + l3*d*K^2*G
  BoundConstants full;
  full.D_diam = 2.0;
  full.lambda1 = 0.5;
  full.M = 2.0;
  full.alpha_bar = 0.5;
  full.N = 2.0;
  full.F = 1.0;  // first term: 0.5*2*0.5*4*1 = 2
  full.lambda2 = 1.0;
  full.S = 1.0;  // second term: 1
  full.lambda3 = 0.25;
  full.d = 1.0;
  full.K = 2.0;
  full.G = 1.0;  // third term: 0.25*1*4*1 = 1
  const double B = 4.0;
  const double expect = 4.0 * std::sqrt(9.0) / 2.0 + B * B * (4.0 * std::sqrt(9.0) - 2.0);
  CHECK(std::abs(theorem1_bound(full, 9.0) - expect) < 1e-12);
}

TEST_CASE("bound constants survive a file round trip") {
  BoundConstants c;
  c.D_diam = 0.75932905876864853;
  c.lambda1 = 10.0;
  c.lambda2 = 1.0;
  c.lambda3 = 100.0;
  c.M = 4.0;
  c.alpha_bar = 0.1;
  c.N = 64.0;
  c.F = 4.2987425186654225;
  c.S = 7.3478534704727956;
  c.d = 1.0;
  c.K = 32.0;
  c.G = 13.073707173845055;

  const std::string path = tmp_path("constants.txt");
  write_bound_constants(path, c);
  const BoundConstants back = read_bound_constants(path);
  CHECK(back.D_diam == c.D_diam);
  CHECK(back.F == c.F);
  CHECK(back.S == c.S);
  CHECK(back.G == c.G);
  CHECK(back.alpha_bar == c.alpha_bar);
  CHECK(theorem1_bound(back, 2000.0) == theorem1_bound(c, 2000.0));

  // a file missing one of the twelve names is rejected
  const std::string broken = tmp_path("broken.txt");
  {
    std::ifstream in(path);
    std::ofstream out(broken);
    std::string line;
    while (std::getline(in, line))
      if (line.rfind("K =", 0) != 0) out << line << "\n";
  }
  CHECK_THROWS(read_bound_constants(broken));
}

TEST_CASE("regret rows land in the csv with their documented header") {
  const std::string path = tmp_path("regret.csv");
  write_regret_csv(path, regret_curve({2.0, 1.0}, CStarMode::best_iterate));
  std::ifstream f(path);
  std::string header, row1, row2;
  std::getline(f, header);
  std::getline(f, row1);
  std::getline(f, row2);
  CHECK(header == "T,C,C_star,R,avg_regret,bound");
  CHECK(row1.rfind("1,2,", 0) == 0);
  CHECK(row2.rfind("2,3,", 0) == 0);
}

TEST_CASE("the convex surrogate run verifies its own guarantee") {
  const ConvexRunResult res = run_convex_surrogate(300, 16, 4, 0.3, 5);
  REQUIRE(res.rows.size() == 300);
  REQUIRE(res.trace.size() == 300);
  REQUIRE(res.comparator.size() == 300);

  for (const auto& row : res.rows) {
    CHECK(std::isfinite(row.R));
    CHECK(row.R <= row.bound);  // the guarantee holds at every prefix
  }
  // averaged regret shrinks as the run extends
  CHECK(res.rows[299].avg_regret < res.rows[29].avg_regret);

  // measured constants are usable: positive diameter and gradient bound
  CHECK(res.constants.D_diam > 0.0);
  CHECK(res.constants.G > 0.0);
  CHECK(res.constants.lambda3 == 1.0);
  CHECK(res.constants.d >= 1.0);

  // determinism: the same seed reproduces the full trace bit for bit
  const ConvexRunResult again = run_convex_surrogate(300, 16, 4, 0.3, 5);
  for (std::size_t i = 0; i < res.trace.size(); ++i)
    CHECK(res.trace[i] == again.trace[i]);
}
