#include "segan/gradsuite.hpp"

#include <cstdio>
#include <functional>

#include "segan/autodiff.hpp"
#include "segan/correlation.hpp"
#include "segan/losses.hpp"
#include "segan/models.hpp"
#include "segan/patches.hpp"
#include "segan/rng.hpp"
#include "segan/tensor.hpp"

namespace segan::gradsuite {

namespace {

Tensor random_image(int side, SplitMix64& rng, double lo = 0.1, double hi = 0.9) {
  Tensor t({side, side});
  for (Eigen::Index i = 0; i < t.numel(); ++i)
    t[i] = lo + (hi - lo) * rng.next_double();
  return t;
}

struct Bench {
  static constexpr double kStep = 1e-5;

  SuiteResult result;
  std::string filter;
  double tol;

  void run(const std::string& name,
           const std::function<GradCheckReport(double)>& body) {
    if (!filter.empty() && name.find(filter) == std::string::npos) return;
    GradCheckReport rep = body(kStep);
    if (!rep.pass(tol)) {
      // A two-sided difference misreports the derivative when a kink (leaky
      // ReLU, clamp) falls inside the step. A narrower step decides: genuine
      // backward errors reproduce at every step size, a straddled kink does
      // not.
      const GradCheckReport narrow = body(kStep / 4.0);
      if (narrow.pass(tol)) rep = narrow;
    }
    result.checks.push_back({name, rep.worst(), rep.pass(tol)});
  }
};

}  // namespace

bool SuiteResult::all_passed() const {
  if (checks.empty()) return false;
  for (const auto& c : checks)
    if (!c.passed) return false;
  return true;
}

std::string SuiteResult::report() const {
  std::string out;
  char line[160];
  for (const auto& c : checks) {
    std::snprintf(line, sizeof line, "%-24s max rel err %.3e  %s\n",
                  c.name.c_str(), c.worst_rel_err, c.passed ? "ok" : "FAIL");
    out += line;
  }
  return out;
}

SuiteResult run_gradient_suite(const std::string& filter, double tolerance) {
  Bench bench;
  bench.filter = filter;
  bench.tol = tolerance;
  bench.result.tolerance = tolerance;

  SplitMix64 rng(20260817);
  const losses::SsimConfig ssim_cfg{5, 1.5, 0.01, 0.03, 1.0};
  const losses::LossWeights weights{10.0, 1.0, 100.0};
  const int n_patches = 4;

  // Image-argument losses: x held constant, the reconstruction is the leaf.
  const Tensor x_img = random_image(8, rng);
  const auto image_loss = [&](const std::string& name, auto&& make_loss) {
    // fresh leaf per check so gradients do not leak across checks
    const Tensor g0 = random_image(8, rng);
    bench.run(name, [&](double eps) {
      std::vector<Parameter> params;
      params.push_back({"g", Var::leaf(g0), true});
      Var x = Var::constant(x_img);
      return grad_check([&]() { return make_loss(x, params[0].var); }, params,
                        eps);
    });
  };

  image_loss("loss/mse", [&](const Var& x, const Var& g) {
    return losses::mse_frobenius(x, g);
  });
  image_loss("loss/ssim", [&](const Var& x, const Var& g) {
    return losses::ssim(x, g, ssim_cfg);
  });
  image_loss("loss/ssimr", [&](const Var& x, const Var& g) {
    return losses::ssimr(x, g, ssim_cfg);
  });

  const std::vector<std::pair<std::string, correlation::CorrelationFunction>>
      kinds = {
          {"pearson", correlation::CorrelationFunction::pearson()},
          {"gaussian", correlation::CorrelationFunction::gaussian_kernel(0.5)},
          {"polynomial", correlation::CorrelationFunction::polynomial(2, 1.0, 1.0)},
          {"combo",
           correlation::CorrelationFunction::combo(
               {0.5, 0.3}, {correlation::CorrelationFunction::pearson(),
                            correlation::CorrelationFunction::gaussian_kernel(0.5)})},
      };
  // at least two pairs selected so the stochastic checks are non-vacuous
  patches::PairSelection half = patches::sample_pairs(n_patches, 0.5, 11);
  for (std::uint64_t s = 12; half.selected_count() < 2; ++s)
    half = patches::sample_pairs(n_patches, 0.5, s);
  for (const auto& [kind_name, f] : kinds) {
    image_loss("loss/pcr/" + kind_name, [&, f](const Var& x, const Var& g) {
      return losses::pcr(patches::split(detach(x), n_patches),
                         patches::split(g, n_patches), f);
    });
    image_loss("loss/spcr/" + kind_name, [&, f](const Var& x, const Var& g) {
      return losses::spcr(patches::split(detach(x), n_patches),
                          patches::split(g, n_patches), f, half);
    });
  }

  image_loss("loss/ssel", [&](const Var& x, const Var& g) {
    return losses::sel(x, g, weights,
                       correlation::CorrelationFunction::polynomial(), ssim_cfg,
                       n_patches, &half);
  });

  // Adversarial terms, differentiated with respect to the score vectors
  // (kept inside (0,1) away from the clamp edges).
  Tensor real_scores({4}), fake_scores({4});
  for (int i = 0; i < 4; ++i) {
    real_scores[i] = 0.3 + 0.5 * rng.next_double();
    fake_scores[i] = 0.2 + 0.5 * rng.next_double();
  }
  bench.run("loss/adversarial_d", [&](double eps) {
    std::vector<Parameter> params;
    params.push_back({"d_real", Var::leaf(real_scores), true});
    params.push_back({"d_fake", Var::leaf(fake_scores), true});
    return grad_check(
        [&]() {
          return losses::adversarial_losses(params[0].var, params[1].var).first;
        },
        params, eps);
  });
  bench.run("loss/adversarial_g", [&](double eps) {
    std::vector<Parameter> params;
    params.push_back({"d_fake", Var::leaf(fake_scores), true});
    return grad_check(
        [&]() { return losses::adversarial_generator(params[0].var); }, params,
        eps);
  });

  // Both models at scaled-down configs (full param sweep would dominate the
  // suite's runtime without testing anything new).
  const Tensor su_input = random_image(8, rng);
  const Tensor su_target = random_image(8, rng);
  bench.run("model/sunet", [&](double eps) {
    models::SuNetConfig cfg;
    cfg.n_units = 3;
    cfg.kernel_sides = {2, 3};
    cfg.base_channels = 2;
    cfg.encoder_depth = 1;
    models::SuNet net(cfg, 99);
    return grad_check(
        [&]() {
          return losses::mse_frobenius(Var::constant(su_target),
                                       net.forward(Var::constant(su_input)));
        },
        net.params(), eps);
  });
  const Tensor disc_real = random_image(8, rng);
  const Tensor disc_fake = random_image(8, rng);
  bench.run("model/discriminator", [&](double eps) {
    models::DiscriminatorConfig cfg;
    cfg.n_conv_layers = 4;
    cfg.widths = {2, 2, 2, 1};
    models::Discriminator disc(cfg, 77);
    return grad_check(
        [&]() {
          // frozen statistics keep the loss a pure function of the weights
          Var dr = disc.forward(Var::constant(disc_real),
                                models::Discriminator::Mode::train_frozen);
          Var df = disc.forward(Var::constant(disc_fake),
                                models::Discriminator::Mode::train_frozen);
          return losses::adversarial_losses(dr, df).first;
        },
        disc.params(), eps);
  });

  return bench.result;
}

}  // namespace segan::gradsuite
