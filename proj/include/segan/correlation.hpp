// The pluggable correlation-function family used inside PCR: Pearson
// coefficient, Gaussian kernel, polynomial kernel, and depth-1 weighted
// linear combinations of those.
#pragma once

#include <string>
#include <vector>

#include "segan/autodiff.hpp"

namespace segan::correlation {

enum class Kind { pearson, gaussian, polynomial, combo };

struct CorrelationFunction {
  Kind kind = Kind::polynomial;
  double sigma = 1.0;   // gaussian
  int degree = 2;       // polynomial
  double offset = 1.0;  // polynomial
  double scale = 1.0;   // polynomial
  std::vector<double> weights;                // combo
  std::vector<CorrelationFunction> members;   // combo, never combos themselves

  static CorrelationFunction pearson();
  static CorrelationFunction gaussian_kernel(double sigma);
  static CorrelationFunction polynomial(int degree = 2, double offset = 1.0,
                                        double scale = 1.0);
  static CorrelationFunction combo(std::vector<double> weights,
                                   std::vector<CorrelationFunction> members);

  // Config-syntax rendering, e.g. "combo(0.5*pearson, 0.5*gaussian(0.5))".
  std::string to_string() const;
};

// Differentiable correlation of two equal-shape patches (flattened):
//   pearson:    sum(dp*dq) / (sqrt(sum dp^2)*sqrt(sum dq^2) + 1e-8)
//   gaussian:   exp(-||p-q||^2 / (2 sigma^2))
//   polynomial: (scale*<p,q>/m + offset)^degree, m = element count
//   combo:      sum_i weights[i] * member_i(p, q)
Var corr(const CorrelationFunction& f, const Var& p, const Var& q);

// A valid bound on |f| for patch values in [0, data_range], feeding the
// |f| <= M hypothesis of the regret bound.
double bound_M(const CorrelationFunction& f, double data_range);

// Parses the config syntax: pearson | gaussian(s) | polynomial(d, c, s) |
// combo(w1*member1, w2*member2, ...). Bare "gaussian"/"polynomial" take the
// default hyperparameters.
CorrelationFunction parse_corr(const std::string& text);

}  // namespace segan::correlation
