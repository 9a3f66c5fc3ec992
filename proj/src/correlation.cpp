#include "segan/correlation.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace segan::correlation {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

void validate(const CorrelationFunction& f) {
  switch (f.kind) {
    case Kind::pearson:
      break;
    case Kind::gaussian:
      if (!(f.sigma > 0.0) || !std::isfinite(f.sigma))
        fail("correlation: gaussian sigma must be positive");
      break;
    case Kind::polynomial:
      if (f.degree < 1) fail("correlation: polynomial degree must be >= 1");
      if (!std::isfinite(f.offset) || !std::isfinite(f.scale))
        fail("correlation: polynomial offset/scale must be finite");
      break;
    case Kind::combo:
      if (f.members.empty() || f.weights.size() != f.members.size())
        fail("correlation: combo needs matching weights and members");
      for (const double w : f.weights)
        if (!std::isfinite(w)) fail("correlation: combo weight not finite");
      for (const auto& m : f.members) {
        if (m.kind == Kind::combo) fail("correlation: combos cannot nest");
        validate(m);
      }
      break;
  }
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

CorrelationFunction CorrelationFunction::pearson() {
  CorrelationFunction f;
  f.kind = Kind::pearson;
  return f;
}

CorrelationFunction CorrelationFunction::gaussian_kernel(double sigma) {
  CorrelationFunction f;
  f.kind = Kind::gaussian;
  f.sigma = sigma;
  validate(f);
  return f;
}

CorrelationFunction CorrelationFunction::polynomial(int degree, double offset,
                                                    double scale) {
  CorrelationFunction f;
  f.kind = Kind::polynomial;
  f.degree = degree;
  f.offset = offset;
  f.scale = scale;
  validate(f);
  return f;
}

CorrelationFunction CorrelationFunction::combo(
    std::vector<double> weights, std::vector<CorrelationFunction> members) {
  CorrelationFunction f;
  f.kind = Kind::combo;
  f.weights = std::move(weights);
  f.members = std::move(members);
  validate(f);
  return f;
}

std::string CorrelationFunction::to_string() const {
  switch (kind) {
    case Kind::pearson:
      return "pearson";
    case Kind::gaussian:
      return "gaussian(" + fmt(sigma) + ")";
    case Kind::polynomial:
      return "polynomial(" + std::to_string(degree) + ", " + fmt(offset) + ", " +
             fmt(scale) + ")";
    case Kind::combo: {
      std::string out = "combo(";
      for (std::size_t i = 0; i < members.size(); ++i) {
        if (i) out += ", ";
        out += fmt(weights[i]) + "*" + members[i].to_string();
      }
      return out + ")";
    }
  }
  return "";
}

Var corr(const CorrelationFunction& f, const Var& p, const Var& q) {
  validate(f);
  if (!p.value().same_shape(q.value())) {
    fail("corr: patch shapes differ, " + p.value().shape_str() + " vs " +
         q.value().shape_str());
  }
  switch (f.kind) {
    case Kind::pearson: {
      Var dp = sub_bscalar(p, mean(p));
      Var dq = sub_bscalar(q, mean(q));
      Var num = dot(dp, dq);
      Var den = sqrt_nonneg(mul(sum(square(dp)), sum(square(dq))));
      return div(num, add_scalar(den, 1e-8));
    }
    case Kind::gaussian: {
      Var d2 = sum(square(sub(p, q)));
      return exp(mul_scalar(d2, -1.0 / (2.0 * f.sigma * f.sigma)));
    }
    case Kind::polynomial: {
      const double m = static_cast<double>(p.value().numel());
      Var base = add_scalar(mul_scalar(dot(p, q), f.scale / m), f.offset);
      return powi(base, f.degree);
    }
    case Kind::combo: {
      Var acc;
      for (std::size_t i = 0; i < f.members.size(); ++i) {
        Var term = mul_scalar(corr(f.members[i], p, q), f.weights[i]);
        acc = acc.valid() ? add(acc, term) : term;
      }
      return acc;
    }
  }
  fail("corr: unknown kind");
}

double bound_M(const CorrelationFunction& f, double data_range) {
  validate(f);
  if (!(data_range > 0.0)) fail("bound_M: data_range must be positive");
  switch (f.kind) {
    case Kind::pearson:
      return 1.0 + 1e-9;
    case Kind::gaussian:
      return 1.0;
    case Kind::polynomial:
      // |scale*<p,q>/m + offset| <= |scale|*range^2 + |offset|
      return std::pow(std::abs(f.scale) * data_range * data_range + std::abs(f.offset),
                      f.degree);
    case Kind::combo: {
      double m = 0.0;
      for (std::size_t i = 0; i < f.members.size(); ++i)
        m += std::abs(f.weights[i]) * bound_M(f.members[i], data_range);
      return m;
    }
  }
  fail("bound_M: unknown kind");
}

namespace {

struct Parser {
  const std::string& s;
  std::size_t pos = 0;

  void skip_ws() {
    while (pos < s.size() && (s[pos] == ' ' || s[pos] == '\t')) ++pos;
  }
  bool eat(char c) {
    skip_ws();
    if (pos < s.size() && s[pos] == c) {
      ++pos;
      return true;
    }
    return false;
  }
  void expect(char c) {
    if (!eat(c)) fail("parse_corr: expected '" + std::string(1, c) + "' at position " +
                      std::to_string(pos) + " in \"" + s + "\"");
  }
  std::string ident() {
    skip_ws();
    std::size_t start = pos;
    while (pos < s.size() && (std::isalpha(static_cast<unsigned char>(s[pos])) || s[pos] == '_'))
      ++pos;
    if (pos == start) fail("parse_corr: expected a name at position " +
                           std::to_string(pos) + " in \"" + s + "\"");
    return s.substr(start, pos - start);
  }
  double number() {
    skip_ws();
    std::size_t consumed = 0;
    double v = 0.0;
    try {
      v = std::stod(s.substr(pos), &consumed);
    } catch (const std::exception&) {
      fail("parse_corr: expected a number at position " + std::to_string(pos) +
           " in \"" + s + "\"");
    }
    pos += consumed;
    return v;
  }

  CorrelationFunction atom() {
    const std::string name = ident();
    if (name == "pearson") return CorrelationFunction::pearson();
    if (name == "gaussian") {
      if (!eat('(')) return CorrelationFunction::gaussian_kernel(1.0);
      const double sigma = number();
      expect(')');
      return CorrelationFunction::gaussian_kernel(sigma);
    }
    if (name == "polynomial") {
      if (!eat('(')) return CorrelationFunction::polynomial();
      const double d = number();
      expect(',');
      const double c = number();
      expect(',');
      const double sc = number();
      expect(')');
      if (d != std::floor(d) || d < 1)
        fail("parse_corr: polynomial degree must be a positive integer");
      return CorrelationFunction::polynomial(static_cast<int>(d), c, sc);
    }
    if (name == "combo") fail("parse_corr: combos cannot nest");
    fail("parse_corr: unknown correlation kind \"" + name + "\"");
  }

  CorrelationFunction parse() {
    skip_ws();
    if (s.compare(pos, 5, "combo") == 0) {
      pos += 5;
      expect('(');
      std::vector<double> weights;
      std::vector<CorrelationFunction> members;
      do {
        weights.push_back(number());
        expect('*');
        members.push_back(atom());
      } while (eat(','));
      expect(')');
      skip_ws();
      if (pos != s.size()) fail("parse_corr: trailing characters in \"" + s + "\"");
      return CorrelationFunction::combo(std::move(weights), std::move(members));
    }
    CorrelationFunction f = atom();
    skip_ws();
    if (pos != s.size()) fail("parse_corr: trailing characters in \"" + s + "\"");
    return f;
  }
};

}  // namespace

CorrelationFunction parse_corr(const std::string& text) {
  Parser p{text};
  return p.parse();
}

}  // namespace segan::correlation
