#include "latentcut/special.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace latentcut {

namespace {

constexpr double kEps = 1e-16;
constexpr int kMaxTerms = 10000;

// P(a, x) by its power series; converges quickly for x < a + 1.
double gamma_p_series(double a, double x) {
  double term = 1.0 / a;
  double sum = term;
  for (int n = 1; n < kMaxTerms; ++n) {
    term *= x / (a + n);
    sum += term;
    if (std::abs(term) < std::abs(sum) * kEps) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Q(a, x) by Lentz's continued fraction; used for x >= a + 1.
double gamma_q_fraction(double a, double x) {
  constexpr double tiny = std::numeric_limits<double>::min() / kEps;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < kMaxTerms; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < kEps) break;
  }
  return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

}  // namespace

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

double regularized_gamma_q(double a, double x) {
  if (!(a > 0.0)) throw std::invalid_argument("incomplete gamma requires a > 0");
  if (std::isnan(x) || x < 0.0) throw std::invalid_argument("incomplete gamma requires x >= 0");
  if (x == 0.0) return 1.0;
  if (std::isinf(x)) return 0.0;
  if (x < a + 1.0) return 1.0 - gamma_p_series(a, x);
  return gamma_q_fraction(a, x);
}

double chisq_tail(double x, int r) {
  if (r < 1) throw std::invalid_argument("chi-squared degrees of freedom must be positive");
  if (std::isnan(x) || x < 0.0) throw std::invalid_argument("chi-squared statistic must be non-negative");
  return regularized_gamma_q(0.5 * r, 0.5 * x);
}

}  // namespace latentcut
