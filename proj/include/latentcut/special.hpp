#pragma once

namespace latentcut {

/// Standard normal CDF via the complementary error function.
double normal_cdf(double z);

/// Regularized upper incomplete gamma Q(a, x) = Gamma(a, x) / Gamma(a).
double regularized_gamma_q(double a, double x);

/// Prob(chi^2_r >= x). Throws std::invalid_argument for r < 1 or x < 0.
double chisq_tail(double x, int r);

}  // namespace latentcut
