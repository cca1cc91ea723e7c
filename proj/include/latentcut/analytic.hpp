#pragma once

// Normal observations with known variance under a flat prior on the mean:
// leave-one-out PIT values and the equivalent latent-difference tail
// probabilities, in closed form.

#include <vector>

namespace latentcut {

class AnalyticNormalModel {
 public:
  AnalyticNormalModel(std::vector<double> y, double variance);

  std::size_t size() const { return y_.size(); }
  double variance() const { return variance_; }
  /// sigma^2 n / (n - 1): variance of y_i - mean(y_{-i}).
  double inflated_variance() const;
  /// Mean of all observations except the i-th (0-based).
  double leave_one_out_mean(std::size_t i) const;
  /// mu_delta = mean(y_{-i}) - y_i.
  double delta_mean(std::size_t i) const;

 private:
  std::vector<double> y_;
  double variance_;
  double sum_ = 0.0;
};

/// Pr(Y_i <= y_i | y_{-i}).
double pit(const AnalyticNormalModel& model, std::size_t i);
/// Pr(delta <= 0) for delta = mu | y_{-i} minus mu | y_i.
double latent_tail(const AnalyticNormalModel& model, std::size_t i);
/// Two-sided tail probability Pr(chi^2_1 >= mu_delta^2 / sigma~^2).
double two_sided_p(const AnalyticNormalModel& model, std::size_t i);

}  // namespace latentcut
