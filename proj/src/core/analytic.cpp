#include "latentcut/analytic.hpp"

#include "latentcut/errors.hpp"
#include "latentcut/special.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace latentcut {

AnalyticNormalModel::AnalyticNormalModel(std::vector<double> y, double variance)
    : y_(std::move(y)), variance_(variance) {
  if (y_.size() < 2) throw InputError("analytic normal model needs at least two observations");
  if (!(variance_ > 0.0) || !std::isfinite(variance_)) throw InputError("known variance must be positive");
  for (double v : y_)
    if (!std::isfinite(v)) throw InputError("observations must be finite");
  sum_ = std::accumulate(y_.begin(), y_.end(), 0.0);
}

double AnalyticNormalModel::inflated_variance() const {
  const double n = static_cast<double>(y_.size());
  return variance_ * n / (n - 1.0);
}

double AnalyticNormalModel::leave_one_out_mean(std::size_t i) const {
  if (i >= y_.size()) throw std::out_of_range("observation index out of range");
  return (sum_ - y_[i]) / static_cast<double>(y_.size() - 1);
}

double AnalyticNormalModel::delta_mean(std::size_t i) const { return leave_one_out_mean(i) - y_[i]; }

double pit(const AnalyticNormalModel& model, std::size_t i) {
  return normal_cdf(-model.delta_mean(i) / std::sqrt(model.inflated_variance()));
}

double latent_tail(const AnalyticNormalModel& model, std::size_t i) {
  // delta ~ N(mu_delta, sigma~^2): Pr(delta <= 0) = Phi(-mu_delta / sigma~).
  const double z = (0.0 - model.delta_mean(i)) / std::sqrt(model.inflated_variance());
  return normal_cdf(z);
}

double two_sided_p(const AnalyticNormalModel& model, std::size_t i) {
  const double mu = model.delta_mean(i);
  return chisq_tail(mu * mu / model.inflated_variance(), 1);
}

}  // namespace latentcut
