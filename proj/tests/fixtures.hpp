#pragma once

// Small models shared by the test binaries.

#include "latentcut/model.hpp"
#include "latentcut/table.hpp"

#include <Eigen/Dense>

#include <boost/random/mersenne_twister.hpp>
#include <boost/random/normal_distribution.hpp>
#include <boost/random/poisson_distribution.hpp>
#include <boost/random/uniform_real_distribution.hpp>

#include <cmath>
#include <optional>
#include <vector>

namespace fixtures {

using namespace latentcut;

/// Grouped gaussian data: y = mu + b t + u_g + e.
struct GroupedData {
  std::vector<double> group, t, y;
};

inline GroupedData grouped_data(int groups, int per_group, unsigned seed, double sd_u = 1.0, double sd_e = 0.5,
                                double mu = 2.0, double slope = 0.3) {
  boost::random::mt19937_64 rng(seed);
  boost::random::normal_distribution<double> norm;
  GroupedData d;
  for (int g = 0; g < groups; ++g) {
    const double u = sd_u * norm(rng);
    for (int k = 0; k < per_group; ++k) {
      const double t = k - 0.5 * (per_group - 1);
      d.group.push_back(g + 1);
      d.t.push_back(t);
      d.y.push_back(mu + slope * t + u + sd_e * norm(rng));
    }
  }
  return d;
}

inline DataTable grouped_table(const GroupedData& d) {
  DataTable t;
  t.add_column("group", d.group);
  t.add_column("t", d.t);
  t.add_column("y", d.y);
  return t;
}

/// Intercept (+ optional slope on t) + iid group effect, gaussian
/// likelihood. Hyperparameters are fixed when the log precisions are given.
struct HierarchyOptions {
  bool slope = true;
  double fixed_precision = 1e-3;
  std::optional<double> log_tau_e;
  std::optional<double> log_tau_u;
  LogGammaPrior prior_e{1.0, 0.05};
  LogGammaPrior prior_u{1.0, 0.05};
};

inline ModelSpec hierarchy_spec(DataTable data, const HierarchyOptions& o = {}) {
  ModelSpec s;
  s.family = Family::gaussian;
  s.response = "y";
  EffectBlock b0;
  b0.kind = EffectKind::intercept;
  b0.name = "intercept";
  b0.precision = o.fixed_precision;
  s.effects.push_back(b0);
  if (o.slope) {
    EffectBlock b1;
    b1.kind = EffectKind::fixed;
    b1.name = "t";
    b1.column = "t";
    b1.precision = o.fixed_precision;
    s.effects.push_back(b1);
  }
  EffectBlock u;
  u.kind = EffectKind::iid;
  u.name = "u";
  u.column = "group";
  s.effects.push_back(u);
  if (o.log_tau_e) s.priors["likelihood"] = FixedHyper{{*o.log_tau_e}};
  else s.priors["likelihood"] = o.prior_e;
  if (o.log_tau_u) s.priors["u"] = FixedHyper{{*o.log_tau_u}};
  else s.priors["u"] = o.prior_u;
  s.group = "group";
  s.data = std::move(data);
  return s;
}

/// Dense covariance-form description of the same hierarchy: block
/// coordinates b ~ N(0, diag(v)), eta = X b + tying noise.
struct DenseHierarchy {
  Eigen::MatrixXd x;
  Eigen::VectorXd prior_var;
};

inline DenseHierarchy dense_hierarchy(const GroupedData& d, int groups, bool slope, double fixed_precision,
                                      double tau_u) {
  const int n = static_cast<int>(d.y.size());
  const int p = 1 + (slope ? 1 : 0) + groups;
  DenseHierarchy h;
  h.x = Eigen::MatrixXd::Zero(n, p);
  h.prior_var = Eigen::VectorXd::Constant(p, 1.0 / tau_u);
  h.prior_var[0] = 1.0 / fixed_precision;
  if (slope) h.prior_var[1] = 1.0 / fixed_precision;
  const int off = 1 + (slope ? 1 : 0);
  for (int i = 0; i < n; ++i) {
    h.x(i, 0) = 1.0;
    if (slope) h.x(i, 1) = d.t[static_cast<std::size_t>(i)];
    h.x(i, off + static_cast<int>(d.group[static_cast<std::size_t>(i)]) - 1) = 1.0;
  }
  return h;
}

/// Prior covariance of eta for the dense hierarchy.
inline Eigen::MatrixXd eta_prior_cov(const DenseHierarchy& h) {
  return h.x * h.prior_var.asDiagonal() * h.x.transpose() +
         Eigen::MatrixXd::Identity(h.x.rows(), h.x.rows()) / CompiledModel::kTyingPrecision;
}

}  // namespace fixtures
