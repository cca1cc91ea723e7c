#include "latentcut/inference.hpp"

#include "latentcut/errors.hpp"
#include "latentcut/log.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <map>
#include <sstream>

namespace latentcut {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string format_theta(const Eigen::VectorXd& theta) {
  std::ostringstream os;
  os << '(';
  for (Eigen::Index k = 0; k < theta.size(); ++k) os << (k ? ", " : "") << theta[k];
  os << ')';
  return os.str();
}

Eigen::VectorXd project_out(const Eigen::MatrixXd& c, const Eigen::VectorXd& v) {
  if (c.rows() == 0) return v;
  const Eigen::MatrixXd cct = c * c.transpose();
  return v - c.transpose() * cct.ldlt().solve(c * v);
}

// Kriging pieces for the constraint C x = 0 under precision factor F.
struct Kriging {
  Eigen::MatrixXd w;        // F^{-1} C^T
  Eigen::MatrixXd s_inv;    // (C W)^{-1}
  double log_det = 0.0;     // log |C W|
};

Kriging kriging(const CholeskyFactor& f, const Eigen::MatrixXd& c) {
  Kriging k;
  if (c.rows() == 0) return k;
  k.w = f.solve(Eigen::MatrixXd(c.transpose()));
  Eigen::MatrixXd s = c * k.w;
  s = 0.5 * (s + s.transpose());
  Eigen::LLT<Eigen::MatrixXd> llt(s);
  if (llt.info() != Eigen::Success) throw InferenceError("constraint system is singular");
  k.s_inv = llt.solve(Eigen::MatrixXd::Identity(s.rows(), s.cols()));
  k.log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  return k;
}

CholeskyFactor factor_or_throw(const SparseSymmetric& q, const std::shared_ptr<const SymbolicFactor>& sym,
                               const Eigen::VectorXd& theta) {
  try {
    return factorize(q, sym);
  } catch (const NotPositiveDefinite& e) {
    throw InferenceError("precision not positive definite at theta = " + format_theta(theta) + " (" + e.what() + ")");
  }
}

}  // namespace

double conditional_log_density(const CompiledModel& model, const Eigen::VectorXd& theta, const Eigen::VectorXd& x) {
  return -0.5 * model.prior_quadratic(x, theta, true) + model.log_likelihood(x, theta);
}

Eigen::VectorXd conditional_log_density_gradient(const CompiledModel& model, const Eigen::VectorXd& theta,
                                                 const Eigen::VectorXd& x) {
  Eigen::VectorXd g, d;
  model.likelihood_derivatives(x, theta, g, d);
  Eigen::VectorXd grad = -model.precision_times(x, theta, true);
  grad.head(model.n_rows()) += g;
  return project_out(model.constraints(), grad);
}

GaussianApprox gaussian_approximation(const CompiledModel& model, const Eigen::VectorXd& theta,
                                      const NewtonOptions& options, const Eigen::VectorXd* start) {
  const int n = model.n_rows();
  const int dim = model.latent_dim();
  const int m = dim - n;
  const double kappa = CompiledModel::kTyingPrecision;
  const auto& obs = model.observation_map();
  const Eigen::MatrixXd& c_reduced = model.reduced_constraints();
  const Eigen::MatrixXd& c_full = model.constraints();
  const auto sym = model.reduced_symbolic();

  Eigen::VectorXd x = start ? *start : Eigen::VectorXd::Zero(dim);
  if (x.size() != dim) throw std::invalid_argument("starting point has wrong length");

  GaussianApprox out;
  out.theta = theta;
  out.model = model;
  Eigen::VectorXd g, d, last_d;
  bool have_factor = false;
  for (int iter = 0;; ++iter) {
    model.likelihood_derivatives(x, theta, g, d);
    if (!have_factor || d != last_d) {
      out.precision = model.reduced_precision(theta, d);
      out.factor = factor_or_throw(out.precision, sym, theta);
      last_d = d;
      have_factor = true;
    }
    Eigen::VectorXd grad = -model.precision_times(x, theta, true);
    grad.head(n) += g;
    grad = project_out(c_full, grad);
    const double gnorm = grad.lpNorm<Eigen::Infinity>();
    if (!std::isfinite(gnorm)) throw InferenceError("non-finite gradient at theta = " + format_theta(theta));
    const double tol = options.tolerance * (1.0 + x.norm());
    log_debug("newton iter ", iter, " |grad| = ", gnorm, " tol = ", tol);
    out.gradient_norm = gnorm;
    out.iterations = iter;
    if (gnorm <= tol) break;
    if (iter >= options.max_iterations)
      throw InferenceError("Newton iteration did not converge at theta = " + format_theta(theta) +
                           " (last gradient norm " + std::to_string(gnorm) + ")");

    // Newton target: maximize the quadratic expansion. With eta eliminated
    // the block system is R x_r = A^T M b, then eta = (kappa A x_r + b) / (kappa + d).
    Eigen::VectorXd b(n), rhs = Eigen::VectorXd::Zero(m);
    for (int i = 0; i < n; ++i) {
      b[i] = d[i] * x[i] + g[i];
      const double mi = kappa / (kappa + d[i]) * b[i];
      for (const auto& t : obs[i]) rhs[t.index - n] += t.weight * mi;
    }
    Eigen::VectorXd xr = out.factor.solve(rhs);
    if (c_reduced.rows() > 0) {
      const Kriging k = kriging(out.factor, c_reduced);
      xr -= k.w * (k.s_inv * (c_reduced * xr));
    }
    Eigen::VectorXd target(dim);
    target.tail(m) = xr;
    for (int i = 0; i < n; ++i) {
      double ax = 0.0;
      for (const auto& t : obs[i]) ax += t.weight * xr[t.index - n];
      target[i] = (kappa * ax + b[i]) / (kappa + d[i]);
    }
    const Eigen::VectorXd step = target - x;
    if (step.lpNorm<Eigen::Infinity>() <= 1e-12 * (1.0 + x.lpNorm<Eigen::Infinity>())) {
      log_debug("newton step negligible; accepting gradient norm ", gnorm);
      break;
    }

    const double f0 = conditional_log_density(model, theta, x);
    double alpha = 1.0;
    bool accepted = false;
    for (int h = 0; h <= options.max_halvings; ++h) {
      const Eigen::VectorXd cand = x + alpha * step;
      const double f = conditional_log_density(model, theta, cand);
      if (std::isfinite(f) && f >= f0 - 1e-10 * (1.0 + std::abs(f0))) {
        x = cand;
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted)
      throw InferenceError("Newton step halving failed at theta = " + format_theta(theta) + " (gradient norm " +
                           std::to_string(gnorm) + ")");
  }

  out.mode = x;
  out.curvature = d;
  const Kriging k = kriging(out.factor, c_reduced);
  out.constraint_solve = k.w;
  out.constraint_inverse = k.s_inv;
  out.log_det_constraint = k.log_det;
  double eta_part = 0.0;
  for (int i = 0; i < n; ++i) eta_part += std::log1p(d[i] / kappa);
  out.log_det_eta = eta_part;
  return out;
}

Eigen::VectorXd GaussianApprox::marginal_variances() const {
  const int n = model.n_rows();
  const int m = model.latent_dim() - n;
  const double kappa = CompiledModel::kTyingPrecision;
  const SelectedInverse sigma(factor);
  Eigen::VectorXd var(n + m);
  var.tail(m) = sigma.diagonal();
  const bool constrained = constraint_solve.cols() > 0;
  if (constrained) var.tail(m) -= (constraint_solve * constraint_inverse).cwiseProduct(constraint_solve).rowwise().sum();
  const auto& obs = model.observation_map();
  for (int i = 0; i < n; ++i) {
    const auto& row = obs[i];
    double q = 0.0;
    for (const auto& a : row)
      for (const auto& b : row) q += a.weight * b.weight * sigma(a.index - n, b.index - n);
    if (constrained) {
      Eigen::RowVectorXd aw = Eigen::RowVectorXd::Zero(constraint_solve.cols());
      for (const auto& a : row) aw += a.weight * constraint_solve.row(a.index - n);
      q -= aw * constraint_inverse * aw.transpose();
    }
    const double mi = kappa / (kappa + curvature[i]);
    var[i] = 1.0 / (kappa + curvature[i]) + mi * mi * q;
  }
  return var;
}

LincombMoments GaussianApprox::lincomb(const Eigen::MatrixXd& a) const {
  const int n = model.n_rows();
  const int m = model.latent_dim() - n;
  if (a.cols() != n + m) throw std::invalid_argument("combination matrix has wrong column count");
  const double kappa = CompiledModel::kTyingPrecision;
  const auto& obs = model.observation_map();

  // A x = A_eta eta + A_x x_r, eta = M A_obs x_r + independent noise.
  Eigen::MatrixXd b = a.rightCols(m);
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(a.rows(), a.rows());
  for (int i = 0; i < n; ++i) {
    const auto col = a.col(i);
    if (col.isZero(0.0)) continue;
    const double mi = kappa / (kappa + curvature[i]);
    for (const auto& t : obs[i]) b.col(t.index - n) += col * (mi * t.weight);
    cov += col * col.transpose() / (kappa + curvature[i]);
  }
  const Eigen::MatrixXd z = factor.solve(Eigen::MatrixXd(b.transpose()));
  cov += b * z;
  if (constraint_solve.cols() > 0) {
    const Eigen::MatrixXd bw = b * constraint_solve;
    cov -= bw * constraint_inverse * bw.transpose();
  }
  LincombMoments out;
  out.mean = a * mode;
  out.cov = 0.5 * (cov + cov.transpose());
  return out;
}

LaplaceEvaluation evaluate_theta(const CompiledModel& model, const Eigen::VectorXd& theta,
                                 const NewtonOptions& options, const Eigen::VectorXd* start) {
  if (theta.size() != model.theta_dim()) throw std::invalid_argument("hyperparameter vector has wrong length");
  if (!theta.allFinite()) throw InferenceError("non-finite hyperparameters");
  LaplaceEvaluation ev{gaussian_approximation(model, theta, options, start), 0.0};
  const GaussianApprox& ga = ev.approx;

  // Constrained prior normalizer: log|Q_x| + log|C Q_x^{-1} C^T| on the
  // block coordinates; the eta tying contributes n log kappa to both sides.
  const int n = model.n_rows();
  const SparseSymmetric q_prior = model.reduced_precision(theta, Eigen::VectorXd::Zero(n));
  const CholeskyFactor f_prior = factor_or_throw(q_prior, model.reduced_symbolic(), theta);
  const Kriging k_prior = kriging(f_prior, model.reduced_constraints());
  const double prior_log_det = f_prior.log_det() + k_prior.log_det;

  const double lp = model.log_prior(theta) + 0.5 * prior_log_det - 0.5 * model.prior_quadratic(ga.mode, theta, false) +
                    model.log_likelihood(ga.mode, theta) - 0.5 * ga.log_normalizer();
  if (!std::isfinite(lp)) throw InferenceError("log posterior is not finite at theta = " + format_theta(theta));
  ev.log_posterior = lp;
  return ev;
}

double log_posterior_theta(const CompiledModel& model, const Eigen::VectorXd& theta, const NewtonOptions& options) {
  return evaluate_theta(model, theta, options).log_posterior;
}

std::size_t HyperGrid::best_index() const {
  std::size_t best = 0;
  for (std::size_t k = 1; k < points.size(); ++k)
    if (points[k].log_density > points[best].log_density) best = k;
  return best;
}

namespace {

// Evaluates the Laplace log posterior with a warm start taken from the best
// evaluation so far. Failures map to -inf for the optimizer.
class Evaluator {
 public:
  Evaluator(const CompiledModel& model, const NewtonOptions& options) : model_(model), options_(options) {}

  double operator()(const Eigen::VectorXd& theta) {
    ++count_;
    try {
      auto ev = evaluate_theta(model_, theta, options_, warm_.size() ? &warm_ : nullptr);
      if (ev.log_posterior > best_) {
        best_ = ev.log_posterior;
        warm_ = ev.approx.mode;
      }
      return ev.log_posterior;
    } catch (const InferenceError& e) {
      log_debug("evaluation failed: ", e.what());
      return -kInf;
    }
  }

  LaplaceEvaluation full(const Eigen::VectorXd& theta) {
    ++count_;
    auto ev = evaluate_theta(model_, theta, options_, warm_.size() ? &warm_ : nullptr);
    if (ev.log_posterior > best_) {
      best_ = ev.log_posterior;
      warm_ = ev.approx.mode;
    }
    return ev;
  }

  const Eigen::VectorXd& warm() const { return warm_; }
  int count() const { return count_; }

 private:
  const CompiledModel& model_;
  NewtonOptions options_;
  Eigen::VectorXd warm_;
  double best_ = -kInf;
  int count_ = 0;
};

// Central differences; optionally also the negated diagonal second
// differences from the same evaluations.
Eigen::VectorXd fd_gradient(Evaluator& f, const Eigen::VectorXd& theta, double h, double f0 = 0.0,
                            Eigen::VectorXd* curvature = nullptr) {
  Eigen::VectorXd g(theta.size());
  if (curvature) curvature->resize(theta.size());
  for (Eigen::Index k = 0; k < theta.size(); ++k) {
    Eigen::VectorXd tp = theta, tm = theta;
    tp[k] += h;
    tm[k] -= h;
    const double fp = f(tp), fm = f(tm);
    g[k] = (fp - fm) / (2.0 * h);
    if (curvature) (*curvature)[k] = -(fp - 2.0 * f0 + fm) / (h * h);
  }
  return g;
}

struct OptimizerResult {
  Eigen::VectorXd theta;
  double value;
  int iterations;
};

// Quasi-Newton ascent with finite-difference gradients and backtracking.
OptimizerResult maximize(Evaluator& f, Eigen::VectorXd theta, const GridOptions& options) {
  const Eigen::Index d = theta.size();
  double value = f(theta);
  if (!std::isfinite(value))
    throw InferenceError("log posterior cannot be evaluated at the starting point " + format_theta(theta));
  Eigen::VectorXd curv;
  Eigen::VectorXd g = fd_gradient(f, theta, options.gradient_step, value, &curv);
  if (!g.allFinite()) throw InferenceError("gradient of the log posterior is not finite at the starting point");
  // Sharply curved directions (e.g. a concentrated prior) start with a
  // correspondingly short step.
  Eigen::VectorXd scale = Eigen::VectorXd::Ones(d);
  for (Eigen::Index k = 0; k < d; ++k)
    if (std::isfinite(curv[k]) && curv[k] > 1.0) scale[k] = 1.0 / curv[k];
  const Eigen::MatrixXd h_start = scale.asDiagonal();
  Eigen::MatrixXd h_inv = h_start;
  const double gtol = 5e-4;
  const double max_step = 2.0;
  int iter = 0;
  bool converged = false;
  for (; iter < options.max_optimizer_iterations; ++iter) {
    log_debug("optimizer iter ", iter, " theta = ", format_theta(theta), " lp = ", value,
              " |grad| = ", g.lpNorm<Eigen::Infinity>());
    if (g.lpNorm<Eigen::Infinity>() < gtol) {
      converged = true;
      break;
    }
    Eigen::VectorXd p = h_inv * g;
    if (p.dot(g) <= 0.0) {
      h_inv = h_start;
      p = h_inv * g;
    }
    const double pn = p.lpNorm<Eigen::Infinity>();
    if (pn > max_step) p *= max_step / pn;

    double alpha = 1.0, next = -kInf;
    Eigen::VectorXd candidate;
    bool ok = false;
    for (int tries = 0; tries < 40; ++tries) {
      candidate = theta + alpha * p;
      next = f(candidate);
      if (std::isfinite(next) && next >= value + 1e-4 * alpha * p.dot(g)) {
        ok = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!ok) {
      if (!h_inv.isApprox(h_start)) {
        h_inv = h_start;
        continue;
      }
      // No ascent direction left: stationary up to finite-difference noise.
      converged = g.lpNorm<Eigen::Infinity>() < 1e-2;
      break;
    }
    const Eigen::VectorXd g_next = fd_gradient(f, candidate, options.gradient_step);
    if (!g_next.allFinite()) throw InferenceError("gradient of the log posterior is not finite");
    const Eigen::VectorXd s = candidate - theta;
    const Eigen::VectorXd y = g - g_next;  // gradient change of the negated objective
    const double sy = s.dot(y);
    if (sy > 1e-12) {
      if (iter == 0 && (scale.array() == 1.0).all()) h_inv *= sy / y.squaredNorm();
      const double rho = 1.0 / sy;
      const Eigen::MatrixXd i_n = Eigen::MatrixXd::Identity(d, d);
      h_inv = (i_n - rho * s * y.transpose()) * h_inv * (i_n - rho * y * s.transpose()) + rho * s * s.transpose();
    }
    const double gain = next - value;
    theta = candidate;
    value = next;
    g = g_next;
    if (gain < 1e-10 * (1.0 + std::abs(value)) && s.lpNorm<Eigen::Infinity>() < 1e-7) {
      converged = g.lpNorm<Eigen::Infinity>() < 1e-2;
      break;
    }
  }
  if (!converged) {
    if (g.lpNorm<Eigen::Infinity>() < 1e-2) {
      log_warn("hyperparameter optimizer stopped with gradient norm ", g.lpNorm<Eigen::Infinity>());
    } else {
      throw InferenceError("hyperparameter optimizer did not converge after " + std::to_string(iter) +
                           " iterations (gradient norm " + std::to_string(g.lpNorm<Eigen::Infinity>()) + ")");
    }
  }
  return {theta, value, iter};
}

Eigen::MatrixXd fd_hessian(Evaluator& f, const Eigen::VectorXd& theta, double f0, double h) {
  const Eigen::Index d = theta.size();
  Eigen::MatrixXd hess(d, d);
  auto at = [&](Eigen::Index i, double si, Eigen::Index j, double sj) {
    Eigen::VectorXd t = theta;
    t[i] += si * h;
    if (j >= 0) t[j] += sj * h;
    const double v = f(t);
    if (!std::isfinite(v)) throw InferenceError("log posterior cannot be evaluated near the mode");
    return v;
  };
  for (Eigen::Index i = 0; i < d; ++i) {
    hess(i, i) = -(at(i, 1, -1, 0) - 2.0 * f0 + at(i, -1, -1, 0)) / (h * h);
    for (Eigen::Index j = 0; j < i; ++j) {
      const double v = at(i, 1, j, 1) - at(i, 1, j, -1) - at(i, -1, j, 1) + at(i, -1, j, -1);
      hess(i, j) = hess(j, i) = -v / (4.0 * h * h);
    }
  }
  return hess;
}

void normalize_weights(HyperGrid& grid, const std::vector<double>& design) {
  double top = -kInf;
  for (const auto& p : grid.points) top = std::max(top, p.log_density);
  double total = 0.0;
  for (std::size_t k = 0; k < grid.points.size(); ++k) {
    grid.points[k].weight = design[k] * std::exp(grid.points[k].log_density - top);
    total += grid.points[k].weight;
  }
  for (auto& p : grid.points) p.weight /= total;
}

}  // namespace

HyperGrid explore_hypergrid(const CompiledModel& model, const GridOptions& options) {
  const int d = model.theta_dim();
  Evaluator f(model, options.newton);
  HyperGrid grid;
  grid.step = options.step;
  grid.log_drop = options.log_drop;

  auto make_point = [&](const Eigen::VectorXd& theta, const Eigen::VectorXd& z, LaplaceEvaluation ev) {
    GridPoint p;
    p.theta = theta;
    p.z = z;
    p.log_density = ev.log_posterior;
    if (options.keep_approximations) p.approx = std::make_shared<const GaussianApprox>(std::move(ev.approx));
    return p;
  };

  if (d == 0) {
    const Eigen::VectorXd empty(0);
    grid.strategy = GridStrategy::single;
    grid.mode = empty;
    grid.hessian = grid.covariance = grid.transform = Eigen::MatrixXd(0, 0);
    grid.points.push_back(make_point(empty, empty, f.full(empty)));
    grid.points[0].weight = 1.0;
    grid.evaluations = f.count();
    return grid;
  }

  Eigen::VectorXd start = options.start ? *options.start : model.initial_theta();
  if (start.size() != d) throw std::invalid_argument("starting hyperparameters have wrong length");

  for (int attempt = 0; attempt < 2; ++attempt) {
    const OptimizerResult opt = maximize(f, start, options);
    grid.mode = opt.theta;
    grid.optimizer_iterations += opt.iterations;
    log_info("hyperparameter mode ", format_theta(opt.theta), " log posterior ", opt.value, " after ",
             opt.iterations, " iterations");

    Eigen::MatrixXd hess = fd_hessian(f, opt.theta, opt.value, options.hessian_step);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(hess);
    Eigen::VectorXd lambda = eig.eigenvalues();
    const double top = std::max(lambda.cwiseAbs().maxCoeff(), 1e-8);
    if (lambda.minCoeff() <= 1e-8 * top) {
      log_warn("curvature at the hyperparameter mode is not positive definite; clipping eigenvalues");
      for (Eigen::Index k = 0; k < lambda.size(); ++k) lambda[k] = std::max(std::abs(lambda[k]), 1e-6 * top);
    }
    const Eigen::MatrixXd& v = eig.eigenvectors();
    grid.hessian = v * lambda.asDiagonal() * v.transpose();
    grid.covariance = v * lambda.cwiseInverse().asDiagonal() * v.transpose();
    grid.transform = v * lambda.cwiseInverse().cwiseSqrt().asDiagonal();

    const LaplaceEvaluation center = f.full(opt.theta);
    const double lp0 = center.log_posterior;
    grid.points.clear();
    std::vector<double> design;
    grid.points.push_back(make_point(opt.theta, Eigen::VectorXd::Zero(d), center));
    design.push_back(1.0);

    auto evaluate_z = [&](const Eigen::VectorXd& z, double& lp) -> std::optional<GridPoint> {
      const Eigen::VectorXd theta = opt.theta + grid.transform * z;
      try {
        LaplaceEvaluation ev = f.full(theta);
        lp = ev.log_posterior;
        return make_point(theta, z, std::move(ev));
      } catch (const InferenceError& e) {
        log_debug("grid point ", format_theta(theta), " failed: ", e.what());
        lp = -kInf;
        return std::nullopt;
      }
    };

    if (d <= options.max_grid_dim) {
      grid.strategy = GridStrategy::grid;
      // Flood fill over the integer lattice from the mode.
      std::map<std::vector<int>, bool> seen;
      std::deque<std::vector<int>> queue;
      const std::vector<int> origin(static_cast<std::size_t>(d), 0);
      seen[origin] = true;
      queue.push_back(origin);
      while (!queue.empty()) {
        const std::vector<int> node = queue.front();
        queue.pop_front();
        for (int axis = 0; axis < d; ++axis)
          for (int dir : {-1, 1}) {
            std::vector<int> next = node;
            next[static_cast<std::size_t>(axis)] += dir;
            if (std::abs(next[static_cast<std::size_t>(axis)]) > options.max_axis_steps) continue;
            if (seen.count(next)) continue;
            Eigen::VectorXd z(d);
            for (int k = 0; k < d; ++k) z[k] = options.step * next[static_cast<std::size_t>(k)];
            double lp;
            auto point = evaluate_z(z, lp);
            const bool keep = point && lp0 - lp <= options.log_drop;
            seen[next] = keep;
            if (keep) {
              grid.points.push_back(std::move(*point));
              design.push_back(1.0);
              queue.push_back(next);
            }
          }
      }
    } else {
      grid.strategy = GridStrategy::ccd;
      const double f0 = options.ccd_radius;
      const double radius = f0 * std::sqrt(static_cast<double>(d));
      std::vector<Eigen::VectorXd> zs;
      for (int axis = 0; axis < d; ++axis)
        for (int dir : {-1, 1}) {
          Eigen::VectorXd z = Eigen::VectorXd::Zero(d);
          z[axis] = dir * radius;
          zs.push_back(z);
        }
      if (d <= 6) {
        for (int mask = 0; mask < (1 << d); ++mask) {
          Eigen::VectorXd z(d);
          for (int k = 0; k < d; ++k) z[k] = (mask >> k & 1) ? f0 : -f0;
          zs.push_back(z);
        }
      }
      const double design_weight =
          std::exp(0.5 * radius * radius) / ((f0 * f0 - 1.0) * static_cast<double>(zs.size()));
      for (const auto& z : zs) {
        double lp;
        if (auto point = evaluate_z(z, lp)) {
          grid.points.push_back(std::move(*point));
          design.push_back(design_weight);
        }
      }
    }

    const std::size_t best = grid.best_index();
    if (best != 0 && grid.points[best].log_density > lp0 + 1e-6 && attempt == 0) {
      log_info("grid found a higher point than the optimizer; restarting from it");
      start = grid.points[best].theta;
      continue;
    }
    normalize_weights(grid, design);
    break;
  }
  if (grid.points.empty()) throw InferenceError("hyperparameter grid is empty");
  grid.evaluations = f.count();
  log_info("hyperparameter grid: ", grid.points.size(), " points, ", grid.evaluations, " evaluations");
  return grid;
}

namespace {

std::shared_ptr<const GaussianApprox> approx_at(const CompiledModel& model, const GridPoint& p,
                                                const NewtonOptions& newton) {
  if (p.approx) return p.approx;
  return std::make_shared<const GaussianApprox>(gaussian_approximation(model, p.theta, newton));
}

}  // namespace

LatentSummary latent_summary(const CompiledModel& model, const HyperGrid& grid, const NewtonOptions& newton) {
  if (grid.points.empty()) throw InferenceError("hyperparameter grid is empty");
  const int dim = model.latent_dim();
  std::vector<Eigen::VectorXd> means, vars;
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(dim);
  for (const auto& p : grid.points) {
    const auto ga = approx_at(model, p, newton);
    means.push_back(ga->mode);
    vars.push_back(ga->marginal_variances());
    mean += p.weight * ga->mode;
  }
  Eigen::VectorXd var = Eigen::VectorXd::Zero(dim);
  for (std::size_t k = 0; k < grid.points.size(); ++k)
    var += grid.points[k].weight * (vars[k] + (means[k] - mean).cwiseAbs2());
  return {mean, var.cwiseMax(0.0).cwiseSqrt()};
}

LincombPosterior lincomb_posterior(const CompiledModel& model, const HyperGrid& grid, const Eigen::MatrixXd& a,
                                   const NewtonOptions& newton) {
  if (grid.points.empty()) throw InferenceError("hyperparameter grid is empty");
  if (a.cols() != model.latent_dim()) throw std::invalid_argument("combination matrix has wrong column count");
  const Eigen::Index k = a.rows();
  std::vector<LincombMoments> parts;
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(k);
  for (const auto& p : grid.points) {
    parts.push_back(approx_at(model, p, newton)->lincomb(a));
    mean += p.weight * parts.back().mean;
  }
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(k, k);
  for (std::size_t g = 0; g < parts.size(); ++g) {
    const Eigen::VectorXd dev = parts[g].mean - mean;
    cov += grid.points[g].weight * (parts[g].cov + dev * dev.transpose());
  }
  return {a, mean, 0.5 * (cov + cov.transpose())};
}

Eigen::MatrixXd eta_selection(const CompiledModel& model, const std::vector<int>& rows) {
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows.size()), model.latent_dim());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] < 0 || rows[r] >= model.n_rows()) throw std::out_of_range("row index out of range");
    a(static_cast<Eigen::Index>(r), rows[r]) = 1.0;
  }
  return a;
}

HyperSummary hyper_moments(const HyperGrid& grid) {
  const Eigen::Index d = grid.points.empty() ? 0 : grid.points.front().theta.size();
  HyperSummary s{Eigen::VectorXd::Zero(d), Eigen::MatrixXd::Zero(d, d)};
  for (const auto& p : grid.points) s.mean += p.weight * p.theta;
  for (const auto& p : grid.points) {
    const Eigen::VectorXd dev = p.theta - s.mean;
    s.cov += p.weight * dev * dev.transpose();
  }
  return s;
}

GaussianHyperPrior posterior_as_prior(const HyperGrid& grid) {
  const Eigen::Index d = grid.points.empty() ? 0 : grid.points.front().theta.size();
  const auto positive = std::count_if(grid.points.begin(), grid.points.end(), [](const GridPoint& p) { return p.weight > 0.0; });
  if (positive < d + 1)
    throw InferenceError("posterior_as_prior needs at least " + std::to_string(d + 1) +
                         " grid points with positive weight, got " + std::to_string(positive));
  HyperSummary s = hyper_moments(grid);
  if (d > 0) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(s.cov);
    const double top = std::max(eig.eigenvalues().maxCoeff(), 0.0);
    const double floor = 1e-10 * std::max(top, 1.0);
    if (eig.eigenvalues().minCoeff() <= floor) {
      log_warn("moment-matched hyperparameter covariance is degenerate; adding jitter");
      s.cov += (floor + std::max(0.0, -eig.eigenvalues().minCoeff())) * 10.0 *
               Eigen::MatrixXd::Identity(d, d);
    }
  }
  return {s.mean, s.cov};
}

}  // namespace latentcut
