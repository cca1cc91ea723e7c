#pragma once

// Gaussian and Laplace approximations for latent Gaussian models, with
// numerical integration over the hyperparameters on a standardized grid.

#include "latentcut/model.hpp"
#include "latentcut/sparse.hpp"

#include <Eigen/Dense>

#include <memory>
#include <optional>
#include <vector>

namespace latentcut {

struct NewtonOptions {
  int max_iterations = 50;
  int max_halvings = 10;
  /// Converged when max|gradient| <= tolerance * (1 + ||mode||).
  double tolerance = 1e-6;
};

/// Mean and covariance of A x under a Gaussian approximation.
struct LincombMoments {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

/// Gaussian approximation of pi(x | theta, y) at its mode, conditioned on
/// the model's linear constraints. The linear algebra runs on the block
/// coordinates with eta integrated out; eta moments follow from the tying.
struct GaussianApprox {
  CompiledModel model;
  Eigen::VectorXd theta;
  Eigen::VectorXd mode;                // full latent vector, eta first
  Eigen::VectorXd curvature;           // likelihood curvature on each eta
  SparseSymmetric precision;           // block precision with eta eliminated
  CholeskyFactor factor;               // of `precision`
  Eigen::MatrixXd constraint_solve;    // R^{-1} C^T
  Eigen::MatrixXd constraint_inverse;  // (C R^{-1} C^T)^{-1}
  double log_det_constraint = 0.0;     // log |C R^{-1} C^T|
  double log_det_eta = 0.0;            // sum log(1 + d_i / kappa)
  int iterations = 0;
  double gradient_norm = 0.0;

  /// log |Q*| + log |C Q*^{-1} C^T| less n log kappa: twice the log
  /// normalizing constant of the constrained Gaussian at its mode, up to a
  /// theta-free constant.
  double log_normalizer() const { return log_det_eta + factor.log_det() + log_det_constraint; }

  /// Posterior variances of every latent coordinate (constraint-corrected).
  Eigen::VectorXd marginal_variances() const;
  LincombMoments lincomb(const Eigen::MatrixXd& a) const;
};

GaussianApprox gaussian_approximation(const CompiledModel& model, const Eigen::VectorXd& theta,
                                      const NewtonOptions& options = {},
                                      const Eigen::VectorXd* start = nullptr);

struct LaplaceEvaluation {
  GaussianApprox approx;
  double log_posterior = 0.0;
};

/// Laplace approximation of log pi(theta | y) up to a theta-free constant,
/// together with the Gaussian approximation it was evaluated at.
LaplaceEvaluation evaluate_theta(const CompiledModel& model, const Eigen::VectorXd& theta,
                                 const NewtonOptions& options = {}, const Eigen::VectorXd* start = nullptr);

double log_posterior_theta(const CompiledModel& model, const Eigen::VectorXd& theta,
                           const NewtonOptions& options = {});

/// Gradient of log pi(x | theta, y) (projected onto the constraint set).
Eigen::VectorXd conditional_log_density_gradient(const CompiledModel& model, const Eigen::VectorXd& theta,
                                                 const Eigen::VectorXd& x);
/// log pi(x | theta, y) up to an x-free constant (constraints ignored).
double conditional_log_density(const CompiledModel& model, const Eigen::VectorXd& theta, const Eigen::VectorXd& x);

enum class GridStrategy { single, grid, ccd };

struct GridOptions {
  double step = 1.0;          // spacing in standardized coordinates
  double log_drop = 6.0;      // keep points within this log-density drop of the mode
  int max_grid_dim = 4;       // full grid up to this many hyperparameters, CCD beyond
  int max_axis_steps = 8;
  double ccd_radius = 1.1;    // f0 of the composite design
  double gradient_step = 1e-4;
  double hessian_step = 5e-3;
  int max_optimizer_iterations = 200;
  bool keep_approximations = true;
  std::optional<Eigen::VectorXd> start;
  NewtonOptions newton;
};

struct GridPoint {
  Eigen::VectorXd theta;
  Eigen::VectorXd z;
  double log_density = 0.0;
  double weight = 0.0;
  std::shared_ptr<const GaussianApprox> approx;
};

struct HyperGrid {
  std::vector<GridPoint> points;
  Eigen::VectorXd mode;
  Eigen::MatrixXd hessian;     // of -log pi(theta | y) at the mode
  Eigen::MatrixXd covariance;  // its inverse
  Eigen::MatrixXd transform;   // theta = mode + transform * z
  GridStrategy strategy = GridStrategy::single;
  double step = 1.0;
  double log_drop = 0.0;
  int optimizer_iterations = 0;
  int evaluations = 0;

  std::size_t best_index() const;
};

HyperGrid explore_hypergrid(const CompiledModel& model, const GridOptions& options = {});

struct LatentSummary {
  Eigen::VectorXd mean;
  Eigen::VectorXd sd;
};

LatentSummary latent_summary(const CompiledModel& model, const HyperGrid& grid, const NewtonOptions& newton = {});

struct LincombPosterior {
  Eigen::MatrixXd a;
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

LincombPosterior lincomb_posterior(const CompiledModel& model, const HyperGrid& grid, const Eigen::MatrixXd& a,
                                   const NewtonOptions& newton = {});

/// Rows of A selecting the given eta coordinates.
Eigen::MatrixXd eta_selection(const CompiledModel& model, const std::vector<int>& rows);

struct HyperSummary {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

/// Grid-weighted mean and covariance of theta.
HyperSummary hyper_moments(const HyperGrid& grid);

/// Moment-matched Gaussian over the grid, used as the prior of a later run.
GaussianHyperPrior posterior_as_prior(const HyperGrid& grid);

}  // namespace latentcut
