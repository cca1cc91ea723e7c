#pragma once

// Group-wise node splitting on the linear predictor: between-group and
// within-group runs joined by a cut on the hyperparameters, the
// standardized discrepancy, conflict p-values, and FDR flagging.

#include "latentcut/inference.hpp"
#include "latentcut/model.hpp"

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

namespace latentcut {

/// Partition of the observed rows by the values of a grouping column.
struct GroupSplit {
  std::string column;
  std::vector<std::string> labels;
  std::vector<std::vector<int>> rows;

  std::size_t size() const { return labels.size(); }
};

GroupSplit make_group_split(const CompiledModel& model, const std::string& column);

struct BetweenRun {
  LincombPosterior eta;
  HyperGrid grid;
};

/// Posterior of eta_j with group j's responses removed.
BetweenRun between_group_run(const CompiledModel& model, const GroupSplit& split, std::size_t j,
                             const GridOptions& options = {});

/// Posterior of eta_j given only group j's responses, with the
/// hyperparameter priors replaced by `cut_prior`.
LincombPosterior within_group_run(const CompiledModel& model, const GroupSplit& split, std::size_t j,
                                  const GaussianHyperPrior& cut_prior, const GridOptions& options = {});

struct DiscrepancyResult {
  Eigen::VectorXd mean;  // mu(delta)
  Eigen::MatrixXd cov;   // Sigma(delta)
  int rank = 0;
  double delta_hat = 0.0;
  double p_value = 1.0;
};

/// Eigenvalues above max(rank_tol * largest, abs_floor) span the retained
/// space; the discrepancy uses the pseudoinverse on that space.
DiscrepancyResult discrepancy(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov, double rank_tol = 1e-8,
                              double abs_floor = 0.0);
DiscrepancyResult discrepancy(const LincombPosterior& between, const LincombPosterior& within,
                              double rank_tol = 1e-8, double abs_floor = 0.0);

/// Benjamini-Hochberg step-up. Missing (NaN) entries are ignored and never
/// flagged; returns flagged indices in increasing order.
std::vector<std::size_t> bh_fdr(const std::vector<double>& p, double q);

struct NodeSplitOptions {
  double q = 0.10;
  int threads = 1;
  double rank_tol = 1e-8;
  /// Absolute eigenvalue floor; sits above the 1/kappa noise the eta tying
  /// adds to every coordinate.
  double rank_floor = 1e-8;
  GridOptions grid;
};

struct GroupResult {
  std::string label;
  std::size_t size = 0;
  std::optional<DiscrepancyResult> result;
  std::string error;
  bool flagged = false;
};

struct NodeSplitResult {
  std::string group_column;
  std::vector<GroupResult> groups;
  double q = 0.10;
  std::vector<std::size_t> flagged;
  double fit_seconds = 0.0;
  double split_seconds = 0.0;
  int threads = 1;

  std::size_t failures() const;
};

NodeSplitResult conflict_pvalues(const CompiledModel& model, const std::string& group_column,
                                 const NodeSplitOptions& options = {});

}  // namespace latentcut
