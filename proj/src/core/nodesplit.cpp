#include "latentcut/nodesplit.hpp"

#include "latentcut/errors.hpp"
#include "latentcut/log.hpp"
#include "latentcut/special.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <map>
#include <numeric>
#include <thread>

namespace latentcut {

namespace {

std::string group_label(double v) {
  if (std::floor(v) == v && std::abs(v) < 1e15) return std::to_string(static_cast<long long>(v));
  return format_number(v);
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

GroupSplit make_group_split(const CompiledModel& model, const std::string& column) {
  const DataTable& data = model.spec().data;
  if (!data.has_column(column)) throw InputError("group: unknown column '" + column + "'");
  const auto& values = data.column(column);
  const auto& observed = model.observed();
  std::map<double, std::vector<int>> by_value;
  for (int i = 0; i < model.n_rows(); ++i) {
    if (DataTable::is_missing(values[i]))
      throw InputError("group: column '" + column + "' has a missing value in row " + std::to_string(i + 1));
    auto& rows = by_value[values[i]];
    if (observed[static_cast<std::size_t>(i)]) rows.push_back(i);
  }
  GroupSplit split;
  split.column = column;
  for (auto& [value, rows] : by_value) {
    if (rows.empty()) {
      log_warn("group ", group_label(value), " has no observed responses and is skipped");
      continue;
    }
    split.labels.push_back(group_label(value));
    split.rows.push_back(std::move(rows));
  }
  if (split.size() < 2) throw InputError("group: column '" + column + "' must define at least two groups");
  return split;
}

BetweenRun between_group_run(const CompiledModel& model, const GroupSplit& split, std::size_t j,
                             const GridOptions& options) {
  if (j >= split.size()) throw std::out_of_range("group index out of range");
  const CompiledModel masked = model.mask_rows(split.rows[j]);
  HyperGrid grid = explore_hypergrid(masked, options);
  LincombPosterior eta = lincomb_posterior(masked, grid, eta_selection(masked, split.rows[j]), options.newton);
  return {std::move(eta), std::move(grid)};
}

LincombPosterior within_group_run(const CompiledModel& model, const GroupSplit& split, std::size_t j,
                                  const GaussianHyperPrior& cut_prior, const GridOptions& options) {
  if (j >= split.size()) throw std::out_of_range("group index out of range");
  std::vector<int> others;
  for (std::size_t k = 0; k < split.size(); ++k)
    if (k != j) others.insert(others.end(), split.rows[k].begin(), split.rows[k].end());
  const CompiledModel within = model.mask_rows(others).with_joint_prior(cut_prior);
  GridOptions opts = options;
  opts.start = cut_prior.mean;
  const HyperGrid grid = explore_hypergrid(within, opts);
  return lincomb_posterior(within, grid, eta_selection(within, split.rows[j]), options.newton);
}

DiscrepancyResult discrepancy(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov, double rank_tol,
                              double abs_floor) {
  if (mean.size() != cov.rows() || cov.rows() != cov.cols())
    throw std::invalid_argument("discrepancy mean and covariance dimensions differ");
  if (mean.size() == 0) throw std::invalid_argument("discrepancy of an empty vector");
  DiscrepancyResult out;
  out.mean = mean;
  out.cov = 0.5 * (cov + cov.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(out.cov);
  const Eigen::VectorXd& lambda = eig.eigenvalues();
  const double top = lambda.maxCoeff();
  const double cutoff = std::max(rank_tol * top, abs_floor);
  if (!(top > cutoff)) throw InferenceError("discrepancy covariance has rank zero");
  const Eigen::VectorXd proj = eig.eigenvectors().transpose() * mean;
  double delta = 0.0;
  for (Eigen::Index k = 0; k < lambda.size(); ++k)
    if (lambda[k] > cutoff) {
      ++out.rank;
      delta += proj[k] * proj[k] / lambda[k];
    }
  if (out.rank == 0) throw InferenceError("discrepancy covariance has rank zero");
  out.delta_hat = delta;
  out.p_value = chisq_tail(delta, out.rank);
  return out;
}

DiscrepancyResult discrepancy(const LincombPosterior& between, const LincombPosterior& within, double rank_tol,
                              double abs_floor) {
  if (between.mean.size() != within.mean.size())
    throw std::invalid_argument("between and within posteriors have different dimensions");
  return discrepancy(between.mean - within.mean, between.cov + within.cov, rank_tol, abs_floor);
}

std::vector<std::size_t> bh_fdr(const std::vector<double>& p, double q) {
  if (p.empty()) throw std::invalid_argument("bh_fdr needs at least one p-value");
  if (!(q > 0.0 && q < 1.0)) throw std::invalid_argument("FDR level must lie in (0, 1)");
  std::vector<std::size_t> order;
  for (std::size_t k = 0; k < p.size(); ++k)
    if (!std::isnan(p[k])) order.push_back(k);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });
  const double m = static_cast<double>(order.size());
  double threshold = -1.0;
  for (std::size_t k = 0; k < order.size(); ++k)
    if (p[order[k]] <= static_cast<double>(k + 1) * q / m) threshold = p[order[k]];
  std::vector<std::size_t> flagged;
  for (std::size_t k = 0; k < p.size(); ++k)
    if (!std::isnan(p[k]) && p[k] <= threshold) flagged.push_back(k);
  return flagged;
}

std::size_t NodeSplitResult::failures() const {
  return static_cast<std::size_t>(
      std::count_if(groups.begin(), groups.end(), [](const GroupResult& g) { return !g.result; }));
}

NodeSplitResult conflict_pvalues(const CompiledModel& model, const std::string& group_column,
                                 const NodeSplitOptions& options) {
  if (!(options.q > 0.0 && options.q < 1.0)) throw InputError("q must lie in (0, 1)");
  const GroupSplit split = make_group_split(model, group_column);

  NodeSplitResult out;
  out.group_column = group_column;
  out.q = options.q;
  out.threads = std::max(1, options.threads);

  const auto fit_start = std::chrono::steady_clock::now();
  GridOptions fit_options = options.grid;
  fit_options.keep_approximations = false;
  const HyperGrid full = explore_hypergrid(model, fit_options);
  out.fit_seconds = seconds_since(fit_start);

  const auto split_start = std::chrono::steady_clock::now();
  GridOptions between_options = options.grid;
  if (full.mode.size() > 0) between_options.start = full.mode;

  out.groups.resize(split.size());
  auto run_group = [&](std::size_t j) {
    GroupResult& g = out.groups[j];
    g.label = split.labels[j];
    g.size = split.rows[j].size();
    try {
      BetweenRun between = between_group_run(model, split, j, between_options);
      const GaussianHyperPrior cut = posterior_as_prior(between.grid);
      between.grid.points.clear();
      const LincombPosterior within = within_group_run(model, split, j, cut, options.grid);
      g.result = discrepancy(between.eta, within, options.rank_tol, options.rank_floor);
      log_info("group ", g.label, ": delta = ", g.result->delta_hat, ", rank ", g.result->rank, ", p = ",
               g.result->p_value);
    } catch (const std::exception& e) {
      g.error = e.what();
      log_warn("group ", g.label, " failed: ", e.what());
    }
  };

  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(out.threads), split.size());
  if (workers <= 1) {
    for (std::size_t j = 0; j < split.size(); ++j) run_group(j);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t j = next++; j < split.size(); j = next++) run_group(j);
      });
    for (auto& t : pool) t.join();
  }
  out.split_seconds = seconds_since(split_start);

  std::vector<double> p;
  for (const auto& g : out.groups) p.push_back(g.result ? g.result->p_value : std::nan(""));
  if (out.failures() < out.groups.size()) {
    out.flagged = bh_fdr(p, options.q);
    for (std::size_t k : out.flagged) out.groups[k].flagged = true;
  }
  return out;
}

}  // namespace latentcut
