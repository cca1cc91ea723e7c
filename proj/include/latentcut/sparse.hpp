#pragma once

// Sparse symmetric matrices and their Cholesky factorizations: the linear
// algebra underneath every Gaussian Markov random field in the engine.

#include <Eigen/Dense>

#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace latentcut {

class NotPositiveDefinite : public std::runtime_error {
 public:
  NotPositiveDefinite(int pivot, double value);
  /// Index (in the original, unpermuted ordering) of the failing pivot.
  int pivot() const { return pivot_; }
  double value() const { return value_; }

 private:
  int pivot_;
  double value_;
};

struct Triplet {
  int row;
  int col;
  double value;
};

/// Symmetric matrix holding its lower triangle in compressed-column form.
/// Row indices are sorted within each column and the diagonal is always
/// structurally present.
class SparseSymmetric {
 public:
  SparseSymmetric() = default;

  /// Builds from entries of either triangle; duplicates are summed and
  /// explicit zeros are kept so that patterns stay stable across values.
  static SparseSymmetric from_triplets(int n, std::span<const Triplet> entries);
  static SparseSymmetric identity(int n);
  static SparseSymmetric from_dense(const Eigen::MatrixXd& dense, double drop_tol = 0.0);

  int dim() const { return n_; }
  std::size_t nonzeros() const { return values_.size(); }
  const std::vector<int>& col_ptr() const { return col_ptr_; }
  const std::vector<int>& row_idx() const { return row_idx_; }
  const std::vector<double>& values() const { return values_; }
  std::vector<double>& mutable_values() { return values_; }

  /// Position of the diagonal entry of column j in values().
  int diagonal_position(int j) const { return col_ptr_[static_cast<std::size_t>(j)]; }

  bool same_pattern(const SparseSymmetric& other) const;

  /// Returns a copy with `diag` added to the diagonal.
  SparseSymmetric plus_diagonal(std::span<const double> diag) const;

  Eigen::VectorXd multiply(const Eigen::VectorXd& x) const;
  Eigen::MatrixXd to_dense() const;

 private:
  int n_ = 0;
  std::vector<int> col_ptr_{0};
  std::vector<int> row_idx_;
  std::vector<double> values_;
};

/// Fill-reducing permutation plus the elimination tree and the structure of
/// the Cholesky factor. Depends only on the sparsity pattern, so one
/// analysis serves every matrix sharing that pattern.
struct SymbolicFactor {
  int n = 0;
  std::vector<int> perm;      // perm[k] = original index of the k-th pivot
  std::vector<int> inv_perm;  // inv_perm[i] = pivot position of original index i
  std::vector<int> parent;    // elimination tree of the permuted matrix
  std::vector<int> l_col_ptr;
  std::vector<int> l_row_idx;
  // Upper triangle of P Q P^T in compressed-column form, with the map from
  // each stored entry back to its slot in the source SparseSymmetric.
  std::vector<int> c_col_ptr;
  std::vector<int> c_row_idx;
  std::vector<int> c_source;

  std::size_t factor_nonzeros() const { return l_row_idx.size(); }
};

enum class Ordering { amd, natural };

std::shared_ptr<const SymbolicFactor> analyze(const SparseSymmetric& pattern,
                                              Ordering ordering = Ordering::amd);

/// Numeric Cholesky factor P Q P^T = L L^T.
class CholeskyFactor {
 public:
  int dim() const { return symbolic_ ? symbolic_->n : 0; }
  double log_det() const { return log_det_; }
  const SymbolicFactor& symbolic() const { return *symbolic_; }
  const std::shared_ptr<const SymbolicFactor>& symbolic_ptr() const { return symbolic_; }
  const std::vector<double>& l_values() const { return l_values_; }

  Eigen::VectorXd solve(const Eigen::VectorXd& b) const;
  Eigen::MatrixXd solve(const Eigen::MatrixXd& b) const;

  /// Dense lower factor in permuted ordering; for tests on small systems.
  Eigen::MatrixXd dense_l() const;

 private:
  friend CholeskyFactor factorize(const SparseSymmetric&, std::shared_ptr<const SymbolicFactor>);
  void forward(double* x) const;
  void backward(double* x) const;

  std::shared_ptr<const SymbolicFactor> symbolic_;
  std::vector<double> l_values_;
  double log_det_ = 0.0;
};

CholeskyFactor factorize(const SparseSymmetric& q, std::shared_ptr<const SymbolicFactor> symbolic);
CholeskyFactor factorize(const SparseSymmetric& q, Ordering ordering = Ordering::amd);

Eigen::VectorXd solve(const CholeskyFactor& factor, const Eigen::VectorXd& b);

/// Entries of Q^{-1} on the pattern of the factor, by Takahashi recursions.
class SelectedInverse {
 public:
  explicit SelectedInverse(const CholeskyFactor& factor);
  /// (Q^{-1})_{ij} in the original ordering; throws std::out_of_range when
  /// the pair is not covered by the factor pattern.
  double operator()(int i, int j) const;
  Eigen::VectorXd diagonal() const;

 private:
  std::size_t slot(int a, int b) const;
  std::shared_ptr<const SymbolicFactor> symbolic_;
  std::vector<double> z_;
};

/// diag(Q^{-1}) from the selected inverse.
Eigen::VectorXd marginal_variances(const CholeskyFactor& factor);

struct ColumnSolve {
  Eigen::MatrixXd cov;          // A Q^{-1} A^T, k x k
  Eigen::MatrixXd a_q_inverse;  // A Q^{-1}, k x n
};

ColumnSolve solve_for_columns(const CholeskyFactor& factor, const Eigen::MatrixXd& a);

}  // namespace latentcut
