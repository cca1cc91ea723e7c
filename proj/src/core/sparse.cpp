#include "latentcut/sparse.hpp"

#include <Eigen/OrderingMethods>
#include <Eigen/Sparse>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace latentcut {

namespace {

std::string pivot_message(int pivot, double value) {
  std::ostringstream os;
  os << "matrix is not positive definite: pivot " << pivot << " has value " << value;
  return os.str();
}

// Nonzero pattern of row k of L, returned in s[top..n).
int ereach(const std::vector<int>& cp, const std::vector<int>& ci, int k,
           const std::vector<int>& parent, std::vector<int>& s, std::vector<char>& mark) {
  const int n = static_cast<int>(parent.size());
  int top = n;
  mark[k] = 1;
  for (int p = cp[k]; p < cp[k + 1]; ++p) {
    int i = ci[p];
    if (i > k) continue;
    int len = 0;
    for (; !mark[i]; i = parent[i]) {
      s[len++] = i;
      mark[i] = 1;
    }
    while (len > 0) s[--top] = s[--len];
  }
  for (int p = top; p < n; ++p) mark[s[p]] = 0;
  mark[k] = 0;
  return top;
}

}  // namespace

NotPositiveDefinite::NotPositiveDefinite(int pivot, double value)
    : std::runtime_error(pivot_message(pivot, value)), pivot_(pivot), value_(value) {}

SparseSymmetric SparseSymmetric::from_triplets(int n, std::span<const Triplet> entries) {
  if (n < 0) throw std::invalid_argument("negative matrix dimension");
  std::vector<Triplet> lower;
  lower.reserve(entries.size() + static_cast<std::size_t>(n));
  for (const auto& t : entries) {
    if (t.row < 0 || t.col < 0 || t.row >= n || t.col >= n)
      throw std::out_of_range("triplet index outside matrix");
    if (!std::isfinite(t.value)) throw std::invalid_argument("non-finite matrix entry");
    lower.push_back(t.row >= t.col ? t : Triplet{t.col, t.row, t.value});
  }
  for (int i = 0; i < n; ++i) lower.push_back({i, i, 0.0});
  std::sort(lower.begin(), lower.end(), [](const Triplet& a, const Triplet& b) {
    return a.col != b.col ? a.col < b.col : a.row < b.row;
  });

  SparseSymmetric m;
  m.n_ = n;
  m.col_ptr_.assign(static_cast<std::size_t>(n) + 1, 0);
  for (std::size_t k = 0; k < lower.size();) {
    const Triplet& t = lower[k];
    double sum = 0.0;
    std::size_t e = k;
    while (e < lower.size() && lower[e].row == t.row && lower[e].col == t.col) sum += lower[e++].value;
    m.row_idx_.push_back(t.row);
    m.values_.push_back(sum);
    ++m.col_ptr_[static_cast<std::size_t>(t.col) + 1];
    k = e;
  }
  std::partial_sum(m.col_ptr_.begin(), m.col_ptr_.end(), m.col_ptr_.begin());
  return m;
}

SparseSymmetric SparseSymmetric::identity(int n) {
  std::vector<Triplet> t;
  for (int i = 0; i < n; ++i) t.push_back({i, i, 1.0});
  return from_triplets(n, t);
}

SparseSymmetric SparseSymmetric::from_dense(const Eigen::MatrixXd& dense, double drop_tol) {
  if (dense.rows() != dense.cols()) throw std::invalid_argument("matrix is not square");
  std::vector<Triplet> t;
  for (int j = 0; j < dense.cols(); ++j)
    for (int i = j; i < dense.rows(); ++i)
      if (i == j || std::abs(dense(i, j)) > drop_tol) t.push_back({i, j, dense(i, j)});
  return from_triplets(static_cast<int>(dense.rows()), t);
}

bool SparseSymmetric::same_pattern(const SparseSymmetric& other) const {
  return n_ == other.n_ && col_ptr_ == other.col_ptr_ && row_idx_ == other.row_idx_;
}

SparseSymmetric SparseSymmetric::plus_diagonal(std::span<const double> diag) const {
  if (diag.size() != static_cast<std::size_t>(n_)) throw std::invalid_argument("diagonal length mismatch");
  SparseSymmetric out = *this;
  for (int j = 0; j < n_; ++j) out.values_[static_cast<std::size_t>(col_ptr_[j])] += diag[j];
  return out;
}

Eigen::VectorXd SparseSymmetric::multiply(const Eigen::VectorXd& x) const {
  if (x.size() != n_) throw std::invalid_argument("vector length mismatch");
  Eigen::VectorXd y = Eigen::VectorXd::Zero(n_);
  for (int j = 0; j < n_; ++j) {
    for (int p = col_ptr_[j]; p < col_ptr_[j + 1]; ++p) {
      const int i = row_idx_[p];
      const double v = values_[p];
      y[i] += v * x[j];
      if (i != j) y[j] += v * x[i];
    }
  }
  return y;
}

Eigen::MatrixXd SparseSymmetric::to_dense() const {
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n_, n_);
  for (int j = 0; j < n_; ++j)
    for (int p = col_ptr_[j]; p < col_ptr_[j + 1]; ++p) {
      d(row_idx_[p], j) = values_[p];
      d(j, row_idx_[p]) = values_[p];
    }
  return d;
}

std::shared_ptr<const SymbolicFactor> analyze(const SparseSymmetric& pattern, Ordering ordering) {
  auto sym = std::make_shared<SymbolicFactor>();
  const int n = pattern.dim();
  sym->n = n;
  sym->perm.resize(static_cast<std::size_t>(n));
  std::iota(sym->perm.begin(), sym->perm.end(), 0);

  const auto& qp = pattern.col_ptr();
  const auto& qi = pattern.row_idx();

  if (ordering == Ordering::amd && n > 1) {
    std::vector<Eigen::Triplet<double>> t;
    t.reserve(2 * qi.size());
    for (int j = 0; j < n; ++j)
      for (int p = qp[j]; p < qp[j + 1]; ++p) {
        t.emplace_back(qi[p], j, 1.0);
        if (qi[p] != j) t.emplace_back(j, qi[p], 1.0);
      }
    Eigen::SparseMatrix<double> full(n, n);
    full.setFromTriplets(t.begin(), t.end());
    Eigen::PermutationMatrix<Eigen::Dynamic, Eigen::Dynamic, int> p_inv;
    Eigen::AMDOrdering<int> amd;
    amd(full, p_inv);
    // Eigen's AMD returns the permutation whose k-th index is the original
    // row eliminated k-th.
    for (int k = 0; k < n; ++k) sym->perm[static_cast<std::size_t>(k)] = p_inv.indices()[k];
  }
  sym->inv_perm.resize(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) sym->inv_perm[static_cast<std::size_t>(sym->perm[k])] = k;

  // Upper triangle of C = P Q P^T by columns, remembering source slots.
  std::vector<int> counts(static_cast<std::size_t>(n) + 1, 0);
  for (int j = 0; j < n; ++j)
    for (int p = qp[j]; p < qp[j + 1]; ++p) {
      const int a = sym->inv_perm[qi[p]], b = sym->inv_perm[j];
      ++counts[static_cast<std::size_t>(std::max(a, b)) + 1];
    }
  std::partial_sum(counts.begin(), counts.end(), counts.begin());
  sym->c_col_ptr = counts;
  sym->c_row_idx.resize(qi.size());
  sym->c_source.resize(qi.size());
  std::vector<int> next(counts.begin(), counts.end() - 1);
  for (int j = 0; j < n; ++j)
    for (int p = qp[j]; p < qp[j + 1]; ++p) {
      const int a = sym->inv_perm[qi[p]], b = sym->inv_perm[j];
      const int col = std::max(a, b);
      const int slot = next[static_cast<std::size_t>(col)]++;
      sym->c_row_idx[static_cast<std::size_t>(slot)] = std::min(a, b);
      sym->c_source[static_cast<std::size_t>(slot)] = p;
    }

  // Elimination tree.
  sym->parent.assign(static_cast<std::size_t>(n), -1);
  std::vector<int> ancestor(static_cast<std::size_t>(n), -1);
  for (int k = 0; k < n; ++k) {
    for (int p = sym->c_col_ptr[k]; p < sym->c_col_ptr[k + 1]; ++p) {
      int i = sym->c_row_idx[p];
      int inext;
      for (; i != -1 && i < k; i = inext) {
        inext = ancestor[i];
        ancestor[i] = k;
        if (inext == -1) sym->parent[i] = k;
      }
    }
  }

  // Row patterns give column counts and then the full structure of L.
  std::vector<int> s(static_cast<std::size_t>(n));
  std::vector<char> mark(static_cast<std::size_t>(n), 0);
  std::vector<int> colcount(static_cast<std::size_t>(n), 1);
  for (int k = 0; k < n; ++k) {
    const int top = ereach(sym->c_col_ptr, sym->c_row_idx, k, sym->parent, s, mark);
    for (int p = top; p < n; ++p) ++colcount[s[p]];
  }
  sym->l_col_ptr.assign(static_cast<std::size_t>(n) + 1, 0);
  for (int k = 0; k < n; ++k) sym->l_col_ptr[k + 1] = sym->l_col_ptr[k] + colcount[k];
  sym->l_row_idx.resize(static_cast<std::size_t>(sym->l_col_ptr[n]));
  std::vector<int> fill(sym->l_col_ptr.begin(), sym->l_col_ptr.end() - 1);
  for (int k = 0; k < n; ++k) {
    const int top = ereach(sym->c_col_ptr, sym->c_row_idx, k, sym->parent, s, mark);
    for (int p = top; p < n; ++p) sym->l_row_idx[fill[s[p]]++] = k;
    sym->l_row_idx[fill[k]++] = k;
  }
  // Each column now lists the diagonal last; rotate it to the front so rows
  // ascend with the diagonal first.
  for (int k = 0; k < n; ++k) {
    auto first = sym->l_row_idx.begin() + sym->l_col_ptr[k];
    auto last = sym->l_row_idx.begin() + sym->l_col_ptr[k + 1];
    std::sort(first, last);
  }
  return sym;
}

CholeskyFactor factorize(const SparseSymmetric& q, std::shared_ptr<const SymbolicFactor> symbolic) {
  if (!symbolic || symbolic->n != q.dim() || symbolic->c_source.size() != q.nonzeros())
    throw std::invalid_argument("symbolic analysis does not match matrix");
  const SymbolicFactor& sym = *symbolic;
  const int n = sym.n;
  const auto& qx = q.values();

  CholeskyFactor f;
  f.symbolic_ = symbolic;
  f.l_values_.assign(sym.l_row_idx.size(), 0.0);
  auto& lx = f.l_values_;
  const auto& lp = sym.l_col_ptr;
  const auto& li = sym.l_row_idx;

  std::vector<double> x(static_cast<std::size_t>(n), 0.0);
  std::vector<int> s(static_cast<std::size_t>(n));
  std::vector<char> mark(static_cast<std::size_t>(n), 0);
  std::vector<int> c(lp.begin(), lp.end() - 1);  // next free slot per column
  double log_det = 0.0;

  // Up-looking: row k of L from a sparse triangular solve.
  for (int k = 0; k < n; ++k) {
    const int top = ereach(sym.c_col_ptr, sym.c_row_idx, k, sym.parent, s, mark);
    for (int p = sym.c_col_ptr[k]; p < sym.c_col_ptr[k + 1]; ++p)
      x[sym.c_row_idx[p]] = qx[sym.c_source[p]];
    double d = x[k];
    x[k] = 0.0;
    for (int t = top; t < n; ++t) {
      const int i = s[t];
      const double lki = x[i] / lx[lp[i]];
      x[i] = 0.0;
      for (int p = lp[i] + 1; p < c[i]; ++p) x[li[p]] -= lx[p] * lki;
      d -= lki * lki;
      lx[c[i]++] = lki;
    }
    if (!(d > 0.0)) throw NotPositiveDefinite(sym.perm[k], d);
    lx[c[k]++] = std::sqrt(d);
    log_det += std::log(d);
  }
  f.log_det_ = log_det;
  return f;
}

CholeskyFactor factorize(const SparseSymmetric& q, Ordering ordering) {
  return factorize(q, analyze(q, ordering));
}

void CholeskyFactor::forward(double* x) const {
  const auto& lp = symbolic_->l_col_ptr;
  const auto& li = symbolic_->l_row_idx;
  for (int j = 0; j < symbolic_->n; ++j) {
    x[j] /= l_values_[lp[j]];
    const double xj = x[j];
    for (int p = lp[j] + 1; p < lp[j + 1]; ++p) x[li[p]] -= l_values_[p] * xj;
  }
}

void CholeskyFactor::backward(double* x) const {
  const auto& lp = symbolic_->l_col_ptr;
  const auto& li = symbolic_->l_row_idx;
  for (int j = symbolic_->n - 1; j >= 0; --j) {
    double v = x[j];
    for (int p = lp[j] + 1; p < lp[j + 1]; ++p) v -= l_values_[p] * x[li[p]];
    x[j] = v / l_values_[lp[j]];
  }
}

Eigen::VectorXd CholeskyFactor::solve(const Eigen::VectorXd& b) const {
  const int n = dim();
  if (b.size() != n) throw std::invalid_argument("right-hand side length mismatch");
  const auto& perm = symbolic_->perm;
  std::vector<double> x(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) x[k] = b[perm[k]];
  forward(x.data());
  backward(x.data());
  Eigen::VectorXd out(n);
  for (int k = 0; k < n; ++k) out[perm[k]] = x[k];
  return out;
}

Eigen::MatrixXd CholeskyFactor::solve(const Eigen::MatrixXd& b) const {
  if (b.rows() != dim()) throw std::invalid_argument("right-hand side rows mismatch");
  Eigen::MatrixXd out(b.rows(), b.cols());
  for (Eigen::Index c = 0; c < b.cols(); ++c) out.col(c) = solve(Eigen::VectorXd(b.col(c)));
  return out;
}

Eigen::MatrixXd CholeskyFactor::dense_l() const {
  const int n = dim();
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(n, n);
  const auto& lp = symbolic_->l_col_ptr;
  const auto& li = symbolic_->l_row_idx;
  for (int j = 0; j < n; ++j)
    for (int p = lp[j]; p < lp[j + 1]; ++p) l(li[p], j) = l_values_[p];
  return l;
}

Eigen::VectorXd solve(const CholeskyFactor& factor, const Eigen::VectorXd& b) { return factor.solve(b); }

SelectedInverse::SelectedInverse(const CholeskyFactor& factor) : symbolic_(factor.symbolic_ptr()) {
  const SymbolicFactor& sym = *symbolic_;
  const int n = sym.n;
  const auto& lp = sym.l_col_ptr;
  const auto& li = sym.l_row_idx;
  const auto& lx = factor.l_values();
  z_.assign(lx.size(), 0.0);

  for (int i = n - 1; i >= 0; --i) {
    const double lii = lx[lp[i]];
    for (int p = lp[i + 1] - 1; p > lp[i]; --p) {
      const int j = li[p];
      double s = 0.0;
      for (int q = lp[i] + 1; q < lp[i + 1]; ++q) s += lx[q] * z_[slot(li[q], j)];
      z_[p] = -s / lii;
    }
    double s = 0.0;
    for (int q = lp[i] + 1; q < lp[i + 1]; ++q) s += lx[q] * z_[q];
    z_[lp[i]] = 1.0 / (lii * lii) - s / lii;
  }
}

// Sigma(row, col) for row >= col lives in column col of the factor pattern.
std::size_t SelectedInverse::slot(int a, int b) const {
  const auto& lp = symbolic_->l_col_ptr;
  const auto& li = symbolic_->l_row_idx;
  const int col = std::min(a, b), row = std::max(a, b);
  const auto first = li.begin() + lp[col], last = li.begin() + lp[col + 1];
  const auto it = std::lower_bound(first, last, row);
  if (it == last || *it != row) throw std::out_of_range("entry is outside the factor pattern");
  return static_cast<std::size_t>(it - li.begin());
}

double SelectedInverse::operator()(int i, int j) const {
  return z_[slot(symbolic_->inv_perm[i], symbolic_->inv_perm[j])];
}

Eigen::VectorXd SelectedInverse::diagonal() const {
  const int n = symbolic_->n;
  Eigen::VectorXd var(n);
  for (int k = 0; k < n; ++k) var[symbolic_->perm[k]] = z_[symbolic_->l_col_ptr[k]];
  return var;
}

Eigen::VectorXd marginal_variances(const CholeskyFactor& factor) { return SelectedInverse(factor).diagonal(); }

ColumnSolve solve_for_columns(const CholeskyFactor& factor, const Eigen::MatrixXd& a) {
  if (a.cols() != factor.dim()) throw std::invalid_argument("combination matrix has wrong column count");
  if (a.rows() > a.cols()) throw std::invalid_argument("more combinations than latent coordinates");
  ColumnSolve out;
  out.a_q_inverse = factor.solve(Eigen::MatrixXd(a.transpose())).transpose();
  Eigen::MatrixXd cov = a * out.a_q_inverse.transpose();
  out.cov = 0.5 * (cov + cov.transpose());
  return out;
}

}  // namespace latentcut
