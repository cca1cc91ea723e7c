#include "latentcut/datasets.hpp"
#include "latentcut/errors.hpp"
#include "latentcut/nodesplit.hpp"
#include "latentcut/special.hpp"

#include "fixtures.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <boost/random/mersenne_twister.hpp>
#include <boost/random/uniform_int_distribution.hpp>
#include <boost/random/uniform_real_distribution.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace latentcut;

namespace {

Eigen::MatrixXd random_orthogonal(int n, unsigned seed) {
  boost::random::mt19937 rng(seed);
  boost::random::uniform_real_distribution<double> unif(-1.0, 1.0);
  Eigen::MatrixXd m(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) m(i, j) = unif(rng);
  return Eigen::HouseholderQR<Eigen::MatrixXd>(m).householderQ();
}

// Quadratic-time step-up: for each k from the top, test the k-th smallest.
std::vector<std::size_t> naive_bh(const std::vector<double>& p, double q) {
  const std::size_t m = p.size();
  for (std::size_t k = m; k >= 1; --k) {
    // k-th smallest value
    std::vector<double> sorted = p;
    std::sort(sorted.begin(), sorted.end());
    const double pk = sorted[k - 1];
    if (pk <= static_cast<double>(k) * q / static_cast<double>(m)) {
      std::vector<std::size_t> out;
      for (std::size_t i = 0; i < m; ++i)
        if (p[i] <= pk) out.push_back(i);
      return out;
    }
  }
  return {};
}

}  // namespace

TEST_CASE("discrepancy examples") {
  SUBCASE("zero mean") {
    Eigen::Matrix2d s;
    s << 2, 0.5, 0.5, 1;
    const auto r = discrepancy(Eigen::Vector2d::Zero(), s);
    CHECK(r.delta_hat == 0.0);
    CHECK(r.p_value == 1.0);
    CHECK(r.rank == 2);
  }
  SUBCASE("one dimension") {
    const auto r = discrepancy(Eigen::VectorXd::Constant(1, 2.0), Eigen::MatrixXd::Constant(1, 1, 4.0));
    CHECK(r.delta_hat == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(r.rank == 1);
    CHECK(std::abs(r.p_value - 0.31731050786291415) <= 1e-6);
    CHECK(std::abs(r.p_value - oracle::chisq_tail_boost(1.0, 1)) <= 1e-12);
  }
  SUBCASE("duplicated coordinate") {
    Eigen::Matrix2d s;
    s << 1, 1, 1, 1;
    const auto r = discrepancy(Eigen::Vector2d(1, 1), s);
    CHECK(r.rank == 1);
    CHECK(std::abs(r.delta_hat - 1.0) <= 1e-10);
  }
  SUBCASE("rank zero") {
    CHECK_THROWS_AS(discrepancy(Eigen::Vector2d(1, 0), Eigen::Matrix2d::Zero()), InferenceError);
    CHECK_THROWS_AS(discrepancy(Eigen::Vector2d(1, 0), 1e-12 * Eigen::Matrix2d::Identity(), 1e-8, 1e-8),
                    InferenceError);
  }
  SUBCASE("dimension mismatch") {
    CHECK_THROWS_AS(discrepancy(Eigen::Vector3d::Zero(), Eigen::Matrix2d::Identity()), std::invalid_argument);
  }
}

TEST_CASE("discrepancy agrees with a dense pseudoinverse and is orthogonally invariant") {
  boost::random::mt19937 rng(31);
  boost::random::uniform_real_distribution<double> unif(-1.0, 1.0);
  for (int n = 1; n <= 5; ++n)
    for (int rank = 1; rank <= n; ++rank) {
      Eigen::MatrixXd b(n, rank);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < rank; ++j) b(i, j) = unif(rng);
      const Eigen::MatrixXd s = b * b.transpose();
      Eigen::VectorXd mu(n);
      for (int i = 0; i < n; ++i) mu[i] = unif(rng);
      const auto r = discrepancy(mu, s);
      const auto ref = oracle::pinv_discrepancy(mu, s, 1e-8, 0.0);
      CHECK(r.rank == rank);
      CHECK(r.rank == ref.rank);
      CHECK(std::abs(r.delta_hat - ref.delta) <= 1e-8 * std::max(1.0, ref.delta));

      // Pseudoinverse property on the retained eigenspace.
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(s);
      const double cut = 1e-8 * eig.eigenvalues().maxCoeff();
      Eigen::MatrixXd pinv = Eigen::MatrixXd::Zero(n, n);
      for (int k = 0; k < n; ++k)
        if (eig.eigenvalues()[k] > cut)
          pinv += eig.eigenvectors().col(k) * eig.eigenvectors().col(k).transpose() / eig.eigenvalues()[k];
      CHECK((s * pinv * s - s).norm() <= 1e-8 * s.norm());

      const Eigen::MatrixXd o = random_orthogonal(n, 100u + static_cast<unsigned>(n * 10 + rank));
      const auto rot = discrepancy(o * mu, o * s * o.transpose());
      CHECK(rot.rank == r.rank);
      CHECK(std::abs(rot.delta_hat - r.delta_hat) <= 1e-8 * std::max(1.0, r.delta_hat));
    }
}

TEST_CASE("full-rank discrepancy is invariant under invertible maps") {
  Eigen::Matrix3d s;
  s << 2, 0.3, 0.1, 0.3, 1, -0.2, 0.1, -0.2, 0.5;
  Eigen::Matrix3d t;
  t << 1, 2, 0, 0, 1, 3, 1, 0, 1;
  const Eigen::Vector3d mu(0.4, -1.0, 0.7);
  const auto a = discrepancy(mu, s);
  const auto b = discrepancy(t * mu, t * s * t.transpose());
  CHECK(a.delta_hat == doctest::Approx(b.delta_hat).epsilon(1e-10));
  CHECK(a.delta_hat == doctest::Approx(mu.dot(s.inverse() * mu)).epsilon(1e-12));
}

TEST_CASE("p-values decrease as the discrepancy grows") {
  for (int r = 1; r <= 5; ++r) {
    double prev = 1.0;
    for (double scale = 0.1; scale < 5.0; scale += 0.1) {
      const auto res = discrepancy(Eigen::VectorXd::Constant(r, scale), Eigen::MatrixXd::Identity(r, r));
      CHECK(res.p_value < prev);
      prev = res.p_value;
    }
  }
}

TEST_CASE("Benjamini-Hochberg") {
  SUBCASE("rats INLA column flags rat 9 only") {
    const std::vector<double> p = {0.96, 0.06, 0.74, 0.11, 0.17, 0.81, 0.59, 0.86, 0.0026, 0.21,
                                   0.32, 0.49, 1.00, 0.15, 0.08, 0.68, 0.56, 0.70, 0.73, 0.95,
                                   0.87, 0.45, 0.50, 0.63, 0.02, 0.64, 0.26, 0.63, 0.16, 0.99};
    CHECK(bh_fdr(p, 0.10) == std::vector<std::size_t>{8});
  }
  SUBCASE("all ones") { CHECK(bh_fdr(std::vector<double>(7, 1.0), 0.1).empty()); }
  SUBCASE("step-up reaches past a failing rank") {
    // 0.06 > 2 * 0.1 / 4 on its own, but the third value passes and carries it.
    CHECK(bh_fdr({0.01, 0.06, 0.07, 0.9}, 0.1) == std::vector<std::size_t>{0, 1, 2});
  }
  SUBCASE("missing entries are ignored") {
    const std::vector<std::size_t> got = bh_fdr({0.001, std::nan(""), 0.04, 0.5}, 0.1);
    CHECK(got == std::vector<std::size_t>{0, 2});
  }
  SUBCASE("errors") {
    CHECK_THROWS(bh_fdr({}, 0.1));
    CHECK_THROWS(bh_fdr({0.5}, 0.0));
    CHECK_THROWS(bh_fdr({0.5}, 1.0));
  }
  SUBCASE("random vectors against the naive step-up") {
    boost::random::mt19937 rng(77);
    boost::random::uniform_real_distribution<double> unif(0.0, 1.0);
    boost::random::uniform_int_distribution<int> size(1, 40);
    for (int rep = 0; rep < 500; ++rep) {
      std::vector<double> p(static_cast<std::size_t>(size(rng)));
      for (auto& v : p) v = std::pow(unif(rng), 3.0);
      if (rep % 5 == 0) p[0] = p.back();  // ties
      for (double q : {0.05, 0.1, 0.25}) CHECK(bh_fdr(p, q) == naive_bh(p, q));
    }
  }
}

TEST_CASE("group splits") {
  auto d = fixtures::grouped_data(3, 2, 40);
  SUBCASE("labels and rows") {
    const CompiledModel m = build_model(fixtures::hierarchy_spec(fixtures::grouped_table(d)));
    const GroupSplit s = make_group_split(m, "group");
    CHECK(s.labels == std::vector<std::string>{"1", "2", "3"});
    CHECK(s.rows[1] == std::vector<int>{2, 3});
    CHECK_THROWS_AS(make_group_split(m, "nosuch"), InputError);
  }
  SUBCASE("a single group is rejected") {
    std::fill(d.group.begin(), d.group.end(), 1.0);
    const CompiledModel m = build_model(fixtures::hierarchy_spec(fixtures::grouped_table(d)));
    CHECK_THROWS_AS(make_group_split(m, "group"), InputError);
  }
  SUBCASE("groups without observed responses are skipped") {
    d.y[0] = d.y[1] = DataTable::missing();
    const CompiledModel m = build_model(fixtures::hierarchy_spec(fixtures::grouped_table(d)));
    const GroupSplit s = make_group_split(m, "group");
    CHECK(s.labels == std::vector<std::string>{"2", "3"});
  }
}

TEST_CASE("between-group run with two groups sharing a mean") {
  // y = mu + e, mu ~ N(0, 1/p0), tau fixed: eta of group 1 given group 2 is
  // the conjugate posterior mean of mu from group 2 alone.
  ModelSpec s;
  s.family = Family::gaussian;
  s.response = "y";
  DataTable t;
  const std::vector<double> y = {1.0, 1.4, 0.8, 2.5, 2.9, 2.2, 2.6};
  t.add_column("y", y);
  t.add_column("g", {1, 1, 1, 2, 2, 2, 2});
  s.data = t;
  EffectBlock b;
  b.kind = EffectKind::intercept;
  b.name = "intercept";
  b.precision = 0.1;
  s.effects.push_back(b);
  const double tau = 2.0;
  s.priors["likelihood"] = FixedHyper{{std::log(tau)}};
  const CompiledModel m = build_model(s);
  const GroupSplit split = make_group_split(m, "g");

  const BetweenRun run = between_group_run(m, split, 0);
  const double sum2 = 2.5 + 2.9 + 2.2 + 2.6;
  const double prec = 0.1 + tau * 4.0;
  CHECK(run.eta.mean.size() == 3);
  for (Eigen::Index k = 0; k < 3; ++k) {
    CHECK(run.eta.mean[k] == doctest::Approx(tau * sum2 / prec).epsilon(1e-8));
    CHECK(run.eta.cov(k, k) == doctest::Approx(1.0 / prec + 1.0 / CompiledModel::kTyingPrecision).epsilon(1e-8));
  }

  // Swapping roles: the within run of group 2 sees only group 2 data.
  const LincombPosterior within = within_group_run(m, split, 1, GaussianHyperPrior{});
  CHECK(within.mean[0] == doctest::Approx(tau * sum2 / prec).epsilon(1e-8));
}

TEST_CASE("rats: removing one rat gives a five-dimensional eta posterior") {
  const CompiledModel m = build_model(load_rats().spec);
  const GroupSplit split = make_group_split(m, "rat");
  CHECK(split.size() == 30);
  GridOptions o;
  o.keep_approximations = false;
  const BetweenRun run = between_group_run(m, split, 8, o);
  CHECK(run.eta.mean.size() == 5);
  const GaussianHyperPrior cut = posterior_as_prior(run.grid);
  const LincombPosterior within = within_group_run(m, split, 8, cut, o);
  CHECK(within.cov.allFinite());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(within.cov);
  CHECK(eig.eigenvalues().minCoeff() > 0.0);
}

TEST_CASE("relabeling groups permutes the p-values") {
  const auto d = fixtures::grouped_data(4, 4, 41, 1.0, 0.5);
  auto relabeled = d;
  for (auto& g : relabeled.group) g = 5.0 - g;
  const CompiledModel a = build_model(fixtures::hierarchy_spec(fixtures::grouped_table(d)));
  const CompiledModel b = build_model(fixtures::hierarchy_spec(fixtures::grouped_table(relabeled)));
  const NodeSplitResult ra = conflict_pvalues(a, "group");
  const NodeSplitResult rb = conflict_pvalues(b, "group");
  REQUIRE(ra.failures() == 0);
  REQUIRE(rb.failures() == 0);
  for (std::size_t j = 0; j < 4; ++j) {
    const double pa = ra.groups[j].result->p_value;
    const double pb = rb.groups[3 - j].result->p_value;
    CHECK(std::abs(pa - pb) <= 1e-6);
  }
}

TEST_CASE("conflict_pvalues validates q") {
  const auto d = fixtures::grouped_data(3, 3, 42);
  const CompiledModel m = build_model(fixtures::hierarchy_spec(fixtures::grouped_table(d)));
  NodeSplitOptions o;
  o.q = 1.5;
  CHECK_THROWS_AS(conflict_pvalues(m, "group", o), InputError);
}
