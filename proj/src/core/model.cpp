#include "latentcut/model.hpp"

#include "latentcut/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <sstream>

namespace latentcut {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

double log_cosh(double z) {
  const double a = std::abs(z);
  return a + std::log1p(std::exp(-2.0 * a)) - std::numbers::ln2;
}

std::string unit_label(double v) {
  if (std::floor(v) == v && std::abs(v) < 1e15) return std::to_string(static_cast<long long>(v));
  return format_number(v);
}

struct Slot {
  std::string name;
  std::string owner;
  int component = 0;
  bool fixed = false;
  double value = 0.0;
};

struct OwnerPrior {
  std::string owner;
  int first_slot = 0;
  int n_slots = 0;
  HyperPrior prior;
};

struct BlockHyper {
  int first_slot = -1;  // into Structure::slots
  int first_mult = -1;  // into the multiplier vector
};

struct AssemblyTerm {
  int slot;
  double coef;
  int mult;
  bool penalty;
  bool tying;
};

}  // namespace

struct CompiledModel::Structure {
  ModelSpec spec;
  int n_rows = 0;
  int latent_dim = 0;
  std::vector<BlockLayout> blocks;
  std::vector<BlockHyper> block_hyper;
  std::vector<std::string> latent_names;
  std::vector<std::vector<Term>> obs;

  std::vector<Slot> slots;
  std::vector<int> free_slots;
  std::vector<HyperSlot> free_info;
  std::vector<OwnerPrior> owner_priors;
  int likelihood_slot = -1;
  int n_mult = 1;

  SparseSymmetric pattern;
  std::vector<AssemblyTerm> terms;
  Eigen::MatrixXd constraints;
  std::vector<int> constraint_mult;
  std::shared_ptr<const SymbolicFactor> symbolic;

  // Block coordinates only, with eta eliminated.
  SparseSymmetric reduced_pattern;
  std::vector<AssemblyTerm> reduced_terms;
  struct PairTerm {
    int slot;
    int row;
    double coef;
  };
  std::vector<PairTerm> reduced_pairs;
  Eigen::MatrixXd reduced_constraints;
  std::shared_ptr<const SymbolicFactor> reduced_symbolic;

  Eigen::VectorXd y;
  Eigen::VectorXd expected;
  std::vector<char> has_response;
  Eigen::VectorXd initial;
};

const char* to_string(Family family) { return family == Family::gaussian ? "gaussian" : "poisson"; }

const char* to_string(EffectKind kind) {
  switch (kind) {
    case EffectKind::intercept: return "intercept";
    case EffectKind::fixed: return "fixed";
    case EffectKind::iid: return "iid";
    case EffectKind::iid2d: return "iid2d";
    case EffectKind::besag: return "besag";
  }
  return "unknown";
}

Eigen::Matrix2d iid2d_precision(std::span<const double> theta) {
  if (theta.size() != 3) throw std::invalid_argument("iid2d needs three internal parameters");
  const double t1 = std::exp(theta[0]), t2 = std::exp(theta[1]);
  const double rho = std::tanh(theta[2]);
  const double c = std::exp(2.0 * log_cosh(theta[2]));  // 1 / (1 - rho^2)
  Eigen::Matrix2d omega;
  omega(0, 0) = t1 * c;
  omega(1, 1) = t2 * c;
  omega(0, 1) = omega(1, 0) = -rho * std::sqrt(t1 * t2) * c;
  return omega;
}

double wishart2d_internal(const Eigen::Matrix2d& r, double df, std::span<const double> theta) {
  if (theta.size() != 3) throw std::invalid_argument("iid2d needs three internal parameters");
  if (!(df > 1.0)) throw InputError("wishart2d degrees of freedom must exceed 1");
  if (std::abs(r(0, 1) - r(1, 0)) > 1e-12 * r.cwiseAbs().maxCoeff() || r(0, 0) <= 0.0 ||
      r.determinant() <= 0.0)
    throw InputError("wishart2d matrix R must be symmetric positive definite");
  const Eigen::Matrix2d omega = iid2d_precision(theta);
  // log|Omega| = log tau1 + log tau2 - log(1 - rho^2)
  const double log_det_omega = theta[0] + theta[1] + 2.0 * log_cosh(theta[2]);
  const double log_norm = 0.5 * df * std::log(r.determinant()) - df * std::numbers::ln2 -
                          (0.5 * std::log(std::numbers::pi) + std::lgamma(0.5 * df) + std::lgamma(0.5 * df - 0.5));
  const double log_density = log_norm + 0.5 * (df - 3.0) * log_det_omega - 0.5 * (r * omega).trace();
  const double log_jacobian = 1.5 * theta[0] + 1.5 * theta[1] + 4.0 * log_cosh(theta[2]);
  return log_density + log_jacobian;
}

double log_gamma_prior(const LogGammaPrior& prior, double log_precision) {
  return prior.shape * std::log(prior.rate) - std::lgamma(prior.shape) + prior.shape * log_precision -
         prior.rate * std::exp(log_precision);
}

double gaussian_log_density(const GaussianHyperPrior& prior, const Eigen::VectorXd& x) {
  const auto d = x.size();
  if (d == 0) return 0.0;
  Eigen::LLT<Eigen::MatrixXd> llt(prior.cov);
  if (llt.info() != Eigen::Success) throw InferenceError("gaussian hyperprior covariance is not positive definite");
  const Eigen::VectorXd r = llt.matrixL().solve(x - prior.mean);
  const double log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  return -0.5 * (static_cast<double>(d) * kLog2Pi + log_det + r.squaredNorm());
}

CompiledModel build_model(const ModelSpec& spec) {
  auto s = std::make_shared<CompiledModel::Structure>();
  s->spec = spec;
  const DataTable& data = s->spec.data;
  const int n = static_cast<int>(data.n_rows());
  if (n < 1) throw InputError("data table has no rows");
  s->n_rows = n;

  // Response.
  const auto& y = data.column(spec.response);
  s->y = Eigen::Map<const Eigen::VectorXd>(y.data(), n);
  s->has_response.assign(static_cast<std::size_t>(n), 0);
  s->expected = Eigen::VectorXd::Ones(n);
  if (spec.offset) {
    if (spec.family != Family::poisson) throw InputError("offset: only poisson models take expected counts");
    const auto& e = data.column(*spec.offset);
    for (int i = 0; i < n; ++i) {
      if (DataTable::is_missing(e[i]) || !(e[i] > 0.0) || !std::isfinite(e[i]))
        throw InputError("offset: expected counts must be finite and positive (row " + std::to_string(i + 1) + ")");
      s->expected[i] = e[i];
    }
  }
  for (int i = 0; i < n; ++i) {
    if (DataTable::is_missing(y[i])) continue;
    if (!std::isfinite(y[i])) throw InputError("response: non-finite value in row " + std::to_string(i + 1));
    if (spec.family == Family::poisson && (y[i] < 0.0 || std::floor(y[i]) != y[i]))
      throw InputError("response: poisson responses must be non-negative integers (row " + std::to_string(i + 1) + ")");
    s->has_response[static_cast<std::size_t>(i)] = 1;
  }

  for (int i = 0; i < n; ++i) s->latent_names.push_back("eta[" + std::to_string(i + 1) + "]");
  s->obs.assign(static_cast<std::size_t>(n), {});

  auto require_complete = [&](const std::string& column, const std::string& what) -> const std::vector<double>& {
    if (column.empty()) throw InputError(what + ": column name is required");
    const auto& c = data.column(column);
    for (int i = 0; i < n; ++i)
      if (DataTable::is_missing(c[i]) || !std::isfinite(c[i]))
        throw InputError(what + ": column '" + column + "' has a missing value in row " + std::to_string(i + 1));
    return c;
  };
  auto units_of = [&](const std::vector<double>& c, std::vector<std::string>& labels) {
    std::set<double> distinct(c.begin(), c.end());
    std::vector<double> sorted(distinct.begin(), distinct.end());
    labels.clear();
    for (double v : sorted) labels.push_back(unit_label(v));
    std::vector<int> unit(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
      unit[static_cast<std::size_t>(i)] =
          static_cast<int>(std::lower_bound(sorted.begin(), sorted.end(), c[i]) - sorted.begin());
    return unit;
  };

  // Hyperparameter slots: gaussian precision first, then blocks in order.
  auto prior_for = [&](const std::string& owner, HyperPrior fallback) {
    const auto it = spec.priors.find(owner);
    return it == spec.priors.end() ? fallback : it->second;
  };
  auto add_owner = [&](const std::string& owner, std::vector<std::string> names, HyperPrior prior) {
    OwnerPrior op{owner, static_cast<int>(s->slots.size()), static_cast<int>(names.size()), prior};
    const auto* fixed = std::get_if<FixedHyper>(&prior);
    if (fixed && fixed->values.size() != names.size())
      throw InputError("priors." + owner + ": fixed prior needs " + std::to_string(names.size()) + " value(s)");
    if (const auto* g = std::get_if<GaussianHyperPrior>(&prior);
        g && (g->mean.size() != op.n_slots || g->cov.rows() != op.n_slots || g->cov.cols() != op.n_slots))
      throw InputError("priors." + owner + ": gaussian prior has wrong dimension");
    if (const auto* lg = std::get_if<LogGammaPrior>(&prior); lg && !(lg->shape > 0.0 && lg->rate > 0.0))
      throw InputError("priors." + owner + ": loggamma shape and rate must be positive");
    if (std::holds_alternative<Wishart2dPrior>(prior) && op.n_slots != 3)
      throw InputError("priors." + owner + ": wishart2d applies only to iid2d effects");
    if (std::holds_alternative<LogGammaPrior>(prior) && op.n_slots != 1)
      throw InputError("priors." + owner + ": loggamma applies to a single precision");
    if (const auto* w = std::get_if<Wishart2dPrior>(&prior)) {
      const double probe[3] = {0.0, 0.0, 0.0};
      try {
        wishart2d_internal(w->r, w->df, probe);
      } catch (const InputError& e) {
        throw InputError("priors." + owner + ": " + e.what());
      }
    }
    for (std::size_t k = 0; k < names.size(); ++k) {
      Slot slot{names[k], owner, static_cast<int>(k), fixed != nullptr, fixed ? fixed->values[k] : 0.0};
      s->slots.push_back(slot);
    }
    s->owner_priors.push_back(std::move(op));
    return static_cast<int>(s->slots.size() - names.size());
  };

  if (spec.family == Family::gaussian)
    s->likelihood_slot = add_owner("likelihood", {"log_precision[likelihood]"}, prior_for("likelihood", LogGammaPrior{}));

  std::vector<Triplet> triplets;
  std::set<std::string> seen_names;
  int offset = n;
  for (const auto& effect : spec.effects) {
    BlockLayout layout{effect.kind, effect.name, offset, 0, 0, {}};
    BlockHyper hyper;
    if (effect.name.empty()) throw InputError("effects: every effect needs a name");
    if (!seen_names.insert(effect.name).second || effect.name == "likelihood")
      throw InputError("effects: duplicate or reserved effect name '" + effect.name + "'");
    const std::string where = "effects." + effect.name;
    switch (effect.kind) {
      case EffectKind::intercept:
      case EffectKind::fixed: {
        if (!(effect.precision > 0.0)) throw InputError(where + ": prior precision must be positive");
        layout.size = layout.n_units = 1;
        s->latent_names.push_back(effect.name);
        if (effect.kind == EffectKind::intercept) {
          for (int i = 0; i < n; ++i) s->obs[i].push_back({offset, 1.0});
        } else {
          const auto& z = require_complete(effect.column, where + ".covariate");
          for (int i = 0; i < n; ++i) s->obs[i].push_back({offset, z[i]});
        }
        break;
      }
      case EffectKind::iid: {
        const auto& idx = require_complete(effect.column, where + ".index");
        const auto unit = units_of(idx, layout.unit_labels);
        layout.n_units = layout.size = static_cast<int>(layout.unit_labels.size());
        for (const auto& l : layout.unit_labels) s->latent_names.push_back(effect.name + "[" + l + "]");
        for (int i = 0; i < n; ++i) s->obs[i].push_back({offset + unit[i], 1.0});
        hyper.first_slot = add_owner(effect.name, {"log_precision[" + effect.name + "]"},
                                     prior_for(effect.name, LogGammaPrior{}));
        break;
      }
      case EffectKind::iid2d: {
        const auto& idx = require_complete(effect.column, where + ".index");
        const auto unit = units_of(idx, layout.unit_labels);
        layout.n_units = static_cast<int>(layout.unit_labels.size());
        layout.size = 2 * layout.n_units;
        for (const auto& l : layout.unit_labels) {
          s->latent_names.push_back(effect.name + "[" + l + ",0]");
          s->latent_names.push_back(effect.name + "[" + l + ",1]");
        }
        const std::vector<double>* slope = effect.slope.empty() ? nullptr : &require_complete(effect.slope, where + ".slope");
        if (!effect.slot.empty()) {
          const auto& slot = require_complete(effect.slot, where + ".slot");
          for (int i = 0; i < n; ++i) {
            if (slot[i] != 0.0 && slot[i] != 1.0) throw InputError(where + ".slot: values must be 0 or 1");
            s->obs[i].push_back({offset + 2 * unit[i] + static_cast<int>(slot[i]), slope ? (*slope)[i] : 1.0});
          }
        } else {
          if (!slope) throw InputError(where + ": iid2d needs a slope column or a slot column");
          for (int i = 0; i < n; ++i) {
            s->obs[i].push_back({offset + 2 * unit[i], 1.0});
            s->obs[i].push_back({offset + 2 * unit[i] + 1, (*slope)[i]});
          }
        }
        hyper.first_slot = add_owner(effect.name,
                                     {"log_precision[" + effect.name + ",0]", "log_precision[" + effect.name + ",1]",
                                      "fisher_z[" + effect.name + "]"},
                                     prior_for(effect.name, Wishart2dPrior{}));
        break;
      }
      case EffectKind::besag: {
        if (!effect.graph) throw InputError(where + ": besag effect requires an adjacency graph");
        const auto& idx = require_complete(effect.column, where + ".index");
        const AdjacencyGraph& g = *effect.graph;
        layout.n_units = layout.size = g.size();
        for (int k = 0; k < g.size(); ++k) {
          layout.unit_labels.push_back(std::to_string(k + 1));
          s->latent_names.push_back(effect.name + "[" + std::to_string(k + 1) + "]");
        }
        for (int i = 0; i < n; ++i) {
          if (std::floor(idx[i]) != idx[i] || idx[i] < 1 || idx[i] > g.size())
            throw InputError(where + ".index: value in row " + std::to_string(i + 1) + " is not a graph node id");
          s->obs[i].push_back({offset + static_cast<int>(idx[i]) - 1, 1.0});
        }
        hyper.first_slot = add_owner(effect.name, {"log_precision[" + effect.name + "]"},
                                     prior_for(effect.name, LogGammaPrior{}));
        break;
      }
    }
    s->blocks.push_back(std::move(layout));
    s->block_hyper.push_back(hyper);
    offset += s->blocks.back().size;
  }
  s->latent_dim = offset;
  if (s->latent_dim == n) throw InputError("effects: the model needs at least one effect");
  for (const auto& [owner, prior] : spec.priors)
    if (owner != "likelihood" && !seen_names.count(owner))
      throw InputError("priors." + owner + ": no effect with this name");
    else if (owner == "likelihood" && spec.family != Family::gaussian)
      throw InputError("priors.likelihood: poisson likelihood has no hyperparameter");

  for (std::size_t k = 0; k < s->slots.size(); ++k)
    if (!s->slots[k].fixed) {
      s->free_slots.push_back(static_cast<int>(k));
      s->free_info.push_back({s->slots[k].name, s->slots[k].owner, s->slots[k].component});
    }
  if (s->free_slots.size() > 20) throw InputError("model has more than 20 free hyperparameters");

  // Merge repeated latent indices within a row.
  for (auto& row : s->obs) {
    std::sort(row.begin(), row.end(), [](const auto& a, const auto& b) { return a.index < b.index; });
    std::vector<CompiledModel::Term> merged;
    for (const auto& t : row) {
      if (!merged.empty() && merged.back().index == t.index) merged.back().weight += t.weight;
      else merged.push_back(t);
    }
    row = std::move(merged);
  }

  // Multipliers: 0 is the constant 1; blocks with hyperparameters get theirs.
  int n_mult = 1;
  for (std::size_t b = 0; b < s->blocks.size(); ++b) {
    const auto kind = s->blocks[b].kind;
    if (kind == EffectKind::iid || kind == EffectKind::besag) s->block_hyper[b].first_mult = n_mult++;
    if (kind == EffectKind::iid2d) {
      s->block_hyper[b].first_mult = n_mult;
      n_mult += 3;
    }
  }
  s->n_mult = n_mult;

  struct Raw {
    int row, col;
    double coef;
    int mult;
    bool penalty;
    bool tying = false;
  };
  std::vector<Raw> raw;
  const double kappa = CompiledModel::kTyingPrecision;
  for (int i = 0; i < n; ++i) {
    raw.push_back({i, i, kappa, 0, false, true});
    const auto& row = s->obs[i];
    for (std::size_t a = 0; a < row.size(); ++a) {
      raw.push_back({row[a].index, i, -kappa * row[a].weight, 0, false, true});
      for (std::size_t b = 0; b <= a; ++b)
        raw.push_back({row[a].index, row[b].index, kappa * row[a].weight * row[b].weight, 0, false, true});
    }
  }
  std::vector<std::vector<double>> constraint_rows;
  for (std::size_t b = 0; b < s->blocks.size(); ++b) {
    const auto& L = s->blocks[b];
    const auto& effect = spec.effects[b];
    const int m = s->block_hyper[b].first_mult;
    switch (L.kind) {
      case EffectKind::intercept:
      case EffectKind::fixed:
        raw.push_back({L.offset, L.offset, effect.precision, 0, false});
        break;
      case EffectKind::iid:
        for (int k = 0; k < L.size; ++k) raw.push_back({L.offset + k, L.offset + k, 1.0, m, false});
        break;
      case EffectKind::iid2d:
        for (int u = 0; u < L.n_units; ++u) {
          const int a = L.offset + 2 * u;
          raw.push_back({a, a, 1.0, m, false});
          raw.push_back({a + 1, a + 1, 1.0, m + 1, false});
          raw.push_back({a + 1, a, 1.0, m + 2, false});
        }
        break;
      case EffectKind::besag: {
        const AdjacencyGraph& g = *effect.graph;
        for (int k = 0; k < g.size(); ++k) {
          raw.push_back({L.offset + k, L.offset + k, static_cast<double>(g.degree(k)), m, false});
          for (int j : g.neighbors(k))
            if (j < k) raw.push_back({L.offset + k, L.offset + j, -1.0, m, false});
        }
        for (int c = 0; c < g.n_components(); ++c) {
          std::vector<int> members;
          for (int k = 0; k < g.size(); ++k)
            if (g.component(k) == c) members.push_back(L.offset + k);
          for (std::size_t a = 0; a < members.size(); ++a)
            for (std::size_t bb = 0; bb <= a; ++bb) raw.push_back({members[a], members[bb], 1.0, m, true});
          std::vector<double> row(static_cast<std::size_t>(s->latent_dim), 0.0);
          for (int k : members) row[static_cast<std::size_t>(k)] = 1.0;
          constraint_rows.push_back(std::move(row));
          s->constraint_mult.push_back(m);
        }
        break;
      }
    }
  }

  std::vector<Triplet> pattern_entries;
  pattern_entries.reserve(raw.size());
  for (const auto& r : raw) pattern_entries.push_back({r.row, r.col, 0.0});
  s->pattern = SparseSymmetric::from_triplets(s->latent_dim, pattern_entries);
  const auto& cp = s->pattern.col_ptr();
  const auto& ri = s->pattern.row_idx();
  s->terms.reserve(raw.size());
  for (const auto& r : raw) {
    const int row = std::max(r.row, r.col), col = std::min(r.row, r.col);
    const auto first = ri.begin() + cp[col], last = ri.begin() + cp[col + 1];
    const int slot = static_cast<int>(std::lower_bound(first, last, row) - ri.begin());
    s->terms.push_back({slot, r.coef, r.mult, r.penalty, r.tying});
  }
  s->constraints = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(constraint_rows.size()), s->latent_dim);
  for (std::size_t c = 0; c < constraint_rows.size(); ++c)
    for (int k = 0; k < s->latent_dim; ++k) s->constraints(static_cast<Eigen::Index>(c), k) = constraint_rows[c][k];
  s->symbolic = analyze(s->pattern);

  const int m = s->latent_dim - n;
  std::vector<Triplet> reduced_entries;
  std::vector<std::pair<int, int>> reduced_pos;
  struct RawPair {
    int a, b, row;
    double coef;
  };
  std::vector<RawPair> pairs;
  for (int i = 0; i < n; ++i) {
    const auto& row = s->obs[i];
    for (std::size_t a = 0; a < row.size(); ++a)
      for (std::size_t b = 0; b <= a; ++b)
        pairs.push_back({row[a].index - n, row[b].index - n, i, row[a].weight * row[b].weight});
  }
  for (const auto& r : raw)
    if (!r.tying) reduced_entries.push_back({r.row - n, r.col - n, 0.0});
  for (const auto& p : pairs) reduced_entries.push_back({p.a, p.b, 0.0});
  s->reduced_pattern = SparseSymmetric::from_triplets(m, reduced_entries);
  const auto& rcp = s->reduced_pattern.col_ptr();
  const auto& rri = s->reduced_pattern.row_idx();
  auto reduced_slot = [&](int a, int b) {
    const int row = std::max(a, b), col = std::min(a, b);
    const auto first = rri.begin() + rcp[col], last = rri.begin() + rcp[col + 1];
    return static_cast<int>(std::lower_bound(first, last, row) - rri.begin());
  };
  for (const auto& r : raw)
    if (!r.tying) s->reduced_terms.push_back({reduced_slot(r.row - n, r.col - n), r.coef, r.mult, r.penalty, false});
  for (const auto& p : pairs) s->reduced_pairs.push_back({reduced_slot(p.a, p.b), p.row, p.coef});
  s->reduced_constraints = s->constraints.rightCols(m);
  s->reduced_symbolic = analyze(s->reduced_pattern);

  // Starting point for the hyperparameter search.
  s->initial = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(s->free_slots.size()));
  std::vector<double> start(s->slots.size(), 0.0);
  for (const auto& op : s->owner_priors) {
    if (const auto* w = std::get_if<Wishart2dPrior>(&op.prior)) {
      const Eigen::Matrix2d cov = (w->df * w->r.inverse()).inverse();
      start[op.first_slot] = -std::log(cov(0, 0));
      start[op.first_slot + 1] = -std::log(cov(1, 1));
      start[op.first_slot + 2] = std::atanh(cov(0, 1) / std::sqrt(cov(0, 0) * cov(1, 1)));
    } else if (const auto* g = std::get_if<GaussianHyperPrior>(&op.prior)) {
      for (int k = 0; k < op.n_slots; ++k) start[op.first_slot + k] = g->mean[k];
    }
  }
  if (s->likelihood_slot >= 0) {
    double sum = 0, sum2 = 0;
    int count = 0;
    for (int i = 0; i < n; ++i)
      if (s->has_response[i]) {
        sum += s->y[i];
        sum2 += s->y[i] * s->y[i];
        ++count;
      }
    if (count >= 2) {
      const double var = (sum2 - sum * sum / count) / (count - 1);
      if (var > 0.0) start[s->likelihood_slot] = -std::log(var);
    }
  }
  for (const auto& [owner, values] : spec.initial) {
    const auto it = std::find_if(s->owner_priors.begin(), s->owner_priors.end(),
                                 [&](const OwnerPrior& op) { return op.owner == owner; });
    if (it == s->owner_priors.end()) throw InputError("initial." + owner + ": no hyperparameter owner of this name");
    if (static_cast<int>(values.size()) != it->n_slots)
      throw InputError("initial." + owner + ": expected " + std::to_string(it->n_slots) + " value(s)");
    for (int k = 0; k < it->n_slots; ++k) start[it->first_slot + k] = values[k];
  }
  for (std::size_t k = 0; k < s->free_slots.size(); ++k) s->initial[static_cast<Eigen::Index>(k)] = start[s->free_slots[k]];

  CompiledModel model;
  model.structure_ = s;
  model.observed_ = s->has_response;
  return model;
}

Family CompiledModel::family() const { return structure_->spec.family; }
int CompiledModel::n_rows() const { return structure_->n_rows; }
int CompiledModel::latent_dim() const { return structure_->latent_dim; }
int CompiledModel::theta_dim() const { return static_cast<int>(structure_->free_slots.size()); }
const std::vector<BlockLayout>& CompiledModel::blocks() const { return structure_->blocks; }
const std::vector<std::string>& CompiledModel::latent_names() const { return structure_->latent_names; }
const std::vector<HyperSlot>& CompiledModel::free_slots() const { return structure_->free_info; }
const ModelSpec& CompiledModel::spec() const { return structure_->spec; }
const std::vector<std::vector<CompiledModel::Term>>& CompiledModel::observation_map() const { return structure_->obs; }
const Eigen::MatrixXd& CompiledModel::constraints() const { return structure_->constraints; }
std::shared_ptr<const SymbolicFactor> CompiledModel::symbolic() const { return structure_->symbolic; }
const Eigen::VectorXd& CompiledModel::response() const { return structure_->y; }
const Eigen::VectorXd& CompiledModel::expected() const { return structure_->expected; }
const std::vector<char>& CompiledModel::observed() const { return observed_; }
const std::optional<GaussianHyperPrior>& CompiledModel::joint_prior() const { return joint_prior_; }

std::vector<std::string> CompiledModel::theta_names() const {
  std::vector<std::string> names;
  for (const auto& f : structure_->free_info) names.push_back(f.name);
  return names;
}

Eigen::MatrixXd CompiledModel::observation_matrix() const {
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n_rows(), latent_dim());
  for (int i = 0; i < n_rows(); ++i)
    for (const auto& t : structure_->obs[i]) a(i, t.index) += t.weight;
  return a;
}

std::vector<int> CompiledModel::observed_rows() const {
  std::vector<int> rows;
  for (int i = 0; i < n_rows(); ++i)
    if (observed_[static_cast<std::size_t>(i)]) rows.push_back(i);
  return rows;
}

Eigen::VectorXd CompiledModel::initial_theta() const {
  if (joint_prior_) return joint_prior_->mean;
  return structure_->initial;
}

std::vector<double> CompiledModel::full_theta(const Eigen::VectorXd& theta) const {
  if (theta.size() != theta_dim())
    throw std::invalid_argument("hyperparameter vector has length " + std::to_string(theta.size()) + ", expected " +
                                std::to_string(theta_dim()));
  std::vector<double> full(structure_->slots.size());
  for (std::size_t k = 0; k < full.size(); ++k) full[k] = structure_->slots[k].value;
  for (std::size_t k = 0; k < structure_->free_slots.size(); ++k)
    full[static_cast<std::size_t>(structure_->free_slots[k])] = theta[static_cast<Eigen::Index>(k)];
  return full;
}

std::vector<double> CompiledModel::multipliers(const Eigen::VectorXd& theta, std::vector<double>& full) const {
  full = full_theta(theta);
  std::vector<double> mult(static_cast<std::size_t>(structure_->n_mult), 1.0);
  for (std::size_t b = 0; b < structure_->blocks.size(); ++b) {
    const auto& h = structure_->block_hyper[b];
    switch (structure_->blocks[b].kind) {
      case EffectKind::iid:
      case EffectKind::besag:
        mult[h.first_mult] = std::exp(full[h.first_slot]);
        break;
      case EffectKind::iid2d: {
        const Eigen::Matrix2d omega = iid2d_precision(std::span<const double>(full.data() + h.first_slot, 3));
        mult[h.first_mult] = omega(0, 0);
        mult[h.first_mult + 1] = omega(1, 1);
        mult[h.first_mult + 2] = omega(1, 0);
        break;
      }
      default:
        break;
    }
  }
  return mult;
}

SparseSymmetric CompiledModel::assemble(const Eigen::VectorXd& theta, bool absorbed, bool tying) const {
  std::vector<double> full;
  const auto mult = multipliers(theta, full);
  SparseSymmetric q = structure_->pattern;
  auto& v = q.mutable_values();
  std::fill(v.begin(), v.end(), 0.0);
  for (const auto& t : structure_->terms)
    if ((absorbed || !t.penalty) && (tying || !t.tying))
      v[static_cast<std::size_t>(t.slot)] += t.coef * mult[static_cast<std::size_t>(t.mult)];
  return q;
}

SparseSymmetric CompiledModel::reduced_precision(const Eigen::VectorXd& theta, const Eigen::VectorXd& curvature) const {
  const auto& s = *structure_;
  if (curvature.size() != s.n_rows) throw std::invalid_argument("curvature vector has wrong length");
  std::vector<double> full;
  const auto mult = multipliers(theta, full);
  SparseSymmetric q = s.reduced_pattern;
  auto& v = q.mutable_values();
  std::fill(v.begin(), v.end(), 0.0);
  for (const auto& t : s.reduced_terms) v[static_cast<std::size_t>(t.slot)] += t.coef * mult[static_cast<std::size_t>(t.mult)];
  const double kappa = kTyingPrecision;
  for (const auto& p : s.reduced_pairs) {
    const double d = curvature[p.row];
    if (d != 0.0) v[static_cast<std::size_t>(p.slot)] += p.coef * (kappa * d / (kappa + d));
  }
  return q;
}

std::shared_ptr<const SymbolicFactor> CompiledModel::reduced_symbolic() const { return structure_->reduced_symbolic; }
const Eigen::MatrixXd& CompiledModel::reduced_constraints() const { return structure_->reduced_constraints; }

Eigen::VectorXd CompiledModel::tying_residuals(const Eigen::VectorXd& x) const {
  Eigen::VectorXd r(n_rows());
  for (int i = 0; i < n_rows(); ++i) {
    double s = x[i];
    for (const auto& t : structure_->obs[i]) s -= t.weight * x[t.index];
    r[i] = s;
  }
  return r;
}

Eigen::VectorXd CompiledModel::precision_times(const Eigen::VectorXd& x, const Eigen::VectorXd& theta,
                                               bool absorbed) const {
  Eigen::VectorXd out = assemble(theta, absorbed, false).multiply(x);
  const Eigen::VectorXd r = tying_residuals(x);
  const double kappa = kTyingPrecision;
  for (int i = 0; i < n_rows(); ++i) {
    out[i] += kappa * r[i];
    for (const auto& t : structure_->obs[i]) out[t.index] -= kappa * t.weight * r[i];
  }
  return out;
}

double CompiledModel::prior_quadratic(const Eigen::VectorXd& x, const Eigen::VectorXd& theta, bool absorbed) const {
  const double blocks = x.dot(assemble(theta, absorbed, false).multiply(x));
  return blocks + kTyingPrecision * tying_residuals(x).squaredNorm();
}

SparseSymmetric CompiledModel::prior_precision(const Eigen::VectorXd& theta) const { return assemble(theta, false, true); }
SparseSymmetric CompiledModel::absorbed_precision(const Eigen::VectorXd& theta) const { return assemble(theta, true, true); }

double CompiledModel::log_prior(const Eigen::VectorXd& theta) const {
  if (joint_prior_) {
    if (theta.size() != theta_dim()) throw std::invalid_argument("hyperparameter vector has wrong length");
    return gaussian_log_density(*joint_prior_, theta);
  }
  const auto full = full_theta(theta);
  double lp = 0.0;
  for (const auto& op : structure_->owner_priors) {
    const std::span<const double> part(full.data() + op.first_slot, static_cast<std::size_t>(op.n_slots));
    if (const auto* lg = std::get_if<LogGammaPrior>(&op.prior)) {
      lp += log_gamma_prior(*lg, part[0]);
    } else if (const auto* w = std::get_if<Wishart2dPrior>(&op.prior)) {
      lp += wishart2d_internal(w->r, w->df, part);
    } else if (const auto* g = std::get_if<GaussianHyperPrior>(&op.prior)) {
      lp += gaussian_log_density(*g, Eigen::Map<const Eigen::VectorXd>(part.data(), op.n_slots));
    }
  }
  return lp;
}

double CompiledModel::log_likelihood(const Eigen::VectorXd& x, const Eigen::VectorXd& theta) const {
  const auto& s = *structure_;
  double ll = 0.0;
  if (s.spec.family == Family::gaussian) {
    const double log_tau = full_theta(theta)[static_cast<std::size_t>(s.likelihood_slot)];
    const double tau = std::exp(log_tau);
    for (int i = 0; i < s.n_rows; ++i)
      if (observed_[static_cast<std::size_t>(i)]) {
        const double r = s.y[i] - x[i];
        ll += 0.5 * (log_tau - kLog2Pi) - 0.5 * tau * r * r;
      }
  } else {
    for (int i = 0; i < s.n_rows; ++i)
      if (observed_[static_cast<std::size_t>(i)])
        ll += s.y[i] * (std::log(s.expected[i]) + x[i]) - s.expected[i] * std::exp(x[i]) - std::lgamma(s.y[i] + 1.0);
  }
  return ll;
}

void CompiledModel::likelihood_derivatives(const Eigen::VectorXd& x, const Eigen::VectorXd& theta,
                                           Eigen::VectorXd& gradient, Eigen::VectorXd& curvature) const {
  const auto& s = *structure_;
  gradient = Eigen::VectorXd::Zero(s.n_rows);
  curvature = Eigen::VectorXd::Zero(s.n_rows);
  if (s.spec.family == Family::gaussian) {
    const double tau = std::exp(full_theta(theta)[static_cast<std::size_t>(s.likelihood_slot)]);
    for (int i = 0; i < s.n_rows; ++i)
      if (observed_[static_cast<std::size_t>(i)]) {
        gradient[i] = tau * (s.y[i] - x[i]);
        curvature[i] = tau;
      }
  } else {
    for (int i = 0; i < s.n_rows; ++i)
      if (observed_[static_cast<std::size_t>(i)]) {
        const double mu = s.expected[i] * std::exp(x[i]);
        gradient[i] = s.y[i] - mu;
        curvature[i] = mu;
      }
  }
}

CompiledModel CompiledModel::mask_rows(std::span<const int> rows) const {
  CompiledModel out = *this;
  for (int r : rows) {
    if (r < 0 || r >= n_rows()) throw std::out_of_range("row index " + std::to_string(r) + " out of range");
    out.observed_[static_cast<std::size_t>(r)] = 0;
  }
  return out;
}

CompiledModel mask_rows(const CompiledModel& model, std::span<const int> rows) { return model.mask_rows(rows); }

CompiledModel CompiledModel::with_joint_prior(GaussianHyperPrior prior) const {
  if (prior.mean.size() != theta_dim() || prior.cov.rows() != theta_dim() || prior.cov.cols() != theta_dim())
    throw std::invalid_argument("joint hyperprior dimension does not match the model");
  CompiledModel out = *this;
  out.joint_prior_ = std::move(prior);
  return out;
}

}  // namespace latentcut
