#pragma once

// Declarative latent Gaussian models and their compiled form: the latent
// layout x = (eta, block coordinates...), the prior precision as a function
// of the hyperparameters, the observation map, and linear constraints.

#include "latentcut/sparse.hpp"
#include "latentcut/table.hpp"

#include <Eigen/Dense>

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace latentcut {

enum class Family { gaussian, poisson };

enum class EffectKind { intercept, fixed, iid, iid2d, besag };

const char* to_string(Family family);
const char* to_string(EffectKind kind);

struct EffectBlock {
  EffectKind kind = EffectKind::intercept;
  std::string name;
  /// Covariate column (fixed) or index column (iid, iid2d, besag).
  std::string column;
  /// iid2d: weight on the second slot of each unit (random slope covariate).
  std::string slope;
  /// iid2d: optional column selecting slot 0 or 1 per row instead.
  std::string slot;
  /// Prior precision for intercept and fixed effects.
  double precision = 1e-6;
  /// besag: neighbourhood graph over index values 1..n.
  std::shared_ptr<const AdjacencyGraph> graph;
  std::string graph_path;
};

/// Gamma(shape, rate) on a precision, expressed on log precision.
struct LogGammaPrior {
  double shape = 1.0;
  double rate = 5e-5;
};

/// Wishart prior on a 2x2 precision matrix Omega with density proportional
/// to |Omega|^{(df-3)/2} exp(-tr(R Omega) / 2), i.e. E[Omega] = df R^{-1}.
struct Wishart2dPrior {
  Eigen::Matrix2d r = Eigen::Matrix2d::Identity();
  double df = 4.0;
};

/// Hyperparameters held at the given internal-scale values.
struct FixedHyper {
  std::vector<double> values;
};

/// Multivariate normal on the internal scale.
struct GaussianHyperPrior {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

using HyperPrior = std::variant<LogGammaPrior, Wishart2dPrior, FixedHyper, GaussianHyperPrior>;

struct ModelSpec {
  Family family = Family::gaussian;
  std::string response;
  /// poisson: column of expected counts E > 0 multiplying exp(eta).
  std::optional<std::string> offset;
  std::vector<EffectBlock> effects;
  /// Keyed by effect name, or "likelihood" for the gaussian precision.
  std::map<std::string, HyperPrior> priors;
  /// Optional starting values (internal scale) for the hyperparameter search.
  std::map<std::string, std::vector<double>> initial;
  std::optional<std::string> group;
  DataTable data;
};

/// Wishart log density of the 2x2 precision implied by internal parameters
/// (log tau_1, log tau_2, atanh rho), including the log-Jacobian of that
/// transform. tau_k are the marginal precisions of the covariance and rho its
/// correlation.
double wishart2d_internal(const Eigen::Matrix2d& r, double df, std::span<const double> theta);

/// Precision matrix Omega from the internal iid2d parameters.
Eigen::Matrix2d iid2d_precision(std::span<const double> theta);

double log_gamma_prior(const LogGammaPrior& prior, double log_precision);
double gaussian_log_density(const GaussianHyperPrior& prior, const Eigen::VectorXd& x);

struct BlockLayout {
  EffectKind kind;
  std::string name;
  int offset = 0;   // first latent index
  int size = 0;     // latent coordinates
  int n_units = 0;  // units (iid2d: size / 2)
  std::vector<std::string> unit_labels;
};

struct HyperSlot {
  std::string name;
  std::string owner;  // effect name or "likelihood"
  int component = 0;
};

/// Immutable compiled model. Copies share the heavy structure; masking and
/// prior replacement produce new lightweight views.
class CompiledModel {
 public:
  static constexpr double kTyingPrecision = 1e9;

  Family family() const;
  int n_rows() const;
  int latent_dim() const;
  int theta_dim() const;
  const std::vector<BlockLayout>& blocks() const;
  const std::vector<std::string>& latent_names() const;
  std::vector<std::string> theta_names() const;
  const std::vector<HyperSlot>& free_slots() const;
  const ModelSpec& spec() const;

  /// Sparse observation map: row i of eta equals sum_k weight * x[index].
  struct Term {
    int index;
    double weight;
  };
  const std::vector<std::vector<Term>>& observation_map() const;
  Eigen::MatrixXd observation_matrix() const;

  Eigen::VectorXd initial_theta() const;
  double log_prior(const Eigen::VectorXd& theta) const;

  /// Joint prior precision with the eta tying; besag blocks carry their
  /// intrinsic (rank-deficient) structure.
  SparseSymmetric prior_precision(const Eigen::VectorXd& theta) const;
  /// prior_precision plus tau * C^T C for each sum-to-zero constraint. The
  /// penalty vanishes on the constraint set, so conditioning the absorbed
  /// Gaussian on C x = 0 recovers the intrinsic model exactly.
  SparseSymmetric absorbed_precision(const Eigen::VectorXd& theta) const;
  const Eigen::MatrixXd& constraints() const;
  /// Q x and x^T Q x with the tying part evaluated through the residuals
  /// eta - A x, avoiding cancellation at large tying precision.
  Eigen::VectorXd precision_times(const Eigen::VectorXd& x, const Eigen::VectorXd& theta, bool absorbed) const;
  double prior_quadratic(const Eigen::VectorXd& x, const Eigen::VectorXd& theta, bool absorbed) const;
  Eigen::VectorXd tying_residuals(const Eigen::VectorXd& x) const;

  /// Absorbed precision of the block coordinates x[n_rows..) after
  /// integrating out eta, when eta additionally carries the diagonal
  /// precision `curvature`: Q_x + A^T diag(kappa d / (kappa + d)) A.
  /// With zero curvature this is the marginal prior precision of the blocks.
  SparseSymmetric reduced_precision(const Eigen::VectorXd& theta, const Eigen::VectorXd& curvature) const;
  std::shared_ptr<const SymbolicFactor> reduced_symbolic() const;
  /// Constraint matrix restricted to the block coordinates.
  const Eigen::MatrixXd& reduced_constraints() const;
  std::shared_ptr<const SymbolicFactor> symbolic() const;

  const Eigen::VectorXd& response() const;
  const Eigen::VectorXd& expected() const;
  const std::vector<char>& observed() const;
  std::vector<int> observed_rows() const;

  /// Log likelihood over observed rows; eta is read from x[0..n_rows).
  double log_likelihood(const Eigen::VectorXd& x, const Eigen::VectorXd& theta) const;
  /// Gradient and negative second derivative of the log likelihood with
  /// respect to each eta_i (zero for unobserved rows).
  void likelihood_derivatives(const Eigen::VectorXd& x, const Eigen::VectorXd& theta, Eigen::VectorXd& gradient,
                              Eigen::VectorXd& curvature) const;

  CompiledModel mask_rows(std::span<const int> rows) const;
  /// Replaces the priors of all free hyperparameters by one joint Gaussian.
  CompiledModel with_joint_prior(GaussianHyperPrior prior) const;
  const std::optional<GaussianHyperPrior>& joint_prior() const;

  struct Structure;

 private:
  friend CompiledModel build_model(const ModelSpec& spec);
  std::shared_ptr<const Structure> structure_;
  std::vector<char> observed_;
  std::optional<GaussianHyperPrior> joint_prior_;

  std::vector<double> multipliers(const Eigen::VectorXd& theta, std::vector<double>& full) const;
  std::vector<double> full_theta(const Eigen::VectorXd& theta) const;
  SparseSymmetric assemble(const Eigen::VectorXd& theta, bool absorbed, bool tying) const;
};

CompiledModel build_model(const ModelSpec& spec);
CompiledModel mask_rows(const CompiledModel& model, std::span<const int> rows);

// Model specification documents (JSON) and loading.
ModelSpec parse_model_spec(const std::string& json_text, DataTable data,
                           const std::filesystem::path& base_dir = {});
ModelSpec load_model_spec(const std::filesystem::path& spec_path, const std::filesystem::path& data_path);
std::string model_spec_to_json(const ModelSpec& spec);

}  // namespace latentcut
