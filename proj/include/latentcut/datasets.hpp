#pragma once

// Bundled data: the 30 x 5 rat growth weights and a synthetic lattice
// disease-mapping generator (BYM structure with a linear time trend).

#include "latentcut/model.hpp"
#include "latentcut/table.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>

namespace latentcut {

/// Ages in days at which each rat was weighed.
inline constexpr double kRatDays[5] = {8.0, 15.0, 22.0, 29.0, 36.0};

/// Columns rat, day, t (day - 22), weight; 150 rows ordered by rat then day.
DataTable rats_table();

/// Random intercepts and slopes in centered age, Gamma(1e-3, 1e-3) on the
/// residual precision, Wishart(diag(200, 0.2), 2) on the random-effect
/// precision, N(0, precision 1e-6) fixed effects. Grouped by rat.
ModelSpec rats_model();

struct RatsData {
  DataTable data;
  ModelSpec spec;
};
RatsData load_rats();

/// Model specification document for the rats model (as shipped in data/).
std::string rats_model_json();

struct LatticeParams {
  double mu = -2.5;       // intercept on the log-rate scale
  double beta = 0.02;     // linear trend per period
  double sigma_u = 0.3;   // spatially structured (iCAR) scale
  double sigma_v = 0.2;   // unstructured scale
  double e_min = 50.0;    // expected counts drawn uniformly in [e_min, e_max]
  double e_max = 400.0;
};

struct SyntheticLattice {
  DataTable data;  // columns area, period, t, E, y
  ModelSpec spec;
  std::shared_ptr<const AdjacencyGraph> graph;
  Eigen::VectorXd u;  // true structured effect (sums to zero)
  Eigen::VectorXd v;  // true unstructured effect
  LatticeParams params;
  std::uint64_t seed = 0;
};

/// m x m rook lattice observed over T periods. Deterministic in `seed`.
SyntheticLattice generate_lattice(int m, int periods, std::uint64_t seed, const LatticeParams& params = {});

/// Writes data.csv, graph.adj and model.json into `dir` (created if needed).
void write_lattice(const SyntheticLattice& lattice, const std::filesystem::path& dir);

}  // namespace latentcut
