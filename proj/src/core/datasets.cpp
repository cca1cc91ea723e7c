#include "latentcut/datasets.hpp"

#include "latentcut/errors.hpp"

#include <boost/random/mersenne_twister.hpp>
#include <boost/random/normal_distribution.hpp>
#include <boost/random/poisson_distribution.hpp>
#include <boost/random/uniform_real_distribution.hpp>

#include <Eigen/Cholesky>

#include <cmath>
#include <fstream>

namespace latentcut {

namespace {

// Weights in grams at ages 8, 15, 22, 29 and 36 days, one row per rat.
constexpr int kRatWeights[30][5] = {
    {151, 199, 246, 283, 320}, {145, 199, 249, 293, 354}, {147, 214, 263, 312, 328}, {155, 200, 237, 272, 297},
    {135, 188, 230, 280, 323}, {159, 210, 252, 298, 331}, {141, 189, 231, 275, 305}, {159, 201, 248, 297, 338},
    {177, 236, 285, 350, 376}, {134, 182, 220, 260, 296}, {160, 208, 261, 313, 352}, {143, 188, 220, 273, 314},
    {154, 200, 244, 289, 325}, {171, 221, 270, 326, 358}, {163, 216, 242, 281, 312}, {160, 207, 248, 288, 324},
    {142, 187, 234, 280, 316}, {156, 203, 243, 283, 317}, {157, 212, 259, 307, 336}, {152, 203, 246, 286, 321},
    {154, 205, 253, 298, 334}, {139, 190, 225, 267, 302}, {146, 191, 229, 272, 302}, {157, 211, 250, 285, 323},
    {132, 185, 237, 286, 331}, {160, 207, 257, 303, 345}, {169, 216, 261, 295, 333}, {157, 205, 248, 289, 316},
    {137, 180, 219, 258, 291}, {153, 200, 244, 286, 324}};

constexpr double kCenterDay = 22.0;

}  // namespace

DataTable rats_table() {
  std::vector<double> rat, day, t, weight;
  for (int i = 0; i < 30; ++i)
    for (int j = 0; j < 5; ++j) {
      rat.push_back(i + 1);
      day.push_back(kRatDays[j]);
      t.push_back(kRatDays[j] - kCenterDay);
      weight.push_back(kRatWeights[i][j]);
    }
  DataTable table;
  table.add_column("rat", rat);
  table.add_column("day", day);
  table.add_column("t", t);
  table.add_column("weight", weight);
  return table;
}

std::string rats_model_json() {
  return R"({
  "likelihood": "gaussian",
  "response": "weight",
  "group": "rat",
  "effects": [
    {"type": "intercept", "name": "beta0", "precision": 1e-6},
    {"type": "fixed", "name": "beta1", "covariate": "t", "precision": 1e-6},
    {"type": "iid2d", "name": "psi", "index": "rat", "slope": "t"}
  ],
  "priors": {
    "likelihood": {"type": "loggamma", "shape": 0.001, "rate": 0.001},
    "psi": {"type": "wishart2d", "df": 2, "R": [[200, 0], [0, 0.2]]}
  }
}
)";
}

ModelSpec rats_model() { return parse_model_spec(rats_model_json(), rats_table()); }

RatsData load_rats() {
  ModelSpec spec = rats_model();
  DataTable data = spec.data;
  return {std::move(data), std::move(spec)};
}

SyntheticLattice generate_lattice(int m, int periods, std::uint64_t seed, const LatticeParams& params) {
  if (m < 3) throw InputError("lattice side must be at least 3");
  if (periods < 2) throw InputError("lattice needs at least two periods");
  if (!(params.sigma_u >= 0.0 && params.sigma_v >= 0.0)) throw InputError("lattice scales must be non-negative");
  if (!(params.e_min > 0.0 && params.e_max >= params.e_min)) throw InputError("expected counts range is invalid");

  SyntheticLattice out;
  out.params = params;
  out.seed = seed;
  auto graph = std::make_shared<AdjacencyGraph>(AdjacencyGraph::lattice(m, m));
  out.graph = graph;
  const int n = graph->size();

  boost::random::mt19937_64 rng(seed);
  boost::random::normal_distribution<double> normal(0.0, 1.0);

  // Structured effect: N(0, sigma_u^2 Q^+) with Q the lattice Laplacian,
  // drawn from the absorbed precision Q + 1 1^T and centred.
  Eigen::MatrixXd q = Eigen::MatrixXd::Ones(n, n);
  for (int i = 0; i < n; ++i) {
    q(i, i) += graph->degree(i);
    for (int j : graph->neighbors(i)) q(i, j) -= 1.0;
  }
  Eigen::LLT<Eigen::MatrixXd> llt(q);
  Eigen::VectorXd z(n);
  for (int i = 0; i < n; ++i) z[i] = normal(rng);
  Eigen::VectorXd u = llt.matrixU().solve(z);
  u.array() -= u.mean();
  out.u = params.sigma_u * u;
  out.v.resize(n);
  for (int i = 0; i < n; ++i) out.v[i] = params.sigma_v * normal(rng);

  boost::random::uniform_real_distribution<double> expected(params.e_min, params.e_max);
  std::vector<double> area, period, t, e, y;
  const double center = 0.5 * (periods + 1);
  for (int j = 1; j <= periods; ++j)
    for (int i = 0; i < n; ++i) {
      const double ei = std::round(expected(rng));
      const double tj = j - center;
      const double rate = ei * std::exp(params.mu + out.u[i] + out.v[i] + params.beta * tj);
      boost::random::poisson_distribution<long long, double> pois(rate);
      area.push_back(i + 1);
      period.push_back(j);
      t.push_back(tj);
      e.push_back(ei);
      y.push_back(static_cast<double>(pois(rng)));
    }
  DataTable data;
  data.add_column("area", area);
  data.add_column("period", period);
  data.add_column("t", t);
  data.add_column("E", e);
  data.add_column("y", y);
  out.data = data;

  ModelSpec spec;
  spec.family = Family::poisson;
  spec.response = "y";
  spec.offset = "E";
  spec.group = "area";
  EffectBlock mu{EffectKind::intercept, "mu", "", "", "", 1e-6, nullptr, ""};
  EffectBlock trend{EffectKind::fixed, "beta", "t", "", "", 1e-6, nullptr, ""};
  EffectBlock spatial{EffectKind::besag, "spatial", "area", "", "", 1e-6, graph, "graph.adj"};
  EffectBlock unstructured{EffectKind::iid, "unstructured", "area", "", "", 1e-6, nullptr, ""};
  spec.effects = {mu, trend, spatial, unstructured};
  spec.priors["spatial"] = LogGammaPrior{1.0, 0.0005};
  spec.priors["unstructured"] = LogGammaPrior{1.0, 0.0005};
  spec.data = std::move(data);
  spec.data.group_column = spec.group;
  out.spec = std::move(spec);
  return out;
}

void write_lattice(const SyntheticLattice& lattice, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw InputError("cannot create directory '" + dir.string() + "'");
  auto open = [&](const char* name) {
    std::ofstream out(dir / name);
    if (!out) throw InputError("cannot write '" + (dir / name).string() + "'");
    return out;
  };
  {
    auto out = open("data.csv");
    write_csv(out, lattice.data);
  }
  {
    auto out = open("graph.adj");
    write_adjacency(out, *lattice.graph);
  }
  {
    auto out = open("model.json");
    out << model_spec_to_json(lattice.spec);
  }
}

}  // namespace latentcut
