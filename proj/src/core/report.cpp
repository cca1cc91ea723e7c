#include "latentcut/report.hpp"

#include "latentcut/errors.hpp"
#include "latentcut/table.hpp"

#include <json.hpp>

#include <charconv>
#include <chrono>
#include <cmath>
#include <istream>
#include <ostream>

namespace latentcut {

namespace {

using nlohmann::json;

json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json vector_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index k = 0; k < v.size(); ++k) a.push_back(number(v[k]));
  return a;
}

json matrix_json(const Eigen::MatrixXd& m) {
  json a = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) a.push_back(vector_json(m.row(i).transpose()));
  return a;
}

double parse_field(const std::string& s, std::size_t line) {
  if (s == "NA") return std::nan("");
  double v;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw InputError("conflict table line " + std::to_string(line) + ": cannot parse '" + s + "'");
  return v;
}

const char* strategy_name(GridStrategy s) {
  switch (s) {
    case GridStrategy::single: return "single";
    case GridStrategy::grid: return "grid";
    case GridStrategy::ccd: return "ccd";
  }
  return "unknown";
}

}  // namespace

std::vector<ConflictRow> conflict_rows(const NodeSplitResult& result) {
  std::vector<ConflictRow> rows;
  for (const auto& g : result.groups) {
    ConflictRow row{g.label, std::nan(""), std::nan(""), std::nan(""), g.flagged};
    if (g.result) {
      row.delta_hat = g.result->delta_hat;
      row.rank = g.result->rank;
      row.p_value = g.result->p_value;
    }
    rows.push_back(row);
  }
  return rows;
}

void write_conflict_csv(std::ostream& out, const std::vector<ConflictRow>& rows) {
  out << "group,delta_hat,rank,p_value,flagged\n";
  for (const auto& r : rows)
    out << r.group << ',' << format_number(r.delta_hat) << ',' << format_number(r.rank) << ','
        << format_number(r.p_value) << ',' << (r.flagged ? "true" : "false") << '\n';
}

std::vector<ConflictRow> parse_conflict_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "group,delta_hat,rank,p_value,flagged")
    throw InputError("conflict table has an unexpected header");
  std::vector<ConflictRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::size_t start = 0;
    for (std::size_t pos; (pos = line.find(',', start)) != std::string::npos; start = pos + 1)
      f.push_back(line.substr(start, pos - start));
    f.push_back(line.substr(start));
    if (f.size() != 5) throw InputError("conflict table line " + std::to_string(lineno) + ": expected 5 fields");
    if (f[4] != "true" && f[4] != "false")
      throw InputError("conflict table line " + std::to_string(lineno) + ": flagged must be true or false");
    rows.push_back({f[0], parse_field(f[1], lineno), parse_field(f[2], lineno), parse_field(f[3], lineno),
                    f[4] == "true"});
  }
  return rows;
}

std::string conflict_json(const NodeSplitResult& result, bool full) {
  json doc;
  doc["group_column"] = result.group_column;
  doc["q"] = result.q;
  doc["cut_prior"] = "moment-matched gaussian on the internal hyperparameter scale";
  json groups = json::array();
  json flagged = json::array();
  for (const auto& g : result.groups) {
    json e{{"group", g.label}, {"size", g.size}, {"flagged", g.flagged}};
    if (g.result) {
      e["delta_hat"] = number(g.result->delta_hat);
      e["rank"] = g.result->rank;
      e["p_value"] = number(g.result->p_value);
      if (full) {
        e["mu_delta"] = vector_json(g.result->mean);
        e["sigma_delta"] = matrix_json(g.result->cov);
      }
    } else {
      e["delta_hat"] = nullptr;
      e["rank"] = nullptr;
      e["p_value"] = nullptr;
      e["error"] = g.error;
    }
    if (g.flagged) flagged.push_back(g.label);
    groups.push_back(e);
  }
  doc["groups"] = groups;
  doc["flagged"] = flagged;
  doc["failures"] = result.failures();
  doc["threads"] = result.threads;
  doc["timing"] = {{"fit_seconds", result.fit_seconds},
                   {"split_seconds", result.split_seconds},
                   {"total_seconds", result.fit_seconds + result.split_seconds}};
  return doc.dump(2) + "\n";
}

FitReport fit_model(const CompiledModel& model, const GridOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  const HyperGrid grid = explore_hypergrid(model, options);
  FitReport report;
  const HyperSummary moments = hyper_moments(grid);
  const auto names = model.theta_names();
  for (std::size_t k = 0; k < names.size(); ++k) {
    const auto i = static_cast<Eigen::Index>(k);
    report.hyper.push_back({names[k], grid.mode[i], moments.mean[i], std::sqrt(std::max(moments.cov(i, i), 0.0))});
  }
  report.latent = latent_summary(model, grid, options.newton);
  report.latent_names = model.latent_names();
  report.grid_points = grid.points.size();
  report.evaluations = grid.evaluations;
  report.strategy = strategy_name(grid.strategy);
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

void write_fit_csv(std::ostream& out, const FitReport& report) {
  out << "kind,name,mode,mean,sd\n";
  for (const auto& h : report.hyper)
    out << "hyperparameter,\"" << h.name << "\"," << format_number(h.mode) << ',' << format_number(h.mean) << ','
        << format_number(h.sd) << '\n';
  for (std::size_t k = 0; k < report.latent_names.size(); ++k) {
    const auto i = static_cast<Eigen::Index>(k);
    out << "latent,\"" << report.latent_names[k] << "\",NA," << format_number(report.latent.mean[i]) << ','
        << format_number(report.latent.sd[i]) << '\n';
  }
}

std::string fit_json(const FitReport& report) {
  json doc;
  json hyper = json::array();
  for (const auto& h : report.hyper)
    hyper.push_back({{"name", h.name}, {"mode", number(h.mode)}, {"mean", number(h.mean)}, {"sd", number(h.sd)}});
  doc["hyperparameters"] = hyper;
  json latent = json::array();
  for (std::size_t k = 0; k < report.latent_names.size(); ++k) {
    const auto i = static_cast<Eigen::Index>(k);
    latent.push_back({{"name", report.latent_names[k]},
                      {"mean", number(report.latent.mean[i])},
                      {"sd", number(report.latent.sd[i])}});
  }
  doc["latent"] = latent;
  doc["grid"] = {{"strategy", report.strategy}, {"points", report.grid_points}, {"evaluations", report.evaluations}};
  doc["timing"] = {{"fit_seconds", report.seconds}};
  return doc.dump(2) + "\n";
}

}  // namespace latentcut
