#pragma once

// Serialization of fit summaries and conflict tables (CSV and JSON).

#include "latentcut/inference.hpp"
#include "latentcut/nodesplit.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace latentcut {

struct ConflictRow {
  std::string group;
  double delta_hat = 0.0;  // NaN when the group failed
  double rank = 0.0;       // NaN when the group failed
  double p_value = 0.0;    // NaN when the group failed
  bool flagged = false;
};

std::vector<ConflictRow> conflict_rows(const NodeSplitResult& result);
void write_conflict_csv(std::ostream& out, const std::vector<ConflictRow>& rows);
std::vector<ConflictRow> parse_conflict_csv(std::istream& in);
/// `full` adds mu(delta) and Sigma(delta) per group.
std::string conflict_json(const NodeSplitResult& result, bool full);

struct HyperRow {
  std::string name;
  double mode = 0.0;
  double mean = 0.0;
  double sd = 0.0;
};

struct FitReport {
  std::vector<HyperRow> hyper;
  std::vector<std::string> latent_names;
  LatentSummary latent;
  std::size_t grid_points = 0;
  int evaluations = 0;
  std::string strategy;
  double seconds = 0.0;
};

FitReport fit_model(const CompiledModel& model, const GridOptions& options = {});
void write_fit_csv(std::ostream& out, const FitReport& report);
std::string fit_json(const FitReport& report);

}  // namespace latentcut
