#include "latentcut/errors.hpp"
#include "latentcut/report.hpp"

#include "fixtures.hpp"

#include <doctest.h>

#include <json.hpp>

#include <cmath>
#include <sstream>

using namespace latentcut;

TEST_CASE("conflict CSV round trip") {
  const std::vector<ConflictRow> rows = {
      {"1", 0.123456789012345, 2, 0.94, false},
      {"9", 12.5, 5, 1.0 / 3000.0, true},
      {"17", std::nan(""), std::nan(""), std::nan(""), false},
  };
  std::ostringstream out;
  write_conflict_csv(out, rows);
  CHECK(out.str().rfind("group,delta_hat,rank,p_value,flagged\n", 0) == 0);
  CHECK(out.str().find("17,NA,NA,NA,false") != std::string::npos);
  std::istringstream in(out.str());
  const auto back = parse_conflict_csv(in);
  REQUIRE(back.size() == 3);
  for (std::size_t k = 0; k < 2; ++k) {
    CHECK(back[k].group == rows[k].group);
    CHECK(back[k].delta_hat == rows[k].delta_hat);
    CHECK(back[k].rank == rows[k].rank);
    CHECK(back[k].p_value == rows[k].p_value);
    CHECK(back[k].flagged == rows[k].flagged);
  }
  CHECK(std::isnan(back[2].p_value));

  std::istringstream bad("group,p\n1,2\n");
  CHECK_THROWS_AS(parse_conflict_csv(bad), InputError);
}

TEST_CASE("conflict and fit reports from a small hierarchy") {
  const auto d = fixtures::grouped_data(4, 3, 50);
  const CompiledModel m = build_model(fixtures::hierarchy_spec(fixtures::grouped_table(d)));
  const NodeSplitResult r = conflict_pvalues(m, "group");
  REQUIRE(r.failures() == 0);

  const auto doc = nlohmann::json::parse(conflict_json(r, true));
  CHECK(doc["groups"].size() == 4);
  CHECK(doc["groups"][0].contains("sigma_delta"));
  CHECK(doc["failures"].get<int>() == 0);
  const auto brief = nlohmann::json::parse(conflict_json(r, false));
  CHECK_FALSE(brief["groups"][0].contains("sigma_delta"));

  const auto rows = conflict_rows(r);
  for (const auto& row : rows) {
    CHECK(row.p_value > 0.0);
    CHECK(row.p_value <= 1.0);
  }

  const FitReport fit = fit_model(m);
  CHECK(fit.hyper.size() == 2);
  CHECK(fit.latent_names.size() == static_cast<std::size_t>(m.latent_dim()));
  std::ostringstream csv;
  write_fit_csv(csv, fit);
  CHECK(csv.str().rfind("kind,name,mode,mean,sd\n", 0) == 0);
  const auto fj = nlohmann::json::parse(fit_json(fit));
  CHECK(fj["hyperparameters"].size() == 2);
}
