// Command-line front end: fit a model, run the group node split, or
// generate a synthetic lattice data set. Talks to the engine only through
// the C interface.

#include "latentcut/latentcut.h"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <string>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitInput = 2;

int report(lc_status status) {
  std::fprintf(stderr, "latentcut: %s: %s\n", lc_status_name(status), lc_last_error());
  return status == LC_INPUT_ERROR || status == LC_INVALID_ARGUMENT ? kExitInput : kExitFailure;
}

struct Common {
  std::string data;
  std::string model;
  std::string out = "-";
  std::string format = "csv";
  int verbose = 0;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--data", c.data, "CSV data file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--model", c.model, "model specification (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--out", c.out, "output file, '-' for standard output");
  cmd->add_option("--format", c.format, "output format")->check(CLI::IsMember({"csv", "json"}));
  cmd->add_flag("-v,--verbose", c.verbose, "more diagnostics on stderr (repeat for traces)");
  cmd->add_flag("--quiet", c.quiet, "no warnings or timing on stderr");
}

int run_fit(const Common& c) {
  lc_set_verbosity(c.quiet ? 0 : 1 + c.verbose);
  lc_model* model = nullptr;
  if (lc_status s = lc_model_load(c.model.c_str(), c.data.c_str(), &model); s != LC_OK) return report(s);
  lc_fit* fit = nullptr;
  lc_status s = lc_fit_run(model, &fit);
  if (s == LC_OK) s = lc_fit_write(fit, c.out.c_str(), c.format.c_str());
  const int code = s == LC_OK ? kExitOk : report(s);
  if (s == LC_OK && c.format == "csv" && !c.quiet) std::fprintf(stderr, "timing: fit %.3f s\n", lc_fit_seconds(fit));
  lc_fit_free(fit);
  lc_model_free(model);
  return code;
}

int run_cut(const Common& c, const std::string& group, double q, int threads, bool full) {
  lc_set_verbosity(c.quiet ? 0 : 1 + c.verbose);
  lc_model* model = nullptr;
  if (lc_status s = lc_model_load(c.model.c_str(), c.data.c_str(), &model); s != LC_OK) return report(s);
  lc_cut* cut = nullptr;
  lc_status s = lc_cut_run(model, group.empty() ? nullptr : group.c_str(), q, threads, &cut);
  if (s == LC_OK) s = lc_cut_write(cut, c.out.c_str(), c.format.c_str(), full ? 1 : 0);
  int code = s == LC_OK ? kExitOk : report(s);
  if (s == LC_OK) {
    if (c.format == "csv" && !c.quiet)
      std::fprintf(stderr, "timing: initial fit %.3f s, node split %.3f s\n", lc_cut_fit_seconds(cut),
                   lc_cut_split_seconds(cut));
    if (const size_t failures = lc_cut_n_failures(cut); failures > 0) {
      for (size_t j = 0; j < lc_cut_n_groups(cut); ++j) {
        const char* label = nullptr;
        int failed = 0;
        lc_cut_group(cut, j, &label, nullptr, nullptr, nullptr, nullptr, &failed);
        if (failed) std::fprintf(stderr, "latentcut: group %s failed: %s\n", label, lc_cut_group_error(cut, j));
      }
      code = kExitFailure;
    }
  }
  lc_cut_free(cut);
  lc_model_free(model);
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conflict diagnostics for latent Gaussian models by group-wise node splitting"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(lc_version()));

  Common fit_opts;
  auto* fit = app.add_subcommand("fit", "fit a model and report posterior summaries");
  add_common(fit, fit_opts);

  Common cut_opts;
  std::string group;
  double q = 0.10;
  int threads = 1;
  bool full = false;
  auto* cut = app.add_subcommand("cut", "node split by group: conflict p-values and FDR flags");
  add_common(cut, cut_opts);
  cut->add_option("--group", group, "grouping column (defaults to the spec's group)");
  cut->add_option("--q", q, "false discovery rate level")->check(CLI::Range(0.0, 1.0));
  cut->add_option("--threads", threads, "concurrent group analyses")->check(CLI::PositiveNumber);
  cut->add_flag("--full", full, "include mu(delta) and Sigma(delta) in JSON output");

  int side = 6, periods = 4;
  std::uint64_t seed = 1;
  std::string dir;
  auto* gen = app.add_subcommand("gen-lattice", "write a synthetic lattice disease-mapping data set");
  gen->add_option("--side", side, "lattice side length m (m x m areas)")->check(CLI::Range(3, 200));
  gen->add_option("--periods", periods, "number of periods T")->check(CLI::Range(2, 1000));
  gen->add_option("--seed", seed, "random seed");
  gen->add_option("--out", dir, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitInput;
  }

  if (*fit) return run_fit(fit_opts);
  if (*cut) {
    if (!(q > 0.0 && q < 1.0)) {
      std::fprintf(stderr, "latentcut: --q must lie strictly between 0 and 1\n");
      return kExitInput;
    }
    return run_cut(cut_opts, group, q, threads, full);
  }
  if (*gen) {
    if (lc_status s = lc_gen_lattice(side, periods, seed, dir.c_str()); s != LC_OK) return report(s);
    return kExitOk;
  }
  return kExitInput;
}
