#include "latentcut/latentcut.h"

#include "latentcut/datasets.hpp"
#include "latentcut/errors.hpp"
#include "latentcut/log.hpp"
#include "latentcut/model.hpp"
#include "latentcut/nodesplit.hpp"
#include "latentcut/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>

struct lc_model {
  latentcut::CompiledModel model;
  std::string group;
};

struct lc_fit {
  latentcut::FitReport report;
};

struct lc_cut {
  latentcut::NodeSplitResult result;
};

namespace {

thread_local std::string last_error;

lc_status fail(lc_status status, const std::string& message) {
  last_error = message;
  return status;
}

template <typename F>
lc_status guarded(F&& body) {
  try {
    last_error.clear();
    return body();
  } catch (const latentcut::InputError& e) {
    return fail(LC_INPUT_ERROR, e.what());
  } catch (const latentcut::InferenceError& e) {
    return fail(LC_INFERENCE_ERROR, e.what());
  } catch (const std::invalid_argument& e) {
    return fail(LC_INVALID_ARGUMENT, e.what());
  } catch (const std::out_of_range& e) {
    return fail(LC_INVALID_ARGUMENT, e.what());
  } catch (const std::exception& e) {
    return fail(LC_INTERNAL_ERROR, e.what());
  } catch (...) {
    return fail(LC_INTERNAL_ERROR, "unknown error");
  }
}

lc_status adopt_model(latentcut::ModelSpec spec, lc_model** out) {
  auto handle = std::make_unique<lc_model>();
  handle->group = spec.group.value_or("");
  handle->model = latentcut::build_model(spec);
  *out = handle.release();
  return LC_OK;
}

bool is_stdout(const char* path) { return path == nullptr || std::string(path) == "-"; }

template <typename Writer>
lc_status write_to(const char* path, Writer&& writer) {
  if (is_stdout(path)) {
    writer(std::cout);
    std::cout.flush();
    return LC_OK;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) return fail(LC_INPUT_ERROR, std::string("cannot open output file '") + path + "'");
  writer(out);
  if (!out) return fail(LC_INPUT_ERROR, std::string("failed writing '") + path + "'");
  return LC_OK;
}

std::string check_format(const char* format) {
  const std::string f = format ? format : "csv";
  if (f != "csv" && f != "json") throw std::invalid_argument("format must be csv or json, got '" + f + "'");
  return f;
}

}  // namespace

extern "C" {

const char* lc_version(void) { return "1.0.0"; }

const char* lc_last_error(void) { return last_error.c_str(); }

const char* lc_status_name(lc_status status) {
  switch (status) {
    case LC_OK: return "ok";
    case LC_INPUT_ERROR: return "input error";
    case LC_INFERENCE_ERROR: return "inference error";
    case LC_INVALID_ARGUMENT: return "invalid argument";
    case LC_INTERNAL_ERROR: return "internal error";
  }
  return "unknown status";
}

void lc_set_verbosity(int level) {
  level = std::max(0, std::min(level, 3));
  latentcut::set_log_level(static_cast<latentcut::LogLevel>(level));
}

lc_status lc_model_load(const char* spec_path, const char* data_path, lc_model** out) {
  if (!spec_path || !data_path || !out) return fail(LC_INVALID_ARGUMENT, "null argument");
  *out = nullptr;
  return guarded([&] { return adopt_model(latentcut::load_model_spec(spec_path, data_path), out); });
}

lc_status lc_model_from_strings(const char* spec_json, const char* data_csv, const char* base_dir, lc_model** out) {
  if (!spec_json || !data_csv || !out) return fail(LC_INVALID_ARGUMENT, "null argument");
  *out = nullptr;
  return guarded([&] {
    std::istringstream in(data_csv);
    auto data = latentcut::parse_csv(in);
    return adopt_model(latentcut::parse_model_spec(spec_json, std::move(data), base_dir ? base_dir : ""), out);
  });
}

lc_status lc_model_load_rats(lc_model** out) {
  if (!out) return fail(LC_INVALID_ARGUMENT, "null argument");
  *out = nullptr;
  return guarded([&] { return adopt_model(latentcut::rats_model(), out); });
}

void lc_model_free(lc_model* model) { delete model; }

int lc_model_n_rows(const lc_model* model) { return model ? model->model.n_rows() : 0; }
int lc_model_latent_dim(const lc_model* model) { return model ? model->model.latent_dim() : 0; }
int lc_model_theta_dim(const lc_model* model) { return model ? model->model.theta_dim() : 0; }

const char* lc_model_group(const lc_model* model) {
  if (!model || model->group.empty()) return nullptr;
  return model->group.c_str();
}

lc_status lc_fit_run(const lc_model* model, lc_fit** out) {
  if (!model || !out) return fail(LC_INVALID_ARGUMENT, "null argument");
  *out = nullptr;
  return guarded([&] {
    auto handle = std::make_unique<lc_fit>();
    handle->report = latentcut::fit_model(model->model);
    *out = handle.release();
    return LC_OK;
  });
}

void lc_fit_free(lc_fit* fit) { delete fit; }

size_t lc_fit_n_hyper(const lc_fit* fit) { return fit ? fit->report.hyper.size() : 0; }
size_t lc_fit_n_latent(const lc_fit* fit) { return fit ? fit->report.latent_names.size() : 0; }

lc_status lc_fit_hyper(const lc_fit* fit, size_t k, const char** name, double* mode, double* mean, double* sd) {
  if (!fit) return fail(LC_INVALID_ARGUMENT, "null fit handle");
  if (k >= fit->report.hyper.size()) return fail(LC_INVALID_ARGUMENT, "hyperparameter index out of range");
  const auto& h = fit->report.hyper[k];
  if (name) *name = h.name.c_str();
  if (mode) *mode = h.mode;
  if (mean) *mean = h.mean;
  if (sd) *sd = h.sd;
  return LC_OK;
}

lc_status lc_fit_latent(const lc_fit* fit, size_t k, const char** name, double* mean, double* sd) {
  if (!fit) return fail(LC_INVALID_ARGUMENT, "null fit handle");
  if (k >= fit->report.latent_names.size()) return fail(LC_INVALID_ARGUMENT, "latent index out of range");
  const auto i = static_cast<Eigen::Index>(k);
  if (name) *name = fit->report.latent_names[k].c_str();
  if (mean) *mean = fit->report.latent.mean[i];
  if (sd) *sd = fit->report.latent.sd[i];
  return LC_OK;
}

double lc_fit_seconds(const lc_fit* fit) { return fit ? fit->report.seconds : 0.0; }

lc_status lc_fit_write(const lc_fit* fit, const char* path, const char* format) {
  if (!fit) return fail(LC_INVALID_ARGUMENT, "null fit handle");
  return guarded([&] {
    const std::string f = check_format(format);
    return write_to(path, [&](std::ostream& out) {
      if (f == "csv") latentcut::write_fit_csv(out, fit->report);
      else out << latentcut::fit_json(fit->report);
    });
  });
}

lc_status lc_cut_run(const lc_model* model, const char* group, double q, int threads, lc_cut** out) {
  if (!model || !out) return fail(LC_INVALID_ARGUMENT, "null argument");
  *out = nullptr;
  return guarded([&] {
    std::string column = group ? group : model->group;
    if (column.empty()) throw latentcut::InputError("group: no grouping variable given");
    latentcut::NodeSplitOptions options;
    options.q = q;
    options.threads = std::max(1, threads);
    auto handle = std::make_unique<lc_cut>();
    handle->result = latentcut::conflict_pvalues(model->model, column, options);
    *out = handle.release();
    return LC_OK;
  });
}

void lc_cut_free(lc_cut* cut) { delete cut; }

size_t lc_cut_n_groups(const lc_cut* cut) { return cut ? cut->result.groups.size() : 0; }
size_t lc_cut_n_failures(const lc_cut* cut) { return cut ? cut->result.failures() : 0; }

lc_status lc_cut_group(const lc_cut* cut, size_t j, const char** label, double* delta_hat, int* rank,
                       double* p_value, int* flagged, int* failed) {
  if (!cut) return fail(LC_INVALID_ARGUMENT, "null cut handle");
  if (j >= cut->result.groups.size()) return fail(LC_INVALID_ARGUMENT, "group index out of range");
  const auto& g = cut->result.groups[j];
  if (label) *label = g.label.c_str();
  if (delta_hat) *delta_hat = g.result ? g.result->delta_hat : std::nan("");
  if (rank) *rank = g.result ? g.result->rank : -1;
  if (p_value) *p_value = g.result ? g.result->p_value : std::nan("");
  if (flagged) *flagged = g.flagged ? 1 : 0;
  if (failed) *failed = g.result ? 0 : 1;
  return LC_OK;
}

const char* lc_cut_group_error(const lc_cut* cut, size_t j) {
  if (!cut || j >= cut->result.groups.size()) return nullptr;
  return cut->result.groups[j].error.c_str();
}

double lc_cut_fit_seconds(const lc_cut* cut) { return cut ? cut->result.fit_seconds : 0.0; }
double lc_cut_split_seconds(const lc_cut* cut) { return cut ? cut->result.split_seconds : 0.0; }

lc_status lc_cut_write(const lc_cut* cut, const char* path, const char* format, int full) {
  if (!cut) return fail(LC_INVALID_ARGUMENT, "null cut handle");
  return guarded([&] {
    const std::string f = check_format(format);
    return write_to(path, [&](std::ostream& out) {
      if (f == "csv") latentcut::write_conflict_csv(out, latentcut::conflict_rows(cut->result));
      else out << latentcut::conflict_json(cut->result, full != 0);
    });
  });
}

lc_status lc_gen_lattice(int side, int periods, uint64_t seed, const char* dir) {
  if (!dir) return fail(LC_INVALID_ARGUMENT, "null output directory");
  return guarded([&] {
    latentcut::write_lattice(latentcut::generate_lattice(side, periods, seed), dir);
    return LC_OK;
  });
}

}  // extern "C"
