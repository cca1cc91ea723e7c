#include "latentcut/errors.hpp"
#include "latentcut/model.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>

namespace latentcut {

namespace {

using nlohmann::json;

void check_keys(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw InputError(where + ": expected an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, value] : obj.items())
    if (!ok.count(key)) throw InputError(where + "." + key + ": unknown field");
}

std::string get_string(const json& obj, const std::string& key, const std::string& where, bool required = true) {
  if (!obj.contains(key) || obj[key].is_null()) {
    if (required) throw InputError(where + "." + key + ": required field is missing");
    return {};
  }
  if (!obj[key].is_string()) throw InputError(where + "." + key + ": expected a string");
  return obj[key].get<std::string>();
}

double get_number(const json& obj, const std::string& key, const std::string& where, double fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_number()) throw InputError(where + "." + key + ": expected a number");
  return obj[key].get<double>();
}

std::vector<double> get_vector(const json& v, const std::string& where) {
  if (v.is_number()) return {v.get<double>()};
  if (!v.is_array()) throw InputError(where + ": expected a number or an array of numbers");
  std::vector<double> out;
  for (const auto& e : v) {
    if (!e.is_number()) throw InputError(where + ": expected numbers");
    out.push_back(e.get<double>());
  }
  return out;
}

Eigen::MatrixXd get_matrix(const json& v, const std::string& where) {
  if (!v.is_array() || v.empty()) throw InputError(where + ": expected a non-empty array of rows");
  const auto n = v.size();
  Eigen::MatrixXd m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = get_vector(v[i], where);
    if (row.size() != n) throw InputError(where + ": expected a square matrix");
    for (std::size_t j = 0; j < n; ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = row[j];
  }
  return m;
}

HyperPrior parse_prior(const json& p, const std::string& where) {
  const std::string type = get_string(p, "type", where);
  if (type == "loggamma") {
    check_keys(p, where, {"type", "shape", "rate"});
    return LogGammaPrior{get_number(p, "shape", where, 1.0), get_number(p, "rate", where, 5e-5)};
  }
  if (type == "wishart2d") {
    check_keys(p, where, {"type", "df", "R"});
    Wishart2dPrior w;
    w.df = get_number(p, "df", where, 4.0);
    if (p.contains("R")) {
      const Eigen::MatrixXd r = get_matrix(p["R"], where + ".R");
      if (r.rows() != 2) throw InputError(where + ".R: expected a 2x2 matrix");
      w.r = r;
    }
    return w;
  }
  if (type == "fixed") {
    check_keys(p, where, {"type", "value"});
    if (!p.contains("value")) throw InputError(where + ".value: required field is missing");
    return FixedHyper{get_vector(p["value"], where + ".value")};
  }
  if (type == "gaussian") {
    check_keys(p, where, {"type", "mean", "cov"});
    if (!p.contains("mean") || !p.contains("cov")) throw InputError(where + ": gaussian prior needs mean and cov");
    const auto mean = get_vector(p["mean"], where + ".mean");
    GaussianHyperPrior g{Eigen::Map<const Eigen::VectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size())),
                         get_matrix(p["cov"], where + ".cov")};
    return g;
  }
  throw InputError(where + ".type: unknown prior type '" + type + "'");
}

json prior_to_json(const HyperPrior& prior) {
  json p;
  if (const auto* lg = std::get_if<LogGammaPrior>(&prior)) {
    p = {{"type", "loggamma"}, {"shape", lg->shape}, {"rate", lg->rate}};
  } else if (const auto* w = std::get_if<Wishart2dPrior>(&prior)) {
    p = {{"type", "wishart2d"},
         {"df", w->df},
         {"R", json::array({json::array({w->r(0, 0), w->r(0, 1)}), json::array({w->r(1, 0), w->r(1, 1)})})}};
  } else if (const auto* f = std::get_if<FixedHyper>(&prior)) {
    p = {{"type", "fixed"}, {"value", f->values}};
  } else if (const auto* g = std::get_if<GaussianHyperPrior>(&prior)) {
    json cov = json::array();
    for (Eigen::Index i = 0; i < g->cov.rows(); ++i) {
      json row = json::array();
      for (Eigen::Index j = 0; j < g->cov.cols(); ++j) row.push_back(g->cov(i, j));
      cov.push_back(row);
    }
    p = {{"type", "gaussian"}, {"mean", std::vector<double>(g->mean.data(), g->mean.data() + g->mean.size())},
         {"cov", cov}};
  }
  return p;
}

}  // namespace

ModelSpec parse_model_spec(const std::string& json_text, DataTable data, const std::filesystem::path& base_dir) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw InputError(std::string("model spec is not valid JSON: ") + e.what());
  }
  check_keys(doc, "model", {"likelihood", "response", "offset", "effects", "priors", "initial", "group"});

  ModelSpec spec;
  const std::string family = get_string(doc, "likelihood", "model");
  if (family == "gaussian") spec.family = Family::gaussian;
  else if (family == "poisson") spec.family = Family::poisson;
  else throw InputError("model.likelihood: unsupported likelihood '" + family + "'");
  spec.response = get_string(doc, "response", "model");
  if (!data.has_column(spec.response)) throw InputError("model.response: unknown column '" + spec.response + "'");
  if (const auto off = get_string(doc, "offset", "model", false); !off.empty()) {
    if (!data.has_column(off)) throw InputError("model.offset: unknown column '" + off + "'");
    spec.offset = off;
  }
  if (const auto g = get_string(doc, "group", "model", false); !g.empty()) {
    if (!data.has_column(g)) throw InputError("model.group: unknown column '" + g + "'");
    spec.group = g;
  }

  if (!doc.contains("effects") || !doc["effects"].is_array())
    throw InputError("model.effects: required array is missing");
  std::size_t k = 0;
  for (const auto& e : doc["effects"]) {
    const std::string where = "model.effects[" + std::to_string(k++) + "]";
    check_keys(e, where, {"type", "name", "covariate", "index", "slope", "slot", "precision", "graph"});
    EffectBlock block;
    const std::string type = get_string(e, "type", where);
    auto column = [&](const char* key, bool required) {
      const std::string c = get_string(e, key, where, required);
      if (!c.empty() && !data.has_column(c)) throw InputError(where + "." + key + ": unknown column '" + c + "'");
      return c;
    };
    if (type == "intercept") {
      block.kind = EffectKind::intercept;
      block.name = "intercept";
    } else if (type == "fixed") {
      block.kind = EffectKind::fixed;
      block.column = column("covariate", true);
      block.name = block.column;
    } else if (type == "iid" || type == "iid2d" || type == "besag") {
      block.kind = type == "iid" ? EffectKind::iid : type == "iid2d" ? EffectKind::iid2d : EffectKind::besag;
      block.column = column("index", true);
      block.name = block.column;
    } else {
      throw InputError(where + ".type: unknown effect type '" + type + "'");
    }
    if (const auto name = get_string(e, "name", where, false); !name.empty()) block.name = name;
    block.precision = get_number(e, "precision", where, 1e-6);
    if (block.kind == EffectKind::iid2d) {
      block.slope = column("slope", false);
      block.slot = column("slot", false);
    }
    if (block.kind == EffectKind::besag) {
      block.graph_path = get_string(e, "graph", where);
      std::filesystem::path gp(block.graph_path);
      if (gp.is_relative() && !base_dir.empty()) gp = base_dir / gp;
      try {
        block.graph = std::make_shared<AdjacencyGraph>(read_adjacency(gp));
      } catch (const InputError& err) {
        throw InputError(where + ".graph: " + err.what());
      }
    }
    spec.effects.push_back(std::move(block));
  }

  if (doc.contains("priors")) {
    if (!doc["priors"].is_object()) throw InputError("model.priors: expected an object");
    for (const auto& [owner, p] : doc["priors"].items()) spec.priors[owner] = parse_prior(p, "model.priors." + owner);
  }
  if (doc.contains("initial")) {
    if (!doc["initial"].is_object()) throw InputError("model.initial: expected an object");
    for (const auto& [owner, v] : doc["initial"].items())
      spec.initial[owner] = get_vector(v, "model.initial." + owner);
  }
  spec.data = std::move(data);
  spec.data.group_column = spec.group;
  return spec;
}

ModelSpec load_model_spec(const std::filesystem::path& spec_path, const std::filesystem::path& data_path) {
  std::ifstream in(spec_path);
  if (!in) throw InputError("cannot open model spec '" + spec_path.string() + "'");
  std::ostringstream text;
  text << in.rdbuf();
  DataTable data = read_csv(data_path);
  return parse_model_spec(text.str(), std::move(data), spec_path.parent_path());
}

std::string model_spec_to_json(const ModelSpec& spec) {
  json doc;
  doc["likelihood"] = to_string(spec.family);
  doc["response"] = spec.response;
  if (spec.offset) doc["offset"] = *spec.offset;
  if (spec.group) doc["group"] = *spec.group;
  json effects = json::array();
  for (const auto& b : spec.effects) {
    json e{{"type", to_string(b.kind)}, {"name", b.name}};
    switch (b.kind) {
      case EffectKind::intercept: e["precision"] = b.precision; break;
      case EffectKind::fixed: e["covariate"] = b.column; e["precision"] = b.precision; break;
      case EffectKind::iid: e["index"] = b.column; break;
      case EffectKind::iid2d:
        e["index"] = b.column;
        if (!b.slope.empty()) e["slope"] = b.slope;
        if (!b.slot.empty()) e["slot"] = b.slot;
        break;
      case EffectKind::besag: e["index"] = b.column; e["graph"] = b.graph_path; break;
    }
    effects.push_back(e);
  }
  doc["effects"] = effects;
  json priors = json::object();
  for (const auto& [owner, p] : spec.priors) priors[owner] = prior_to_json(p);
  doc["priors"] = priors;
  if (!spec.initial.empty()) doc["initial"] = spec.initial;
  return doc.dump(2) + "\n";
}

}  // namespace latentcut
