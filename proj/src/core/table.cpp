#include "latentcut/table.hpp"

#include "latentcut/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

namespace latentcut {

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  std::string out(s.substr(first, last - first + 1));
  if (out.size() >= 2 && out.front() == '"' && out.back() == '"') out = out.substr(1, out.size() - 2);
  return out;
}

std::vector<std::string> split(std::string_view line, char sep) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    fields.push_back(trim(line.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return fields;
}

bool parse_double(const std::string& s, double& out) {
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

bool parse_int(const std::string& s, int& out) {
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

}  // namespace

bool DataTable::is_missing(double v) { return std::isnan(v); }
double DataTable::missing() { return std::numeric_limits<double>::quiet_NaN(); }

void DataTable::add_column(std::string name, std::vector<double> values) {
  if (has_column(name)) throw InputError("duplicate column '" + name + "'");
  if (values.empty()) throw InputError("column '" + name + "' is empty");
  if (!names_.empty() && values.size() != n_rows_)
    throw InputError("column '" + name + "' has " + std::to_string(values.size()) + " rows, expected " +
                     std::to_string(n_rows_));
  n_rows_ = values.size();
  names_.push_back(std::move(name));
  columns_.push_back(std::move(values));
}

bool DataTable::has_column(std::string_view name) const {
  return std::find(names_.begin(), names_.end(), name) != names_.end();
}

const std::vector<double>& DataTable::column(std::string_view name) const {
  const auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) throw InputError("unknown column '" + std::string(name) + "'");
  return columns_[static_cast<std::size_t>(it - names_.begin())];
}

DataTable parse_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw InputError("CSV input is empty");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const auto header = split(line, ',');
  for (const auto& h : header)
    if (h.empty()) throw InputError("CSV header has an empty column name");

  std::vector<std::vector<double>> cols(header.size());
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto fields = split(line, ',');
    if (fields.size() != header.size())
      throw InputError("CSV line " + std::to_string(lineno) + " has " + std::to_string(fields.size()) +
                       " fields, expected " + std::to_string(header.size()));
    for (std::size_t c = 0; c < fields.size(); ++c) {
      double v;
      if (fields[c] == "NA" || fields[c].empty()) {
        v = DataTable::missing();
      } else if (!parse_double(fields[c], v)) {
        throw InputError("CSV line " + std::to_string(lineno) + ", column '" + header[c] +
                         "': cannot parse '" + fields[c] + "' as a number");
      }
      cols[c].push_back(v);
    }
  }
  DataTable table;
  for (std::size_t c = 0; c < header.size(); ++c) table.add_column(header[c], std::move(cols[c]));
  return table;
}

DataTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open data file '" + path.string() + "'");
  return parse_csv(in);
}

std::string format_number(double v) {
  if (std::isnan(v)) return "NA";
  if (std::isinf(v)) return v > 0 ? "Inf" : "-Inf";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

void write_csv(std::ostream& out, const DataTable& table) {
  const auto& names = table.names();
  for (std::size_t c = 0; c < names.size(); ++c) out << (c ? "," : "") << names[c];
  out << '\n';
  for (std::size_t r = 0; r < table.n_rows(); ++r) {
    for (std::size_t c = 0; c < names.size(); ++c) out << (c ? "," : "") << format_number(table.column(names[c])[r]);
    out << '\n';
  }
}

AdjacencyGraph::AdjacencyGraph(std::vector<std::vector<int>> neighbors) : neighbors_(std::move(neighbors)) {
  const int n = size();
  for (int i = 0; i < n; ++i) {
    auto& nb = neighbors_[static_cast<std::size_t>(i)];
    std::sort(nb.begin(), nb.end());
    if (std::adjacent_find(nb.begin(), nb.end()) != nb.end())
      throw InputError("graph node " + std::to_string(i + 1) + " lists a neighbour twice");
    for (int j : nb) {
      if (j < 0 || j >= n) throw InputError("graph node " + std::to_string(i + 1) + " has an out-of-range neighbour");
      if (j == i) throw InputError("graph node " + std::to_string(i + 1) + " is its own neighbour");
    }
  }
  for (int i = 0; i < n; ++i)
    for (int j : neighbors_[static_cast<std::size_t>(i)]) {
      const auto& back = neighbors_[static_cast<std::size_t>(j)];
      if (!std::binary_search(back.begin(), back.end(), i))
        throw InputError("graph is not symmetric: " + std::to_string(i + 1) + " lists " + std::to_string(j + 1) +
                         " but not vice versa");
    }

  component_.assign(static_cast<std::size_t>(n), -1);
  std::vector<int> stack;
  for (int s = 0; s < n; ++s) {
    if (component_[static_cast<std::size_t>(s)] >= 0) continue;
    component_[static_cast<std::size_t>(s)] = n_components_;
    stack.push_back(s);
    while (!stack.empty()) {
      const int u = stack.back();
      stack.pop_back();
      for (int v : neighbors_[static_cast<std::size_t>(u)])
        if (component_[static_cast<std::size_t>(v)] < 0) {
          component_[static_cast<std::size_t>(v)] = n_components_;
          stack.push_back(v);
        }
    }
    ++n_components_;
  }
}

AdjacencyGraph AdjacencyGraph::lattice(int rows, int cols) {
  std::vector<std::vector<int>> nb(static_cast<std::size_t>(rows * cols));
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      const int i = r * cols + c;
      if (r > 0) nb[static_cast<std::size_t>(i)].push_back(i - cols);
      if (c > 0) nb[static_cast<std::size_t>(i)].push_back(i - 1);
      if (c + 1 < cols) nb[static_cast<std::size_t>(i)].push_back(i + 1);
      if (r + 1 < rows) nb[static_cast<std::size_t>(i)].push_back(i + cols);
    }
  return AdjacencyGraph(std::move(nb));
}

AdjacencyGraph parse_adjacency(std::istream& in) {
  std::map<int, std::vector<int>> lists;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto colon = line.find(':');
    if (colon == std::string::npos)
      throw InputError("adjacency line " + std::to_string(lineno) + " is missing ':'");
    int id;
    if (!parse_int(trim(line.substr(0, colon)), id) || id < 1)
      throw InputError("adjacency line " + std::to_string(lineno) + " has an invalid node id");
    if (lists.count(id)) throw InputError("adjacency lists node " + std::to_string(id) + " twice");
    std::istringstream rest(line.substr(colon + 1));
    std::vector<int> nb;
    std::string tok;
    while (rest >> tok) {
      int j;
      if (!parse_int(tok, j) || j < 1)
        throw InputError("adjacency line " + std::to_string(lineno) + " has an invalid neighbour '" + tok + "'");
      nb.push_back(j - 1);
    }
    lists[id] = std::move(nb);
  }
  if (lists.empty()) throw InputError("adjacency file lists no nodes");
  const int n = lists.rbegin()->first;
  if (static_cast<int>(lists.size()) != n) throw InputError("adjacency node ids must be exactly 1..n");
  std::vector<std::vector<int>> nb;
  nb.reserve(static_cast<std::size_t>(n));
  for (auto& [id, list] : lists) nb.push_back(std::move(list));
  return AdjacencyGraph(std::move(nb));
}

AdjacencyGraph read_adjacency(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open adjacency file '" + path.string() + "'");
  return parse_adjacency(in);
}

void write_adjacency(std::ostream& out, const AdjacencyGraph& graph) {
  for (int i = 0; i < graph.size(); ++i) {
    out << (i + 1) << ':';
    for (int j : graph.neighbors(i)) out << ' ' << (j + 1);
    out << '\n';
  }
}

}  // namespace latentcut
