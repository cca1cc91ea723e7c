#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace latentcut {

/// Column-oriented numeric data. Missing values are stored as quiet NaN and
/// written as "NA".
class DataTable {
 public:
  DataTable() = default;

  void add_column(std::string name, std::vector<double> values);

  std::size_t n_rows() const { return n_rows_; }
  std::size_t n_columns() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  bool has_column(std::string_view name) const;
  const std::vector<double>& column(std::string_view name) const;

  std::optional<std::string> group_column;

  static bool is_missing(double v);
  static double missing();

 private:
  std::vector<std::string> names_;
  std::vector<std::vector<double>> columns_;
  std::size_t n_rows_ = 0;
};

DataTable parse_csv(std::istream& in);
DataTable read_csv(const std::filesystem::path& path);
void write_csv(std::ostream& out, const DataTable& table);

/// Formats a number so that parsing it back yields the same double.
std::string format_number(double v);

/// Undirected neighbourhood graph on nodes 0..n-1.
class AdjacencyGraph {
 public:
  AdjacencyGraph() = default;
  /// Validates symmetry and absence of self-loops, then labels the
  /// connected components.
  explicit AdjacencyGraph(std::vector<std::vector<int>> neighbors);

  int size() const { return static_cast<int>(neighbors_.size()); }
  const std::vector<int>& neighbors(int i) const { return neighbors_[static_cast<std::size_t>(i)]; }
  int degree(int i) const { return static_cast<int>(neighbors(i).size()); }
  int n_components() const { return n_components_; }
  int component(int i) const { return component_[static_cast<std::size_t>(i)]; }

  static AdjacencyGraph lattice(int rows, int cols);

 private:
  std::vector<std::vector<int>> neighbors_;
  std::vector<int> component_;
  int n_components_ = 0;
};

/// One line per node: "node_id: neighbour ids", ids 1-based.
AdjacencyGraph parse_adjacency(std::istream& in);
AdjacencyGraph read_adjacency(const std::filesystem::path& path);
void write_adjacency(std::ostream& out, const AdjacencyGraph& graph);

}  // namespace latentcut
