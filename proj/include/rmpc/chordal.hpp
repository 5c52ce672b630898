#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace rmpc {

/// A block of scalar variables treated as one graph node.
struct Supernode {
  enum class Kind { State, Input, Tau, Epigraph, Generic };
  Kind kind = Kind::Generic;
  int scenario = -1;
  int stage = -1;
  int dim = 1;
  std::string label;
};

/// One objective/constraint term of a decomposable QP,
///   1/2 y_S^T quadratic y_S - linear^T y_S,   eq_matrix y_S = eq_rhs,
/// where y_S stacks the scope's supernodes in scope order. `eq_rows` are the
/// global indices of the equality rows carried by the term.
struct Term {
  std::string name;
  std::vector<int> scope;  ///< sorted supernode indices
  Eigen::MatrixXd quadratic;
  Eigen::VectorXd linear;
  Eigen::MatrixXd eq_matrix;
  Eigen::VectorXd eq_rhs;
  std::vector<int> eq_rows;

  int scope_dim(const std::vector<Supernode>& nodes) const;
};

/// Simple undirected graph over supernodes with sorted adjacency lists.
class SparsityGraph {
 public:
  SparsityGraph() = default;
  explicit SparsityGraph(std::vector<Supernode> nodes);

  int size() const { return static_cast<int>(nodes_.size()); }
  const std::vector<Supernode>& nodes() const { return nodes_; }
  const Supernode& node(int v) const { return nodes_[v]; }
  const std::vector<int>& neighbors(int v) const { return adj_[v]; }
  bool has_edge(int a, int b) const;
  /// No-op for self-loops and existing edges.
  void add_edge(int a, int b);
  int num_edges() const;

 private:
  std::vector<Supernode> nodes_;
  std::vector<std::vector<int>> adj_;
};

/// Connects every pair of supernodes that share a term.
SparsityGraph build_sparsity_graph(const std::vector<Supernode>& nodes,
                                   const std::vector<Term>& terms);

struct ChordalityResult {
  bool chordal = false;
  /// Perfect elimination ordering when chordal (position i = i-th eliminated).
  std::vector<int> ordering;
};

/// Maximum cardinality search followed by a perfect-elimination check.
ChordalityResult is_chordal(const SparsityGraph& g);

/// True when every vertex's later neighbors in `ordering` form a clique.
bool is_perfect_elimination_ordering(const SparsityGraph& g, const std::vector<int>& ordering);

struct Embedding {
  SparsityGraph graph;
  std::vector<int> ordering;  ///< elimination order, a PEO of `graph`
  int fill_edges = 0;
};

/// Greedy minimum-fill elimination; ties go to the lowest vertex index.
Embedding chordal_embedding(const SparsityGraph& g);

/// Maximal cliques of a chordal graph, each sorted, listed in the order their
/// lowest-ordered vertex is eliminated. Throws std::invalid_argument if
/// `ordering` is not a perfect elimination ordering of `g`.
std::vector<std::vector<int>> max_cliques(const SparsityGraph& g, const std::vector<int>& ordering);

struct CliqueTree {
  std::vector<std::vector<int>> cliques;
  int root = 0;
  std::vector<int> parent;                 ///< -1 at the root
  std::vector<std::vector<int>> children;  ///< ascending clique index
  std::vector<std::vector<int>> separators;
  std::vector<int> depth;
  /// Post-order (children before parents), deterministic.
  std::vector<int> postorder;
  /// assignment[i] = clique holding term i (filled by assign_terms).
  std::vector<int> assignment;

  int size() const { return static_cast<int>(cliques.size()); }
  /// Scope minus separator.
  std::vector<int> private_nodes(int c) const;
};

/// Maximum-weight spanning tree of the clique intersection graph. The root is
/// the clique with the most stage-0 supernodes (ties: larger clique, then
/// lower index). Disconnected components are joined through empty separators.
CliqueTree build_clique_tree(const SparsityGraph& g, const std::vector<std::vector<int>>& cliques);

/// For every supernode, the cliques containing it induce a connected subtree.
bool has_running_intersection(const CliqueTree& tree, int num_nodes);

/// Assigns each term to the covering clique closest to the root (ties: lowest
/// index). Throws std::logic_error if some scope is not covered.
void assign_terms(const std::vector<Term>& terms, CliqueTree& tree);

std::string to_dot(const SparsityGraph& g, const std::string& name = "sparsity");
std::string to_dot(const CliqueTree& tree, const SparsityGraph& g,
                   const std::string& name = "clique_tree");
std::string clique_label(const std::vector<int>& clique, const SparsityGraph& g);

}  // namespace rmpc
