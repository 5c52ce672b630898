#include "rmpc/chordal.hpp"

#include <algorithm>
#include <numeric>
#include <queue>
#include <sstream>
#include <stdexcept>

namespace rmpc {

int Term::scope_dim(const std::vector<Supernode>& nodes) const {
  int n = 0;
  for (int v : scope) n += nodes[v].dim;
  return n;
}

SparsityGraph::SparsityGraph(std::vector<Supernode> nodes)
    : nodes_(std::move(nodes)), adj_(nodes_.size()) {}

bool SparsityGraph::has_edge(int a, int b) const {
  const auto& nb = adj_[a];
  return std::binary_search(nb.begin(), nb.end(), b);
}

void SparsityGraph::add_edge(int a, int b) {
  if (a == b || has_edge(a, b)) return;
  adj_[a].insert(std::lower_bound(adj_[a].begin(), adj_[a].end(), b), b);
  adj_[b].insert(std::lower_bound(adj_[b].begin(), adj_[b].end(), a), a);
}

int SparsityGraph::num_edges() const {
  std::size_t total = 0;
  for (const auto& nb : adj_) total += nb.size();
  return static_cast<int>(total / 2);
}

SparsityGraph build_sparsity_graph(const std::vector<Supernode>& nodes,
                                   const std::vector<Term>& terms) {
  SparsityGraph g(nodes);
  for (const Term& term : terms) {
    for (std::size_t a = 0; a < term.scope.size(); ++a) {
      for (std::size_t b = a + 1; b < term.scope.size(); ++b) g.add_edge(term.scope[a], term.scope[b]);
    }
  }
  return g;
}

bool is_perfect_elimination_ordering(const SparsityGraph& g, const std::vector<int>& ordering) {
  const int n = g.size();
  if (static_cast<int>(ordering.size()) != n) return false;
  std::vector<int> pos(n, -1);
  for (int i = 0; i < n; ++i) {
    if (ordering[i] < 0 || ordering[i] >= n || pos[ordering[i]] != -1) return false;
    pos[ordering[i]] = i;
  }
  // Each vertex's later neighbors, minus the earliest one (its follower),
  // must be adjacent to the follower.
  for (int v = 0; v < n; ++v) {
    int follower = -1;
    for (int u : g.neighbors(v)) {
      if (pos[u] > pos[v] && (follower < 0 || pos[u] < pos[follower])) follower = u;
    }
    if (follower < 0) continue;
    for (int u : g.neighbors(v)) {
      if (pos[u] > pos[v] && u != follower && !g.has_edge(u, follower)) return false;
    }
  }
  return true;
}

ChordalityResult is_chordal(const SparsityGraph& g) {
  const int n = g.size();
  std::vector<int> weight(n, 0);
  std::vector<bool> numbered(n, false);
  std::vector<int> ordering(n);
  for (int i = n - 1; i >= 0; --i) {
    int best = -1;
    for (int v = 0; v < n; ++v) {
      if (!numbered[v] && (best < 0 || weight[v] > weight[best])) best = v;
    }
    numbered[best] = true;
    ordering[i] = best;
    for (int u : g.neighbors(best)) {
      if (!numbered[u]) ++weight[u];
    }
  }
  ChordalityResult result;
  result.chordal = is_perfect_elimination_ordering(g, ordering);
  if (result.chordal) result.ordering = std::move(ordering);
  return result;
}

Embedding chordal_embedding(const SparsityGraph& g) {
  const int n = g.size();
  std::vector<std::vector<char>> adj(n, std::vector<char>(n, 0));
  for (int v = 0; v < n; ++v) {
    for (int u : g.neighbors(v)) adj[v][u] = 1;
  }
  std::vector<bool> eliminated(n, false);
  Embedding out;
  out.graph = g;

  auto live_neighbors = [&](int v) {
    std::vector<int> nb;
    for (int u = 0; u < n; ++u) {
      if (!eliminated[u] && adj[v][u]) nb.push_back(u);
    }
    return nb;
  };

  for (int step = 0; step < n; ++step) {
    int best = -1;
    long best_fill = -1;
    for (int v = 0; v < n; ++v) {
      if (eliminated[v]) continue;
      const std::vector<int> nb = live_neighbors(v);
      long fill = 0;
      for (std::size_t a = 0; a < nb.size(); ++a) {
        for (std::size_t b = a + 1; b < nb.size(); ++b) fill += adj[nb[a]][nb[b]] ? 0 : 1;
      }
      if (best < 0 || fill < best_fill) {
        best = v;
        best_fill = fill;
        if (fill == 0) break;
      }
    }
    const std::vector<int> nb = live_neighbors(best);
    for (std::size_t a = 0; a < nb.size(); ++a) {
      for (std::size_t b = a + 1; b < nb.size(); ++b) {
        if (!adj[nb[a]][nb[b]]) {
          adj[nb[a]][nb[b]] = adj[nb[b]][nb[a]] = 1;
          out.graph.add_edge(nb[a], nb[b]);
          ++out.fill_edges;
        }
      }
    }
    eliminated[best] = true;
    out.ordering.push_back(best);
  }
  return out;
}

std::vector<std::vector<int>> max_cliques(const SparsityGraph& g, const std::vector<int>& ordering) {
  if (!is_perfect_elimination_ordering(g, ordering)) {
    throw std::invalid_argument("ordering is not a perfect elimination ordering");
  }
  const int n = g.size();
  std::vector<int> pos(n);
  for (int i = 0; i < n; ++i) pos[ordering[i]] = i;

  std::vector<std::vector<int>> candidates;
  for (int v : ordering) {
    std::vector<int> c{v};
    for (int u : g.neighbors(v)) {
      if (pos[u] > pos[v]) c.push_back(u);
    }
    std::sort(c.begin(), c.end());
    candidates.push_back(std::move(c));
  }
  // A candidate can only be contained in one generated earlier.
  std::vector<std::vector<int>> cliques;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    bool maximal = true;
    for (std::size_t k = 0; k < i && maximal; ++k) {
      if (candidates[k].size() > candidates[i].size() &&
          std::includes(candidates[k].begin(), candidates[k].end(), candidates[i].begin(),
                        candidates[i].end())) {
        maximal = false;
      }
    }
    if (maximal) cliques.push_back(candidates[i]);
  }
  return cliques;
}

std::vector<int> CliqueTree::private_nodes(int c) const {
  std::vector<int> out;
  std::set_difference(cliques[c].begin(), cliques[c].end(), separators[c].begin(),
                      separators[c].end(), std::back_inserter(out));
  return out;
}

namespace {

std::vector<int> intersect(const std::vector<int>& a, const std::vector<int>& b) {
  std::vector<int> out;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

struct DisjointSet {
  std::vector<int> parent;
  explicit DisjointSet(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  bool unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    parent[std::max(a, b)] = std::min(a, b);
    return true;
  }
};

}  // namespace

CliqueTree build_clique_tree(const SparsityGraph& g, const std::vector<std::vector<int>>& cliques) {
  const int K = static_cast<int>(cliques.size());
  if (K == 0) throw std::invalid_argument("clique tree needs at least one clique");
  CliqueTree tree;
  tree.cliques = cliques;

  // Root: most stage-0 supernodes, then larger, then lower index.
  auto stage0 = [&](int c) {
    int count = 0;
    for (int v : cliques[c]) count += g.node(v).stage == 0 ? 1 : 0;
    return count;
  };
  tree.root = 0;
  for (int c = 1; c < K; ++c) {
    const int a = stage0(c);
    const int b = stage0(tree.root);
    if (a > b || (a == b && cliques[c].size() > cliques[tree.root].size())) tree.root = c;
  }

  struct Edge {
    int weight, a, b;
  };
  std::vector<Edge> edges;
  for (int a = 0; a < K; ++a) {
    for (int b = a + 1; b < K; ++b) {
      const int w = static_cast<int>(intersect(cliques[a], cliques[b]).size());
      if (w > 0) edges.push_back({w, a, b});
    }
  }
  std::stable_sort(edges.begin(), edges.end(),
                   [](const Edge& x, const Edge& y) { return x.weight > y.weight; });
  DisjointSet dsu(K);
  std::vector<std::vector<int>> adj(K);
  for (const Edge& e : edges) {
    if (dsu.unite(e.a, e.b)) {
      adj[e.a].push_back(e.b);
      adj[e.b].push_back(e.a);
    }
  }
  for (int c = 0; c < K; ++c) {
    if (dsu.find(c) != dsu.find(tree.root) && dsu.find(c) == c) {
      dsu.unite(c, tree.root);
      adj[c].push_back(tree.root);
      adj[tree.root].push_back(c);
    }
  }

  tree.parent.assign(K, -1);
  tree.children.assign(K, {});
  tree.separators.assign(K, {});
  tree.depth.assign(K, 0);
  std::vector<bool> seen(K, false);
  std::queue<int> frontier;
  frontier.push(tree.root);
  seen[tree.root] = true;
  while (!frontier.empty()) {
    const int c = frontier.front();
    frontier.pop();
    std::sort(adj[c].begin(), adj[c].end());
    for (int n : adj[c]) {
      if (seen[n]) continue;
      seen[n] = true;
      tree.parent[n] = c;
      tree.depth[n] = tree.depth[c] + 1;
      tree.children[c].push_back(n);
      tree.separators[n] = intersect(cliques[n], cliques[c]);
      frontier.push(n);
    }
  }

  // Iterative post-order: children in ascending index order, then the parent.
  std::vector<std::pair<int, std::size_t>> stack{{tree.root, 0}};
  while (!stack.empty()) {
    auto& [c, next] = stack.back();
    if (next < tree.children[c].size()) {
      const int child = tree.children[c][next++];
      stack.emplace_back(child, 0);
    } else {
      tree.postorder.push_back(c);
      stack.pop_back();
    }
  }
  return tree;
}

bool has_running_intersection(const CliqueTree& tree, int num_nodes) {
  std::vector<int> count(num_nodes, 0);
  std::vector<int> links(num_nodes, 0);
  for (int c = 0; c < tree.size(); ++c) {
    for (int v : tree.cliques[c]) {
      ++count[v];
      const int p = tree.parent[c];
      if (p >= 0 && std::binary_search(tree.cliques[p].begin(), tree.cliques[p].end(), v)) ++links[v];
    }
  }
  for (int v = 0; v < num_nodes; ++v) {
    if (count[v] > 0 && links[v] != count[v] - 1) return false;
  }
  return true;
}

void assign_terms(const std::vector<Term>& terms, CliqueTree& tree) {
  tree.assignment.assign(terms.size(), -1);
  for (std::size_t i = 0; i < terms.size(); ++i) {
    const auto& scope = terms[i].scope;
    int best = -1;
    for (int c = 0; c < tree.size(); ++c) {
      const auto& cl = tree.cliques[c];
      if (!std::includes(cl.begin(), cl.end(), scope.begin(), scope.end())) continue;
      if (best < 0 || tree.depth[c] < tree.depth[best]) best = c;
    }
    if (best < 0) {
      throw std::logic_error("term '" + terms[i].name + "' is not covered by any clique");
    }
    tree.assignment[i] = best;
  }
}

namespace {

std::string quoted(const std::string& s) {
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"' || ch == '\\') out += '\\';
    out += ch;
  }
  return out + "\"";
}

}  // namespace

std::string clique_label(const std::vector<int>& clique, const SparsityGraph& g) {
  std::string out = "{";
  for (std::size_t i = 0; i < clique.size(); ++i) {
    if (i) out += ", ";
    out += g.node(clique[i]).label;
  }
  return out + "}";
}

std::string to_dot(const SparsityGraph& g, const std::string& name) {
  std::ostringstream os;
  os << "graph " << name << " {\n";
  for (int v = 0; v < g.size(); ++v) os << "  n" << v << " [label=" << quoted(g.node(v).label) << "];\n";
  for (int v = 0; v < g.size(); ++v) {
    for (int u : g.neighbors(v)) {
      if (u > v) os << "  n" << v << " -- n" << u << ";\n";
    }
  }
  os << "}\n";
  return os.str();
}

std::string to_dot(const CliqueTree& tree, const SparsityGraph& g, const std::string& name) {
  std::ostringstream os;
  os << "graph " << name << " {\n";
  for (int c = 0; c < tree.size(); ++c) {
    os << "  c" << c << " [shape=box, label=" << quoted(clique_label(tree.cliques[c], g)) << "];\n";
  }
  for (int c = 0; c < tree.size(); ++c) {
    if (tree.parent[c] >= 0) {
      os << "  c" << tree.parent[c] << " -- c" << c
         << " [label=" << quoted(clique_label(tree.separators[c], g)) << "];\n";
    }
  }
  os << "}\n";
  return os.str();
}

}  // namespace rmpc
