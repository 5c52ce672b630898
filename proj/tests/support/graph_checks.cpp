#include "graph_checks.hpp"

#include <algorithm>
#include <cctype>
#include <set>

namespace rmpc::testing {

namespace {

class DotLexer {
 public:
  explicit DotLexer(const std::string& text) : text_(text) {}

  // Returns "" at end of input.
  std::string next() {
    quoted_ = false;
    skip_space();
    if (pos_ >= text_.size()) return "";
    const char c = text_[pos_];
    if (c == '"') {
      quoted_ = true;
      return quoted();
    }
    if (c == '-' && pos_ + 1 < text_.size() && text_[pos_ + 1] == '-') {
      pos_ += 2;
      return "--";
    }
    if (std::string("{}[];=,").find(c) != std::string::npos) {
      ++pos_;
      return std::string(1, c);
    }
    if (std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.' || c == '-') {
      const std::size_t start = pos_;
      while (pos_ < text_.size()) {
        const char d = text_[pos_];
        if (!(std::isalnum(static_cast<unsigned char>(d)) || d == '_' || d == '.')) break;
        ++pos_;
      }
      if (pos_ == start) ++pos_;
      return text_.substr(start, pos_ - start);
    }
    throw std::runtime_error(std::string("unexpected character '") + c + "'");
  }

  std::string peek() {
    const std::size_t save = pos_;
    const bool q = quoted_;
    std::string tok = next();
    pos_ = save;
    quoted_ = q;
    return tok;
  }

  bool last_quoted() const { return quoted_; }

 private:
  void skip_space() {
    while (pos_ < text_.size()) {
      if (std::isspace(static_cast<unsigned char>(text_[pos_]))) {
        ++pos_;
      } else if (text_.compare(pos_, 2, "//") == 0) {
        while (pos_ < text_.size() && text_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  std::string quoted() {
    std::string out;
    ++pos_;
    while (pos_ < text_.size() && text_[pos_] != '"') {
      if (text_[pos_] == '\\' && pos_ + 1 < text_.size()) ++pos_;
      out += text_[pos_++];
    }
    if (pos_ >= text_.size()) throw std::runtime_error("unterminated string");
    ++pos_;
    return out;
  }

  const std::string& text_;
  std::size_t pos_ = 0;
  bool quoted_ = false;
};

void expect(DotLexer& lex, const std::string& tok) {
  const std::string got = lex.next();
  if (got != tok) throw std::runtime_error("expected '" + tok + "', got '" + got + "'");
}

std::string identifier(DotLexer& lex) {
  const std::string tok = lex.next();
  if (lex.last_quoted()) return tok;
  if (tok.empty() || tok == "--" || std::string("{}[];=,").find(tok[0]) != std::string::npos) {
    throw std::runtime_error("expected identifier, got '" + tok + "'");
  }
  return tok;
}

std::map<std::string, std::string> attributes(DotLexer& lex) {
  std::map<std::string, std::string> out;
  if (lex.peek() != "[") return out;
  lex.next();
  while (lex.peek() != "]") {
    const std::string key = identifier(lex);
    expect(lex, "=");
    out[key] = identifier(lex);
    if (lex.peek() == "," || lex.peek() == ";") lex.next();
  }
  lex.next();
  return out;
}

int head(const CliqueTree& tree, int c) {
  while (tree.children[c].size() == 1) c = tree.children[c][0];
  return c;
}

void collect_scenarios(const CliqueTree& tree, const SparsityGraph& g, int c,
                       std::set<int>& out) {
  for (int v : tree.private_nodes(c)) {
    const auto& n = g.node(v);
    if ((n.kind == Supernode::Kind::State || n.kind == Supernode::Kind::Input) && n.stage > 0) {
      out.insert(n.scenario);
    }
  }
  for (int ch : tree.children[c]) collect_scenarios(tree, g, ch, out);
}

}  // namespace

std::vector<DotGraph> parse_dot(const std::string& text) {
  DotLexer lex(text);
  std::vector<DotGraph> graphs;
  while (!lex.peek().empty()) {
    expect(lex, "graph");
    DotGraph g;
    g.name = identifier(lex);
    expect(lex, "{");
    while (lex.peek() != "}") {
      const std::string id = identifier(lex);
      if (lex.peek() == "--") {
        lex.next();
        const std::string other = identifier(lex);
        attributes(lex);
        g.edges.emplace_back(id, other);
        g.nodes.try_emplace(id);
        g.nodes.try_emplace(other);
      } else if (lex.peek() == "=") {
        lex.next();
        identifier(lex);  // graph-level attribute
      } else {
        auto attrs = attributes(lex);
        if (id != "node" && id != "edge" && id != "graph") g.nodes[id] = std::move(attrs);
      }
      if (lex.peek() == ";") lex.next();
    }
    lex.next();
    graphs.push_back(std::move(g));
  }
  return graphs;
}

ShapeCheck check_two_level_shape(const CliqueTree& tree, const SparsityGraph& g) {
  ShapeCheck r;
  const int top = head(tree, tree.root);
  if (tree.children[top].size() != 2) {
    r.reason = "root does not split into two branches";
    return r;
  }
  std::vector<std::set<int>> branch_sets;
  for (int b : tree.children[top]) {
    const int hb = head(tree, b);
    if (tree.children[hb].size() != 2) {
      r.reason = "branch clique does not split into two chains";
      return r;
    }
    std::set<int> both;
    for (int chain : tree.children[hb]) {
      if (!tree.children[head(tree, chain)].empty()) {
        r.reason = "chain splits further";
        return r;
      }
      std::set<int> sc;
      collect_scenarios(tree, g, chain, sc);
      if (sc.size() != 1) {
        r.reason = "chain mixes scenarios";
        return r;
      }
      r.chain_scenarios.push_back(*sc.begin());
      both.insert(*sc.begin());
    }
    if (both.size() != 2) {
      r.reason = "both chains of a branch hold the same scenario";
      return r;
    }
    branch_sets.push_back(both);
  }
  std::set<int> all(branch_sets[0]);
  all.insert(branch_sets[1].begin(), branch_sets[1].end());
  if (all.size() != 4) {
    r.reason = "chains do not cover four distinct scenarios";
    return r;
  }
  r.ok = true;
  return r;
}

bool is_path(const CliqueTree& tree) {
  return std::all_of(tree.children.begin(), tree.children.end(),
                     [](const std::vector<int>& ch) { return ch.size() <= 1; });
}

}  // namespace rmpc::testing
