#include "sgn/treekit.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <tuple>

#include "sgn/errors.hpp"

namespace sgn {

SentenceTree::SentenceTree() : parents_{kNoParent}, labels_{{0, 0}} {}

SentenceTree::SentenceTree(std::vector<int> parents, std::map<int, int> leaf_labels)
    : parents_(std::move(parents)), labels_(std::move(leaf_labels)) {
  if (parents_.empty()) throw InvalidTreeError("tree needs at least one node");
  if (parents_[0] != kNoParent) throw InvalidTreeError("node 0 must be the root");
  for (std::size_t i = 1; i < parents_.size(); ++i) {
    if (parents_[i] < 0 || static_cast<std::size_t>(parents_[i]) >= i) {
      throw InvalidTreeError("node " + std::to_string(i) + " has parent " + std::to_string(parents_[i]) +
                             "; parents must precede children");
    }
  }
  std::vector<bool> seen(labels_.size(), false);
  std::size_t leaves = 0;
  for (std::size_t i = 0; i < parents_.size(); ++i) {
    if (!is_leaf(i)) {
      if (labels_.count(static_cast<int>(i))) {
        throw InvalidTreeError("internal node " + std::to_string(i) + " carries a sentence label");
      }
      continue;
    }
    ++leaves;
    auto it = labels_.find(static_cast<int>(i));
    if (it == labels_.end()) throw InvalidTreeError("leaf " + std::to_string(i) + " has no sentence label");
    const int s = it->second;
    if (s < 0 || static_cast<std::size_t>(s) >= seen.size() || seen[static_cast<std::size_t>(s)]) {
      throw InvalidTreeError("sentence labels must be a permutation of 0..leaves-1");
    }
    seen[static_cast<std::size_t>(s)] = true;
  }
  if (leaves != labels_.size()) throw InvalidTreeError("labels reference non-leaf nodes");
}

SentenceTree SentenceTree::from_parents(std::vector<int> parents) {
  if (parents.empty()) throw InvalidTreeError("tree needs at least one node");
  std::vector<std::vector<int>> kids(parents.size());
  for (std::size_t i = 1; i < parents.size(); ++i) {
    if (parents[i] < 0 || static_cast<std::size_t>(parents[i]) >= i) {
      throw InvalidTreeError("node " + std::to_string(i) + " has parent " + std::to_string(parents[i]) +
                             "; parents must precede children");
    }
    kids[static_cast<std::size_t>(parents[i])].push_back(static_cast<int>(i));
  }
  std::map<int, int> labels;
  std::vector<int> stack{0};
  int next = 0;
  while (!stack.empty()) {
    const int node = stack.back();
    stack.pop_back();
    const auto& ch = kids[static_cast<std::size_t>(node)];
    if (ch.empty()) labels[node] = next++;
    for (auto it = ch.rbegin(); it != ch.rend(); ++it) stack.push_back(*it);
  }
  return SentenceTree(std::move(parents), std::move(labels));
}

std::vector<std::vector<int>> SentenceTree::children() const {
  std::vector<std::vector<int>> kids(parents_.size());
  for (std::size_t i = 1; i < parents_.size(); ++i) kids[static_cast<std::size_t>(parents_[i])].push_back(static_cast<int>(i));
  return kids;
}

bool SentenceTree::is_leaf(std::size_t node) const {
  if (parents_.size() == 1) return true;
  for (std::size_t i = node + 1; i < parents_.size(); ++i)
    if (parents_[i] == static_cast<int>(node)) return false;
  return true;
}

std::vector<int> SentenceTree::depths() const {
  std::vector<int> d(parents_.size(), 0);
  for (std::size_t i = 1; i < parents_.size(); ++i) d[i] = d[static_cast<std::size_t>(parents_[i])] + 1;
  return d;
}

std::string SentenceTree::bracketed() const {
  const auto kids = children();
  // Iterative post-order keeps deep combs off the call stack.
  std::vector<std::string> text(parents_.size());
  for (std::size_t i = parents_.size(); i-- > 0;) {
    if (kids[i].empty()) {
      text[i] = "s" + std::to_string(labels_.at(static_cast<int>(i)));
      continue;
    }
    std::string s = "(";
    for (std::size_t k = 0; k < kids[i].size(); ++k) {
      if (k) s += ' ';
      s += text[static_cast<std::size_t>(kids[i][k])];
    }
    s += ')';
    text[i] = std::move(s);
  }
  return text[0];
}

std::size_t triangular_node_count(std::size_t len) {
  const auto n = static_cast<std::size_t>(std::llround((1.0 + std::sqrt(1.0 + 8.0 * static_cast<double>(len))) / 2.0));
  return n * (n - 1) / 2 == len ? n : 0;
}

AdjacencyVector::AdjacencyVector(std::vector<std::uint8_t> bits) : bits_(std::move(bits)) {
  nodes_ = triangular_node_count(bits_.size());
  if (nodes_ == 0) {
    throw ShapeError("adjacency vector length " + std::to_string(bits_.size()) + " is not a triangular number");
  }
  for (std::size_t i = 1; i < nodes_; ++i) {
    std::size_t ones = 0;
    for (std::uint8_t b : row(i)) {
      if (b > 1) throw ShapeError("adjacency vector entries must be 0 or 1");
      ones += b;
    }
    if (ones != 1) {
      throw InvalidTreeError("adjacency row " + std::to_string(i) + " has " + std::to_string(ones) +
                             " set bits; a tree row needs exactly one");
    }
  }
}

AdjacencyVector AdjacencyVector::parse(std::string_view text) {
  std::vector<std::uint8_t> bits;
  bits.reserve(text.size());
  for (char c : text) {
    if (c != '0' && c != '1') throw ShapeError("adjacency text may only contain 0 and 1");
    bits.push_back(static_cast<std::uint8_t>(c - '0'));
  }
  return AdjacencyVector(std::move(bits));
}

std::span<const std::uint8_t> AdjacencyVector::row(std::size_t node) const {
  const std::size_t start = node * (node - 1) / 2;
  return {bits_.data() + start, node};
}

int AdjacencyVector::parent_of(std::size_t node) const {
  const auto r = row(node);
  return static_cast<int>(std::find(r.begin(), r.end(), 1) - r.begin());
}

std::string AdjacencyVector::to_string() const {
  std::string s;
  s.reserve(bits_.size());
  for (auto b : bits_) s += static_cast<char>('0' + b);
  return s;
}

AdjacencyVector encode_tree(const SentenceTree& tree) {
  const std::size_t n = tree.node_count();
  std::vector<std::uint8_t> bits(n * (n - 1) / 2, 0);
  for (std::size_t i = 1; i < n; ++i) bits[i * (i - 1) / 2 + static_cast<std::size_t>(tree.parent(i))] = 1;
  return AdjacencyVector(std::move(bits));
}

SentenceTree decode_vector(const AdjacencyVector& bits) {
  std::vector<int> parents(bits.node_count(), SentenceTree::kNoParent);
  for (std::size_t i = 1; i < bits.node_count(); ++i) parents[i] = bits.parent_of(i);
  return SentenceTree::from_parents(std::move(parents));
}

SentenceTree decode_vector(std::span<const std::uint8_t> bits) {
  return decode_vector(AdjacencyVector(std::vector<std::uint8_t>(bits.begin(), bits.end())));
}

SentenceTree canonical_order(std::span<const Edge> edges, int root, const std::map<int, int>& leaf_labels) {
  std::map<int, std::vector<int>> adj;
  adj[root];
  for (const auto& [a, b] : edges) {
    if (a == b) throw InvalidTreeError("self-loop on node " + std::to_string(a));
    adj[a].push_back(b);
    adj[b].push_back(a);
  }
  if (edges.size() + 1 != adj.size()) {
    throw InvalidTreeError("edge set with " + std::to_string(edges.size()) + " edges over " +
                           std::to_string(adj.size()) + " nodes is not a tree");
  }

  // Orient away from the root; revisiting a node means a cycle.
  std::map<int, int> parent_of{{root, root}};
  std::vector<int> order{root};
  for (std::size_t k = 0; k < order.size(); ++k) {
    const int u = order[k];
    for (int v : adj[u]) {
      if (v == parent_of[u] && u != root) continue;
      if (parent_of.count(v)) throw InvalidTreeError("edge set contains a cycle");
      parent_of[v] = u;
      order.push_back(v);
    }
  }
  if (order.size() != adj.size()) throw InvalidTreeError("edge set is disconnected");

  std::map<int, std::vector<int>> kids;
  for (int u : order) kids[u];
  for (std::size_t k = 1; k < order.size(); ++k) kids[parent_of[order[k]]].push_back(order[k]);

  const bool labelled = !leaf_labels.empty();
  if (labelled) {
    for (int u : order) {
      const bool leaf = kids[u].empty();
      if (leaf != static_cast<bool>(leaf_labels.count(u))) {
        throw InvalidTreeError("leaf labels must cover exactly the leaves (node " + std::to_string(u) + ")");
      }
    }
  }

  // Smallest sentence index in each subtree, bottom-up.
  constexpr int kNone = std::numeric_limits<int>::max();
  std::map<int, int> min_label;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const int u = *it;
    int m = kNone;
    if (kids[u].empty()) {
      if (labelled) m = leaf_labels.at(u);
    } else {
      for (int v : kids[u]) m = std::min(m, min_label[v]);
    }
    min_label[u] = m;
  }
  for (auto& [u, ch] : kids) {
    std::sort(ch.begin(), ch.end(), [&](int a, int b) {
      return std::make_tuple(min_label[a], !kids[a].empty(), a) < std::make_tuple(min_label[b], !kids[b].empty(), b);
    });
  }

  std::map<int, int> new_id;
  std::vector<int> parents;
  std::deque<int> queue{root};
  while (!queue.empty()) {
    const int u = queue.front();
    queue.pop_front();
    new_id[u] = static_cast<int>(parents.size());
    parents.push_back(u == root ? SentenceTree::kNoParent : new_id[parent_of[u]]);
    for (int v : kids[u]) queue.push_back(v);
  }

  if (!labelled) return SentenceTree::from_parents(std::move(parents));
  std::map<int, int> labels;
  for (const auto& [u, s] : leaf_labels) labels[new_id.at(u)] = s;
  return SentenceTree(std::move(parents), std::move(labels));
}

std::set<std::vector<int>> internal_spans(const SentenceTree& tree) {
  const auto kids = tree.children();
  std::vector<std::vector<int>> cover(tree.node_count());
  std::set<std::vector<int>> spans;
  for (std::size_t i = tree.node_count(); i-- > 0;) {
    if (kids[i].empty()) {
      cover[i] = {tree.leaf_labels().at(static_cast<int>(i))};
      continue;
    }
    for (int c : kids[i]) {
      auto& src = cover[static_cast<std::size_t>(c)];
      cover[i].insert(cover[i].end(), src.begin(), src.end());
    }
    std::sort(cover[i].begin(), cover[i].end());
    spans.insert(cover[i]);
  }
  return spans;
}

SpanScore span_scores(const SentenceTree& predicted, const SentenceTree& reference) {
  if (predicted.leaf_count() != reference.leaf_count()) {
    throw ComparabilityError("trees cover " + std::to_string(predicted.leaf_count()) + " and " +
                             std::to_string(reference.leaf_count()) + " sentences");
  }
  const auto p = internal_spans(predicted);
  const auto r = internal_spans(reference);
  SpanScore s;
  if (p.empty() && r.empty()) return {1.0, 1.0, 1.0};
  if (p.empty() || r.empty()) return s;
  std::size_t hit = 0;
  for (const auto& span : p) hit += r.count(span);
  s.precision = static_cast<double>(hit) / static_cast<double>(p.size());
  s.recall = static_cast<double>(hit) / static_cast<double>(r.size());
  s.f1 = hit == 0 ? 0.0 : 2.0 * s.precision * s.recall / (s.precision + s.recall);
  return s;
}

double unlabeled_f1(const SentenceTree& predicted, const SentenceTree& reference) {
  return span_scores(predicted, reference).f1;
}

}  // namespace sgn
