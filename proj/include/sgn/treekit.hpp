#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace sgn {

// 19 sentences under binary branching give at most 37 nodes.
inline constexpr std::size_t kDefaultMaxNodes = 39;

// Rooted tree over paragraph sentences. Node 0 is the root and every other
// node's parent has a smaller id, so the parent array alone is a valid tree.
// Leaves carry sentence indices; internal nodes carry none.
class SentenceTree {
 public:
  static constexpr int kNoParent = -1;

  // Single-node tree whose root is the only sentence.
  SentenceTree();
  SentenceTree(std::vector<int> parents, std::map<int, int> leaf_labels);

  // Leaves are labelled 0, 1, ... in depth-first preorder (children by id).
  static SentenceTree from_parents(std::vector<int> parents);

  std::size_t node_count() const { return parents_.size(); }
  int parent(std::size_t node) const { return parents_[node]; }
  const std::vector<int>& parents() const { return parents_; }
  const std::map<int, int>& leaf_labels() const { return labels_; }
  std::size_t leaf_count() const { return labels_.size(); }

  std::vector<std::vector<int>> children() const;
  bool is_leaf(std::size_t node) const;
  std::vector<int> depths() const;

  // "(s0 ((s1 s2) s3))"; a lone leaf prints as "s0".
  std::string bracketed() const;

  friend bool operator==(const SentenceTree&, const SentenceTree&) = default;

 private:
  std::vector<int> parents_;
  std::map<int, int> labels_;
};

// Lower-triangular adjacency rows under the tree's node ordering: row i
// (i = 1..n-1) has i entries and entry j is set iff parent(i) == j.
class AdjacencyVector {
 public:
  // Throws ShapeError when the length is not n(n-1)/2 and InvalidTreeError
  // when a row does not contain exactly one set bit.
  explicit AdjacencyVector(std::vector<std::uint8_t> bits);
  // Parses the "0101..." text form.
  static AdjacencyVector parse(std::string_view text);

  std::size_t node_count() const { return nodes_; }
  std::size_t size() const { return bits_.size(); }
  const std::vector<std::uint8_t>& bits() const { return bits_; }
  std::span<const std::uint8_t> row(std::size_t node) const;
  int parent_of(std::size_t node) const;
  std::string to_string() const;

  friend bool operator==(const AdjacencyVector&, const AdjacencyVector&) = default;

 private:
  std::vector<std::uint8_t> bits_;
  std::size_t nodes_ = 1;
};

// Returns n when len == n(n-1)/2, otherwise 0.
std::size_t triangular_node_count(std::size_t len);

AdjacencyVector encode_tree(const SentenceTree& tree);
SentenceTree decode_vector(const AdjacencyVector& bits);
SentenceTree decode_vector(std::span<const std::uint8_t> bits);

using Edge = std::pair<int, int>;

// Renumbers an undirected tree breadth-first from `root`. Children of a node
// are ordered by the smallest sentence index below them, leaves first on a
// tie, then by input id. leaf_labels is keyed by input node id; when empty,
// leaves get preorder labels after renumbering.
SentenceTree canonical_order(std::span<const Edge> edges, int root,
                             const std::map<int, int>& leaf_labels = {});

// Sets of sentence indices covered by each internal node.
std::set<std::vector<int>> internal_spans(const SentenceTree& tree);

struct SpanScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Unlabeled constituency scores over internal-node spans. Trees must have
// the same number of leaves.
SpanScore span_scores(const SentenceTree& predicted, const SentenceTree& reference);
double unlabeled_f1(const SentenceTree& predicted, const SentenceTree& reference);

}  // namespace sgn
