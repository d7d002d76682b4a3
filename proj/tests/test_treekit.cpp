#include <algorithm>
#include <random>

#include "doctest.h"
#include "sgn/errors.hpp"
#include "sgn/treekit.hpp"

using namespace sgn;

namespace {

SentenceTree random_tree(std::size_t n, std::mt19937_64& rng) {
  std::vector<int> parents{SentenceTree::kNoParent};
  for (std::size_t i = 1; i < n; ++i) parents.push_back(std::uniform_int_distribution<int>(0, static_cast<int>(i) - 1)(rng));
  return SentenceTree::from_parents(parents);
}

// Leaf-label sets of internal nodes, found by walking every leaf up to the root.
std::set<std::vector<int>> spans_by_ancestry(const SentenceTree& t) {
  std::map<int, std::vector<int>> cover;
  for (const auto& [leaf, label] : t.leaf_labels()) {
    if (t.node_count() == 1) break;
    for (int u = t.parent(static_cast<std::size_t>(leaf)); u != SentenceTree::kNoParent;
         u = t.parent(static_cast<std::size_t>(u))) {
      cover[u].push_back(label);
    }
  }
  std::set<std::vector<int>> out;
  for (auto& [u, v] : cover) {
    std::sort(v.begin(), v.end());
    out.insert(v);
  }
  return out;
}

double f1_oracle(const SentenceTree& p, const SentenceTree& r) {
  const auto a = spans_by_ancestry(p), b = spans_by_ancestry(r);
  if (a.empty() && b.empty()) return 1.0;
  double hit = 0;
  for (const auto& s : a) hit += b.count(s);
  if (hit == 0) return 0.0;
  const double prec = hit / static_cast<double>(a.size()), rec = hit / static_cast<double>(b.size());
  return 2 * prec * rec / (prec + rec);
}

}  // namespace

TEST_CASE("encode on small trees") {
  CHECK(encode_tree(SentenceTree::from_parents({-1, 0, 1})).to_string() == "101");
  CHECK(encode_tree(SentenceTree::from_parents({-1, 0, 0})).to_string() == "110");
  const Edge edges[] = {{0, 1}, {0, 2}, {2, 3}};
  CHECK(encode_tree(canonical_order(edges, 0)).to_string() == "110001");
  CHECK(encode_tree(SentenceTree()).size() == 0);
}

TEST_CASE("decode on small vectors and malformed input") {
  const SentenceTree path = decode_vector(AdjacencyVector::parse("101"));
  CHECK(path.parents() == std::vector<int>{-1, 0, 1});
  CHECK(path.leaf_count() == 1);
  CHECK_THROWS_AS(AdjacencyVector::parse("11"), ShapeError);
  CHECK_THROWS_AS(AdjacencyVector::parse("100"), InvalidTreeError);  // row 2 has no parent
  CHECK_THROWS_AS(AdjacencyVector::parse("111"), InvalidTreeError);  // row 2 has two
  CHECK_THROWS_AS(AdjacencyVector::parse("1x1"), ShapeError);
}

TEST_CASE("codec round trips on 1000 random trees") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::size_t> size(1, kDefaultMaxNodes);
  for (int i = 0; i < 1000; ++i) {
    const SentenceTree t = random_tree(size(rng), rng);
    const AdjacencyVector v = encode_tree(t);
    REQUIRE(v.size() == t.node_count() * (t.node_count() - 1) / 2);
    REQUIRE(decode_vector(v) == t);
    REQUIRE(encode_tree(decode_vector(v)) == v);
    REQUIRE(AdjacencyVector::parse(v.to_string()) == v);
  }
}

TEST_CASE("canonical order puts the smallest sentence first") {
  const Edge star[] = {{0, 1}, {0, 2}, {0, 3}};
  const SentenceTree t = canonical_order(star, 0, {{1, 2}, {2, 0}, {3, 1}});
  CHECK(t.leaf_labels() == std::map<int, int>{{1, 0}, {2, 1}, {3, 2}});
  CHECK(t.bracketed() == "(s0 s1 s2)");
  CHECK(canonical_order(std::span<const Edge>{}, 0).node_count() == 1);
}

TEST_CASE("canonical order breaks ties with leaves before internal nodes") {
  // Root has an internal child over {s1, s2} and a leaf s0; s1 hangs deeper.
  const Edge edges[] = {{0, 5}, {0, 7}, {7, 8}, {7, 9}};
  const SentenceTree t = canonical_order(edges, 0, {{5, 0}, {8, 1}, {9, 2}});
  CHECK(t.bracketed() == "(s0 (s1 s2))");
  CHECK(t.parents() == std::vector<int>{-1, 0, 0, 2, 2});
}

TEST_CASE("canonical order rejects non-trees") {
  const Edge cycle[] = {{0, 1}, {1, 2}, {2, 0}};
  CHECK_THROWS_AS(canonical_order(cycle, 0), InvalidTreeError);
  const Edge split[] = {{0, 1}, {2, 3}};
  CHECK_THROWS_AS(canonical_order(split, 0), InvalidTreeError);
  const Edge loop[] = {{0, 0}};
  CHECK_THROWS_AS(canonical_order(loop, 0), InvalidTreeError);
}

TEST_CASE("canonical order is idempotent") {
  std::mt19937_64 rng(8);
  for (int i = 0; i < 300; ++i) {
    const SentenceTree t = random_tree(std::uniform_int_distribution<std::size_t>(1, 30)(rng), rng);
    std::vector<Edge> edges;
    for (std::size_t k = 1; k < t.node_count(); ++k) edges.emplace_back(t.parent(k), static_cast<int>(k));
    const SentenceTree once = canonical_order(edges, 0, t.leaf_labels());
    std::vector<Edge> again;
    for (std::size_t k = 1; k < once.node_count(); ++k) again.emplace_back(once.parent(k), static_cast<int>(k));
    REQUIRE(canonical_order(again, 0, once.leaf_labels()) == once);
  }
}

TEST_CASE("sentence tree validation") {
  CHECK_THROWS_AS(SentenceTree({-1, 2, 0}, {{1, 0}, {2, 1}}), InvalidTreeError);
  CHECK_THROWS_AS(SentenceTree({-1, 0, 0}, {{1, 0}}), InvalidTreeError);
  CHECK_THROWS_AS(SentenceTree({-1, 0, 0}, {{1, 0}, {2, 0}}), InvalidTreeError);
  CHECK_THROWS_AS(SentenceTree({-1, 0, 0}, {{0, 2}, {1, 0}, {2, 1}}), InvalidTreeError);
  const SentenceTree t({-1, 0, 0, 1, 1}, {{2, 2}, {3, 0}, {4, 1}});
  CHECK(t.bracketed() == "((s0 s1) s2)");
  CHECK(t.depths() == std::vector<int>{0, 1, 1, 2, 2});
}

TEST_CASE("unlabeled F1 against the span oracle") {
  const SentenceTree left = SentenceTree::from_parents({-1, 0, 0, 1, 1, 3, 3});   // (((s0 s1) s2) s3)
  const SentenceTree right = SentenceTree::from_parents({-1, 0, 0, 2, 2, 4, 4});  // (s0 (s1 (s2 s3)))
  CHECK(left.bracketed() == "(((s0 s1) s2) s3)");
  CHECK(right.bracketed() == "(s0 (s1 (s2 s3)))");
  CHECK(unlabeled_f1(left, left) == 1.0);
  CHECK(unlabeled_f1(left, right) == doctest::Approx(f1_oracle(left, right)));
  CHECK(unlabeled_f1(left, right) == doctest::Approx(1.0 / 3.0));

  const SentenceTree flat = SentenceTree::from_parents({-1, 0, 0, 0, 0});
  const SpanScore s = span_scores(flat, right);
  CHECK(s.precision == 1.0);
  CHECK(s.recall == doctest::Approx(1.0 / 3.0));
  CHECK(s.f1 == doctest::Approx(f1_oracle(flat, right)));

  CHECK_THROWS_AS(unlabeled_f1(left, SentenceTree::from_parents({-1, 0, 0})), ComparabilityError);

  std::mt19937_64 rng(77);
  for (int i = 0; i < 300; ++i) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(2, 25)(rng);
    SentenceTree a = random_tree(n, rng), b = random_tree(n, rng);
    while (b.leaf_count() != a.leaf_count()) b = random_tree(std::uniform_int_distribution<std::size_t>(2, 40)(rng), rng);
    REQUIRE(unlabeled_f1(a, b) == doctest::Approx(f1_oracle(a, b)).epsilon(1e-12));
  }
}
