#include <cmath>
#include <map>

#include "doctest.h"
#include "helpers.hpp"
#include "sgn/errors.hpp"
#include "sgn/gradcheck.hpp"
#include "sgn/img2tree.hpp"

using namespace sgn;

namespace {

TreeGenConfig small_gen(std::size_t width = 8, std::size_t max_nodes = 6) {
  TreeGenConfig c;
  c.width = width;
  c.layers = 2;
  c.max_nodes = max_nodes;
  return c;
}

// Every parent array with p[i] < i, up to `max_nodes` nodes.
std::vector<std::vector<int>> all_parent_arrays(std::size_t max_nodes) {
  std::vector<std::vector<int>> out{{SentenceTree::kNoParent}};
  for (std::size_t k = 0; k < out.size(); ++k) {
    const auto base = out[k];
    if (base.size() >= max_nodes) continue;
    for (int p = 0; p < static_cast<int>(base.size()); ++p) {
      auto next = base;
      next.push_back(p);
      out.push_back(next);
    }
  }
  return out;
}

double log_sigmoid(double p, bool on) { return std::log(on ? p : 1.0 - p); }

// Replays the stepper row by row and scores each bit independently.
double replay_log_likelihood(const TreeGenerator& gen, const Matrix& f, const std::vector<int>& parents) {
  TreeGenerator::Stepper st(gen, f);
  double ll = 0;
  const std::size_t n = parents.size();
  for (std::size_t i = 1; i <= n; ++i) {
    const TreeStep s = st.distribution();
    if (i < n) {
      for (std::size_t j = 0; j < i; ++j) ll += log_sigmoid(s.link[j], static_cast<int>(j) == parents[i]);
      ll += log_sigmoid(s.stop, false);
      st.advance(static_cast<std::size_t>(parents[i]));
    } else if (n < gen.config().max_nodes) {
      ll += log_sigmoid(s.stop, true);
    }
  }
  return ll;
}

// Probability that sampling produces exactly this parent array.
double sampling_probability(const TreeGenerator& gen, const Matrix& f, const std::vector<int>& parents) {
  TreeGenerator::Stepper st(gen, f);
  double p = 1;
  for (std::size_t i = 1; i <= parents.size(); ++i) {
    const TreeStep s = st.distribution();
    if (i == parents.size()) return p * (i < gen.config().max_nodes ? s.stop : 1.0);
    double z = 0;
    for (double v : s.link) z += v;
    p *= (1.0 - s.stop) * s.link[static_cast<std::size_t>(parents[i])] / z;
    st.advance(static_cast<std::size_t>(parents[i]));
  }
  return p;
}

}  // namespace

TEST_CASE("tree likelihood equals a per-row replay") {
  ParameterStore store;
  Rng rng(1);
  TreeGenerator gen(store, "g", small_gen(), rng);
  std::mt19937_64 r(1);
  std::vector<SentenceTree> trees;
  Matrix feats(0, 8);
  std::vector<Matrix> rows;
  for (const auto& parents : all_parent_arrays(6)) {
    if (r() % 7) continue;
    trees.push_back(SentenceTree::from_parents(parents));
    rows.push_back(testutil::random_matrix(1, 8, r));
  }
  REQUIRE(trees.size() > 20);
  double total = 0;
  for (std::size_t k = 0; k < trees.size(); ++k) {
    std::vector<int> parents;
    for (std::size_t i = 0; i < trees[k].node_count(); ++i) parents.push_back(trees[k].parent(i));
    const double ll = gen.log_likelihood(rows[k], trees[k]);
    CHECK(ll == doctest::Approx(replay_log_likelihood(gen, rows[k], parents)).epsilon(1e-10));
    total += ll;
  }
  // The batched loss is the sum of per-tree negative log-likelihoods.
  Graph g(false);
  std::vector<Var> parts;
  for (const auto& m : rows) parts.push_back(g.constant(m));
  CHECK(gen.negative_log_likelihood(g, concat_rows(parts), trees).scalar() == doctest::Approx(-total).epsilon(1e-10));
}

TEST_CASE("tree probabilities over every small tree sum to at most one") {
  ParameterStore store;
  Rng rng(2);
  TreeGenerator gen(store, "g", small_gen(8, 4), rng);
  std::mt19937_64 r(2);
  const Matrix f = testutil::random_matrix(1, 8, r);
  double mass = 0, sampled_mass = 0;
  const auto arrays = all_parent_arrays(4);
  CHECK(arrays.size() == 10);
  for (const auto& parents : arrays) {
    mass += std::exp(gen.log_likelihood(f, SentenceTree::from_parents(parents)));
    sampled_mass += sampling_probability(gen, f, parents);
  }
  CHECK(mass > 0.0);
  CHECK(mass <= 1.0 + 1e-12);
  CHECK(sampled_mass == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("sampled trees follow the stepper distribution") {
  ParameterStore store;
  Rng rng(3);
  TreeGenerator gen(store, "g", small_gen(8, 4), rng);
  for (auto* p : store.all())
    for (double& v : p->value.values()) v *= 4.0;  // spread the distribution out
  std::mt19937_64 r(3);
  const Matrix f = testutil::random_matrix(1, 8, r);
  std::map<std::string, double> expected;
  for (const auto& parents : all_parent_arrays(4))
    expected[encode_tree(SentenceTree::from_parents(parents)).to_string()] = sampling_probability(gen, f, parents);
  std::map<std::string, int> seen;
  const int draws = 20000;
  for (int i = 0; i < draws; ++i) ++seen[encode_tree(gen.generate(f, DecodeMode::sample, 1000 + i)).to_string()];
  for (const auto& [key, p] : expected) CHECK(std::abs(seen[key] / double(draws) - p) < 0.02);
}

TEST_CASE("generated trees are valid and within capacity") {
  ParameterStore store;
  Rng rng(4);
  TreeGenerator gen(store, "g", small_gen(8, 7), rng);
  std::mt19937_64 r(4);
  for (int i = 0; i < 300; ++i) {
    const Matrix f = testutil::random_matrix(1, 8, r, 3.0);
    for (auto mode : {DecodeMode::greedy, DecodeMode::sample}) {
      const SentenceTree t = gen.generate(f, mode, static_cast<std::uint64_t>(i));
      REQUIRE(t.node_count() <= 7);
      REQUIRE(decode_vector(encode_tree(t)).bracketed() == t.bracketed());
    }
  }
  // Greedy decoding is deterministic.
  const Matrix f = testutil::random_matrix(1, 8, r);
  CHECK(gen.generate(f).bracketed() == gen.generate(f).bracketed());
}

TEST_CASE("tree generator errors") {
  ParameterStore store;
  Rng rng(5);
  TreeGenerator gen(store, "g", small_gen(8, 3), rng);
  const Matrix f(1, 8);
  CHECK_THROWS_AS(gen.log_likelihood(f, SentenceTree::from_parents({-1, 0, 0, 0})), CapacityError);
  CHECK_THROWS_AS(gen.log_likelihood(Matrix(1, 5), SentenceTree()), ShapeError);
  Graph g(false);
  CHECK_THROWS_AS(gen.negative_log_likelihood(g, g.constant(f), {}), InputError);
  TreeGenerator::Stepper st(gen, f);
  CHECK_THROWS_AS(st.advance(1), InvalidTreeError);
  st.advance(0);
  st.advance(1);
  CHECK(st.distribution().stop == 1.0);
  CHECK_THROWS_AS(st.advance(0), CapacityError);
  CHECK_THROWS_AS(TreeGenerator::Stepper(gen, Matrix(2, 8)), ShapeError);
  ParameterStore other;
  CHECK_THROWS_AS(TreeGenerator(other, "g", small_gen(8, 0), rng), ConfigError);
}

TEST_CASE("a tree at capacity scores without a stop term") {
  ParameterStore store;
  Rng rng(6);
  TreeGenerator gen(store, "g", small_gen(8, 3), rng);
  const Matrix f(1, 8, 0.3);
  const std::vector<int> full{-1, 0, 0};
  CHECK(gen.log_likelihood(f, SentenceTree::from_parents(full)) ==
        doctest::Approx(replay_log_likelihood(gen, f, full)));
}

TEST_CASE("tree generator gradients") {
  ParameterStore store;
  Rng rng(7);
  TreeGenerator gen(store, "g", small_gen(5, 6), rng);
  std::mt19937_64 r(7);
  auto& f = testutil::random_param(store, "f", 2, 5, r);
  const std::vector<SentenceTree> trees{SentenceTree::from_parents({-1, 0, 0, 1, 1}), SentenceTree::from_parents({-1, 0, 1})};
  auto loss = [&](Graph& g) { return gen.negative_log_likelihood(g, g.parameter(f), trees); };
  CHECK(worst_relative_error(gradient_check(store.all(), loss)) < 1e-4);
}

TEST_CASE("tree generator memorises one tree") {
  ParameterStore store;
  Rng rng(8);
  TreeGenerator gen(store, "g", small_gen(16, 12), rng);
  std::mt19937_64 r(8);
  auto& f = testutil::random_param(store, "f", 1, 16, r);
  const SentenceTree target = SentenceTree::from_parents({-1, 0, 0, 0, 1, 1, 3, 3, 6, 6, 2});
  Adam adam(store.all(), AdamConfig{1e-2});
  for (int step = 0; step < 300; ++step) {
    Graph g;
    Var l = gen.negative_log_likelihood(g, g.parameter(f), std::span<const SentenceTree>(&target, 1));
    g.backward(l);
    adam.step();
  }
  CHECK(gen.generate(f.value).bracketed() == target.bracketed());
}
