#include "sgn/tree2recipe.hpp"

#include <cmath>

#include "sgn/errors.hpp"

namespace sgn {

Matrix node_features_from_tree(const SentenceTree& tree, std::size_t max_nodes) {
  const std::size_t n = tree.node_count();
  if (n > max_nodes) {
    throw CapacityError("tree with " + std::to_string(n) + " nodes exceeds the " + std::to_string(max_nodes) +
                        "-node capacity");
  }
  Matrix z(n, max_nodes);
  for (std::size_t i = 0; i < n; ++i) {
    z(i, i) = 1.0;
    if (i > 0) {
      const auto p = static_cast<std::size_t>(tree.parent(i));
      z(i, p) = 1.0;
      z(p, i) = 1.0;
    }
  }
  return z;
}

Matrix neighbour_mask(const SentenceTree& tree) { return neighbour_mask(std::span<const SentenceTree>(&tree, 1)); }

Matrix neighbour_mask(std::span<const SentenceTree> trees) {
  std::size_t total = 0;
  for (const auto& t : trees) total += t.node_count();
  Matrix m(total, total);
  std::size_t off = 0;
  for (const auto& t : trees) {
    for (std::size_t i = 0; i < t.node_count(); ++i) {
      m(off + i, off + i) = 1.0;
      if (i > 0) {
        const auto p = static_cast<std::size_t>(t.parent(i));
        m(off + i, off + p) = 1.0;
        m(off + p, off + i) = 1.0;
      }
    }
    off += t.node_count();
  }
  return m;
}

GraphAttentionLayer::GraphAttentionLayer(ParameterStore& store, const std::string& name, std::size_t in,
                                         std::size_t out, std::size_t heads, Rng& rng)
    : heads_(heads), out_(out) {
  if (heads == 0 || out == 0) throw ConfigError("graph attention needs at least one head and one output unit");
  w = &store.create_uniform(name + "/w", in, heads * out, rng);
  a_src = &store.create_uniform(name + "/a_src", heads, out, rng, 1.0 / std::sqrt(static_cast<double>(out)));
  a_dst = &store.create_uniform(name + "/a_dst", heads, out, rng, 1.0 / std::sqrt(static_cast<double>(out)));
}

Var GraphAttentionLayer::forward(Graph& g, Var z, const Matrix& mask, std::vector<Matrix>* alphas) const {
  const std::size_t n = z.rows();
  if (z.cols() != w->value.rows()) {
    throw ShapeError("graph attention: features " + z.value().shape_string() + " for weight " +
                     w->value.shape_string());
  }
  if (mask.rows() != n || mask.cols() != n) throw ShapeError("graph attention: mask does not match node count");
  Var wz = matmul(z, g.parameter(*w));
  Var src = g.parameter(*a_src), dst = g.parameter(*a_dst);
  Var ones = g.constant(Matrix(1, n, 1.0));
  if (alphas) alphas->clear();
  Var total;
  for (std::size_t h = 0; h < heads_; ++h) {
    Var wz_h = heads_ == 1 ? wz : slice_cols(wz, h * out_, out_);
    Var s = matmul_nt(wz_h, slice_rows(src, h, 1));  // n x 1
    Var t = matmul_nt(slice_rows(dst, h, 1), wz_h);  // 1 x n
    Var e = leaky_relu(add_row(matmul(s, ones), t), 0.2);
    Var alpha = masked_softmax_rows(e, mask);
    if (alphas) alphas->push_back(alpha.value());
    Var head = elu(matmul(alpha, wz_h));
    total = h == 0 ? head : add(total, head);
  }
  return heads_ == 1 ? total : scale(total, 1.0 / static_cast<double>(heads_));
}

TreeEncoder::TreeEncoder(ParameterStore& store, const std::string& name, const TreeEncoderConfig& config, Rng& rng)
    : config_(config) {
  if (config.layers == 0) throw ConfigError("tree encoder needs at least one layer");
  std::size_t in = config.max_nodes;
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::size_t out = l + 1 == config.layers ? config.width : config.hidden;
    layers_.emplace_back(store, name + "/gat" + std::to_string(l), in, out, config.heads, rng);
    in = out;
  }
}

TreeEmbedding TreeEncoder::embed(Graph& g, std::span<const SentenceTree> trees) const {
  if (trees.empty()) throw InputError("no trees to embed");
  std::size_t total = 0;
  for (const auto& t : trees) total += t.node_count();
  Matrix z(total, config_.max_nodes);
  Matrix pool(trees.size(), total);
  std::size_t off = 0;
  for (std::size_t k = 0; k < trees.size(); ++k) {
    const Matrix zt = node_features_from_tree(trees[k], config_.max_nodes);
    const std::size_t n = zt.rows();
    for (std::size_t i = 0; i < n; ++i) {
      std::copy(zt.row(i).begin(), zt.row(i).end(), z.row(off + i).begin());
      pool(k, off + i) = 1.0 / static_cast<double>(n);
    }
    off += n;
  }
  const Matrix mask = neighbour_mask(trees);
  Var x = g.constant(std::move(z));
  for (const auto& layer : layers_) x = layer.forward(g, x, mask);
  return {x, matmul(g.constant(std::move(pool)), x)};
}

}  // namespace sgn
