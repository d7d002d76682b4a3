#pragma once

#include <span>
#include <string>
#include <vector>

#include "sgn/nn.hpp"
#include "sgn/treekit.hpp"

namespace sgn {

// Row i is node i's adjacency row (both edge directions plus the self-loop),
// zero-padded to max_nodes columns.
Matrix node_features_from_tree(const SentenceTree& tree, std::size_t max_nodes = kDefaultMaxNodes);

// 1 where j is a neighbour of i or i itself.
Matrix neighbour_mask(const SentenceTree& tree);
// Block-diagonal mask for several trees stacked in order.
Matrix neighbour_mask(std::span<const SentenceTree> trees);

class GraphAttentionLayer {
 public:
  GraphAttentionLayer() = default;
  GraphAttentionLayer(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
                      std::size_t heads, Rng& rng);

  std::size_t heads() const { return heads_; }
  std::size_t out() const { return out_; }

  // Per head: e_ij = leaky_relu(a_src . W z_i + a_dst . W z_j) for allowed
  // j, softmax over the allowed set, ELU of the weighted sum; heads are
  // averaged. alphas receives one n x n matrix per head when non-null.
  Var forward(Graph& g, Var z, const Matrix& mask, std::vector<Matrix>* alphas = nullptr) const;

  Parameter* w = nullptr;      // in x (heads * out)
  Parameter* a_src = nullptr;  // heads x out
  Parameter* a_dst = nullptr;  // heads x out

 private:
  std::size_t heads_ = 1, out_ = 0;
};

struct TreeEncoderConfig {
  std::size_t max_nodes = kDefaultMaxNodes;
  std::size_t hidden = 64;
  std::size_t width = 128;  // F_tree width
  std::size_t heads = 4;
  std::size_t layers = 2;
};

struct TreeEmbedding {
  Var nodes;   // total_nodes x width, trees stacked in order
  Var pooled;  // one row per tree (mean over its nodes)
};

class TreeEncoder {
 public:
  TreeEncoder() = default;
  TreeEncoder(ParameterStore& store, const std::string& name, const TreeEncoderConfig& config, Rng& rng);

  const TreeEncoderConfig& config() const { return config_; }
  const std::vector<GraphAttentionLayer>& layers() const { return layers_; }
  TreeEmbedding embed(Graph& g, std::span<const SentenceTree> trees) const;

 private:
  TreeEncoderConfig config_;
  std::vector<GraphAttentionLayer> layers_;
};

}  // namespace sgn
