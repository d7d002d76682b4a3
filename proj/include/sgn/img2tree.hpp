#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "sgn/nn.hpp"
#include "sgn/treekit.hpp"

namespace sgn {

struct TreeGenConfig {
  std::size_t width = 128;  // hidden width; equals the image feature width
  std::size_t layers = 2;
  std::size_t max_nodes = kDefaultMaxNodes;
};

enum class DecodeMode { greedy, sample };

// Distribution emitted before node i is added: link[j] is the probability
// that node j (j < i) is the new node's parent, stop the probability that
// the tree ends with i nodes.
struct TreeStep {
  std::vector<double> link;
  double stop = 0.0;
};

// Recurrent generator over adjacency rows. The initial hidden state of every
// layer is F_img; step i reads the previous row padded to max_nodes and
// emits link logits for every position plus one stop logit.
class TreeGenerator {
 public:
  TreeGenerator() = default;
  TreeGenerator(ParameterStore& store, const std::string& name, const TreeGenConfig& config, Rng& rng);

  const TreeGenConfig& config() const { return config_; }

  // Sum over trees of -log p(V | F_img). f_img has one row per tree.
  Var negative_log_likelihood(Graph& g, Var f_img, std::span<const SentenceTree> trees) const;
  double log_likelihood(const Matrix& f_img, const SentenceTree& tree) const;

  // Tape-free stepping used by decoding.
  class Stepper {
   public:
    Stepper(const TreeGenerator& gen, const Matrix& f_img);
    std::size_t nodes() const { return nodes_; }
    TreeStep distribution();
    // Appends a node whose parent is `parent` (< nodes()).
    void advance(std::size_t parent);

   private:
    const TreeGenerator* gen_;
    std::unique_ptr<Graph> graph_;
    std::vector<Var> h_;
    Matrix prev_row_;
    std::size_t nodes_ = 1;
    bool have_logits_ = false;
    Matrix logits_;
  };

  SentenceTree generate(const Matrix& f_img, DecodeMode mode = DecodeMode::greedy, std::uint64_t seed = 0) const;

 private:
  // One recurrence step for a batch; returns the logits.
  Var step(Graph& g, std::vector<Var>& h, Var input) const;

  TreeGenConfig config_;
  Linear input_;
  std::vector<GruCell> cells_;
  Linear output_;
};

}  // namespace sgn
