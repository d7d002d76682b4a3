#include "sgn/img2tree.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "sgn/errors.hpp"

namespace sgn {

TreeGenerator::TreeGenerator(ParameterStore& store, const std::string& name, const TreeGenConfig& config, Rng& rng)
    : config_(config) {
  if (config.layers == 0) throw ConfigError("tree generator needs at least one recurrent layer");
  if (config.max_nodes < 1) throw ConfigError("tree generator capacity must be positive");
  input_ = Linear(store, name + "/in", config.max_nodes, config.width, rng);
  for (std::size_t l = 0; l < config.layers; ++l) {
    cells_.emplace_back(store, name + "/gru" + std::to_string(l), config.width, config.width, rng);
  }
  output_ = Linear(store, name + "/out", config.width, config.max_nodes + 1, rng);
}

Var TreeGenerator::step(Graph& g, std::vector<Var>& h, Var input) const {
  Var x = input_(g, input);
  for (std::size_t l = 0; l < cells_.size(); ++l) {
    h[l] = cells_[l].step(g, x, h[l]);
    x = h[l];
  }
  return output_(g, x);
}

Var TreeGenerator::negative_log_likelihood(Graph& g, Var f_img, std::span<const SentenceTree> trees) const {
  const std::size_t batch = trees.size();
  if (batch == 0) throw InputError("no trees to score");
  if (f_img.rows() != batch || f_img.cols() != config_.width) {
    throw ShapeError("tree generator: features " + f_img.value().shape_string() + " for " + std::to_string(batch) +
                     " trees of width " + std::to_string(config_.width));
  }
  const std::size_t N = config_.max_nodes;
  std::size_t steps = 0;
  for (const auto& t : trees) {
    if (t.node_count() > N) {
      throw CapacityError("tree with " + std::to_string(t.node_count()) + " nodes exceeds the " + std::to_string(N) +
                          "-node capacity");
    }
    steps = std::max(steps, t.node_count());
  }
  // Step i (1-based) decides node i: continue with a parent row, or stop.
  // A tree at capacity never consults the stop unit on its last step.
  std::vector<Var> h(cells_.size(), f_img);
  std::vector<Var> logits;
  Matrix targets(steps * batch, N + 1), mask(steps * batch, N + 1);
  Matrix prev(batch, N);
  for (std::size_t i = 1; i <= steps; ++i) {
    logits.push_back(step(g, h, g.constant(prev)));
    Matrix next(batch, N);
    for (std::size_t b = 0; b < batch; ++b) {
      const SentenceTree& t = trees[b];
      const std::size_t n = t.node_count();
      const std::size_t r = (i - 1) * batch + b;
      if (i < n) {
        const auto parent = static_cast<std::size_t>(t.parent(i));
        for (std::size_t j = 0; j < i; ++j) {
          mask(r, j) = 1.0;
          targets(r, j) = j == parent ? 1.0 : 0.0;
        }
        mask(r, N) = 1.0;
        next(b, parent) = 1.0;
      } else if (i == n && n < N) {
        mask(r, N) = 1.0;
        targets(r, N) = 1.0;
      }
    }
    prev = std::move(next);
  }
  Var all = logits.size() == 1 ? logits[0] : concat_rows(logits);
  return bce_with_logits(all, targets, mask);
}

double TreeGenerator::log_likelihood(const Matrix& f_img, const SentenceTree& tree) const {
  Graph g(false);
  return -negative_log_likelihood(g, g.constant(f_img), std::span<const SentenceTree>(&tree, 1)).scalar();
}

TreeGenerator::Stepper::Stepper(const TreeGenerator& gen, const Matrix& f_img)
    : gen_(&gen), graph_(std::make_unique<Graph>(false)), prev_row_(1, gen.config_.max_nodes) {
  if (f_img.rows() != 1 || f_img.cols() != gen.config_.width) {
    throw ShapeError("tree generator: feature " + f_img.shape_string() + " for width " +
                     std::to_string(gen.config_.width));
  }
  h_.assign(gen.cells_.size(), graph_->constant(f_img));
}

namespace {

double sigmoid_of(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

}  // namespace

TreeStep TreeGenerator::Stepper::distribution() {
  if (!have_logits_) {
    logits_ = gen_->step(*graph_, h_, graph_->constant(prev_row_)).value();
    have_logits_ = true;
  }
  TreeStep s;
  for (std::size_t j = 0; j < nodes_; ++j) s.link.push_back(sigmoid_of(logits_[j]));
  s.stop = nodes_ >= gen_->config_.max_nodes ? 1.0 : sigmoid_of(logits_[gen_->config_.max_nodes]);
  return s;
}

void TreeGenerator::Stepper::advance(std::size_t parent) {
  if (parent >= nodes_) throw InvalidTreeError("parent " + std::to_string(parent) + " does not exist yet");
  if (nodes_ >= gen_->config_.max_nodes) throw CapacityError("tree generator is at capacity");
  if (!have_logits_) distribution();
  prev_row_.fill(0.0);
  prev_row_[parent] = 1.0;
  ++nodes_;
  have_logits_ = false;
}

SentenceTree TreeGenerator::generate(const Matrix& f_img, DecodeMode mode, std::uint64_t seed) const {
  Stepper stepper(*this, f_img);
  Rng rng(seed);
  std::vector<int> parents{SentenceTree::kNoParent};
  while (true) {
    const TreeStep s = stepper.distribution();
    bool stop;
    if (mode == DecodeMode::greedy) {
      stop = s.stop > 0.5;
    } else {
      stop = std::bernoulli_distribution(s.stop)(rng);
    }
    if (stop || stepper.nodes() >= config_.max_nodes) break;
    std::size_t parent;
    if (mode == DecodeMode::greedy) {
      parent = static_cast<std::size_t>(std::max_element(s.link.begin(), s.link.end()) - s.link.begin());
    } else {
      parent = std::discrete_distribution<std::size_t>(s.link.begin(), s.link.end())(rng);
    }
    parents.push_back(static_cast<int>(parent));
    stepper.advance(parent);
  }
  return SentenceTree::from_parents(parents);
}

}  // namespace sgn
