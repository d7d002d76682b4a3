#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sgn/corpus.hpp"
#include "sgn/encoders.hpp"
#include "sgn/img2tree.hpp"
#include "sgn/nn.hpp"
#include "sgn/tree2recipe.hpp"

namespace sgn {

inline constexpr std::size_t kMaxRecipeTokens = 150;

enum class TreeMemory { pooled, nodes };

struct SgnConfig {
  std::size_t width = 64;  // decoder width = image, ingredient and tree feature width
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t ffn = 0;
  std::size_t tree_layers = 2;  // img2tree recurrent layers
  std::size_t gat_layers = 2;
  std::size_t gat_heads = 4;
  std::size_t gat_hidden = 64;
  std::size_t max_nodes = kDefaultMaxNodes;
  double lambda_gen = 1.0;
  double lambda_tree = 0.5;
  bool use_tree = true;  // false feeds a zero tree token (the baseline)
  TreeMemory tree_memory = TreeMemory::pooled;
  std::string provider = "synthetic";  // synthetic | tiny-convnet | precomputed
  std::string feature_file;            // for the precomputed provider
  double feature_noise = 0.05;
};

// One decoder training/evaluation record.
struct SgnExample {
  std::string image_key;
  std::vector<TokenIds> ingredients;
  TokenIds target;    // sentences joined by <sep>, no <bos>/<eos>
  SentenceTree tree;  // structure fed to the tree encoder and scored by img2tree
};

SgnExample make_example(const RecipeSample& sample, const Vocabulary& vocab, bool use_planted = false);
TokenIds join_sentences(std::span<const TokenIds> sentences);
std::vector<TokenIds> split_sentences(std::span<const std::size_t> tokens);

// Memory tokens for a batch: per sample [F_tree..., F_img, F_ing], stacked.
struct ConditioningBundle {
  Var memory;
  std::vector<std::size_t> rows;
  Var f_img;  // raw provider features, one row per sample
};

struct GenerationResult {
  TokenIds tokens;                   // without <eos>
  std::vector<TokenIds> sentences;   // tokens split on <sep>
  std::vector<double> logprobs;      // one per emitted token, plus <eos> when it ended the recipe
  bool ended = false;                // stopped at <eos> rather than the length cap
};

class SgnModel {
 public:
  SgnModel(std::size_t vocab, const SgnConfig& config, std::uint64_t seed);
  SgnModel(const SgnModel&) = delete;
  SgnModel& operator=(const SgnModel&) = delete;

  const SgnConfig& config() const { return config_; }
  // Also seeds the synthetic image features, so checkpoints record it.
  std::uint64_t seed() const { return seed_; }
  ParameterStore& store() { return store_; }
  const ParameterStore& store() const { return store_; }
  const TransformerDecoder& decoder() const { return decoder_; }
  const TreeGenerator& tree_generator() const { return tree_gen_; }
  const TreeEncoder& tree_encoder() const { return tree_enc_; }
  const IngredientEncoder& ingredient_encoder() const { return ingredients_; }
  const FeatureProvider& provider() const { return *provider_; }
  std::size_t vocab_size() const { return decoder_.config().vocab; }

  // trees may be empty when use_tree is off.
  ConditioningBundle bundle(Graph& g, std::span<const std::string> image_keys,
                            std::span<const std::vector<TokenIds>> ingredients,
                            std::span<const SentenceTree> trees) const;

 private:
  SgnConfig config_;
  std::uint64_t seed_ = 0;
  ParameterStore store_;
  std::unique_ptr<FeatureProvider> provider_;
  TransformerDecoder decoder_;
  TreeGenerator tree_gen_;
  TreeEncoder tree_enc_;
  IngredientEncoder ingredients_;
  Linear img_proj_;
};

std::unique_ptr<FeatureProvider> make_provider(const SgnConfig& config, std::uint64_t seed, ParameterStore* store,
                                               Rng* rng);

// Sum over the batch of -log p(target tokens and <eos>) under teacher
// forcing. logprobs, when given, receives every scored token's log-prob.
Var generation_loss(Graph& g, const TransformerDecoder& decoder, const ConditioningBundle& bundle,
                    std::span<const TokenIds> targets, std::vector<double>* logprobs = nullptr);

// lambda_gen * gen + lambda_tree * tree; throws TrainingError on non-finite input.
double joint_loss(double gen, double tree, double lambda_gen = 1.0, double lambda_tree = 0.5);

struct BatchLoss {
  Var total;
  double gen_sum = 0.0;   // summed token NLL
  std::size_t tokens = 0;
  double tree_sum = 0.0;  // summed tree NLL
};

// Joint objective on a batch: lambda_gen * L_gen + lambda_tree * L_tree, each
// averaged over samples. The decoder reads the examples' (annotated) trees.
BatchLoss batch_loss(Graph& g, const SgnModel& model, std::span<const SgnExample> batch);

GenerationResult generate_recipe(const TransformerDecoder& decoder, const Matrix& memory,
                                 std::size_t max_len = kMaxRecipeTokens);

// Inference for one sample: generated tree (greedy img2tree) then greedy text.
struct Prediction {
  SentenceTree tree;
  GenerationResult recipe;
  Matrix memory;
};
Prediction predict(const SgnModel& model, const std::string& image_key, const std::vector<TokenIds>& ingredients,
                   std::size_t max_len = kMaxRecipeTokens);

}  // namespace sgn
