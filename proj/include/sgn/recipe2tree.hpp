#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "sgn/corpus.hpp"
#include "sgn/nn.hpp"
#include "sgn/treekit.hpp"

namespace sgn {

struct ParserConfig {
  std::size_t embedding = 32;
  std::size_t hidden = 64;  // word-level and sentence-level width (inner products need them equal)
  std::size_t chunk = 4;
  std::size_t word_layers = 3;
  std::size_t sentence_layers = 2;
  std::size_t distance_layer = 0;  // counted from the top: 0 is the top sentence-level layer
  std::size_t k = 3;               // distractors per item
  bool random_context = true;      // consecutive random context; false uses the first N-1 sentences
  std::size_t epochs = 6;
  std::size_t batch = 16;
  double learning_rate = 3e-3;
  double decay = 0.99;
};

// Word-level ON-LSTM stack producing sentence embeddings, and a
// sentence-level stack running over them.
class HierarchicalEncoder {
 public:
  HierarchicalEncoder() = default;
  HierarchicalEncoder(ParameterStore& store, std::size_t vocab, const ParserConfig& config, Rng& rng);

  const ParserConfig& config() const { return config_; }
  const OnLstmStack& word_stack() const { return words_; }
  const OnLstmStack& sentence_stack() const { return sentences_; }

  // Final top word-level state at each sentence's last token, one row per sentence.
  Var embed_sentences(Graph& g, std::span<const TokenIds> sentences) const;

  // Runs the sentence-level stack over several sequences at once;
  // sequences[i][t] is the embedding row fed to sequence i at step t.
  StackRun run_sentences(Graph& g, Var embeddings, const std::vector<std::vector<std::size_t>>& sequences) const;

 private:
  ParserConfig config_;
  Embedding embed_;
  OnLstmStack words_;
  OnLstmStack sentences_;
};

struct QTBatch {
  std::vector<TokenIds> context;
  std::vector<TokenIds> candidates;
  std::size_t truth = 0;
};

// Builds one item from a recipe's sentences. Distractors come from the same
// recipe when it has at least k other sentences, else from `fallback`.
QTBatch make_qt_item(std::span<const TokenIds> sentences, std::size_t k, bool random_context, Rng& rng,
                     std::span<const TokenIds> fallback = {});

// Candidate logits (inner products of f(context) and g(candidate)), one row
// per item, K+1 columns.
Var qt_scores(Graph& g, const HierarchicalEncoder& encoder, std::span<const QTBatch> items);
Matrix qt_probability(const HierarchicalEncoder& encoder, std::span<const QTBatch> items);
Var qt_loss(Graph& g, const HierarchicalEncoder& encoder, std::span<const QTBatch> items);
// Fraction of items whose highest-probability candidate is the true one.
double qt_accuracy(const HierarchicalEncoder& encoder, std::span<const QTBatch> items);

// Greedy top-down splitting: boundaries[i] separates sentence i from i+1;
// the range is split at its largest boundary, the leftmost on ties.
SentenceTree split_by_distance(std::span<const double> boundaries);

// Boundary distances read from the configured sentence-level layer.
std::vector<double> boundary_distances(const HierarchicalEncoder& encoder, std::span<const TokenIds> sentences);
SentenceTree parse_recipe(const HierarchicalEncoder& encoder, std::span<const TokenIds> sentences);
std::vector<SentenceTree> parse_recipes(const HierarchicalEncoder& encoder,
                                        std::span<const std::vector<TokenIds>> recipes);

std::vector<TokenIds> encode_sentences(const RecipeSample& sample, const Vocabulary& vocab);

// Owns the parameters of a trained parser.
struct ParserModel {
  ParameterStore store;
  ParserConfig config;
  Vocabulary vocab;
  HierarchicalEncoder encoder;

  ParserModel(Vocabulary vocabulary, const ParserConfig& cfg, std::uint64_t seed);
  ParserModel(const ParserModel&) = delete;
  ParserModel& operator=(const ParserModel&) = delete;
};

struct ParserEpoch {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
};

struct ParserTrainResult {
  std::vector<ParserEpoch> epochs;
  double untrained_val_accuracy = 0.0;
};

// Trains on the train partition with the QT objective. Validation items come
// from the val partition (train when val is empty). on_epoch may be used to
// checkpoint; a non-finite loss restores the last completed epoch and throws
// TrainingError.
ParserTrainResult train_recipe2tree(ParserModel& model, std::span<const RecipeSample> corpus, std::uint64_t seed,
                                    const std::function<void(const ParserEpoch&)>& on_epoch = {});

// Sets parsed_tree on every sample.
void annotate_corpus(const ParserModel& model, std::vector<RecipeSample>& corpus);

// Fixed evaluation items for a partition (deterministic given seed).
std::vector<QTBatch> make_qt_items(std::span<const RecipeSample> samples, const Vocabulary& vocab, std::size_t k,
                                   bool random_context, std::uint64_t seed);

// Uniform random split points applied recursively over `leaves` sentences.
SentenceTree random_binary_tree(std::size_t leaves, Rng& rng);

struct TreeRecovery {
  double parser_f1 = 0.0;  // mean unlabeled F1 of parsed trees
  double random_f1 = 0.0;  // mean over samples of the mean F1 of random binary trees
  std::size_t samples = 0;
};

// Compares parsed trees with planted ones on samples that carry a planted tree.
TreeRecovery evaluate_tree_recovery(const ParserModel& model, std::span<const RecipeSample> samples,
                                    std::size_t random_trees, std::uint64_t seed);

}  // namespace sgn
