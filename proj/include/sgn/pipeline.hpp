#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sgn/checkpoint.hpp"
#include "sgn/config.hpp"
#include "sgn/generator.hpp"
#include "sgn/metrics.hpp"
#include "sgn/recipe2tree.hpp"

namespace sgn {

struct EpochRecord {
  std::size_t epoch = 0;
  std::size_t steps = 0;           // optimizer steps completed so far
  double loss = 0.0;               // mean joint batch loss
  double gen_nll = 0.0;            // per token
  double tree_nll = 0.0;           // per sample
  double val_perplexity = 0.0;     // teacher forced, annotated trees; 0 without validation data
  double val_tree_ll = 0.0;        // mean held-out log p(V | F_img)
  double learning_rate = 0.0;
};

// Joint optimisation of decoder, tree encoder, ingredient encoder and
// img2tree. Batches follow a seeded permutation per epoch; state can be saved
// between any two steps and restored bit-for-bit.
class JointTrainer {
 public:
  JointTrainer(SgnModel& model, std::vector<SgnExample> train, std::vector<SgnExample> val, const TrainConfig& config,
               std::uint64_t seed);

  bool done() const;
  // One optimizer step; returns the batch loss.
  double step();
  void run(const std::function<void(const EpochRecord&)>& on_epoch = {});

  std::size_t steps() const { return steps_; }
  std::size_t epoch() const { return epoch_; }
  const std::vector<EpochRecord>& curve() const { return curve_; }
  const std::vector<double>& step_losses() const { return step_losses_; }
  void set_max_steps(std::size_t n) { config_.max_steps = n; }

  // Adds parameters, optimizer moments, RNG and counters to ckpt.
  void save(Checkpoint& ckpt) const;
  void restore(const Checkpoint& ckpt);

 private:
  void begin_epoch();
  void finish_epoch();

  SgnModel* model_;
  std::vector<SgnExample> train_, val_;
  TrainConfig config_;
  Adam adam_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::size_t epoch_ = 0;
  std::size_t steps_ = 0;
  double epoch_loss_ = 0.0, epoch_gen_ = 0.0, epoch_tree_ = 0.0;
  std::size_t epoch_tokens_ = 0, epoch_samples_ = 0, epoch_batches_ = 0;
  std::vector<EpochRecord> curve_;
  std::vector<double> step_losses_;
};

struct TreeEpoch {
  std::size_t epoch = 0;
  double train_nll = 0.0;    // per sample
  double heldout_ll = 0.0;   // mean log-likelihood per held-out tree
};

// Trains img2tree alone (and a trainable image encoder, if any).
std::vector<TreeEpoch> train_img2tree(SgnModel& model, std::span<const SgnExample> train,
                                      std::span<const SgnExample> heldout, const TrainConfig& config,
                                      std::uint64_t seed);
double mean_tree_log_likelihood(const SgnModel& model, std::span<const SgnExample> examples);

// Teacher-forced perplexity. trees overrides the examples' trees when non-empty.
double teacher_forced_perplexity(const SgnModel& model, std::span<const SgnExample> examples,
                                 std::span<const SentenceTree> trees = {});

struct SampleOutput {
  std::string image_key;
  SentenceTree tree;
  TokenIds tokens;
};

// Stage 3: generated trees, greedy recipes, metrics over word sequences
// (separators removed).
EvalReport evaluate_model(const SgnModel& model, std::span<const SgnExample> examples, BleuMean mean,
                          std::vector<SampleOutput>* outputs = nullptr);
TokenIds strip_separators(std::span<const std::size_t> tokens);

// Model checkpoints carry the full configuration and the vocabulary.
void save_model(const std::filesystem::path& path, const SgnModel& model, const Vocabulary& vocab,
                const ExperimentConfig& config);
struct LoadedModel {
  ExperimentConfig config;
  Vocabulary vocab;
  std::unique_ptr<SgnModel> model;
};
LoadedModel load_model(const std::filesystem::path& path);

void save_parser(const std::filesystem::path& path, const ParserModel& parser, const ExperimentConfig& config);
struct LoadedParser {
  ExperimentConfig config;
  std::unique_ptr<ParserModel> parser;
};
LoadedParser load_parser(const std::filesystem::path& path);

std::vector<RecipeSample> load_experiment_corpus(const ExperimentConfig& config);

struct RunPaths {
  std::filesystem::path dir;
  std::string fingerprint;
  std::filesystem::path file(const std::string& stem, const std::string& ext) const;
};
RunPaths run_paths(const ExperimentConfig& config, const std::filesystem::path& artifact_root);

struct PipelineResult {
  EvalReport report;
  RunPaths paths;
  ParserTrainResult parser;
  std::optional<TreeRecovery> recovery;  // test split, when planted trees exist
  std::vector<EpochRecord> curve;
  std::vector<double> step_losses;
};

using ProgressLog = std::function<void(const std::string&)>;

// Stage 1 trains the parser and annotates the corpus, stage 2 trains the
// generator jointly, stage 3 evaluates with generated trees. Progress is
// recorded in a state file; with config.resume, finished stages are loaded
// and stage 2 continues from its last checkpoint.
PipelineResult run_pipeline(const ExperimentConfig& config, const std::filesystem::path& artifact_root,
                            const ProgressLog& log = {});

// SGN_ARTIFACT_ROOT, or ./artifacts when unset.
std::filesystem::path artifact_root_from_env();

}  // namespace sgn
