#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>

#include "sgn/corpus.hpp"
#include "sgn/generator.hpp"
#include "sgn/metrics.hpp"
#include "sgn/recipe2tree.hpp"

namespace sgn {

struct TrainConfig {
  std::size_t epochs = 8;
  std::size_t batch = 16;
  double learning_rate = 1e-3;
  double decay = 0.99;       // per-epoch learning-rate factor
  std::size_t max_steps = 0; // stop after this many optimizer steps; 0 means no limit
};

struct ExperimentConfig {
  std::string run_name = "run";
  std::string preset = "desk";
  // Corpus: a Recipe1M-style file, or the synthetic generator when empty.
  std::string corpus_path;
  std::size_t min_sentences = 4;  // loader filter
  std::size_t vocab_min_count = 5;
  SyntheticConfig synthetic;
  std::size_t train_limit = 0;  // 0 uses every training sample
  std::size_t eval_limit = 0;   // 0 evaluates the whole test split
  std::string eval_split = "test";

  ParserConfig parser;
  SgnConfig sgn;
  TrainConfig train;
  BleuMean bleu_mean = BleuMean::geometric;

  std::uint64_t data_seed = 1;
  std::uint64_t model_seed = 1;

  bool train_parser = true;
  std::size_t img2tree_epochs = 5;  // img2tree-only warm-up epochs before joint training
  bool train_joint = true;
  bool use_planted_trees = false;  // supervise with planted instead of parsed trees
  bool resume = false;
};

// Applies the named preset's values (desk or paper) on top of cfg.
void apply_preset(ExperimentConfig& cfg, const std::string& preset);

std::map<std::string, std::string> config_to_map(const ExperimentConfig& cfg);
// Sets one key; throws ConfigError for unknown keys or malformed values.
void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value);
void validate(const ExperimentConfig& cfg);

// "key = value" lines; '#' starts a comment. A preset line is applied
// before the other keys regardless of position.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
std::string serialize_config(const ExperimentConfig& cfg);

// Hex FNV-1a of the serialized configuration minus run-control keys.
std::string config_fingerprint(const ExperimentConfig& cfg);

}  // namespace sgn
