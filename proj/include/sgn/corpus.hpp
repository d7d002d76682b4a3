#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "sgn/treekit.hpp"

namespace sgn {

enum class Partition { train, val, test };

std::string_view partition_name(Partition p);
Partition parse_partition(std::string_view name);

using Tokens = std::vector<std::string>;
using TokenIds = std::vector<std::size_t>;

struct RecipeSample {
  std::string id;
  std::string title;
  std::vector<Tokens> ingredients;
  std::vector<Tokens> instructions;  // one sentence per element
  Partition partition = Partition::train;
  std::string image_key;
  std::optional<SentenceTree> planted_tree;
  std::optional<SentenceTree> parsed_tree;
};

struct TokenizerConfig {
  bool lowercase = true;
  bool keep_punctuation = false;  // punctuation becomes its own token when set
};

std::vector<std::string> split_words(std::string_view text, const TokenizerConfig& config = {});

// Reserved ids are fixed: 0 <pad>, 1 <bos>, 2 <eos>, 3 <unk>, 4 <sep>.
// Every other token maps to exactly one id.
class Vocabulary {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kBos = 1;
  static constexpr std::size_t kEos = 2;
  static constexpr std::size_t kUnk = 3;
  static constexpr std::size_t kSep = 4;
  static constexpr std::size_t kReserved = 5;

  Vocabulary();
  explicit Vocabulary(const std::vector<std::string>& tokens);

  // Counts instruction and ingredient tokens of the train partition; keeps
  // tokens seen at least min_count times, most frequent first.
  static Vocabulary build(std::span<const RecipeSample> corpus, std::size_t min_count = 5);

  std::size_t size() const { return tokens_.size(); }
  std::size_t id(std::string_view token) const;
  const std::string& token(std::size_t id) const { return tokens_.at(id); }
  bool is_reserved(std::size_t id) const { return id < kReserved; }
  // Non-reserved tokens in id order.
  std::vector<std::string> regular_tokens() const;

  std::vector<std::size_t> encode(std::span<const std::string> words) const;
  std::string decode(std::span<const std::size_t> ids) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

std::vector<std::size_t> tokenize(std::string_view text, const Vocabulary& vocab,
                                  const TokenizerConfig& config = {});
std::string detokenize(std::span<const std::size_t> ids, const Vocabulary& vocab);

// Recipe1M layer1-style JSON: an array of records with id, title,
// ingredients [{text}], instructions [{text}] and partition. Optional
// image_key, planted_tree and parsed_tree (adjacency bit strings) are read
// when present. Records with fewer than min_sentences non-empty
// instructions are dropped.
std::vector<RecipeSample> parse_recipe1m(std::string_view json, std::size_t min_sentences,
                                         const TokenizerConfig& config = {});
std::vector<RecipeSample> load_recipe1m(const std::filesystem::path& path, std::size_t min_sentences,
                                        const TokenizerConfig& config = {});

std::string corpus_to_json(std::span<const RecipeSample> corpus);
void write_corpus(const std::filesystem::path& path, std::span<const RecipeSample> corpus);

struct SyntheticConfig {
  std::size_t train_size = 2000;
  std::size_t val_size = 200;
  std::size_t test_size = 200;
  std::size_t vocab_size = 300;  // approximate; sets the ingredient pool
  std::size_t min_sentences = 4;
  std::size_t max_sentences = 10;
  std::size_t phases = 4;  // prepare, combine, cook, finish
  std::size_t dishes = 12;
  std::size_t ingredients_per_dish = 16;
};

// Structured cooking paragraphs with a planted tree: the root's children are
// one subtree per cooking phase (a phase with a single sentence hangs its
// leaf directly off the root). The image key is
// "dish<d>-l<c1>.<c2>...-<index>", naming the dish and per-phase sentence
// counts so image features can carry the structure.
std::vector<RecipeSample> make_synthetic_corpus(const SyntheticConfig& config, std::uint64_t seed);

struct ImageKeyInfo {
  std::size_t dish = 0;
  std::vector<std::size_t> phase_counts;
};
std::optional<ImageKeyInfo> parse_image_key(std::string_view key);

std::vector<RecipeSample> select_partition(std::span<const RecipeSample> corpus, Partition p);

}  // namespace sgn
