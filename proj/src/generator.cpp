#include "sgn/generator.hpp"

#include <algorithm>
#include <cmath>

#include "sgn/errors.hpp"

namespace sgn {

TokenIds join_sentences(std::span<const TokenIds> sentences) {
  TokenIds out;
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    if (i) out.push_back(Vocabulary::kSep);
    out.insert(out.end(), sentences[i].begin(), sentences[i].end());
  }
  return out;
}

std::vector<TokenIds> split_sentences(std::span<const std::size_t> tokens) {
  std::vector<TokenIds> out;
  TokenIds cur;
  for (std::size_t t : tokens) {
    if (t == Vocabulary::kSep) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(t);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

SgnExample make_example(const RecipeSample& sample, const Vocabulary& vocab, bool use_planted) {
  SgnExample ex;
  ex.image_key = sample.image_key;
  for (const auto& ing : sample.ingredients) ex.ingredients.push_back(vocab.encode(ing));
  std::vector<TokenIds> sentences;
  for (const auto& s : sample.instructions) sentences.push_back(vocab.encode(s));
  ex.target = join_sentences(sentences);
  if (use_planted && sample.planted_tree) {
    ex.tree = *sample.planted_tree;
  } else if (sample.parsed_tree) {
    ex.tree = *sample.parsed_tree;
  } else if (sample.planted_tree) {
    ex.tree = *sample.planted_tree;
  }
  return ex;
}

std::unique_ptr<FeatureProvider> make_provider(const SgnConfig& config, std::uint64_t seed, ParameterStore* store,
                                               Rng* rng) {
  if (config.provider == "synthetic") {
    return std::make_unique<SyntheticFeatureProvider>(config.width, seed ^ 0xfeedULL, config.feature_noise);
  }
  if (config.provider == "precomputed") {
    if (config.feature_file.empty()) throw ConfigError("the precomputed provider needs a feature_file");
    auto p = std::make_unique<PrecomputedFeatureProvider>(config.feature_file);
    if (p->width() != config.width) {
      throw ConfigError("feature file width " + std::to_string(p->width()) + " differs from model width " +
                        std::to_string(config.width));
    }
    return p;
  }
  if (config.provider == "tiny-convnet") {
    if (!store || !rng) throw ConfigError("the tiny-convnet provider needs a parameter store");
    return std::make_unique<TinyConvNetProvider>(*store, "convnet", config.width, seed ^ 0xfeedULL, *rng);
  }
  throw ConfigError("unknown feature provider '" + config.provider + "'");
}

SgnModel::SgnModel(std::size_t vocab, const SgnConfig& config, std::uint64_t seed) : config_(config), seed_(seed) {
  if (config.lambda_gen < 0 || config.lambda_tree < 0) throw ConfigError("loss weights must be non-negative");
  Rng rng(seed);
  provider_ = make_provider(config_, seed, &store_, &rng);
  DecoderConfig dc;
  dc.vocab = vocab;
  dc.width = config_.width;
  dc.layers = config_.layers;
  dc.heads = config_.heads;
  dc.ffn = config_.ffn;
  dc.max_positions = kMaxRecipeTokens + 1;
  decoder_ = TransformerDecoder(store_, "dec", dc, rng);
  tree_gen_ = TreeGenerator(store_, "img2tree", TreeGenConfig{config_.width, config_.tree_layers, config_.max_nodes}, rng);
  tree_enc_ = TreeEncoder(store_, "gat",
                          TreeEncoderConfig{config_.max_nodes, config_.gat_hidden, config_.width, config_.gat_heads,
                                            config_.gat_layers},
                          rng);
  ingredients_ = IngredientEncoder(store_, "ing", vocab, config_.width, rng);
  img_proj_ = Linear(store_, "img_proj", config_.width, config_.width, rng);
}

ConditioningBundle SgnModel::bundle(Graph& g, std::span<const std::string> image_keys,
                                    std::span<const std::vector<TokenIds>> ingredients,
                                    std::span<const SentenceTree> trees) const {
  const std::size_t batch = image_keys.size();
  if (batch == 0 || ingredients.size() != batch) throw ShapeError("bundle: keys and ingredient lists disagree");
  if (config_.use_tree && trees.size() != batch) throw ShapeError("bundle: one tree per sample is required");
  ConditioningBundle out;
  out.f_img = provider_->features(g, image_keys);
  Var img = img_proj_(g, out.f_img);
  Var ing = ingredients_.encode(g, ingredients);
  Var tree_rows;
  std::vector<std::size_t> tree_count(batch, 1);
  if (!config_.use_tree) {
    tree_rows = g.constant(Matrix(batch, config_.width));
  } else {
    TreeEmbedding emb = tree_enc_.embed(g, trees);
    if (config_.tree_memory == TreeMemory::pooled) {
      tree_rows = emb.pooled;
    } else {
      tree_rows = emb.nodes;
      for (std::size_t b = 0; b < batch; ++b) tree_count[b] = trees[b].node_count();
    }
  }
  const std::size_t T = tree_rows.rows();
  std::vector<std::size_t> order;
  std::size_t off = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t k = 0; k < tree_count[b]; ++k) order.push_back(off + k);
    off += tree_count[b];
    order.push_back(T + b);
    order.push_back(T + batch + b);
    out.rows.push_back(tree_count[b] + 2);
  }
  const Var parts[] = {tree_rows, img, ing};
  out.memory = gather_rows(concat_rows(parts), order);
  return out;
}

Var generation_loss(Graph& g, const TransformerDecoder& decoder, const ConditioningBundle& bundle,
                    std::span<const TokenIds> targets, std::vector<double>* logprobs) {
  std::vector<TokenIds> inputs;
  std::vector<std::size_t> outputs;
  for (const auto& t : targets) {
    if (t.size() + 1 > decoder.config().max_positions) {
      throw ShapeError("target of " + std::to_string(t.size()) + " tokens exceeds the " +
                       std::to_string(decoder.config().max_positions - 1) + "-token limit");
    }
    TokenIds in{Vocabulary::kBos};
    in.insert(in.end(), t.begin(), t.end());
    inputs.push_back(std::move(in));
    outputs.insert(outputs.end(), t.begin(), t.end());
    outputs.push_back(Vocabulary::kEos);
  }
  Var logits = decoder.forward_packed(g, inputs, bundle.memory, bundle.rows);
  return cross_entropy(logits, outputs, logprobs);
}

double joint_loss(double gen, double tree, double lambda_gen, double lambda_tree) {
  if (!std::isfinite(gen) || !std::isfinite(tree)) throw TrainingError("joint loss received a non-finite term");
  return lambda_gen * gen + lambda_tree * tree;
}

BatchLoss batch_loss(Graph& g, const SgnModel& model, std::span<const SgnExample> batch) {
  const auto& cfg = model.config();
  std::vector<std::string> keys;
  std::vector<std::vector<TokenIds>> ings;
  std::vector<SentenceTree> trees;
  std::vector<TokenIds> targets;
  for (const auto& ex : batch) {
    keys.push_back(ex.image_key);
    ings.push_back(ex.ingredients);
    trees.push_back(ex.tree);
    targets.push_back(ex.target);
  }
  ConditioningBundle b = model.bundle(g, keys, ings, trees);
  BatchLoss out;
  Var gen = generation_loss(g, model.decoder(), b, targets);
  out.gen_sum = gen.scalar();
  for (const auto& t : targets) out.tokens += t.size() + 1;
  const double inv = 1.0 / static_cast<double>(batch.size());
  out.total = scale(gen, cfg.lambda_gen * inv);
  if (cfg.use_tree && cfg.lambda_tree > 0) {
    Var tree = model.tree_generator().negative_log_likelihood(g, b.f_img, trees);
    out.tree_sum = tree.scalar();
    out.total = add(out.total, scale(tree, cfg.lambda_tree * inv));
  }
  joint_loss(out.gen_sum, out.tree_sum, cfg.lambda_gen, cfg.lambda_tree);
  return out;
}

GenerationResult generate_recipe(const TransformerDecoder& decoder, const Matrix& memory, std::size_t max_len) {
  max_len = std::min(max_len, decoder.config().max_positions);
  TransformerDecoder::Session session(decoder, memory);
  GenerationResult out;
  Matrix logits = session.feed(Vocabulary::kBos);
  while (true) {
    const auto row = logits.values();
    const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    double z = 0.0;
    for (double v : row) z += std::exp(v - row[best]);
    out.logprobs.push_back(-std::log(z));
    if (best == Vocabulary::kEos) {
      out.ended = true;
      break;
    }
    out.tokens.push_back(best);
    if (out.tokens.size() >= max_len) break;
    logits = session.feed(best);
  }
  out.sentences = split_sentences(out.tokens);
  return out;
}

Prediction predict(const SgnModel& model, const std::string& image_key, const std::vector<TokenIds>& ingredients,
                   std::size_t max_len) {
  Graph g(false);
  Prediction p;
  if (model.config().use_tree) p.tree = model.tree_generator().generate(model.provider().lookup(image_key));
  const std::string keys[] = {image_key};
  const std::vector<TokenIds> ings[] = {ingredients};
  const SentenceTree trees[] = {p.tree};
  ConditioningBundle b = model.bundle(g, keys, ings, trees);
  p.memory = b.memory.value();
  p.recipe = generate_recipe(model.decoder(), p.memory, max_len);
  return p;
}

}  // namespace sgn
