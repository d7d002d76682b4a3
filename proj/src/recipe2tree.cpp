#include "sgn/recipe2tree.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sgn/errors.hpp"

namespace sgn {

HierarchicalEncoder::HierarchicalEncoder(ParameterStore& store, std::size_t vocab, const ParserConfig& config,
                                         Rng& rng)
    : config_(config) {
  if (config.distance_layer >= config.sentence_layers) {
    throw ConfigError("distance layer " + std::to_string(config.distance_layer) + " exceeds the " +
                      std::to_string(config.sentence_layers) + " sentence-level layers");
  }
  if (config.k == 0) throw ConfigError("QT needs at least one distractor");
  embed_ = Embedding(store, "parser/embed", vocab, config.embedding, rng);
  words_ = OnLstmStack(store, "parser/word", config.embedding, config.hidden, config.chunk, config.word_layers, rng);
  sentences_ =
      OnLstmStack(store, "parser/sent", config.hidden, config.hidden, config.chunk, config.sentence_layers, rng);
}

Var HierarchicalEncoder::embed_sentences(Graph& g, std::span<const TokenIds> sentences) const {
  if (sentences.empty()) throw InputError("no sentences to embed");
  std::vector<std::size_t> lengths;
  std::size_t longest = 0;
  for (const auto& s : sentences) {
    if (s.empty()) throw InputError("cannot embed an empty sentence");
    lengths.push_back(s.size());
    longest = std::max(longest, s.size());
  }
  std::vector<Var> inputs;
  std::vector<std::size_t> ids(sentences.size());
  for (std::size_t t = 0; t < longest; ++t) {
    for (std::size_t r = 0; r < sentences.size(); ++r) ids[r] = t < lengths[r] ? sentences[r][t] : Vocabulary::kPad;
    inputs.push_back(embed_(g, ids));
  }
  return words_.run(g, inputs, lengths).final_h.back();
}

StackRun HierarchicalEncoder::run_sentences(Graph& g, Var embeddings,
                                            const std::vector<std::vector<std::size_t>>& sequences) const {
  std::vector<std::size_t> lengths;
  std::size_t longest = 0;
  for (const auto& s : sequences) {
    if (s.empty()) throw InputError("empty sentence sequence");
    lengths.push_back(s.size());
    longest = std::max(longest, s.size());
  }
  std::vector<Var> inputs;
  std::vector<std::size_t> rows(sequences.size());
  for (std::size_t t = 0; t < longest; ++t) {
    for (std::size_t r = 0; r < sequences.size(); ++r) rows[r] = sequences[r][std::min(t, lengths[r] - 1)];
    inputs.push_back(gather_rows(embeddings, rows));
  }
  return sentences_.run(g, inputs, lengths);
}

QTBatch make_qt_item(std::span<const TokenIds> sentences, std::size_t k, bool random_context, Rng& rng,
                     std::span<const TokenIds> fallback) {
  const std::size_t n = sentences.size();
  if (n < 2) throw InputError("a QT item needs at least two sentences");
  std::size_t end = n - 1, start = 0;
  if (random_context) {
    end = std::uniform_int_distribution<std::size_t>(1, n - 1)(rng);
    start = std::uniform_int_distribution<std::size_t>(0, end - 1)(rng);
  }
  QTBatch item;
  item.context.assign(sentences.begin() + static_cast<std::ptrdiff_t>(start),
                      sentences.begin() + static_cast<std::ptrdiff_t>(end));
  std::vector<std::size_t> others;
  for (std::size_t i = 0; i < n; ++i)
    if (i != end) others.push_back(i);
  std::shuffle(others.begin(), others.end(), rng);
  std::vector<TokenIds> candidates{sentences[end]};
  for (std::size_t i = 0; i < others.size() && candidates.size() <= k; ++i) candidates.push_back(sentences[others[i]]);
  if (candidates.size() <= k) {
    if (fallback.size() < k + 1 - candidates.size()) throw InputError("not enough sentences for QT distractors");
    std::vector<std::size_t> pool(fallback.size());
    std::iota(pool.begin(), pool.end(), 0);
    std::shuffle(pool.begin(), pool.end(), rng);
    for (std::size_t i = 0; candidates.size() <= k; ++i) candidates.push_back(fallback[pool[i]]);
  }
  std::vector<std::size_t> perm(candidates.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  for (std::size_t i = 0; i < perm.size(); ++i) {
    item.candidates.push_back(candidates[perm[i]]);
    if (perm[i] == 0) item.truth = i;
  }
  return item;
}

Var qt_scores(Graph& g, const HierarchicalEncoder& encoder, std::span<const QTBatch> items) {
  if (items.empty()) throw InputError("no QT items");
  std::vector<TokenIds> all;
  std::vector<std::vector<std::size_t>> contexts;
  std::vector<std::size_t> cand_offset;
  const std::size_t width = items.front().candidates.size();
  for (const QTBatch& item : items) {
    if (item.context.empty() || item.candidates.empty()) throw InputError("QT item with empty context or candidates");
    if (item.candidates.size() != width) throw ShapeError("QT items disagree on candidate count");
    std::vector<std::size_t> ctx;
    for (const auto& s : item.context) {
      ctx.push_back(all.size());
      all.push_back(s);
    }
    contexts.push_back(std::move(ctx));
    cand_offset.push_back(all.size());
    for (const auto& s : item.candidates) all.push_back(s);
  }
  Var emb = encoder.embed_sentences(g, all);
  Var f = encoder.run_sentences(g, emb, contexts).final_h.back();
  std::vector<Var> rows;
  for (std::size_t b = 0; b < items.size(); ++b) {
    rows.push_back(matmul_nt(slice_rows(f, b, 1), slice_rows(emb, cand_offset[b], width)));
  }
  return rows.size() == 1 ? rows[0] : concat_rows(rows);
}

Matrix qt_probability(const HierarchicalEncoder& encoder, std::span<const QTBatch> items) {
  Graph g(false);
  return softmax_rows(qt_scores(g, encoder, items)).value();
}

Var qt_loss(Graph& g, const HierarchicalEncoder& encoder, std::span<const QTBatch> items) {
  std::vector<std::size_t> truths;
  for (const auto& item : items) truths.push_back(item.truth);
  return scale(cross_entropy(qt_scores(g, encoder, items), truths), 1.0 / static_cast<double>(items.size()));
}

double qt_accuracy(const HierarchicalEncoder& encoder, std::span<const QTBatch> items) {
  if (items.empty()) throw InputError("no QT items");
  std::size_t hits = 0;
  for (std::size_t start = 0; start < items.size(); start += 32) {
    const auto chunk = items.subspan(start, std::min<std::size_t>(32, items.size() - start));
    Graph g(false);
    const Matrix& s = qt_scores(g, encoder, chunk).value();
    for (std::size_t r = 0; r < chunk.size(); ++r) {
      const auto row = s.row(r);
      const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
      hits += best == chunk[r].truth;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(items.size());
}

SentenceTree split_by_distance(std::span<const double> boundaries) {
  const int n = static_cast<int>(boundaries.size()) + 1;
  if (n == 1) return SentenceTree();
  std::vector<Edge> edges;
  std::map<int, int> labels;
  for (int i = 0; i < n; ++i) labels[i] = i;
  int next = n;
  std::function<int(int, int)> build = [&](int lo, int hi) -> int {
    if (lo == hi) return lo;
    int split = lo;
    for (int b = lo + 1; b < hi; ++b)
      if (boundaries[static_cast<std::size_t>(b)] > boundaries[static_cast<std::size_t>(split)]) split = b;
    const int node = next++;
    edges.emplace_back(node, build(lo, split));
    edges.emplace_back(node, build(split + 1, hi));
    return node;
  };
  const int root = build(0, n - 1);
  return canonical_order(edges, root, labels);
}

namespace {

std::size_t trace_layer(const HierarchicalEncoder& encoder) {
  return encoder.config().sentence_layers - 1 - encoder.config().distance_layer;
}

}  // namespace

std::vector<double> boundary_distances(const HierarchicalEncoder& encoder, std::span<const TokenIds> sentences) {
  if (sentences.empty()) throw InputError("cannot parse an empty recipe");
  Graph g(false);
  Var emb = encoder.embed_sentences(g, sentences);
  std::vector<std::size_t> seq(sentences.size());
  std::iota(seq.begin(), seq.end(), 0);
  StackRun run = encoder.run_sentences(g, emb, {seq});
  std::vector<Matrix> trace;
  for (const Var& v : run.master_forget[trace_layer(encoder)]) trace.push_back(v.value());
  const auto d = syntactic_distance(trace);
  return {d.begin() + 1, d.end()};
}

SentenceTree parse_recipe(const HierarchicalEncoder& encoder, std::span<const TokenIds> sentences) {
  const auto d = boundary_distances(encoder, sentences);
  return split_by_distance(d);
}

std::vector<SentenceTree> parse_recipes(const HierarchicalEncoder& encoder,
                                        std::span<const std::vector<TokenIds>> recipes) {
  std::vector<SentenceTree> out;
  out.reserve(recipes.size());
  const std::size_t layer = trace_layer(encoder);
  for (std::size_t start = 0; start < recipes.size(); start += 32) {
    const std::size_t count = std::min<std::size_t>(32, recipes.size() - start);
    std::vector<TokenIds> all;
    std::vector<std::vector<std::size_t>> seqs;
    for (std::size_t r = start; r < start + count; ++r) {
      if (recipes[r].empty()) throw InputError("cannot parse an empty recipe");
      std::vector<std::size_t> seq;
      for (const auto& s : recipes[r]) {
        seq.push_back(all.size());
        all.push_back(s);
      }
      seqs.push_back(std::move(seq));
    }
    Graph g(false);
    Var emb = encoder.embed_sentences(g, all);
    StackRun run = encoder.run_sentences(g, emb, seqs);
    for (std::size_t r = 0; r < count; ++r) {
      const std::size_t n = seqs[r].size();
      std::vector<double> boundaries;
      for (std::size_t t = 1; t < n; ++t) {
        const Matrix& m = run.master_forget[layer][t].value();
        double s = 0.0;
        for (std::size_t k = 0; k < m.cols(); ++k) s += m(r, k);
        boundaries.push_back(static_cast<double>(m.cols()) - s);
      }
      out.push_back(split_by_distance(boundaries));
    }
  }
  return out;
}

std::vector<TokenIds> encode_sentences(const RecipeSample& sample, const Vocabulary& vocab) {
  std::vector<TokenIds> out;
  for (const auto& s : sample.instructions) out.push_back(vocab.encode(s));
  return out;
}

ParserModel::ParserModel(Vocabulary vocabulary, const ParserConfig& cfg, std::uint64_t seed)
    : config(cfg), vocab(std::move(vocabulary)) {
  Rng rng(seed);
  encoder = HierarchicalEncoder(store, vocab.size(), config, rng);
}

std::vector<QTBatch> make_qt_items(std::span<const RecipeSample> samples, const Vocabulary& vocab, std::size_t k,
                                   bool random_context, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<TokenIds>> encoded;
  for (const auto& s : samples)
    if (s.instructions.size() >= 2) encoded.push_back(encode_sentences(s, vocab));
  std::vector<QTBatch> items;
  for (std::size_t i = 0; i < encoded.size(); ++i) {
    std::vector<TokenIds> fallback;
    for (std::size_t j = 1; j < encoded.size() && fallback.size() < k; ++j) {
      const auto& other = encoded[(i + j) % encoded.size()];
      fallback.insert(fallback.end(), other.begin(), other.end());
    }
    items.push_back(make_qt_item(encoded[i], k, random_context, rng, fallback));
  }
  return items;
}

ParserTrainResult train_recipe2tree(ParserModel& model, std::span<const RecipeSample> corpus, std::uint64_t seed,
                                    const std::function<void(const ParserEpoch&)>& on_epoch) {
  const ParserConfig& cfg = model.config;
  std::vector<std::vector<TokenIds>> train;
  std::vector<RecipeSample> val_samples;
  for (const auto& s : corpus) {
    if (s.partition == Partition::train && s.instructions.size() >= 2) train.push_back(encode_sentences(s, model.vocab));
    if (s.partition == Partition::val) val_samples.push_back(s);
  }
  if (val_samples.empty()) {
    for (const auto& s : corpus)
      if (s.partition == Partition::train && val_samples.size() < 400) val_samples.push_back(s);
  }
  if (val_samples.size() > 400) val_samples.resize(400);
  const auto val_items = make_qt_items(val_samples, model.vocab, cfg.k, cfg.random_context, seed ^ 0x5eedULL);

  ParserTrainResult result;
  result.untrained_val_accuracy = val_items.empty() ? 0.0 : qt_accuracy(model.encoder, val_items);
  if (train.empty()) return result;

  Adam adam(model.store.all(), AdamConfig{cfg.learning_rate});
  Rng rng(seed);
  auto last_good = model.store.export_values();
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    adam.set_learning_rate(cfg.learning_rate * std::pow(cfg.decay, static_cast<double>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    std::size_t steps = 0;
    try {
      for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
        const std::size_t end = std::min(order.size(), start + cfg.batch);
        std::vector<QTBatch> items;
        for (std::size_t i = start; i < end; ++i) {
          std::vector<TokenIds> fallback;
          for (std::size_t j = start; j < end; ++j)
            if (j != i) fallback.insert(fallback.end(), train[order[j]].begin(), train[order[j]].end());
          items.push_back(make_qt_item(train[order[i]], cfg.k, cfg.random_context, rng, fallback));
        }
        Graph g;
        Var loss = qt_loss(g, model.encoder, items);
        if (!std::isfinite(loss.scalar())) throw TrainingError("QT loss became non-finite");
        g.backward(loss);
        adam.step();
        total += loss.scalar();
        ++steps;
      }
    } catch (const TrainingError& e) {
      model.store.import_values(last_good);
      throw TrainingError(std::string(e.what()) + " in parser epoch " + std::to_string(epoch + 1));
    }
    ParserEpoch rec{epoch + 1, total / static_cast<double>(steps),
                    val_items.empty() ? 0.0 : qt_accuracy(model.encoder, val_items)};
    result.epochs.push_back(rec);
    last_good = model.store.export_values();
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

void annotate_corpus(const ParserModel& model, std::vector<RecipeSample>& corpus) {
  std::vector<std::vector<TokenIds>> recipes;
  for (const auto& s : corpus) recipes.push_back(encode_sentences(s, model.vocab));
  auto trees = parse_recipes(model.encoder, recipes);
  for (std::size_t i = 0; i < corpus.size(); ++i) corpus[i].parsed_tree = std::move(trees[i]);
}

SentenceTree random_binary_tree(std::size_t leaves, Rng& rng) {
  if (leaves == 0) throw InputError("a tree needs at least one sentence");
  // Splitting at the maximum of a random permutation picks each split point
  // uniformly at every level.
  std::vector<double> ranks(leaves - 1);
  std::iota(ranks.begin(), ranks.end(), 0.0);
  std::shuffle(ranks.begin(), ranks.end(), rng);
  return split_by_distance(ranks);
}

TreeRecovery evaluate_tree_recovery(const ParserModel& model, std::span<const RecipeSample> samples,
                                    std::size_t random_trees, std::uint64_t seed) {
  std::vector<std::vector<TokenIds>> recipes;
  std::vector<const SentenceTree*> planted;
  for (const auto& s : samples) {
    if (!s.planted_tree) continue;
    recipes.push_back(encode_sentences(s, model.vocab));
    planted.push_back(&*s.planted_tree);
  }
  if (recipes.empty()) throw InputError("no samples with planted trees");
  const auto parsed = parse_recipes(model.encoder, recipes);
  Rng rng(seed);
  TreeRecovery out;
  out.samples = recipes.size();
  for (std::size_t i = 0; i < recipes.size(); ++i) {
    out.parser_f1 += unlabeled_f1(parsed[i], *planted[i]);
    double r = 0.0;
    for (std::size_t k = 0; k < random_trees; ++k) r += unlabeled_f1(random_binary_tree(recipes[i].size(), rng), *planted[i]);
    out.random_f1 += random_trees ? r / static_cast<double>(random_trees) : 0.0;
  }
  out.parser_f1 /= static_cast<double>(out.samples);
  out.random_f1 /= static_cast<double>(out.samples);
  return out;
}

}  // namespace sgn
