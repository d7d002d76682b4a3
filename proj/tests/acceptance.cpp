// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "oracles.hpp"
#include "sgn/errors.hpp"
#include "sgn/gradcheck.hpp"
#include "sgn/pipeline.hpp"

using namespace sgn;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(const std::string& name, const std::function<Outcome()>& check) {
  const auto start = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("threw: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (!o.pass) ++failures;
  std::printf("%s %s: %s [%.0fs]\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str(), secs);
  std::fflush(stdout);
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string fmt(double x, int digits = 3) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << x;
  return os.str();
}

std::string sci(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2e", x);
  return buf;
}

std::string list(const std::vector<double>& v, int digits = 3) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + fmt(v[i], digits);
  return s + "]";
}

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::normal_distribution<double> d(0.0, 1.0);
  Matrix m(r, c);
  for (double& v : m.values()) v = d(rng);
  return m;
}

Parameter& random_param(ParameterStore& store, const std::string& name, std::size_t r, std::size_t c,
                        std::mt19937_64& rng) {
  Parameter& p = store.create(name, r, c);
  p.value = random_matrix(r, c, rng);
  return p;
}

Var project(Var x, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sum(mul(x, x.graph().constant(random_matrix(x.rows(), x.cols(), rng))));
}

struct SeedRuns {
  std::vector<PipelineResult> sgn, base;
};

// ---------------------------------------------------------------- criteria

Outcome gradient_suite() {
  std::vector<std::string> parts;
  double worst = 0.0;
  auto record = [&](const std::string& what, double err) {
    worst = std::max(worst, err);
    parts.push_back(what + " " + sci(err));
  };
  std::mt19937_64 r(1);
  {
    ParameterStore store;
    Rng rng(1);
    OrderedNeuronsCell cell(store, "cell", 4, 8, 2, rng);
    auto& x = random_param(store, "x", 3, 4, r);
    auto& h = random_param(store, "h", 3, 8, r);
    auto& c = random_param(store, "c", 3, 8, r);
    auto loss = [&](Graph& g) {
      auto a = cell.step(g, g.parameter(x), g.parameter(h), g.parameter(c));
      auto b = cell.step(g, g.parameter(x), a.h, a.c);
      const Var outs[] = {b.h, b.c, a.master_forget};
      return project(concat_cols(outs), 2);
    };
    record("on-lstm", worst_relative_error(gradient_check(store.all(), loss)));
  }
  {
    ParameterStore store;
    Rng rng(2);
    GraphAttentionLayer layer(store, "gat", 5, 4, 3, rng);
    auto& z = random_param(store, "z", 7, 5, r);
    const Matrix mask = neighbour_mask(SentenceTree::from_parents({-1, 0, 0, 1, 1, 2, 2}));
    auto loss = [&](Graph& g) { return project(layer.forward(g, g.parameter(z), mask), 3); };
    record("gat", worst_relative_error(gradient_check(store.all(), loss)));
  }
  {
    ParameterStore store;
    Rng rng(3);
    DecoderConfig dc;
    dc.vocab = 11;
    dc.width = 16;
    dc.layers = 2;
    dc.heads = 2;
    dc.ffn = 24;
    dc.max_positions = 12;
    TransformerDecoder dec(store, "dec", dc, rng);
    auto& mem = random_param(store, "mem", 3, 16, r);
    const std::vector<std::size_t> in{1, 5, 7, 2, 9};
    const std::size_t targets[] = {5, 7, 2, 9, 3};
    auto loss = [&](Graph& g) { return cross_entropy(dec.forward(g, in, g.parameter(mem)), targets); };
    GradCheckOptions opts;
    opts.max_entries = 60;
    record("decoder", worst_relative_error(gradient_check(store.all(), loss, opts)));
  }
  {
    ParameterStore store;
    Rng rng(4);
    IngredientEncoder enc(store, "ing", 30, 6, rng);
    const std::vector<std::vector<TokenIds>> lists{{{5, 6}, {7}}, {{8}, {8}, {9, 10, 11}}};
    auto loss = [&](Graph& g) { return project(enc.encode(g, lists), 4); };
    record("ingredients", worst_relative_error(gradient_check(store.all(), loss)));
  }
  std::string detail = "worst relative error " + sci(worst) + " (";
  for (std::size_t i = 0; i < parts.size(); ++i) detail += (i ? ", " : "") + parts[i];
  return {worst < 1e-4, detail + ") < 1e-4"};
}

Outcome codec_suite() {
  std::mt19937_64 rng(7);
  std::size_t failed = 0, largest = 0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t n = 1 + rng() % 39;
    std::vector<int> parents{SentenceTree::kNoParent};
    for (std::size_t k = 1; k < n; ++k) parents.push_back(static_cast<int>(rng() % k));
    const SentenceTree t = SentenceTree::from_parents(parents);
    const AdjacencyVector v = encode_tree(t);
    const SentenceTree back = decode_vector(AdjacencyVector::parse(v.to_string()));
    bool same = back.node_count() == n && back.bracketed() == t.bracketed();
    for (std::size_t k = 1; same && k < n; ++k) same = back.parent(k) == parents[k];
    failed += !same;
    largest = std::max(largest, n);
  }
  return {failed == 0, std::to_string(failed) + " failures over 1000 random trees (largest " + std::to_string(largest) +
                           " nodes)"};
}

Outcome metric_oracles() {
  std::mt19937_64 rng(11);
  std::vector<TokenIds> cands, refs;
  for (int i = 0; i < 50; ++i) {
    TokenIds ref(rng() % 31);
    for (auto& t : ref) t = 5 + rng() % 8;
    TokenIds cand;
    for (std::size_t t : ref) {
      const auto k = rng() % 8;
      if (k == 0) continue;
      cand.push_back(k == 1 ? 5 + rng() % 8 : t);
    }
    refs.push_back(ref);
    cands.push_back(cand);
  }
  const double db = std::abs(bleu(cands, refs) - testutil::oracle_bleu(cands, refs, false));
  const double da = std::abs(bleu(cands, refs, BleuMean::arithmetic) - testutil::oracle_bleu(cands, refs, true));
  const double dr = std::abs(rouge_l(cands, refs) - testutil::oracle_rouge(cands, refs));

  // Uniform decoder over V = 100: zero read-out, so every logit is equal.
  ParameterStore store;
  Rng prng(5);
  DecoderConfig dc;
  dc.vocab = 100;
  dc.width = 16;
  dc.heads = 2;
  TransformerDecoder dec(store, "dec", dc, prng);
  store.find("dec/out/w")->value.fill(0.0);
  store.find("dec/out/b")->value.fill(0.0);
  Graph g(false);
  Matrix mem(2, 16, 0.3);
  std::vector<double> logprobs;
  const std::vector<std::vector<std::size_t>> seqs{{1, 7, 8, 9}, {1, 20, 21}};
  const std::size_t rows[] = {1, 1};
  const std::size_t targets[] = {7, 8, 9, 2, 20, 21, 2};
  cross_entropy(dec.forward_packed(g, seqs, g.constant(mem), rows), targets, &logprobs);
  const double ppl = perplexity(logprobs);
  const bool pass = db < 1e-9 && da < 1e-9 && dr < 1e-9 && std::abs(ppl - 100.0) < 1e-6;
  std::ostringstream os;
  os.precision(3);
  os << "50 pairs: |BLEU - oracle| " << db << ", arithmetic " << da << ", |ROUGE-L - oracle| " << dr
     << " (< 1e-9); uniform V=100 perplexity " << std::setprecision(12) << ppl;
  return {pass, os.str()};
}

Outcome untrained_qt(const ExperimentConfig& base) {
  auto corpus = load_experiment_corpus(base);
  const Vocabulary vocab = Vocabulary::build(corpus, base.vocab_min_count);
  const auto test = select_partition(corpus, Partition::test);
  const auto items = make_qt_items(test, vocab, base.parser.k, base.parser.random_context, 99);
  // Each batch is scored by its own freshly initialised parser, so the mean
  // estimates chance accuracy over initialisations.
  double hits = 0;
  std::size_t scored = 0;
  std::mt19937_64 rng(3);
  for (std::size_t b = 0; b < 100; ++b) {
    std::vector<QTBatch> batch;
    for (std::size_t i = 0; i < 16; ++i) batch.push_back(items[rng() % items.size()]);
    ParserModel model(vocab, base.parser, 1000 + b);
    hits += qt_accuracy(model.encoder, batch) * static_cast<double>(batch.size());
    scored += batch.size();
  }
  const double acc = hits / static_cast<double>(scored);
  return {std::abs(acc - 0.25) <= 0.05,
          "accuracy " + fmt(acc) + " over 100 batches of 16 (K=" + std::to_string(base.parser.k) +
              "), target 0.25 +/- 0.05"};
}

Outcome img2tree_overfit(const ExperimentConfig& base) {
  SyntheticConfig sc = base.synthetic;
  auto corpus = make_synthetic_corpus(sc, base.data_seed);
  const RecipeSample* pick = nullptr;
  for (const auto& s : corpus)
    if (s.planted_tree && (!pick || s.planted_tree->node_count() > pick->planted_tree->node_count())) pick = &s;
  SgnModel model(10, base.sgn, base.model_seed);
  const Matrix f = model.provider().lookup(pick->image_key);
  const SentenceTree target = *pick->planted_tree;
  auto params = model.store().with_prefix("img2tree/");
  Adam adam(params, AdamConfig{base.train.learning_rate});
  std::size_t step = 0;
  for (; step < 2000; ++step) {
    if (step % 25 == 0 && model.tree_generator().generate(f).bracketed() == target.bracketed()) break;
    Graph g;
    Var l = model.tree_generator().negative_log_likelihood(g, g.constant(f), std::span(&target, 1));
    g.backward(l);
    adam.step();
  }
  const SentenceTree got = model.tree_generator().generate(f);
  const bool same = got.bracketed() == target.bracketed();
  return {same, "target " + target.bracketed() + " (" + std::to_string(target.node_count()) + " nodes) " +
                    (same ? "reproduced after " + std::to_string(step) + " steps" : "not reproduced, got " + got.bracketed())};
}

Outcome img2tree_validity(const PipelineResult& run) {
  const LoadedModel loaded = load_model(run.paths.file("sgn", "ckpt"));
  const auto corpus = load_experiment_corpus(loaded.config);
  const auto test = select_partition(corpus, Partition::test);
  std::size_t valid = 0, total = 0, sampled_nodes = 0;
  for (std::size_t i = 0; total < 1000; ++i) {
    const auto& s = test[i % test.size()];
    const Matrix f = loaded.model->provider().lookup(s.image_key);
    const DecodeMode mode = i < test.size() ? DecodeMode::greedy : DecodeMode::sample;
    ++total;
    try {
      const SentenceTree t = loaded.model->tree_generator().generate(f, mode, i);
      // Rebuilding through the checked constructor re-validates every invariant.
      std::vector<int> parents;
      for (std::size_t k = 0; k < t.node_count(); ++k) parents.push_back(t.parent(k));
      const SentenceTree again(parents, t.leaf_labels());
      if (t.node_count() <= loaded.config.sgn.max_nodes && decode_vector(encode_tree(again)).bracketed() == t.bracketed()) {
        ++valid;
        sampled_nodes += t.node_count();
      }
    } catch (const Error&) {
    }
  }
  return {valid == total, std::to_string(valid) + "/" + std::to_string(total) +
                              " generated trees valid (trained seed-1 model, mean " +
                              fmt(static_cast<double>(sampled_nodes) / std::max<std::size_t>(valid, 1), 1) + " nodes)"};
}

Outcome overfit_smoke(const ExperimentConfig& base) {
  auto corpus = load_experiment_corpus(base);
  const Vocabulary vocab = Vocabulary::build(corpus, base.vocab_min_count);
  std::vector<SgnExample> train;
  for (const auto& s : corpus)
    if (s.partition == Partition::train && train.size() < 32) train.push_back(make_example(s, vocab, true));
  SgnModel model(vocab.size(), base.sgn, base.model_seed);
  TrainConfig tc = base.train;
  tc.epochs = 1000;
  tc.max_steps = 300;
  JointTrainer trainer(model, train, {}, tc, base.model_seed);
  double ppl = 0;
  std::size_t reached = 0;
  while (!trainer.done()) {
    trainer.step();
    if (trainer.steps() % 10 == 0) {
      ppl = teacher_forced_perplexity(model, train);
      if (ppl < 1.5) {
        reached = trainer.steps();
        break;
      }
    }
  }
  std::size_t verbatim = 0;
  for (const auto& ex : train) {
    const auto p = predict(model, ex.image_key, ex.ingredients);
    verbatim += p.recipe.ended && p.recipe.tokens == ex.target;
  }
  return {reached > 0 && verbatim >= 1, "train perplexity " + fmt(ppl) +
                                            (reached ? " at step " + std::to_string(reached) : " after 300 steps") +
                                            " (< 1.5 within 300); " + std::to_string(verbatim) +
                                            "/32 recipes reproduced verbatim (>= 1)"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SGN acceptance run"};
  std::string root = "acceptance_artifacts";
  std::vector<std::uint64_t> seeds{1, 2, 3};
  app.add_option("--artifacts", root, "directory for pipeline runs");
  app.add_option("--seeds", seeds, "data and model seeds for the comparative runs");
  CLI11_PARSE(app, argc, argv);

  ExperimentConfig base;  // desk preset
  report("gradient-suite", gradient_suite);
  report("codec-round-trip", codec_suite);
  report("metric-oracles", metric_oracles);
  report("qt-untrained", [&] { return untrained_qt(base); });
  report("img2tree-overfit-single", [&] { return img2tree_overfit(base); });
  report("overfit-smoke", [&] { return overfit_smoke(base); });

  SeedRuns runs;
  std::string run_error;
  const auto start = std::chrono::steady_clock::now();
  try {
    for (std::uint64_t seed : seeds) {
      ExperimentConfig sgn = base;
      sgn.data_seed = seed;
      sgn.model_seed = seed;
      sgn.run_name = "sgn-s" + std::to_string(seed);
      ExperimentConfig baseline = sgn;
      baseline.run_name = "baseline-s" + std::to_string(seed);
      baseline.sgn.use_tree = false;
      baseline.sgn.lambda_tree = 0.0;
      runs.sgn.push_back(run_pipeline(sgn, root));
      runs.base.push_back(run_pipeline(baseline, root));
      const auto& a = runs.sgn.back().report;
      const auto& b = runs.base.back().report;
      std::printf("  seed %llu: sgn ppl %.4f bleu %.2f rouge %.2f len %.1f | baseline ppl %.4f bleu %.2f rouge %.2f len %.1f | truth %.1f\n",
                  static_cast<unsigned long long>(seed), a.perplexity, 100 * a.bleu, 100 * a.rouge_l, a.avg_length,
                  b.perplexity, 100 * b.bleu, 100 * b.rouge_l, b.avg_length, a.reference_length);
      std::fflush(stdout);
    }
  } catch (const std::exception& e) {
    run_error = e.what();
  }
  const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() / 60.0;
  const bool complete = run_error.empty() && runs.sgn.size() == seeds.size();
  auto need_runs = [&](const std::function<Outcome()>& f) {
    return [&, f] { return complete ? f() : Outcome{false, "comparative runs failed: " + run_error}; };
  };

  report("table1-direction", need_runs([&] {
           std::vector<double> dppl, dbleu, drouge;
           for (std::size_t i = 0; i < runs.sgn.size(); ++i) {
             const auto d = compare_reports(runs.base[i].report, runs.sgn[i].report);
             dppl.push_back(d.perplexity);
             dbleu.push_back(100 * d.bleu);
             drouge.push_back(100 * d.rouge_l);
           }
           const bool pass = median(dbleu) > 0 && median(drouge) > 0 && median(dppl) < 0;
           return Outcome{pass, "median sgn-minus-baseline over seeds: perplexity " + fmt(median(dppl), 4) + " " +
                                    list(dppl, 4) + ", BLEU " + fmt(median(dbleu), 2) + " " + list(dbleu, 2) +
                                    ", ROUGE-L " + fmt(median(drouge), 2) + " " + list(drouge, 2) + "; " +
                                    fmt(minutes, 1) + " min for " + std::to_string(2 * seeds.size()) + " runs"};
         }));
  report("table2-length", need_runs([&] {
           std::vector<double> closer, gs, gb;
           for (std::size_t i = 0; i < runs.sgn.size(); ++i) {
             const auto d = compare_reports(runs.base[i].report, runs.sgn[i].report);
             closer.push_back(d.closer_by);
             gb.push_back(d.length_gap_a);
             gs.push_back(d.length_gap_b);
           }
           return Outcome{median(closer) > 0, "median |len - truth|: sgn " + fmt(median(gs), 2) + " " + list(gs, 2) +
                                                  " vs baseline " + fmt(median(gb), 2) + " " + list(gb, 2)};
         }));
  report("qt-trained", need_runs([&] {
           std::vector<double> acc;
           for (const auto& r : runs.sgn) acc.push_back(r.parser.epochs.empty() ? 0.0 : r.parser.epochs.back().val_accuracy);
           return Outcome{median(acc) > 0.5, "validation accuracy " + list(acc) + ", median " + fmt(median(acc)) + " > 0.5"};
         }));
  report("tree-recovery", need_runs([&] {
           std::vector<double> margin, f1, rnd;
           for (const auto& r : runs.sgn) {
             if (!r.recovery) throw InputError("run has no tree-recovery figures");
             f1.push_back(r.recovery->parser_f1);
             rnd.push_back(r.recovery->random_f1);
             margin.push_back(r.recovery->parser_f1 - r.recovery->random_f1);
           }
           return Outcome{median(margin) > 0.05, "parser F1 " + list(f1) + " vs random binary " + list(rnd) +
                                                     " (1000 trees/sample); median margin " + fmt(median(margin)) +
                                                     " > 0.05"};
         }));
  report("img2tree-validity", need_runs([&] { return img2tree_validity(runs.sgn.front()); }));

  std::printf("%s: %d criteria failed\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
