#include "sgn/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "sgn/errors.hpp"

namespace sgn {

namespace {

constexpr std::size_t kValidationCap = 100;
constexpr std::size_t kEvalBatch = 16;
constexpr std::size_t kRandomTrees = 1000;

std::string exact(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

double meta_double(const Checkpoint& c, const std::string& key) {
  auto it = c.meta.find(key);
  if (it == c.meta.end()) throw CheckpointError("checkpoint lacks '" + key + "'");
  return std::stod(it->second);
}

std::size_t meta_size(const Checkpoint& c, const std::string& key) {
  auto it = c.meta.find(key);
  if (it == c.meta.end()) throw CheckpointError("checkpoint lacks '" + key + "'");
  return static_cast<std::size_t>(std::stoull(it->second));
}

const std::string& meta_string(const Checkpoint& c, const std::string& key) {
  auto it = c.meta.find(key);
  if (it == c.meta.end()) throw CheckpointError("checkpoint lacks '" + key + "'");
  return it->second;
}

void export_params(const ParameterStore& store, Checkpoint& ckpt) {
  for (const auto& [name, m] : store.export_values()) ckpt.arrays["param/" + name] = m;
}

void import_params(ParameterStore& store, const Checkpoint& ckpt) {
  std::map<std::string, Matrix> values;
  for (const auto& [name, m] : ckpt.arrays)
    if (name.rfind("param/", 0) == 0) values.emplace(name.substr(6), m);
  store.import_values(values);
}

std::string join_lines(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& s : items) out += s + "\n";
  return out;
}

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(line);
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
}

std::vector<SgnExample> examples_for(std::span<const RecipeSample> corpus, Partition p, const Vocabulary& vocab,
                                     bool planted, std::size_t limit) {
  std::vector<SgnExample> out;
  for (const auto& s : corpus) {
    if (s.partition != p) continue;
    if (limit && out.size() >= limit) break;
    out.push_back(make_example(s, vocab, planted));
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------- trainer

JointTrainer::JointTrainer(SgnModel& model, std::vector<SgnExample> train, std::vector<SgnExample> val,
                           const TrainConfig& config, std::uint64_t seed)
    : model_(&model),
      train_(std::move(train)),
      val_(std::move(val)),
      config_(config),
      adam_(model.store().all(), AdamConfig{config.learning_rate}),
      rng_(seed ^ 0x5eedULL) {
  if (train_.empty()) throw InputError("no training examples");
  if (config_.batch == 0) throw ConfigError("batch must be at least 1");
  if (val_.size() > kValidationCap) val_.resize(kValidationCap);
  begin_epoch();
}

void JointTrainer::begin_epoch() {
  order_.resize(train_.size());
  std::iota(order_.begin(), order_.end(), 0);
  std::shuffle(order_.begin(), order_.end(), rng_);
  cursor_ = 0;
  epoch_loss_ = epoch_gen_ = epoch_tree_ = 0.0;
  epoch_tokens_ = epoch_samples_ = epoch_batches_ = 0;
}

bool JointTrainer::done() const {
  return epoch_ >= config_.epochs || (config_.max_steps && steps_ >= config_.max_steps);
}

double JointTrainer::step() {
  if (done()) throw TrainingError("training already finished");
  const std::size_t end = std::min(cursor_ + config_.batch, order_.size());
  std::vector<SgnExample> batch;
  for (std::size_t i = cursor_; i < end; ++i) batch.push_back(train_[order_[i]]);
  Graph g(true);
  BatchLoss bl = batch_loss(g, *model_, batch);
  const double loss = bl.total.scalar();
  if (!std::isfinite(loss)) throw TrainingError("joint loss became non-finite at step " + std::to_string(steps_ + 1));
  g.backward(bl.total);
  adam_.step();
  ++steps_;
  step_losses_.push_back(loss);
  epoch_loss_ += loss;
  epoch_gen_ += bl.gen_sum;
  epoch_tree_ += bl.tree_sum;
  epoch_tokens_ += bl.tokens;
  epoch_samples_ += batch.size();
  ++epoch_batches_;
  cursor_ = end;
  if (cursor_ == order_.size()) finish_epoch();
  return loss;
}

void JointTrainer::finish_epoch() {
  EpochRecord r;
  r.epoch = epoch_ + 1;
  r.steps = steps_;
  r.loss = epoch_loss_ / static_cast<double>(epoch_batches_);
  r.gen_nll = epoch_gen_ / static_cast<double>(epoch_tokens_);
  r.tree_nll = epoch_tree_ / static_cast<double>(epoch_samples_);
  r.learning_rate = adam_.learning_rate();
  if (!val_.empty()) {
    r.val_perplexity = teacher_forced_perplexity(*model_, val_);
    if (model_->config().use_tree) r.val_tree_ll = mean_tree_log_likelihood(*model_, val_);
  }
  curve_.push_back(r);
  ++epoch_;
  adam_.set_learning_rate(adam_.learning_rate() * config_.decay);
  begin_epoch();
}

void JointTrainer::run(const std::function<void(const EpochRecord&)>& on_epoch) {
  while (!done()) {
    const std::size_t before = curve_.size();
    step();
    if (on_epoch && curve_.size() != before) on_epoch(curve_.back());
  }
}

void JointTrainer::save(Checkpoint& ckpt) const {
  export_params(model_->store(), ckpt);
  ckpt.meta["model.seed"] = std::to_string(model_->seed());
  adam_.export_state(ckpt.arrays, ckpt.meta, "adam");
  ckpt.meta["trainer.rng"] = rng_state(rng_);
  std::string order;
  for (std::size_t i : order_) order += std::to_string(i) + ",";
  ckpt.meta["trainer.order"] = order;
  ckpt.meta["trainer.cursor"] = std::to_string(cursor_);
  ckpt.meta["trainer.epoch"] = std::to_string(epoch_);
  ckpt.meta["trainer.steps"] = std::to_string(steps_);
  ckpt.meta["trainer.epoch_loss"] = exact(epoch_loss_);
  ckpt.meta["trainer.epoch_gen"] = exact(epoch_gen_);
  ckpt.meta["trainer.epoch_tree"] = exact(epoch_tree_);
  ckpt.meta["trainer.epoch_tokens"] = std::to_string(epoch_tokens_);
  ckpt.meta["trainer.epoch_samples"] = std::to_string(epoch_samples_);
  ckpt.meta["trainer.epoch_batches"] = std::to_string(epoch_batches_);
  Matrix curve(curve_.size(), 8);
  for (std::size_t i = 0; i < curve_.size(); ++i) {
    const auto& r = curve_[i];
    const double row[] = {static_cast<double>(r.epoch), static_cast<double>(r.steps), r.loss, r.gen_nll,
                          r.tree_nll, r.val_perplexity, r.val_tree_ll, r.learning_rate};
    for (std::size_t c = 0; c < 8; ++c) curve(i, c) = row[c];
  }
  ckpt.arrays["trainer.curve"] = curve;
  ckpt.arrays["trainer.step_losses"] = Matrix(1, step_losses_.size(), step_losses_);
}

void JointTrainer::restore(const Checkpoint& ckpt) {
  if (meta_size(ckpt, "model.seed") != model_->seed()) {
    throw CheckpointError("checkpoint belongs to a model built with seed " + meta_string(ckpt, "model.seed") +
                          ", not " + std::to_string(model_->seed()));
  }
  import_params(model_->store(), ckpt);
  adam_.import_state(ckpt.arrays, ckpt.meta, "adam");
  set_rng_state(rng_, meta_string(ckpt, "trainer.rng"));
  order_.clear();
  std::istringstream in(meta_string(ckpt, "trainer.order"));
  std::string item;
  while (std::getline(in, item, ','))
    if (!item.empty()) order_.push_back(static_cast<std::size_t>(std::stoull(item)));
  if (order_.size() != train_.size()) throw CheckpointError("checkpoint was written for a different training set");
  cursor_ = meta_size(ckpt, "trainer.cursor");
  epoch_ = meta_size(ckpt, "trainer.epoch");
  steps_ = meta_size(ckpt, "trainer.steps");
  epoch_loss_ = meta_double(ckpt, "trainer.epoch_loss");
  epoch_gen_ = meta_double(ckpt, "trainer.epoch_gen");
  epoch_tree_ = meta_double(ckpt, "trainer.epoch_tree");
  epoch_tokens_ = meta_size(ckpt, "trainer.epoch_tokens");
  epoch_samples_ = meta_size(ckpt, "trainer.epoch_samples");
  epoch_batches_ = meta_size(ckpt, "trainer.epoch_batches");
  auto ic = ckpt.arrays.find("trainer.curve");
  auto is = ckpt.arrays.find("trainer.step_losses");
  if (ic == ckpt.arrays.end() || is == ckpt.arrays.end()) throw CheckpointError("checkpoint lacks trainer history");
  curve_.clear();
  for (std::size_t i = 0; i < ic->second.rows(); ++i) {
    const Matrix& m = ic->second;
    curve_.push_back(EpochRecord{static_cast<std::size_t>(m(i, 0)), static_cast<std::size_t>(m(i, 1)), m(i, 2),
                                 m(i, 3), m(i, 4), m(i, 5), m(i, 6), m(i, 7)});
  }
  const auto v = is->second.values();
  step_losses_.assign(v.begin(), v.end());
}

// ---------------------------------------------------------------- img2tree

double mean_tree_log_likelihood(const SgnModel& model, std::span<const SgnExample> examples) {
  if (examples.empty()) return 0.0;
  double total = 0.0;
  for (const auto& ex : examples)
    total += model.tree_generator().log_likelihood(model.provider().lookup(ex.image_key), ex.tree);
  return total / static_cast<double>(examples.size());
}

std::vector<TreeEpoch> train_img2tree(SgnModel& model, std::span<const SgnExample> train,
                                      std::span<const SgnExample> heldout, const TrainConfig& config,
                                      std::uint64_t seed) {
  if (train.empty()) throw InputError("no training trees");
  auto params = model.store().with_prefix("img2tree/");
  if (model.provider().trainable()) {
    for (Parameter* p : model.store().with_prefix("convnet/")) params.push_back(p);
  }
  Adam adam(params, AdamConfig{config.learning_rate});
  Rng rng(seed ^ 0x7eeULL);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<TreeEpoch> out;
  std::size_t steps = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch) {
      if (config.max_steps && steps >= config.max_steps) break;
      const std::size_t end = std::min(start + config.batch, order.size());
      std::vector<std::string> keys;
      std::vector<SentenceTree> trees;
      for (std::size_t i = start; i < end; ++i) {
        keys.push_back(train[order[i]].image_key);
        trees.push_back(train[order[i]].tree);
      }
      Graph g(true);
      Var f = model.provider().features(g, keys);
      Var nll = model.tree_generator().negative_log_likelihood(g, f, trees);
      if (!std::isfinite(nll.scalar())) throw TrainingError("tree loss became non-finite");
      total += nll.scalar();
      g.backward(scale(nll, 1.0 / static_cast<double>(trees.size())));
      adam.step();
      ++steps;
    }
    model.store().zero_grad();
    out.push_back(TreeEpoch{epoch + 1, total / static_cast<double>(train.size()),
                            mean_tree_log_likelihood(model, heldout)});
    adam.set_learning_rate(adam.learning_rate() * config.decay);
    if (config.max_steps && steps >= config.max_steps) break;
  }
  return out;
}

// ---------------------------------------------------------------- evaluation

double teacher_forced_perplexity(const SgnModel& model, std::span<const SgnExample> examples,
                                 std::span<const SentenceTree> trees) {
  if (examples.empty()) throw InputError("no examples to score");
  if (!trees.empty() && trees.size() != examples.size()) throw ShapeError("one tree per example is required");
  std::vector<double> logprobs;
  for (std::size_t start = 0; start < examples.size(); start += kEvalBatch) {
    const std::size_t end = std::min(start + kEvalBatch, examples.size());
    std::vector<std::string> keys;
    std::vector<std::vector<TokenIds>> ings;
    std::vector<SentenceTree> ts;
    std::vector<TokenIds> targets;
    for (std::size_t i = start; i < end; ++i) {
      keys.push_back(examples[i].image_key);
      ings.push_back(examples[i].ingredients);
      ts.push_back(trees.empty() ? examples[i].tree : trees[i]);
      targets.push_back(examples[i].target);
    }
    Graph g(false);
    ConditioningBundle b = model.bundle(g, keys, ings, ts);
    generation_loss(g, model.decoder(), b, targets, &logprobs);
  }
  return perplexity(logprobs);
}

TokenIds strip_separators(std::span<const std::size_t> tokens) {
  TokenIds out;
  for (std::size_t t : tokens)
    if (t != Vocabulary::kSep) out.push_back(t);
  return out;
}

EvalReport evaluate_model(const SgnModel& model, std::span<const SgnExample> examples, BleuMean mean,
                          std::vector<SampleOutput>* outputs) {
  if (examples.empty()) throw InputError("no examples to evaluate");
  std::vector<SentenceTree> trees;
  std::vector<TokenIds> candidates, references;
  for (const auto& ex : examples) {
    Prediction p = predict(model, ex.image_key, ex.ingredients);
    trees.push_back(p.tree);
    candidates.push_back(strip_separators(p.recipe.tokens));
    references.push_back(strip_separators(ex.target));
    if (outputs) outputs->push_back(SampleOutput{ex.image_key, p.tree, p.recipe.tokens});
  }
  EvalReport r;
  r.perplexity = teacher_forced_perplexity(model, examples, trees);
  r.bleu = bleu(candidates, references, mean);
  r.rouge_l = rouge_l(candidates, references);
  r.avg_length = avg_length(candidates);
  r.reference_length = avg_length(references);
  double sb = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) sb += sentence_bleu(candidates[i], references[i], mean);
  r.sentence_bleu = sb / static_cast<double>(candidates.size());
  r.samples = examples.size();
  return r;
}

// ---------------------------------------------------------------- persistence

void save_model(const std::filesystem::path& path, const SgnModel& model, const Vocabulary& vocab,
                const ExperimentConfig& config) {
  Checkpoint c;
  c.fingerprint = config_fingerprint(config);
  c.meta["kind"] = "sgn";
  c.meta["config"] = serialize_config(config);
  c.meta["vocab"] = join_lines(vocab.regular_tokens());
  c.meta["model.seed"] = std::to_string(model.seed());
  export_params(model.store(), c);
  write_checkpoint(path, c);
}

LoadedModel load_model(const std::filesystem::path& path) {
  const Checkpoint c = read_checkpoint(path);
  if (meta_string(c, "kind") != "sgn") throw CheckpointError(path.string() + " is not a generator checkpoint");
  LoadedModel out;
  out.config = parse_config(meta_string(c, "config"));
  if (config_fingerprint(out.config) != c.fingerprint) throw CheckpointError("checkpoint fingerprint mismatch");
  out.vocab = Vocabulary(split_lines(meta_string(c, "vocab")));
  out.model = std::make_unique<SgnModel>(out.vocab.size(), out.config.sgn, meta_size(c, "model.seed"));
  import_params(out.model->store(), c);
  return out;
}

void save_parser(const std::filesystem::path& path, const ParserModel& parser, const ExperimentConfig& config) {
  Checkpoint c;
  c.fingerprint = config_fingerprint(config);
  c.meta["kind"] = "parser";
  c.meta["config"] = serialize_config(config);
  c.meta["vocab"] = join_lines(parser.vocab.regular_tokens());
  export_params(parser.store, c);
  write_checkpoint(path, c);
}

LoadedParser load_parser(const std::filesystem::path& path) {
  const Checkpoint c = read_checkpoint(path);
  if (meta_string(c, "kind") != "parser") throw CheckpointError(path.string() + " is not a parser checkpoint");
  LoadedParser out;
  out.config = parse_config(meta_string(c, "config"));
  out.parser = std::make_unique<ParserModel>(Vocabulary(split_lines(meta_string(c, "vocab"))), out.config.parser,
                                             out.config.model_seed);
  import_params(out.parser->store, c);
  return out;
}

std::vector<RecipeSample> load_experiment_corpus(const ExperimentConfig& config) {
  if (config.corpus_path.empty()) return make_synthetic_corpus(config.synthetic, config.data_seed);
  return load_recipe1m(config.corpus_path, config.min_sentences);
}

std::filesystem::path RunPaths::file(const std::string& stem, const std::string& ext) const {
  return dir / (stem + "-" + fingerprint + "." + ext);
}

RunPaths run_paths(const ExperimentConfig& config, const std::filesystem::path& artifact_root) {
  RunPaths p;
  p.fingerprint = config_fingerprint(config);
  p.dir = artifact_root / (config.run_name + "-" + p.fingerprint);
  return p;
}

std::filesystem::path artifact_root_from_env() {
  const char* env = std::getenv("SGN_ARTIFACT_ROOT");
  return env && *env ? std::filesystem::path(env) : std::filesystem::path("artifacts");
}

// ---------------------------------------------------------------- pipeline

namespace {

std::string curve_csv(const std::string& fingerprint, std::span<const EpochRecord> curve) {
  std::ostringstream os;
  os.precision(10);
  os << "# fingerprint=" << fingerprint << "\n";
  os << "epoch,steps,loss,gen_nll,tree_nll,val_perplexity,val_tree_ll,learning_rate\n";
  for (const auto& r : curve) {
    os << r.epoch << ',' << r.steps << ',' << r.loss << ',' << r.gen_nll << ',' << r.tree_nll << ','
       << r.val_perplexity << ',' << r.val_tree_ll << ',' << r.learning_rate << "\n";
  }
  return os.str();
}

std::string steps_csv(const std::string& fingerprint, std::span<const double> losses) {
  std::ostringstream os;
  os.precision(17);
  os << "# fingerprint=" << fingerprint << "\nstep,loss\n";
  for (std::size_t i = 0; i < losses.size(); ++i) os << i + 1 << ',' << losses[i] << "\n";
  return os.str();
}

}  // namespace

PipelineResult run_pipeline(const ExperimentConfig& config, const std::filesystem::path& artifact_root,
                            const ProgressLog& log) {
  validate(config);
  auto say = [&](const std::string& m) {
    if (log) log(m);
  };
  PipelineResult result;
  result.paths = run_paths(config, artifact_root);
  const RunPaths& paths = result.paths;
  std::filesystem::create_directories(paths.dir);
  const auto state_path = paths.file("state", "json");
  auto write_state = [&](const std::string& stage, const std::string& status, const std::string& message) {
    nlohmann::json j{{"fingerprint", paths.fingerprint}, {"stage", stage}, {"status", status}};
    if (!message.empty()) j["message"] = message;
    write_text(state_path, j.dump(2) + "\n");
  };
  write_text(paths.file("config", "txt"), serialize_config(config));

  std::string stage = "stage1";
  try {
    auto corpus = load_experiment_corpus(config);
    const Vocabulary vocab = Vocabulary::build(corpus, config.vocab_min_count);
    say("corpus: " + std::to_string(corpus.size()) + " recipes, vocabulary " + std::to_string(vocab.size()));

    // Stage 1: sentence-level parser, then annotation.
    write_state(stage, "running", "");
    const auto parser_path = paths.file("parser", "ckpt");
    const bool needs_parser = config.sgn.use_tree && !config.use_planted_trees;
    if (needs_parser) {
      std::unique_ptr<ParserModel> parser;
      if (config.resume && std::filesystem::exists(parser_path)) {
        parser = std::move(load_parser(parser_path).parser);
        say("stage 1: loaded " + parser_path.string());
      } else {
        parser = std::make_unique<ParserModel>(vocab, config.parser, config.model_seed);
        if (config.train_parser) {
          result.parser = train_recipe2tree(*parser, corpus, config.model_seed, [&](const ParserEpoch& e) {
            say("stage 1 epoch " + std::to_string(e.epoch) + ": qt loss " + exact(e.train_loss) +
                ", val accuracy " + exact(e.val_accuracy));
          });
          std::ostringstream csv;
          csv << "# fingerprint=" << paths.fingerprint << "\nepoch,train_loss,val_accuracy\n0,,"
              << exact(result.parser.untrained_val_accuracy) << "\n";
          for (const auto& e : result.parser.epochs) {
            csv << e.epoch << ',' << exact(e.train_loss) << ',' << exact(e.val_accuracy) << "\n";
          }
          write_text(paths.file("parser_curve", "csv"), csv.str());
        }
        save_parser(parser_path, *parser, config);
      }
      const auto test = select_partition(corpus, Partition::test);
      if (std::any_of(test.begin(), test.end(), [](const RecipeSample& s) { return s.planted_tree.has_value(); })) {
        result.recovery = evaluate_tree_recovery(*parser, test, kRandomTrees, config.data_seed);
        say("stage 1: tree F1 " + exact(result.recovery->parser_f1) + ", random binary trees " +
            exact(result.recovery->random_f1));
      }
      annotate_corpus(*parser, corpus);
    } else {
      say("stage 1: skipped, the generator does not read parsed trees");
    }
    write_corpus(paths.file("corpus", "json"), corpus);

    // Stage 2: joint training.
    stage = "stage2";
    write_state(stage, "running", "");
    SgnModel model(vocab.size(), config.sgn, config.model_seed);
    auto train = examples_for(corpus, Partition::train, vocab, config.use_planted_trees, config.train_limit);
    auto val = examples_for(corpus, Partition::val, vocab, config.use_planted_trees, kValidationCap);
    const auto ckpt_path = paths.file("sgn", "ckpt");
    JointTrainer trainer(model, train, val, config.train, config.model_seed);
    auto save_all = [&] {
      Checkpoint c;
      c.fingerprint = paths.fingerprint;
      c.meta["kind"] = "sgn";
      c.meta["config"] = serialize_config(config);
      c.meta["vocab"] = join_lines(vocab.regular_tokens());
      trainer.save(c);
      write_checkpoint(ckpt_path, c);
      write_text(paths.file("loss_curve", "csv"), curve_csv(paths.fingerprint, trainer.curve()));
      write_text(paths.file("step_loss", "csv"), steps_csv(paths.fingerprint, trainer.step_losses()));
    };
    if (config.resume && std::filesystem::exists(ckpt_path)) {
      const Checkpoint c = read_checkpoint(ckpt_path);
      if (c.fingerprint != paths.fingerprint) throw CheckpointError("stage-2 checkpoint fingerprint mismatch");
      trainer.restore(c);
      say("stage 2: resumed at step " + std::to_string(trainer.steps()));
    } else if (config.img2tree_epochs > 0 && config.sgn.use_tree) {
      TrainConfig tc = config.train;
      tc.epochs = config.img2tree_epochs;
      tc.max_steps = 0;
      for (const auto& e : train_img2tree(model, train, val, tc, config.model_seed)) {
        say("img2tree epoch " + std::to_string(e.epoch) + ": nll " + exact(e.train_nll) + ", held-out ll " +
            exact(e.heldout_ll));
      }
    }
    if (config.train_joint) {
      trainer.run([&](const EpochRecord& r) {
        say("stage 2 epoch " + std::to_string(r.epoch) + ": loss " + exact(r.loss) + ", token nll " +
            exact(r.gen_nll) + ", val ppl " + exact(r.val_perplexity));
        save_all();
      });
    }
    save_all();
    result.curve = trainer.curve();
    result.step_losses = trainer.step_losses();

    // Stage 3: evaluation with generated trees.
    stage = "stage3";
    write_state(stage, "running", "");
    const Partition split = parse_partition(config.eval_split);
    auto test = examples_for(corpus, split, vocab, config.use_planted_trees, config.eval_limit);
    std::vector<SampleOutput> outputs;
    result.report = evaluate_model(model, test, config.bleu_mean, &outputs);
    result.report.split = config.eval_split;
    result.report.fingerprint = paths.fingerprint;
    write_text(paths.file("report", "json"), report_to_json(result.report) + "\n");
    std::ostringstream pred;
    pred << "# fingerprint=" << paths.fingerprint << "\n";
    for (const auto& o : outputs) {
      pred << o.image_key << "\t" << o.tree.bracketed() << "\t" << vocab.decode(o.tokens) << "\n";
    }
    write_text(paths.file("predictions", "tsv"), pred.str());
    write_state("done", "complete", "");
    say("stage 3: perplexity " + exact(result.report.perplexity) + ", bleu " + exact(result.report.bleu) +
        ", rouge-l " + exact(result.report.rouge_l));
  } catch (const std::exception& e) {
    write_state(stage, "failed", e.what());
    throw;
  }
  return result;
}

}  // namespace sgn
