#include "sgn/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "sgn/encoders.hpp"
#include "sgn/errors.hpp"

namespace sgn {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError("'" + key + "' expects a count, got '" + v + "'");
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError("'" + key + "' expects an integer, got '" + v + "'");
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("'" + key + "' expects a number, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("'" + key + "' expects true or false, got '" + v + "'");
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::string fmt(bool v) { return v ? "true" : "false"; }
std::string fmt(std::size_t v) { return std::to_string(v); }
std::string fmt_u64(std::uint64_t v) { return std::to_string(v); }

struct Field {
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&, const std::string&)> set;
  bool run_control = false;  // excluded from the fingerprint
};

#define SGN_SIZE(name, member)                                                          \
  {                                                                                     \
    name, Field {                                                                       \
      [](const ExperimentConfig& c) { return fmt(c.member); },                          \
          [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.member = to_size(k, v); } \
    }                                                                                   \
  }
#define SGN_DOUBLE(name, member)                                                        \
  {                                                                                     \
    name, Field {                                                                       \
      [](const ExperimentConfig& c) { return fmt(c.member); },                          \
          [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.member = to_double(k, v); } \
    }                                                                                   \
  }
#define SGN_BOOL(name, member)                                                          \
  {                                                                                     \
    name, Field {                                                                       \
      [](const ExperimentConfig& c) { return fmt(c.member); },                          \
          [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.member = to_bool(k, v); } \
    }                                                                                   \
  }
#define SGN_STRING(name, member)                                                        \
  {                                                                                     \
    name, Field {                                                                       \
      [](const ExperimentConfig& c) { return c.member; },                               \
          [](ExperimentConfig& c, const std::string&, const std::string& v) { c.member = v; } \
    }                                                                                   \
  }

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = [] {
    std::map<std::string, Field> t = {
        SGN_STRING("preset", preset),
        SGN_STRING("corpus_path", corpus_path),
        SGN_SIZE("min_sentences", min_sentences),
        SGN_SIZE("vocab_min_count", vocab_min_count),
        SGN_SIZE("synthetic.train_size", synthetic.train_size),
        SGN_SIZE("synthetic.val_size", synthetic.val_size),
        SGN_SIZE("synthetic.test_size", synthetic.test_size),
        SGN_SIZE("synthetic.vocab_size", synthetic.vocab_size),
        SGN_SIZE("synthetic.min_sentences", synthetic.min_sentences),
        SGN_SIZE("synthetic.max_sentences", synthetic.max_sentences),
        SGN_SIZE("synthetic.phases", synthetic.phases),
        SGN_SIZE("synthetic.dishes", synthetic.dishes),
        SGN_SIZE("synthetic.ingredients_per_dish", synthetic.ingredients_per_dish),
        SGN_SIZE("train_limit", train_limit),
        SGN_SIZE("eval_limit", eval_limit),
        SGN_STRING("eval_split", eval_split),
        SGN_SIZE("parser.embedding", parser.embedding),
        SGN_SIZE("parser.hidden", parser.hidden),
        SGN_SIZE("parser.chunk", parser.chunk),
        SGN_SIZE("parser.word_layers", parser.word_layers),
        SGN_SIZE("parser.sentence_layers", parser.sentence_layers),
        SGN_SIZE("parser.distance_layer", parser.distance_layer),
        SGN_SIZE("parser.k", parser.k),
        SGN_BOOL("parser.random_context", parser.random_context),
        SGN_SIZE("parser.epochs", parser.epochs),
        SGN_SIZE("parser.batch", parser.batch),
        SGN_DOUBLE("parser.learning_rate", parser.learning_rate),
        SGN_DOUBLE("parser.decay", parser.decay),
        SGN_SIZE("sgn.width", sgn.width),
        SGN_SIZE("sgn.layers", sgn.layers),
        SGN_SIZE("sgn.heads", sgn.heads),
        SGN_SIZE("sgn.ffn", sgn.ffn),
        SGN_SIZE("sgn.tree_layers", sgn.tree_layers),
        SGN_SIZE("sgn.gat_layers", sgn.gat_layers),
        SGN_SIZE("sgn.gat_heads", sgn.gat_heads),
        SGN_SIZE("sgn.gat_hidden", sgn.gat_hidden),
        SGN_SIZE("sgn.max_nodes", sgn.max_nodes),
        SGN_DOUBLE("sgn.lambda_gen", sgn.lambda_gen),
        SGN_DOUBLE("sgn.lambda_tree", sgn.lambda_tree),
        SGN_BOOL("sgn.use_tree", sgn.use_tree),
        SGN_STRING("sgn.provider", sgn.provider),
        SGN_STRING("sgn.feature_file", sgn.feature_file),
        SGN_DOUBLE("sgn.feature_noise", sgn.feature_noise),
        SGN_SIZE("train.epochs", train.epochs),
        SGN_SIZE("train.batch", train.batch),
        SGN_DOUBLE("train.learning_rate", train.learning_rate),
        SGN_DOUBLE("train.decay", train.decay),
        SGN_BOOL("train_parser", train_parser),
        SGN_SIZE("img2tree_epochs", img2tree_epochs),
        SGN_BOOL("train_joint", train_joint),
        SGN_BOOL("use_planted_trees", use_planted_trees),
    };
    t["sgn.tree_memory"] = Field{
        [](const ExperimentConfig& c) { return std::string(c.sgn.tree_memory == TreeMemory::pooled ? "pooled" : "nodes"); },
        [](ExperimentConfig& c, const std::string& k, const std::string& v) {
          if (v == "pooled") c.sgn.tree_memory = TreeMemory::pooled;
          else if (v == "nodes") c.sgn.tree_memory = TreeMemory::nodes;
          else throw ConfigError("'" + k + "' expects pooled or nodes, got '" + v + "'");
        }};
    t["bleu_mean"] = Field{
        [](const ExperimentConfig& c) {
          return std::string(c.bleu_mean == BleuMean::geometric ? "geometric" : "arithmetic");
        },
        [](ExperimentConfig& c, const std::string& k, const std::string& v) {
          if (v == "geometric") c.bleu_mean = BleuMean::geometric;
          else if (v == "arithmetic") c.bleu_mean = BleuMean::arithmetic;
          else throw ConfigError("'" + k + "' expects geometric or arithmetic, got '" + v + "'");
        }};
    t["data_seed"] = Field{[](const ExperimentConfig& c) { return fmt_u64(c.data_seed); },
                           [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.data_seed = to_u64(k, v); }};
    t["model_seed"] = Field{[](const ExperimentConfig& c) { return fmt_u64(c.model_seed); },
                            [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.model_seed = to_u64(k, v); }};
    t["run_name"] = Field{[](const ExperimentConfig& c) { return c.run_name; },
                          [](ExperimentConfig& c, const std::string&, const std::string& v) { c.run_name = v; }, true};
    t["train.max_steps"] = Field{[](const ExperimentConfig& c) { return fmt(c.train.max_steps); },
                                 [](ExperimentConfig& c, const std::string& k, const std::string& v) {
                                   c.train.max_steps = to_size(k, v);
                                 },
                                 true};
    t["resume"] = Field{[](const ExperimentConfig& c) { return fmt(c.resume); },
                        [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.resume = to_bool(k, v); },
                        true};
    return t;
  }();
  return table;
}

#undef SGN_SIZE
#undef SGN_DOUBLE
#undef SGN_BOOL
#undef SGN_STRING

}  // namespace

void apply_preset(ExperimentConfig& cfg, const std::string& preset) {
  if (preset == "desk") {
    cfg.preset = "desk";
    return;
  }
  if (preset != "paper") throw ConfigError("unknown preset '" + preset + "' (expected desk or paper)");
  cfg.preset = "paper";
  cfg.parser.embedding = 400;
  cfg.parser.word_layers = 3;
  cfg.parser.batch = 60;
  cfg.parser.learning_rate = 1.0;
  cfg.parser.k = 3;
  cfg.sgn.width = 512;
  cfg.sgn.layers = 16;
  cfg.sgn.heads = 8;
  cfg.sgn.tree_layers = 2;
  cfg.sgn.gat_heads = 6;
  cfg.sgn.lambda_gen = 1.0;
  cfg.sgn.lambda_tree = 0.5;
  cfg.train.learning_rate = 1e-3;
  cfg.train.decay = 0.99;
  cfg.train.batch = 16;
  cfg.img2tree_epochs = 0;
}

std::map<std::string, std::string> config_to_map(const ExperimentConfig& cfg) {
  std::map<std::string, std::string> out;
  for (const auto& [k, f] : fields()) out[k] = f.get(cfg);
  return out;
}

void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  auto it = fields().find(key);
  if (it == fields().end()) throw ConfigError("unknown configuration key '" + key + "'");
  if (key == "preset") {
    apply_preset(cfg, value);
    return;
  }
  it->second.set(cfg, key, value);
}

void validate(const ExperimentConfig& cfg) {
  if (cfg.sgn.lambda_gen < 0 || cfg.sgn.lambda_tree < 0) throw ConfigError("lambda weights must be non-negative");
  if (cfg.train.batch < 1 || cfg.parser.batch < 1) throw ConfigError("batch sizes must be at least 1");
  if (cfg.sgn.width % cfg.sgn.heads != 0) throw ConfigError("sgn.width must be divisible by sgn.heads");
  if (cfg.parser.hidden % cfg.parser.chunk != 0) throw ConfigError("parser.hidden must be divisible by parser.chunk");
  if (cfg.eval_split != "test" && cfg.eval_split != "val") throw ConfigError("eval_split must be test or val");
  if (cfg.sgn.max_nodes < 1) throw ConfigError("sgn.max_nodes must be positive");
}

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig cfg;
  std::vector<std::pair<std::string, std::string>> entries;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + " has no '='");
    entries.emplace_back(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  for (const auto& [k, v] : entries)
    if (k == "preset") apply_preset(cfg, v);
  for (const auto& [k, v] : entries)
    if (k != "preset") set_config_value(cfg, k, v);
  validate(cfg);
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string serialize_config(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& [k, v] : config_to_map(cfg)) out += k + " = " + v + "\n";
  return out;
}

std::string config_fingerprint(const ExperimentConfig& cfg) {
  std::string canonical;
  for (const auto& [k, f] : fields()) {
    if (f.run_control) continue;
    canonical += k + "=" + f.get(cfg) + "\n";
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a(canonical)));
  return buf;
}

}  // namespace sgn
