#include "sgn/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "json.hpp"
#include "sgn/errors.hpp"

namespace sgn {

using json = nlohmann::json;

std::string_view partition_name(Partition p) {
  switch (p) {
    case Partition::train: return "train";
    case Partition::val: return "val";
    case Partition::test: return "test";
  }
  return "train";
}

Partition parse_partition(std::string_view name) {
  if (name == "train") return Partition::train;
  if (name == "val") return Partition::val;
  if (name == "test") return Partition::test;
  throw SchemaError("unknown partition '" + std::string(name) + "'");
}

std::vector<std::string> split_words(std::string_view text, const TokenizerConfig& config) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (std::ispunct(c) && ch != '\'') {
      flush();
      if (config.keep_punctuation) out.emplace_back(1, ch);
    } else {
      cur += config.lowercase ? static_cast<char>(std::tolower(c)) : ch;
    }
  }
  flush();
  return out;
}

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

Vocabulary::Vocabulary(const std::vector<std::string>& tokens)
    : tokens_{"<pad>", "<bos>", "<eos>", "<unk>", "<sep>"} {
  for (std::size_t i = 0; i < tokens_.size(); ++i) index_.emplace(tokens_[i], i);
  for (const auto& t : tokens) {
    if (index_.count(t)) throw ConfigError("duplicate vocabulary token '" + t + "'");
    index_.emplace(t, tokens_.size());
    tokens_.push_back(t);
  }
}

Vocabulary Vocabulary::build(std::span<const RecipeSample> corpus, std::size_t min_count) {
  std::map<std::string, std::size_t> counts;
  for (const auto& s : corpus) {
    if (s.partition != Partition::train) continue;
    for (const auto& sent : s.instructions)
      for (const auto& w : sent) ++counts[w];
    for (const auto& ing : s.ingredients)
      for (const auto& w : ing) ++counts[w];
  }
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [w, c] : counts)
    if (c >= min_count) kept.emplace_back(w, c);
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens;
  for (auto& [w, c] : kept) tokens.push_back(w);
  return Vocabulary(tokens);
}

std::size_t Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

std::vector<std::string> Vocabulary::regular_tokens() const {
  return {tokens_.begin() + kReserved, tokens_.end()};
}

std::vector<std::size_t> Vocabulary::encode(std::span<const std::string> words) const {
  std::vector<std::size_t> ids;
  ids.reserve(words.size());
  for (const auto& w : words) ids.push_back(id(w));
  return ids;
}

std::string Vocabulary::decode(std::span<const std::size_t> ids) const {
  std::string out;
  for (std::size_t id : ids) {
    if (!out.empty()) out += ' ';
    out += token(id);
  }
  return out;
}

std::vector<std::size_t> tokenize(std::string_view text, const Vocabulary& vocab, const TokenizerConfig& config) {
  const auto words = split_words(text, config);
  return vocab.encode(words);
}

std::string detokenize(std::span<const std::size_t> ids, const Vocabulary& vocab) { return vocab.decode(ids); }

namespace {

std::string join(const Tokens& t) {
  std::string s;
  for (const auto& w : t) {
    if (!s.empty()) s += ' ';
    s += w;
  }
  return s;
}

const json& require(const json& rec, const char* field, const std::string& rid) {
  auto it = rec.find(field);
  if (it == rec.end()) throw SchemaError("record '" + rid + "' is missing field '" + field + "'");
  return *it;
}

std::vector<Tokens> text_list(const json& arr, const char* field, const std::string& rid,
                              const TokenizerConfig& config) {
  if (!arr.is_array()) throw SchemaError("record '" + rid + "': field '" + field + "' must be an array");
  std::vector<Tokens> out;
  for (const auto& item : arr) {
    if (!item.is_object() || !item.contains("text") || !item["text"].is_string()) {
      throw SchemaError("record '" + rid + "': every " + field + " entry needs a \"text\" string");
    }
    auto words = split_words(item["text"].get<std::string>(), config);
    if (!words.empty()) out.push_back(std::move(words));
  }
  return out;
}

}  // namespace

std::vector<RecipeSample> parse_recipe1m(std::string_view text, std::size_t min_sentences,
                                         const TokenizerConfig& config) {
  json doc;
  try {
    doc = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw ParseError("malformed recipe JSON at byte " + std::to_string(e.byte) + ": " + e.what(), e.byte);
  }
  if (!doc.is_array()) throw SchemaError("recipe file must hold a JSON array");
  std::vector<RecipeSample> out;
  std::size_t index = 0;
  for (const auto& rec : doc) {
    std::string rid = "#" + std::to_string(index++);
    if (!rec.is_object()) throw SchemaError("record " + rid + " is not an object");
    if (rec.contains("id") && rec["id"].is_string()) rid = rec["id"].get<std::string>();
    RecipeSample s;
    const json& id = require(rec, "id", rid);
    if (!id.is_string()) throw SchemaError("record '" + rid + "': id must be a string");
    s.id = id.get<std::string>();
    s.title = require(rec, "title", rid).get<std::string>();
    s.ingredients = text_list(require(rec, "ingredients", rid), "ingredients", rid, config);
    s.instructions = text_list(require(rec, "instructions", rid), "instructions", rid, config);
    s.partition = parse_partition(require(rec, "partition", rid).get<std::string>());
    s.image_key = rec.contains("image_key") ? rec["image_key"].get<std::string>() : s.id;
    if (s.instructions.size() < min_sentences || s.instructions.empty()) continue;
    for (const char* field : {"planted_tree", "parsed_tree"}) {
      if (!rec.contains(field)) continue;
      SentenceTree t = decode_vector(AdjacencyVector::parse(rec[field].get<std::string>()));
      if (t.leaf_count() != s.instructions.size()) {
        throw SchemaError("record '" + rid + "': " + field + " has " + std::to_string(t.leaf_count()) +
                          " leaves for " + std::to_string(s.instructions.size()) + " sentences");
      }
      (std::string_view(field) == "planted_tree" ? s.planted_tree : s.parsed_tree) = std::move(t);
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<RecipeSample> load_recipe1m(const std::filesystem::path& path, std::size_t min_sentences,
                                        const TokenizerConfig& config) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open recipe file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_recipe1m(ss.str(), min_sentences, config);
}

std::string corpus_to_json(std::span<const RecipeSample> corpus) {
  json doc = json::array();
  for (const auto& s : corpus) {
    json rec;
    rec["id"] = s.id;
    rec["title"] = s.title;
    json ings = json::array(), steps = json::array();
    for (const auto& t : s.ingredients) ings.push_back({{"text", join(t)}});
    for (const auto& t : s.instructions) steps.push_back({{"text", join(t)}});
    rec["ingredients"] = std::move(ings);
    rec["instructions"] = std::move(steps);
    rec["partition"] = std::string(partition_name(s.partition));
    rec["image_key"] = s.image_key;
    if (s.planted_tree) rec["planted_tree"] = encode_tree(*s.planted_tree).to_string();
    if (s.parsed_tree) rec["parsed_tree"] = encode_tree(*s.parsed_tree).to_string();
    doc.push_back(std::move(rec));
  }
  return doc.dump(1);
}

void write_corpus(const std::filesystem::path& path, std::span<const RecipeSample> corpus) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write corpus to " + path.string());
  out << corpus_to_json(corpus) << '\n';
}

namespace {

const std::vector<std::vector<std::string>>& phase_patterns() {
  static const std::vector<std::vector<std::string>> pools = {
      {"wash the {a} and pat dry", "peel and chop the {a}", "finely dice the {a}",
       "slice the {a} into thin strips", "soak the {a} in cold water for {n} minutes",
       "grate the {a} into a small bowl", "mince the {a} with a sharp knife",
       "trim the {a} and cut into cubes", "rinse the {a} under running water",
       "crush the {a} with the flat of a knife"},
      {"whisk the {a} with the {b} in a large bowl", "mix the {a} and {b} together",
       "add the {a} to the bowl and stir", "season the {a} with a pinch of salt",
       "fold the {a} into the mixture gently", "toss the {a} with {n} tablespoons of oil",
       "combine the {a} with the dressing", "pour the {a} over the {b}",
       "stir in the {a} until smooth", "blend the {a} and {b} until creamy"},
      {"heat the oil in a skillet over medium heat", "cook the {a} for {n} minutes",
       "bake the {a} in the oven for {n} minutes", "simmer the {a} until tender",
       "fry the {a} until golden brown", "roast the {a} at high heat for {n} minutes",
       "bring the {a} to a boil then reduce the heat", "grill the {a} on each side for {n} minutes",
       "steam the {a} until soft", "saute the {a} with the {b}"},
      {"garnish with fresh {a}", "serve warm with the {a}", "let the {a} rest for {n} minutes",
       "sprinkle the {a} on top", "drizzle with {a} before serving", "transfer the {a} to a plate and serve",
       "cool the {a} slightly and slice", "top with the {a} and enjoy",
       "season the {a} to taste and serve immediately", "chill the {a} in the fridge for {n} hours"},
  };
  return pools;
}

const std::vector<std::string>& ingredient_words() {
  static const std::vector<std::string> words = {
      "onion", "garlic", "tomato", "carrot", "celery", "potato", "pepper", "zucchini", "eggplant",
      "spinach", "kale", "lettuce", "cabbage", "broccoli", "cauliflower", "mushroom", "leek", "shallot",
      "ginger", "chili", "cucumber", "radish", "beet", "pumpkin", "squash", "corn", "peas", "beans",
      "lentils", "chickpeas", "rice", "quinoa", "pasta", "noodles", "bread", "flour", "oats", "barley",
      "chicken", "beef", "pork", "lamb", "turkey", "bacon", "sausage", "ham", "salmon", "tuna", "shrimp",
      "cod", "mussels", "clams", "tofu", "tempeh", "egg", "milk", "cream", "butter", "yogurt", "cheese",
      "parmesan", "mozzarella", "feta", "ricotta", "basil", "parsley", "cilantro", "mint", "thyme",
      "rosemary", "oregano", "sage", "dill", "chives", "cumin", "paprika", "turmeric", "cinnamon",
      "nutmeg", "cloves", "vanilla", "honey", "sugar", "syrup", "vinegar", "mustard", "ketchup",
      "mayonnaise", "soy", "lemon", "lime", "orange", "apple", "pear", "peach", "banana", "berries",
      "cherries", "grapes", "mango", "pineapple", "coconut", "almonds", "walnuts", "pecans", "cashews",
      "peanuts", "sesame", "olives", "capers", "raisins", "dates", "figs", "avocado", "asparagus",
      "artichoke", "fennel", "arugula", "watercress", "okra", "turnip", "parsnip", "yam", "plantain",
      "chocolate", "cocoa", "coffee", "tea", "wine", "stock", "broth", "gelatin", "cornstarch", "yeast",
      "anchovies", "sardines", "crab", "lobster", "scallops", "duck", "veal", "venison", "couscous",
      "polenta", "tortilla", "croutons", "pesto", "salsa", "hummus", "tahini", "miso", "kimchi",
      "bulgur", "farro", "millet", "semolina", "breadcrumbs", "crackers", "pita", "bagel", "brioche", "halibut",
      "trout", "tilapia", "octopus", "squid", "prosciutto", "chorizo", "pancetta", "salami", "brie", "gouda",
      "cheddar", "gruyere", "mascarpone", "buttermilk", "ghee", "lard", "molasses", "marmalade", "jam",
      "apricot", "plum", "kiwi", "papaya", "pomegranate", "cranberries", "blueberries", "raspberries",
      "strawberries", "pistachios", "hazelnuts", "chestnuts", "macadamia", "sunflower", "flaxseed",
      "tarragon", "marjoram", "lemongrass", "saffron", "cardamom", "coriander", "allspice", "horseradish",
      "wasabi", "sriracha", "harissa", "tamarind", "jalapeno", "poblano", "scallion", "endive", "radicchio",
      "bokchoy", "edamame", "sprouts", "jicama", "rhubarb", "quince",
  };
  return words;
}

const std::vector<std::string>& number_words() {
  static const std::vector<std::string> words = {"two", "three", "four", "five", "ten", "fifteen", "twenty", "thirty"};
  return words;
}

const std::vector<std::string>& dish_adjectives() {
  static const std::vector<std::string> words = {"spicy", "creamy", "roasted", "quick", "rustic", "golden",
                                                 "hearty", "fresh", "smoky", "tangy", "sweet", "herbed"};
  return words;
}

const std::vector<std::string>& dish_nouns() {
  static const std::vector<std::string> words = {"stew", "salad", "soup", "bake", "skillet", "bowl",
                                                 "casserole", "curry", "pie", "wrap", "risotto", "gratin"};
  return words;
}

struct DishTemplate {
  std::string title;
  std::vector<std::size_t> ingredient_pool;             // indices into ingredient_words()
  std::vector<std::vector<std::size_t>> pattern_order;  // per phase, indices into the phase pool
  std::vector<std::vector<std::size_t>> numbers;        // per phase/step number word
};

Tokens fill_pattern(const std::string& pattern, const std::string& a, const std::string& b, const std::string& n) {
  Tokens out;
  std::istringstream is(pattern);
  std::string w;
  while (is >> w) {
    if (w == "{a}") out.push_back(a);
    else if (w == "{b}") out.push_back(b);
    else if (w == "{n}") out.push_back(n);
    else out.push_back(w);
  }
  return out;
}

std::string format_key(std::size_t dish, const std::vector<std::size_t>& counts, std::size_t index) {
  std::string key = "dish" + std::to_string(dish) + "-l";
  for (std::size_t p = 0; p < counts.size(); ++p) {
    if (p) key += '.';
    key += std::to_string(counts[p]);
  }
  char buf[32];
  std::snprintf(buf, sizeof(buf), "-%06zu", index);
  return key + buf;
}

}  // namespace

std::optional<ImageKeyInfo> parse_image_key(std::string_view key) {
  if (key.rfind("dish", 0) != 0) return std::nullopt;
  std::size_t pos = 4;
  auto read_number = [&](std::size_t& value) {
    const std::size_t start = pos;
    value = 0;
    while (pos < key.size() && std::isdigit(static_cast<unsigned char>(key[pos]))) {
      value = value * 10 + static_cast<std::size_t>(key[pos] - '0');
      ++pos;
    }
    return pos > start;
  };
  ImageKeyInfo info;
  if (!read_number(info.dish)) return std::nullopt;
  if (key.substr(pos, 2) != "-l") return std::nullopt;
  pos += 2;
  while (true) {
    std::size_t c = 0;
    if (!read_number(c)) return std::nullopt;
    info.phase_counts.push_back(c);
    if (pos < key.size() && key[pos] == '.') {
      ++pos;
      continue;
    }
    break;
  }
  if (pos >= key.size() || key[pos] != '-') return std::nullopt;
  ++pos;
  std::size_t index = 0;
  if (!read_number(index) || pos != key.size()) return std::nullopt;
  return info;
}

std::vector<RecipeSample> make_synthetic_corpus(const SyntheticConfig& config, std::uint64_t seed) {
  if (config.min_sentences < 1 || config.max_sentences > 19 || config.min_sentences > config.max_sentences) {
    throw ConfigError("sentence-count range [" + std::to_string(config.min_sentences) + ", " +
                      std::to_string(config.max_sentences) + "] must lie within [1, 19]");
  }
  const auto& pools = phase_patterns();
  if (config.phases < 1 || config.phases > pools.size()) {
    throw ConfigError("phases must be between 1 and " + std::to_string(pools.size()));
  }
  if (config.dishes < 1) throw ConfigError("need at least one dish template");
  if (config.ingredients_per_dish < 2) throw ConfigError("need at least two ingredients per dish");

  std::mt19937_64 rng(seed);
  const std::size_t base_words = 114;  // pattern and number words
  const std::size_t n_ing = std::clamp<std::size_t>(
      config.vocab_size > base_words ? config.vocab_size - base_words : config.ingredients_per_dish,
      config.ingredients_per_dish, ingredient_words().size());

  std::vector<std::size_t> shuffled(n_ing);
  std::iota(shuffled.begin(), shuffled.end(), 0);
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  std::vector<DishTemplate> dishes(config.dishes);
  for (std::size_t d = 0; d < config.dishes; ++d) {
    DishTemplate& t = dishes[d];
    t.title = dish_adjectives()[d % dish_adjectives().size()] + " " +
              dish_nouns()[(d / dish_adjectives().size() + d * 5) % dish_nouns().size()];
    // Consecutive windows of one shuffled list spread the dishes over the whole pool.
    for (std::size_t j = 0; j < config.ingredients_per_dish; ++j)
      t.ingredient_pool.push_back(shuffled[(d * config.ingredients_per_dish + j) % n_ing]);
    for (std::size_t p = 0; p < config.phases; ++p) {
      std::vector<std::size_t> order(pools[p].size());
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), rng);
      t.pattern_order.push_back(order);
      std::vector<std::size_t> nums(config.max_sentences);
      for (auto& n : nums) n = std::uniform_int_distribution<std::size_t>(0, number_words().size() - 1)(rng);
      t.numbers.push_back(nums);
    }
  }

  const std::size_t total = config.train_size + config.val_size + config.test_size;
  std::vector<RecipeSample> out;
  out.reserve(total);
  for (std::size_t i = 0; i < total; ++i) {
    const std::size_t d = std::uniform_int_distribution<std::size_t>(0, config.dishes - 1)(rng);
    const DishTemplate& dish = dishes[d];
    const std::size_t n =
        std::uniform_int_distribution<std::size_t>(config.min_sentences, config.max_sentences)(rng);

    std::vector<std::size_t> counts(config.phases, 0);
    if (n >= config.phases) {
      std::fill(counts.begin(), counts.end(), 1);
      std::uniform_int_distribution<std::size_t> pick(0, config.phases - 1);
      for (std::size_t k = config.phases; k < n; ++k) ++counts[pick(rng)];
    } else {
      std::vector<std::size_t> idx(config.phases);
      std::iota(idx.begin(), idx.end(), 0);
      std::shuffle(idx.begin(), idx.end(), rng);
      for (std::size_t k = 0; k < n; ++k) counts[idx[k]] = 1;
    }
    // A phase can hold more steps than its pattern pool; cap and move the rest.
    for (std::size_t p = 0; p < config.phases; ++p) {
      while (counts[p] > pools[p].size()) {
        --counts[p];
        ++counts[(p + 1) % config.phases];
      }
    }

    const std::size_t m = std::uniform_int_distribution<std::size_t>(
        std::min<std::size_t>(3, config.ingredients_per_dish), std::min<std::size_t>(5, config.ingredients_per_dish))(rng);
    std::vector<std::size_t> pool = dish.ingredient_pool;
    std::shuffle(pool.begin(), pool.end(), rng);
    std::vector<std::size_t> chosen(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(m));
    std::sort(chosen.begin(), chosen.end());

    RecipeSample s;
    s.id = "syn-" + std::to_string(i);
    s.title = dish.title;
    for (std::size_t ing : chosen) s.ingredients.push_back({ingredient_words()[ing]});
    std::vector<Edge> edges;
    std::map<int, int> labels;
    int next_internal = static_cast<int>(n) + 1;
    for (std::size_t p = 0; p < config.phases; ++p) {
      if (counts[p] == 0) continue;
      const int attach = counts[p] >= 2 ? next_internal++ : 0;
      if (attach != 0) edges.emplace_back(0, attach);
      for (std::size_t k = 0; k < counts[p]; ++k) {
        const auto& pattern = pools[p][dish.pattern_order[p][k]];
        // Each phase works on one focus ingredient; the partner varies.
        const std::string& a = ingredient_words()[chosen[p % m]];
        const std::string& b = ingredient_words()[chosen[(p + 1 + k % (m - 1)) % m]];
        const std::string& num = number_words()[dish.numbers[p][k]];
        const int leaf = static_cast<int>(s.instructions.size()) + 1;
        labels[leaf] = static_cast<int>(s.instructions.size());
        edges.emplace_back(attach, leaf);
        s.instructions.push_back(fill_pattern(pattern, a, b, num));
      }
    }
    if (n == 1) {
      s.planted_tree = SentenceTree();
    } else {
      s.planted_tree = canonical_order(edges, 0, labels);
    }
    s.image_key = format_key(d, counts, i);
    s.partition = i < config.train_size ? Partition::train
                  : i < config.train_size + config.val_size ? Partition::val
                                                            : Partition::test;
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<RecipeSample> select_partition(std::span<const RecipeSample> corpus, Partition p) {
  std::vector<RecipeSample> out;
  for (const auto& s : corpus)
    if (s.partition == p) out.push_back(s);
  return out;
}

}  // namespace sgn
