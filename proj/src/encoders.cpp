#include "sgn/encoders.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "sgn/errors.hpp"

namespace sgn {

std::uint64_t fnv1a(std::string_view text, std::uint64_t basis) {
  std::uint64_t h = basis;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

Var FeatureProvider::features(Graph& g, std::span<const std::string> keys) const {
  Matrix out(keys.size(), width());
  for (std::size_t r = 0; r < keys.size(); ++r) {
    const Matrix row = lookup(keys[r]);
    std::copy(row.values().begin(), row.values().end(), out.row(r).begin());
  }
  return g.constant(std::move(out));
}

SyntheticFeatureProvider::SyntheticFeatureProvider(std::size_t width, std::uint64_t seed, double noise)
    : width_(width), seed_(seed), noise_(noise) {
  if (width == 0) throw ConfigError("feature width must be positive");
}

std::vector<double> SyntheticFeatureProvider::component(std::uint64_t tag, std::size_t a, std::size_t b,
                                                        double scale) const {
  Rng rng(seed_ * 0x9E3779B97F4A7C15ULL + tag * 1000003ULL + a * 7919ULL + b);
  std::normal_distribution<double> dist(0.0, scale);
  std::vector<double> v(width_);
  for (double& x : v) x = dist(rng);
  return v;
}

Matrix SyntheticFeatureProvider::lookup(std::string_view key) const {
  const auto info = parse_image_key(key);
  if (!info) throw LookupError("synthetic provider does not know image key '" + std::string(key) + "'");
  Matrix out(1, width_);
  auto accumulate = [&](const std::vector<double>& v) {
    for (std::size_t i = 0; i < width_; ++i) out[i] += v[i];
  };
  accumulate(component(1, info->dish, 0, 0.4));
  for (std::size_t p = 0; p < info->phase_counts.size(); ++p) accumulate(component(2, p, info->phase_counts[p], 0.4));
  Rng rng(fnv1a(key) ^ seed_);
  std::normal_distribution<double> dist(0.0, noise_);
  for (std::size_t i = 0; i < width_; ++i) out[i] += dist(rng);
  return out;
}

namespace {

void write_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw InputError("feature file is truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

constexpr char kFeatureMagic[8] = {'S', 'G', 'N', 'F', 'E', 'A', 'T', '1'};

}  // namespace

PrecomputedFeatureProvider::PrecomputedFeatureProvider(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open feature file " + path.string());
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kFeatureMagic, 8) != 0) {
    throw InputError(path.string() + " is not a feature file");
  }
  const std::uint64_t count = read_u64(in);
  width_ = read_u64(in);
  if (width_ == 0 || width_ > (1u << 20) || count > (1u << 28)) throw InputError("feature file header is implausible");
  std::vector<std::string> keys;
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint64_t len = read_u64(in);
    if (len > (1u << 16)) throw InputError("feature file key is implausibly long");
    std::string key(len, '\0');
    if (!in.read(key.data(), static_cast<std::streamsize>(len))) throw InputError("feature file is truncated");
    keys.push_back(std::move(key));
  }
  for (const auto& key : keys) {
    std::vector<float> row(width_);
    for (float& f : row) {
      unsigned char b[4];
      if (!in.read(reinterpret_cast<char*>(b), 4)) throw InputError("feature file is truncated");
      std::uint32_t bits = 0;
      for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(b[i]) << (8 * i);
      std::memcpy(&f, &bits, 4);
    }
    rows_[key] = std::move(row);
  }
}

Matrix PrecomputedFeatureProvider::lookup(std::string_view key) const {
  auto it = rows_.find(key);
  if (it == rows_.end()) throw LookupError("feature file has no entry for image key '" + std::string(key) + "'");
  Matrix out(1, width_);
  for (std::size_t i = 0; i < width_; ++i) out[i] = it->second[i];
  return out;
}

void write_feature_file(const std::filesystem::path& path, std::span<const std::string> keys,
                        const FeatureProvider& provider) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write feature file " + path.string());
  out.write(kFeatureMagic, 8);
  write_u64(out, keys.size());
  write_u64(out, provider.width());
  for (const auto& key : keys) {
    write_u64(out, key.size());
    out.write(key.data(), static_cast<std::streamsize>(key.size()));
  }
  for (const auto& key : keys) {
    const Matrix row = provider.lookup(key);
    for (double v : row.values()) {
      const float f = static_cast<float>(v);
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      unsigned char b[4];
      for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
      out.write(reinterpret_cast<const char*>(b), 4);
    }
  }
  if (!out) throw InputError("failed writing feature file " + path.string());
}

Matrix synthetic_patch_image(std::string_view key, std::uint64_t seed) {
  const auto info = parse_image_key(key);
  if (!info) throw LookupError("cannot draw an image for key '" + std::string(key) + "'");
  constexpr std::size_t side = 32;
  Matrix img(3, side * side);
  Rng rng(fnv1a(key) ^ seed);
  std::normal_distribution<double> noise(0.0, 0.05);
  const double tint = static_cast<double>((info->dish * 37) % 11) / 10.0;
  const std::size_t period = 2 + info->dish % 5;
  for (std::size_t y = 0; y < side; ++y) {
    for (std::size_t x = 0; x < side; ++x) {
      const std::size_t px = y * side + x;
      img(0, px) = tint + noise(rng);
      img(2, px) = ((x / period + y / period) % 2 ? 0.5 : -0.5) * (0.5 + 0.1 * static_cast<double>(info->dish % 3)) +
                   noise(rng);
      const std::size_t band = y / 8;
      double bar = 0.0;
      if (band < info->phase_counts.size() && x < 3 * info->phase_counts[band]) bar = 1.0;
      img(1, px) = bar + noise(rng);
    }
  }
  return img;
}

TinyConvNetProvider::TinyConvNetProvider(ParameterStore& store, const std::string& name, std::size_t width,
                                         std::uint64_t seed, Rng& rng)
    : width_(width), seed_(seed) {
  const std::size_t channels[4] = {3, 8, 16, 16};
  for (int b = 0; b < 3; ++b) {
    Parameter& p = store.create(name + "/conv" + std::to_string(b), channels[b + 1], channels[b] * 9);
    const double bound = std::sqrt(6.0 / static_cast<double>(channels[b] * 9));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : p.value.values()) v = dist(rng);
    conv_.push_back(&p);
  }
  head_ = Linear(store, name + "/head", 16 * 16, width, rng);
}

Var TinyConvNetProvider::forward_one(Graph& g, std::string_view key) const {
  Var x = g.constant(synthetic_patch_image(key, seed_));
  std::size_t side = 32;
  for (Parameter* w : conv_) {
    Var cols = im2col(x, side, side, 3, 1, 1);
    x = avg_pool2(relu(matmul_nt(g.parameter(*w), cols)), side, side);
    side /= 2;
  }
  return tanh(head_(g, reshape(x, 1, x.rows() * x.cols())));
}

Var TinyConvNetProvider::features(Graph& g, std::span<const std::string> keys) const {
  std::vector<Var> rows;
  for (const auto& key : keys) rows.push_back(forward_one(g, key));
  return rows.size() == 1 ? rows[0] : concat_rows(rows);
}

Matrix TinyConvNetProvider::lookup(std::string_view key) const {
  Graph g(false);
  return forward_one(g, key).value();
}

IngredientEncoder::IngredientEncoder(ParameterStore& store, const std::string& name, std::size_t vocab,
                                     std::size_t width, Rng& rng)
    : embed_(store, name, vocab, width, rng) {}

Var IngredientEncoder::encode(Graph& g, std::span<const std::vector<TokenIds>> samples) const {
  if (samples.empty()) throw InputError("no ingredient lists to encode");
  std::vector<std::size_t> ids;
  std::vector<std::size_t> counts;
  for (const auto& sample : samples) {
    std::size_t n = 0;
    for (const auto& ing : sample) {
      ids.insert(ids.end(), ing.begin(), ing.end());
      n += ing.size();
    }
    if (n == 0) throw InputError("empty ingredient list");
    counts.push_back(n);
  }
  Matrix avg(samples.size(), ids.size());
  std::size_t col = 0;
  for (std::size_t r = 0; r < samples.size(); ++r) {
    for (std::size_t k = 0; k < counts[r]; ++k) avg(r, col++) = 1.0 / static_cast<double>(counts[r]);
  }
  return matmul(g.constant(std::move(avg)), embed_(g, ids));
}

}  // namespace sgn
