#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sgn/corpus.hpp"
#include "sgn/nn.hpp"

namespace sgn {

// Source of image features F_img keyed by RecipeSample::image_key.
class FeatureProvider {
 public:
  virtual ~FeatureProvider() = default;
  virtual std::string kind() const = 0;
  virtual std::size_t width() const = 0;
  // 1 x width; throws LookupError for keys the provider cannot serve.
  virtual Matrix lookup(std::string_view key) const = 0;
  // Batch rows inside a graph. Fixed providers return a constant.
  virtual Var features(Graph& g, std::span<const std::string> keys) const;
  virtual bool trainable() const { return false; }
};

// Deterministic embedding of the dish and per-phase sentence counts encoded
// in synthetic image keys, plus key-seeded noise.
class SyntheticFeatureProvider final : public FeatureProvider {
 public:
  SyntheticFeatureProvider(std::size_t width, std::uint64_t seed, double noise = 0.05);
  std::string kind() const override { return "synthetic"; }
  std::size_t width() const override { return width_; }
  Matrix lookup(std::string_view key) const override;

 private:
  std::vector<double> component(std::uint64_t tag, std::size_t a, std::size_t b, double scale) const;

  std::size_t width_;
  std::uint64_t seed_;
  double noise_;
};

// Feature file written by write_feature_file.
//
// Byte layout (little-endian):
//   8 bytes  magic "SGNFEAT1"
//   u64      count
//   u64      width
//   count x (u64 key length, key bytes)
//   count x width float32 values, row-major in key order
class PrecomputedFeatureProvider final : public FeatureProvider {
 public:
  explicit PrecomputedFeatureProvider(const std::filesystem::path& path);
  std::string kind() const override { return "precomputed"; }
  std::size_t width() const override { return width_; }
  Matrix lookup(std::string_view key) const override;
  std::size_t size() const { return rows_.size(); }

 private:
  std::size_t width_ = 0;
  std::map<std::string, std::vector<float>, std::less<>> rows_;
};

void write_feature_file(const std::filesystem::path& path, std::span<const std::string> keys,
                        const FeatureProvider& provider);

// 3 x (32*32) image drawn from a synthetic image key: dish-dependent
// colour and texture, one bar per phase whose length follows its sentence
// count, plus key-seeded noise.
Matrix synthetic_patch_image(std::string_view key, std::uint64_t seed);

// Three conv/ReLU/avg-pool blocks over synthetic_patch_image and a linear
// read-out. Its parameters live in the given store and train with it.
class TinyConvNetProvider final : public FeatureProvider {
 public:
  TinyConvNetProvider(ParameterStore& store, const std::string& name, std::size_t width, std::uint64_t seed, Rng& rng);
  std::string kind() const override { return "tiny-convnet"; }
  std::size_t width() const override { return width_; }
  Matrix lookup(std::string_view key) const override;
  Var features(Graph& g, std::span<const std::string> keys) const override;
  bool trainable() const override { return true; }

 private:
  Var forward_one(Graph& g, std::string_view key) const;

  std::size_t width_;
  std::uint64_t seed_;
  std::vector<Parameter*> conv_;  // out_channels x (in_channels * 9)
  Linear head_;
};

// F_ing: mean of the embeddings of every ingredient token.
class IngredientEncoder {
 public:
  IngredientEncoder() = default;
  IngredientEncoder(ParameterStore& store, const std::string& name, std::size_t vocab, std::size_t width, Rng& rng);

  std::size_t width() const { return embed_.width(); }
  const Embedding& embedding() const { return embed_; }
  // One row per sample; each sample is a list of ingredients' token ids.
  Var encode(Graph& g, std::span<const std::vector<TokenIds>> samples) const;

 private:
  Embedding embed_;
};

std::uint64_t fnv1a(std::string_view text, std::uint64_t basis = 14695981039346656037ULL);

}  // namespace sgn
