#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "sgn/tensor.hpp"

namespace sgn {

using Rng = std::mt19937_64;

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
};

// Owns every trainable tensor of a model. Parameters are heap-allocated so
// pointers handed to modules stay valid for the lifetime of the store.
class ParameterStore {
 public:
  Parameter& create(const std::string& name, std::size_t rows, std::size_t cols);
  // Uniform(-bound, bound) with bound = scale / sqrt(fan_in).
  Parameter& create_uniform(const std::string& name, std::size_t rows, std::size_t cols, Rng& rng,
                            double scale = 1.0);

  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;
  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  std::vector<Parameter*> with_prefix(const std::string& prefix);
  std::size_t scalar_count() const;
  void zero_grad();

  std::map<std::string, Matrix> export_values() const;
  // Every stored parameter must be present with a matching shape.
  void import_values(const std::map<std::string, Matrix>& values);

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::map<std::string, Parameter*> by_name_;
};

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 5.0;  // global gradient-norm clip; <= 0 disables
};

class Adam {
 public:
  Adam(std::vector<Parameter*> params, AdamConfig config);

  // Applies one update from the accumulated gradients and clears them.
  // Returns the pre-clip global gradient norm.
  double step();

  double learning_rate() const { return config_.learning_rate; }
  void set_learning_rate(double lr) { config_.learning_rate = lr; }
  std::uint64_t steps() const { return t_; }

  void export_state(std::map<std::string, Matrix>& arrays, std::map<std::string, std::string>& meta,
                    const std::string& prefix) const;
  void import_state(const std::map<std::string, Matrix>& arrays,
                    const std::map<std::string, std::string>& meta, const std::string& prefix);

 private:
  std::vector<Parameter*> params_;
  AdamConfig config_;
  std::vector<Matrix> m_, v_;
  std::uint64_t t_ = 0;
};

std::string rng_state(const Rng& rng);
void set_rng_state(Rng& rng, const std::string& state);

}  // namespace sgn
