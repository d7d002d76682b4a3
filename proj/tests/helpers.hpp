#pragma once

#include <random>

#include "sgn/autograd.hpp"
#include "sgn/params.hpp"
#include "sgn/ops.hpp"
#include "sgn/tensor.hpp"

namespace testutil {

inline sgn::Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  sgn::Matrix m(r, c);
  for (double& v : m.values()) v = d(rng);
  return m;
}

inline sgn::Parameter& random_param(sgn::ParameterStore& store, const std::string& name, std::size_t r,
                                    std::size_t c, std::mt19937_64& rng, double scale = 1.0) {
  auto& p = store.create(name, r, c);
  p.value = random_matrix(r, c, rng, scale);
  return p;
}

// Fixed random weights turn a matrix-valued output into a scalar loss.
inline sgn::Var project(sgn::Var x, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  sgn::Matrix w = random_matrix(x.rows(), x.cols(), rng);
  return sgn::sum(sgn::mul(x, x.graph().constant(w)));
}

}  // namespace testutil
