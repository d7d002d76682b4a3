#pragma once

#include <functional>
#include <string>
#include <vector>

#include "sgn/autograd.hpp"
#include "sgn/params.hpp"

namespace sgn {

struct GradCheckEntry {
  std::string parameter;
  std::size_t checked = 0;
  double max_abs_error = 0.0;
  // ||analytic - numeric|| / (||analytic|| + ||numeric||) over checked entries;
  // the plain difference norm when both norms are below 1e-7.
  double relative_error = 0.0;
};

struct GradCheckOptions {
  double step = 1e-5;
  std::size_t max_entries = 0;  // per parameter; 0 checks every entry
  std::uint64_t seed = 7;       // picks entries when max_entries limits them
};

// Compares backpropagated gradients of a scalar loss with central finite
// differences. `loss` builds the full forward pass on the given graph.
std::vector<GradCheckEntry> gradient_check(const std::vector<Parameter*>& params,
                                           const std::function<Var(Graph&)>& loss,
                                           const GradCheckOptions& options = {});

double worst_relative_error(const std::vector<GradCheckEntry>& entries);

}  // namespace sgn
