#include "sgn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sgn {

std::vector<GradCheckEntry> gradient_check(const std::vector<Parameter*>& params,
                                           const std::function<Var(Graph&)>& loss,
                                           const GradCheckOptions& options) {
  for (Parameter* p : params) p->grad = Matrix(p->value.rows(), p->value.cols());
  {
    Graph g;
    g.backward(loss(g));
  }
  auto evaluate = [&] {
    Graph g(false);
    return loss(g).scalar();
  };

  Rng rng(options.seed);
  std::vector<GradCheckEntry> out;
  for (Parameter* p : params) {
    std::vector<std::size_t> idx(p->value.size());
    std::iota(idx.begin(), idx.end(), 0);
    if (options.max_entries && idx.size() > options.max_entries) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(options.max_entries);
    }
    GradCheckEntry e;
    e.parameter = p->name;
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (std::size_t i : idx) {
      const double saved = p->value[i];
      p->value[i] = saved + options.step;
      const double up = evaluate();
      p->value[i] = saved - options.step;
      const double down = evaluate();
      p->value[i] = saved;
      const double numeric = (up - down) / (2 * options.step);
      const double analytic = p->grad[i];
      e.max_abs_error = std::max(e.max_abs_error, std::abs(analytic - numeric));
      diff2 += (analytic - numeric) * (analytic - numeric);
      a2 += analytic * analytic;
      n2 += numeric * numeric;
      ++e.checked;
    }
    const double denom = std::sqrt(a2) + std::sqrt(n2);
    // A gradient that vanishes analytically (e.g. a key bias under softmax
    // shift invariance) leaves only finite-difference noise; compare it absolutely.
    e.relative_error = denom > 1e-7 ? std::sqrt(diff2) / denom : std::sqrt(diff2);
    out.push_back(e);
  }
  for (Parameter* p : params) p->grad.fill(0.0);
  return out;
}

double worst_relative_error(const std::vector<GradCheckEntry>& entries) {
  double worst = 0.0;
  for (const auto& e : entries) worst = std::max(worst, e.relative_error);
  return worst;
}

}  // namespace sgn
