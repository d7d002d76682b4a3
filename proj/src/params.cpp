#include "sgn/params.hpp"

#include <cmath>
#include <sstream>

#include "sgn/errors.hpp"

namespace sgn {

Parameter& ParameterStore::create(const std::string& name, std::size_t rows, std::size_t cols) {
  if (by_name_.count(name)) throw ConfigError("duplicate parameter name: " + name);
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->value = Matrix(rows, cols);
  p->grad = Matrix(rows, cols);
  Parameter& ref = *p;
  by_name_.emplace(name, p.get());
  params_.push_back(std::move(p));
  return ref;
}

Parameter& ParameterStore::create_uniform(const std::string& name, std::size_t rows, std::size_t cols,
                                          Rng& rng, double scale) {
  Parameter& p = create(name, rows, cols);
  const double bound = scale / std::sqrt(static_cast<double>(std::max<std::size_t>(rows, 1)));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : p.value.values()) v = dist(rng);
  return p;
}

Parameter* ParameterStore::find(const std::string& name) {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? nullptr : it->second;
}

const Parameter* ParameterStore::find(const std::string& name) const {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? nullptr : it->second;
}

std::vector<Parameter*> ParameterStore::all() {
  std::vector<Parameter*> out;
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<const Parameter*> ParameterStore::all() const {
  std::vector<const Parameter*> out;
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<Parameter*> ParameterStore::with_prefix(const std::string& prefix) {
  std::vector<Parameter*> out;
  for (auto& p : params_)
    if (p->name.rfind(prefix, 0) == 0) out.push_back(p.get());
  return out;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p->grad.fill(0.0);
}

std::map<std::string, Matrix> ParameterStore::export_values() const {
  std::map<std::string, Matrix> out;
  for (const auto& p : params_) out.emplace(p->name, p->value);
  return out;
}

void ParameterStore::import_values(const std::map<std::string, Matrix>& values) {
  for (auto& p : params_) {
    auto it = values.find(p->name);
    if (it == values.end()) throw CheckpointError("checkpoint lacks parameter " + p->name);
    if (!it->second.same_shape(p->value)) {
      throw CheckpointError("parameter " + p->name + " has shape " + it->second.shape_string() +
                            " in checkpoint, expected " + p->value.shape_string());
    }
    p->value = it->second;
  }
}

Adam::Adam(std::vector<Parameter*> params, AdamConfig config) : params_(std::move(params)), config_(config) {
  for (const Parameter* p : params_) {
    m_.emplace_back(p->value.rows(), p->value.cols());
    v_.emplace_back(p->value.rows(), p->value.cols());
  }
}

double Adam::step() {
  double sq = 0.0;
  for (const Parameter* p : params_)
    for (double g : p->grad.values()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw TrainingError("non-finite gradient norm");
  const double clip = (config_.clip_norm > 0 && norm > config_.clip_norm) ? config_.clip_norm / norm : 1.0;
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Parameter& p = *params_[k];
    Matrix& m = m_[k];
    Matrix& v = v_[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i] * clip;
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
      p.value[i] -= config_.learning_rate * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + config_.epsilon);
    }
    p.grad.fill(0.0);
  }
  return norm;
}

void Adam::export_state(std::map<std::string, Matrix>& arrays, std::map<std::string, std::string>& meta,
                        const std::string& prefix) const {
  for (std::size_t k = 0; k < params_.size(); ++k) {
    arrays[prefix + ".m/" + params_[k]->name] = m_[k];
    arrays[prefix + ".v/" + params_[k]->name] = v_[k];
  }
  meta[prefix + ".t"] = std::to_string(t_);
  std::ostringstream lr;
  lr.precision(17);
  lr << config_.learning_rate;
  meta[prefix + ".lr"] = lr.str();
}

void Adam::import_state(const std::map<std::string, Matrix>& arrays,
                        const std::map<std::string, std::string>& meta, const std::string& prefix) {
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto im = arrays.find(prefix + ".m/" + params_[k]->name);
    auto iv = arrays.find(prefix + ".v/" + params_[k]->name);
    if (im == arrays.end() || iv == arrays.end()) {
      throw CheckpointError("optimizer state missing for " + params_[k]->name);
    }
    m_[k] = im->second;
    v_[k] = iv->second;
  }
  auto it = meta.find(prefix + ".t");
  auto il = meta.find(prefix + ".lr");
  if (it == meta.end() || il == meta.end()) throw CheckpointError("optimizer counters missing");
  t_ = std::stoull(it->second);
  config_.learning_rate = std::stod(il->second);
}

std::string rng_state(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

void set_rng_state(Rng& rng, const std::string& state) {
  std::istringstream is(state);
  is >> rng;
  if (!is) throw CheckpointError("unreadable RNG state");
}

}  // namespace sgn
