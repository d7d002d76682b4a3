#include "sgn/autograd.hpp"

#include "sgn/errors.hpp"
#include "sgn/params.hpp"

namespace sgn {

const Matrix& Var::value() const { return graph_->value(id_); }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) throw ShapeError("scalar() on a " + v.shape_string() + " node");
  return v[0];
}

Var Graph::constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Graph::parameter(Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var(this, it->second);
  Node n;
  n.external = &p.value;
  n.param = &p;
  n.requires_grad = grad_enabled_;
  nodes_.push_back(std::move(n));
  const auto id = static_cast<std::uint32_t>(nodes_.size() - 1);
  param_nodes_.emplace(&p, id);
  return Var(this, id);
}

Var Graph::record(Matrix value, std::span<const Var> parents, Backward backward) {
  Node n;
  n.value = std::move(value);
  for (const Var& p : parents) {
    if (&p.graph() != this) throw Error("operand belongs to a different graph");
    if (nodes_[p.id()].requires_grad) n.requires_grad = true;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

const Matrix& Graph::value(std::uint32_t id) const {
  const Node& n = nodes_[id];
  return n.external ? *n.external : n.value;
}

Matrix& Graph::grad(std::uint32_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) {
    const Matrix& v = n.external ? *n.external : n.value;
    n.grad = Matrix(v.rows(), v.cols());
  }
  return n.grad;
}

void Graph::backward(Var root) {
  if (&root.graph() != this) throw Error("backward root belongs to a different graph");
  if (value(root.id()).size() != 1) throw ShapeError("backward requires a scalar root");
  if (!nodes_[root.id()].requires_grad) return;
  grad(root.id())[0] += 1.0;
  for (std::int64_t i = root.id(); i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.param) {
      Matrix& pg = n.param->grad;
      if (!pg.same_shape(n.grad)) pg = Matrix(n.grad.rows(), n.grad.cols());
      for (std::size_t k = 0; k < pg.size(); ++k) pg[k] += n.grad[k];
    } else if (n.backward) {
      n.backward(*this, static_cast<std::uint32_t>(i));
    }
  }
}

}  // namespace sgn
