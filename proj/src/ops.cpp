#include "sgn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "sgn/errors.hpp"
#include "sgn/kernels.hpp"

namespace sgn {
namespace {

Graph& graph_of(Var a, Var b) {
  if (&a.graph() != &b.graph()) throw Error("operands belong to different graphs");
  return a.graph();
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " + b.shape_string());
  }
}

template <typename F>
Var unary(Var a, F&& f, Graph::Backward backward) {
  const Matrix& x = a.value();
  Matrix y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return a.graph().record(std::move(y), {a}, std::move(backward));
}

}  // namespace

Var matmul(Var a, Var b) {
  Graph& g = graph_of(a, b);
  Matrix c;
  kernels::gemm(a.value(), false, b.value(), false, c);
  const auto ia = a.id(), ib = b.id();
  return g.record(std::move(c), {a, b}, [ia, ib](Graph& g, std::uint32_t self) {
    const Matrix& dc = g.grad(self);
    if (g.requires_grad(ia)) kernels::gemm(dc, false, g.value(ib), true, g.grad(ia), true);
    if (g.requires_grad(ib)) kernels::gemm(g.value(ia), true, dc, false, g.grad(ib), true);
  });
}

Var matmul_nt(Var a, Var b) {
  Graph& g = graph_of(a, b);
  Matrix c;
  kernels::gemm(a.value(), false, b.value(), true, c);
  const auto ia = a.id(), ib = b.id();
  return g.record(std::move(c), {a, b}, [ia, ib](Graph& g, std::uint32_t self) {
    const Matrix& dc = g.grad(self);
    if (g.requires_grad(ia)) kernels::gemm(dc, false, g.value(ib), false, g.grad(ia), true);
    if (g.requires_grad(ib)) kernels::gemm(dc, true, g.value(ia), false, g.grad(ib), true);
  });
}

Var add(Var a, Var b) {
  Graph& g = graph_of(a, b);
  require_same_shape(a.value(), b.value(), "add");
  Matrix y = a.value();
  const Matrix& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  const auto ia = a.id(), ib = b.id();
  return g.record(std::move(y), {a, b}, [ia, ib](Graph& g, std::uint32_t self) {
    const Matrix& dy = g.grad(self);
    for (auto id : {ia, ib}) {
      if (!g.requires_grad(id)) continue;
      Matrix& d = g.grad(id);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i];
    }
  });
}

Var sub(Var a, Var b) {
  Graph& g = graph_of(a, b);
  require_same_shape(a.value(), b.value(), "sub");
  Matrix y = a.value();
  const Matrix& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= bv[i];
  const auto ia = a.id(), ib = b.id();
  return g.record(std::move(y), {a, b}, [ia, ib](Graph& g, std::uint32_t self) {
    const Matrix& dy = g.grad(self);
    if (g.requires_grad(ia)) {
      Matrix& d = g.grad(ia);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i];
    }
    if (g.requires_grad(ib)) {
      Matrix& d = g.grad(ib);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] -= dy[i];
    }
  });
}

Var mul(Var a, Var b) {
  Graph& g = graph_of(a, b);
  require_same_shape(a.value(), b.value(), "mul");
  Matrix y = a.value();
  const Matrix& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
  const auto ia = a.id(), ib = b.id();
  return g.record(std::move(y), {a, b}, [ia, ib](Graph& g, std::uint32_t self) {
    const Matrix& dy = g.grad(self);
    if (g.requires_grad(ia)) {
      Matrix& d = g.grad(ia);
      const Matrix& bv = g.value(ib);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i] * bv[i];
    }
    if (g.requires_grad(ib)) {
      Matrix& d = g.grad(ib);
      const Matrix& av = g.value(ia);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i] * av[i];
    }
  });
}

Var add_row(Var a, Var row) {
  Graph& g = graph_of(a, row);
  const Matrix& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != a.cols()) {
    throw ShapeError("add_row: row " + rv.shape_string() + " does not fit " + a.value().shape_string());
  }
  Matrix y = a.value();
  for (std::size_t r = 0; r < y.rows(); ++r)
    for (std::size_t c = 0; c < y.cols(); ++c) y(r, c) += rv[c];
  const auto ia = a.id(), ir = row.id();
  return g.record(std::move(y), {a, row}, [ia, ir](Graph& g, std::uint32_t self) {
    const Matrix& dy = g.grad(self);
    if (g.requires_grad(ia)) {
      Matrix& d = g.grad(ia);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i];
    }
    if (g.requires_grad(ir)) {
      Matrix& d = g.grad(ir);
      for (std::size_t r = 0; r < dy.rows(); ++r)
        for (std::size_t c = 0; c < dy.cols(); ++c) d[c] += dy(r, c);
    }
  });
}

Var scale(Var a, double s) {
  const auto ia = a.id();
  return unary(a, [s](double x) { return x * s; }, [ia, s](Graph& g, std::uint32_t self) {
    const Matrix& dy = g.grad(self);
    Matrix& d = g.grad(ia);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += s * dy[i];
  });
}

Var add_scalar(Var a, double s) {
  const auto ia = a.id();
  return unary(a, [s](double x) { return x + s; }, [ia](Graph& g, std::uint32_t self) {
    const Matrix& dy = g.grad(self);
    Matrix& d = g.grad(ia);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i];
  });
}

Var one_minus(Var a) {
  const auto ia = a.id();
  return unary(a, [](double x) { return 1.0 - x; }, [ia](Graph& g, std::uint32_t self) {
    const Matrix& dy = g.grad(self);
    Matrix& d = g.grad(ia);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] -= dy[i];
  });
}

Var sigmoid(Var a) {
  const auto ia = a.id();
  return unary(
      a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [ia](Graph& g, std::uint32_t self) {
        const Matrix& dy = g.grad(self);
        const Matrix& y = g.value(self);
        Matrix& d = g.grad(ia);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i] * y[i] * (1.0 - y[i]);
      });
}

Var tanh(Var a) {
  const auto ia = a.id();
  return unary(a, [](double x) { return std::tanh(x); }, [ia](Graph& g, std::uint32_t self) {
    const Matrix& dy = g.grad(self);
    const Matrix& y = g.value(self);
    Matrix& d = g.grad(ia);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i] * (1.0 - y[i] * y[i]);
  });
}

Var relu(Var a) {
  const auto ia = a.id();
  return unary(a, [](double x) { return x > 0 ? x : 0.0; }, [ia](Graph& g, std::uint32_t self) {
    const Matrix& dy = g.grad(self);
    const Matrix& x = g.value(ia);
    Matrix& d = g.grad(ia);
    for (std::size_t i = 0; i < d.size(); ++i)
      if (x[i] > 0) d[i] += dy[i];
  });
}

Var leaky_relu(Var a, double slope) {
  const auto ia = a.id();
  return unary(
      a, [slope](double x) { return x > 0 ? x : slope * x; },
      [ia, slope](Graph& g, std::uint32_t self) {
        const Matrix& dy = g.grad(self);
        const Matrix& x = g.value(ia);
        Matrix& d = g.grad(ia);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += x[i] > 0 ? dy[i] : slope * dy[i];
      });
}

Var elu(Var a) {
  const auto ia = a.id();
  return unary(
      a, [](double x) { return x > 0 ? x : std::expm1(x); },
      [ia](Graph& g, std::uint32_t self) {
        const Matrix& dy = g.grad(self);
        const Matrix& x = g.value(ia);
        const Matrix& y = g.value(self);
        Matrix& d = g.grad(ia);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += x[i] > 0 ? dy[i] : dy[i] * (y[i] + 1.0);
      });
}

namespace {
void softmax_backward(const Matrix& y, const Matrix& dy, Matrix& dx) {
  for (std::size_t r = 0; r < y.rows(); ++r) {
    double dot = 0.0;
    for (std::size_t c = 0; c < y.cols(); ++c) dot += dy(r, c) * y(r, c);
    for (std::size_t c = 0; c < y.cols(); ++c) dx(r, c) += y(r, c) * (dy(r, c) - dot);
  }
}
}  // namespace

Var softmax_rows(Var a) {
  Matrix y;
  kernels::softmax_rows(a.value(), y);
  const auto ia = a.id();
  return a.graph().record(std::move(y), {a}, [ia](Graph& g, std::uint32_t self) {
    softmax_backward(g.value(self), g.grad(self), g.grad(ia));
  });
}

Var log_softmax_rows(Var a) {
  const Matrix& x = a.value();
  Matrix y(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : x.row(r)) mx = std::max(mx, v);
    double s = 0.0;
    for (double v : x.row(r)) s += std::exp(v - mx);
    const double lse = mx + std::log(s);
    for (std::size_t c = 0; c < x.cols(); ++c) y(r, c) = x(r, c) - lse;
  }
  const auto ia = a.id();
  return a.graph().record(std::move(y), {a}, [ia](Graph& g, std::uint32_t self) {
    const Matrix& y = g.value(self);
    const Matrix& dy = g.grad(self);
    Matrix& dx = g.grad(ia);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < y.cols(); ++c) s += dy(r, c);
      for (std::size_t c = 0; c < y.cols(); ++c) dx(r, c) += dy(r, c) - std::exp(y(r, c)) * s;
    }
  });
}

Var masked_softmax_rows(Var scores, const Matrix& mask) {
  const Matrix& x = scores.value();
  require_same_shape(x, mask, "masked_softmax_rows");
  Matrix y(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < x.cols(); ++c)
      if (mask(r, c) != 0.0) mx = std::max(mx, x(r, c));
    if (mx == -std::numeric_limits<double>::infinity()) {
      throw InputError("masked_softmax_rows: row " + std::to_string(r) + " has no allowed entry");
    }
    double s = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) {
      if (mask(r, c) == 0.0) continue;
      y(r, c) = std::exp(x(r, c) - mx);
      s += y(r, c);
    }
    for (std::size_t c = 0; c < x.cols(); ++c) y(r, c) /= s;
  }
  const auto ia = scores.id();
  return scores.graph().record(std::move(y), {scores}, [ia](Graph& g, std::uint32_t self) {
    softmax_backward(g.value(self), g.grad(self), g.grad(ia));
  });
}

Var cumsum_rows(Var a) {
  Matrix y = a.value();
  for (std::size_t r = 0; r < y.rows(); ++r)
    for (std::size_t c = 1; c < y.cols(); ++c) y(r, c) += y(r, c - 1);
  const auto ia = a.id();
  return a.graph().record(std::move(y), {a}, [ia](Graph& g, std::uint32_t self) {
    const Matrix& dy = g.grad(self);
    Matrix& dx = g.grad(ia);
    for (std::size_t r = 0; r < dy.rows(); ++r) {
      double acc = 0.0;
      for (std::size_t c = dy.cols(); c-- > 0;) {
        acc += dy(r, c);
        dx(r, c) += acc;
      }
    }
  });
}

Var repeat_cols(Var a, std::size_t times) {
  const Matrix& x = a.value();
  Matrix y(x.rows(), x.cols() * times);
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c)
      for (std::size_t k = 0; k < times; ++k) y(r, c * times + k) = x(r, c);
  const auto ia = a.id();
  return a.graph().record(std::move(y), {a}, [ia, times](Graph& g, std::uint32_t self) {
    const Matrix& dy = g.grad(self);
    Matrix& dx = g.grad(ia);
    for (std::size_t r = 0; r < dx.rows(); ++r)
      for (std::size_t c = 0; c < dx.cols(); ++c)
        for (std::size_t k = 0; k < times; ++k) dx(r, c) += dy(r, c * times + k);
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no operands");
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_cols: row count mismatch");
    cols += p.cols();
  }
  Matrix y(rows, cols);
  std::vector<std::uint32_t> ids;
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Matrix& v = p.value();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy(v.row(r).begin(), v.row(r).end(), y.row(r).begin() + static_cast<std::ptrdiff_t>(off));
    ids.push_back(p.id());
    offsets.push_back(off);
    off += v.cols();
  }
  return parts[0].graph().record(std::move(y), parts, [ids, offsets](Graph& g, std::uint32_t self) {
    const Matrix& dy = g.grad(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!g.requires_grad(ids[k])) continue;
      Matrix& d = g.grad(ids[k]);
      for (std::size_t r = 0; r < d.rows(); ++r)
        for (std::size_t c = 0; c < d.cols(); ++c) d(r, c) += dy(r, offsets[k] + c);
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no operands");
  const std::size_t cols = parts[0].cols();
  std::size_t rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols) throw ShapeError("concat_rows: column count mismatch");
    rows += p.rows();
  }
  std::vector<double> data;
  data.reserve(rows * cols);
  std::vector<std::uint32_t> ids;
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Matrix& v = p.value();
    data.insert(data.end(), v.values().begin(), v.values().end());
    ids.push_back(p.id());
    offsets.push_back(off);
    off += v.size();
  }
  return parts[0].graph().record(Matrix(rows, cols, std::move(data)), parts,
                                 [ids, offsets](Graph& g, std::uint32_t self) {
                                   const Matrix& dy = g.grad(self);
                                   for (std::size_t k = 0; k < ids.size(); ++k) {
                                     if (!g.requires_grad(ids[k])) continue;
                                     Matrix& d = g.grad(ids[k]);
                                     for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[offsets[k] + i];
                                   }
                                 });
}

Var reshape(Var a, std::size_t rows, std::size_t cols) {
  const Matrix& x = a.value();
  if (rows * cols != x.size()) throw ShapeError("reshape: " + x.shape_string() + " cannot hold " +
                                                std::to_string(rows) + "x" + std::to_string(cols));
  Matrix y(rows, cols, std::vector<double>(x.values().begin(), x.values().end()));
  const auto ia = a.id();
  return a.graph().record(std::move(y), {a}, [ia](Graph& g, std::uint32_t self) {
    const Matrix& dy = g.grad(self);
    Matrix& dx = g.grad(ia);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i];
  });
}

Var slice_cols(Var a, std::size_t start, std::size_t count) {
  const Matrix& x = a.value();
  if (start + count > x.cols()) throw ShapeError("slice_cols out of range for " + x.shape_string());
  Matrix y(x.rows(), count);
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < count; ++c) y(r, c) = x(r, start + c);
  const auto ia = a.id();
  return a.graph().record(std::move(y), {a}, [ia, start](Graph& g, std::uint32_t self) {
    const Matrix& dy = g.grad(self);
    Matrix& dx = g.grad(ia);
    for (std::size_t r = 0; r < dy.rows(); ++r)
      for (std::size_t c = 0; c < dy.cols(); ++c) dx(r, start + c) += dy(r, c);
  });
}

Var slice_rows(Var a, std::size_t start, std::size_t count) {
  const Matrix& x = a.value();
  if (start + count > x.rows()) throw ShapeError("slice_rows out of range for " + x.shape_string());
  const auto first = x.values().begin() + static_cast<std::ptrdiff_t>(start * x.cols());
  Matrix y(count, x.cols(), std::vector<double>(first, first + static_cast<std::ptrdiff_t>(count * x.cols())));
  const auto ia = a.id();
  return a.graph().record(std::move(y), {a}, [ia, start](Graph& g, std::uint32_t self) {
    const Matrix& dy = g.grad(self);
    Matrix& dx = g.grad(ia);
    const std::size_t off = start * dx.cols();
    for (std::size_t i = 0; i < dy.size(); ++i) dx[off + i] += dy[i];
  });
}

Var gather_rows(Var table, std::span<const std::size_t> ids) {
  const Matrix& t = table.value();
  Matrix y(ids.size(), t.cols());
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] >= t.rows()) {
      throw ShapeError("gather_rows: index " + std::to_string(ids[r]) + " out of range for " + t.shape_string());
    }
    std::copy(t.row(ids[r]).begin(), t.row(ids[r]).end(), y.row(r).begin());
  }
  const auto it = table.id();
  std::vector<std::size_t> idx(ids.begin(), ids.end());
  return table.graph().record(std::move(y), {table}, [it, idx = std::move(idx)](Graph& g, std::uint32_t self) {
    const Matrix& dy = g.grad(self);
    Matrix& dt = g.grad(it);
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t c = 0; c < dy.cols(); ++c) dt(idx[r], c) += dy(r, c);
  });
}

Var scale_rows(Var a, std::span<const double> factors) {
  const Matrix& x = a.value();
  if (factors.size() != x.rows()) throw ShapeError("scale_rows: factor count mismatch");
  Matrix y = x;
  for (std::size_t r = 0; r < y.rows(); ++r)
    for (double& v : y.row(r)) v *= factors[r];
  const auto ia = a.id();
  std::vector<double> f(factors.begin(), factors.end());
  return a.graph().record(std::move(y), {a}, [ia, f = std::move(f)](Graph& g, std::uint32_t self) {
    const Matrix& dy = g.grad(self);
    Matrix& dx = g.grad(ia);
    for (std::size_t r = 0; r < dy.rows(); ++r)
      for (std::size_t c = 0; c < dy.cols(); ++c) dx(r, c) += f[r] * dy(r, c);
  });
}

Var blend_rows(Var fresh, Var old, std::span<const double> keep) {
  Graph& g = graph_of(fresh, old);
  require_same_shape(fresh.value(), old.value(), "blend_rows");
  if (keep.size() != fresh.rows()) throw ShapeError("blend_rows: mask length mismatch");
  std::vector<bool> take(keep.size());
  for (std::size_t r = 0; r < keep.size(); ++r) take[r] = keep[r] != 0.0;
  Matrix y = old.value();
  const Matrix& fv = fresh.value();
  for (std::size_t r = 0; r < y.rows(); ++r)
    if (take[r]) std::copy(fv.row(r).begin(), fv.row(r).end(), y.row(r).begin());
  const auto inew = fresh.id(), iold = old.id();
  return g.record(std::move(y), {fresh, old}, [inew, iold, take](Graph& g, std::uint32_t self) {
    const Matrix& dy = g.grad(self);
    for (std::size_t r = 0; r < dy.rows(); ++r) {
      const auto target = take[r] ? inew : iold;
      if (!g.requires_grad(target)) continue;
      Matrix& d = g.grad(target);
      for (std::size_t c = 0; c < dy.cols(); ++c) d(r, c) += dy(r, c);
    }
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  const auto ia = a.id();
  return a.graph().record(Matrix(1, 1, s), {a}, [ia](Graph& g, std::uint32_t self) {
    const double dy = g.grad(self)[0];
    Matrix& dx = g.grad(ia);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy;
  });
}

Var mean_rows(Var a) {
  const Matrix& x = a.value();
  if (x.rows() == 0) throw ShapeError("mean_rows of an empty matrix");
  Matrix y(1, x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) y[c] += x(r, c);
  const double inv = 1.0 / static_cast<double>(x.rows());
  for (std::size_t c = 0; c < x.cols(); ++c) y[c] *= inv;
  const auto ia = a.id();
  return a.graph().record(std::move(y), {a}, [ia, inv](Graph& g, std::uint32_t self) {
    const Matrix& dy = g.grad(self);
    Matrix& dx = g.grad(ia);
    for (std::size_t r = 0; r < dx.rows(); ++r)
      for (std::size_t c = 0; c < dx.cols(); ++c) dx(r, c) += dy[c] * inv;
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  Graph& g = graph_of(x, gain);
  const Matrix& gv = gain.value();
  const Matrix& bv = bias.value();
  if (gv.rows() != 1 || gv.cols() != x.cols() || !bv.same_shape(gv)) {
    throw ShapeError("layer_norm: affine terms do not match " + x.value().shape_string());
  }
  auto xhat = std::make_shared<Matrix>();
  auto inv_std = std::make_shared<std::vector<double>>();
  kernels::normalize_rows(x.value(), eps, *xhat, *inv_std);
  Matrix y(xhat->rows(), xhat->cols());
  for (std::size_t r = 0; r < y.rows(); ++r)
    for (std::size_t c = 0; c < y.cols(); ++c) y(r, c) = (*xhat)(r, c) * gv[c] + bv[c];
  const auto ix = x.id(), ig = gain.id(), ib = bias.id();
  return g.record(std::move(y), {x, gain, bias}, [ix, ig, ib, xhat, inv_std](Graph& g, std::uint32_t self) {
    const Matrix& dy = g.grad(self);
    const Matrix& gv = g.value(ig);
    const std::size_t n = dy.cols();
    if (g.requires_grad(ig)) {
      Matrix& dg = g.grad(ig);
      for (std::size_t r = 0; r < dy.rows(); ++r)
        for (std::size_t c = 0; c < n; ++c) dg[c] += dy(r, c) * (*xhat)(r, c);
    }
    if (g.requires_grad(ib)) {
      Matrix& db = g.grad(ib);
      for (std::size_t r = 0; r < dy.rows(); ++r)
        for (std::size_t c = 0; c < n; ++c) db[c] += dy(r, c);
    }
    if (g.requires_grad(ix)) {
      Matrix& dx = g.grad(ix);
      std::vector<double> dxhat(n);
      for (std::size_t r = 0; r < dy.rows(); ++r) {
        double s1 = 0.0, s2 = 0.0;
        for (std::size_t c = 0; c < n; ++c) {
          dxhat[c] = dy(r, c) * gv[c];
          s1 += dxhat[c];
          s2 += dxhat[c] * (*xhat)(r, c);
        }
        const double k = (*inv_std)[r] / static_cast<double>(n);
        for (std::size_t c = 0; c < n; ++c) {
          dx(r, c) += k * (static_cast<double>(n) * dxhat[c] - s1 - (*xhat)(r, c) * s2);
        }
      }
    }
  });
}

Var cross_entropy(Var logits, std::span<const std::size_t> targets, std::vector<double>* logprobs) {
  const Matrix& x = logits.value();
  if (targets.size() != x.rows()) throw ShapeError("cross_entropy: target count mismatch");
  auto probs = std::make_shared<Matrix>(x.rows(), x.cols());
  double loss = 0.0;
  if (logprobs) logprobs->assign(x.rows(), 0.0);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    if (targets[r] >= x.cols()) throw ShapeError("cross_entropy: target id out of range");
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : x.row(r)) mx = std::max(mx, v);
    double s = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) {
      (*probs)(r, c) = std::exp(x(r, c) - mx);
      s += (*probs)(r, c);
    }
    for (std::size_t c = 0; c < x.cols(); ++c) (*probs)(r, c) /= s;
    const double lp = x(r, targets[r]) - mx - std::log(s);
    loss -= lp;
    if (logprobs) (*logprobs)[r] = lp;
  }
  const auto il = logits.id();
  std::vector<std::size_t> t(targets.begin(), targets.end());
  return logits.graph().record(Matrix(1, 1, loss), {logits}, [il, probs, t = std::move(t)](Graph& g, std::uint32_t self) {
    const double dy = g.grad(self)[0];
    Matrix& dx = g.grad(il);
    for (std::size_t r = 0; r < dx.rows(); ++r) {
      for (std::size_t c = 0; c < dx.cols(); ++c) dx(r, c) += dy * (*probs)(r, c);
      dx(r, t[r]) -= dy;
    }
  });
}

Var bce_with_logits(Var logits, const Matrix& targets, const Matrix& mask) {
  const Matrix& x = logits.value();
  require_same_shape(x, targets, "bce_with_logits");
  require_same_shape(x, mask, "bce_with_logits");
  double loss = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (mask[i] == 0.0) continue;
    loss += mask[i] * (std::max(x[i], 0.0) - x[i] * targets[i] + std::log1p(std::exp(-std::abs(x[i]))));
  }
  const auto il = logits.id();
  return logits.graph().record(Matrix(1, 1, loss), {logits}, [il, targets, mask](Graph& g, std::uint32_t self) {
    const double dy = g.grad(self)[0];
    const Matrix& x = g.value(il);
    Matrix& dx = g.grad(il);
    for (std::size_t i = 0; i < dx.size(); ++i) {
      if (mask[i] == 0.0) continue;
      const double p = x[i] >= 0 ? 1.0 / (1.0 + std::exp(-x[i])) : std::exp(x[i]) / (1.0 + std::exp(x[i]));
      dx[i] += dy * mask[i] * (p - targets[i]);
    }
  });
}

namespace {

Matrix head_block(const Matrix& m, std::size_t head, std::size_t dh) {
  Matrix out(m.rows(), dh);
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < dh; ++c) out(r, c) = m(r, head * dh + c);
  return out;
}

void add_head_block(Matrix& m, const Matrix& block, std::size_t head) {
  const std::size_t dh = block.cols();
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < dh; ++c) m(r, head * dh + c) += block(r, c);
}

}  // namespace

Var attention(Var q, Var k, Var v, std::size_t heads, bool causal, std::vector<Matrix>* weights) {
  Graph& g = graph_of(q, k);
  const Matrix& qv = q.value();
  const Matrix& kv = k.value();
  const Matrix& vv = v.value();
  if (heads == 0 || qv.cols() % heads != 0) throw ShapeError("attention: width not divisible by heads");
  if (kv.cols() != qv.cols() || !vv.same_shape(kv)) throw ShapeError("attention: q/k/v widths disagree");
  if (kv.rows() == 0) throw ShapeError("attention: empty key set");
  const std::size_t T = qv.rows(), S = kv.rows(), dh = qv.cols() / heads;
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(dh));
  auto probs = std::make_shared<std::vector<Matrix>>(heads);
  Matrix out(T, qv.cols());
  for (std::size_t h = 0; h < heads; ++h) {
    const Matrix qh = head_block(qv, h, dh), kh = head_block(kv, h, dh), vh = head_block(vv, h, dh);
    Matrix scores;
    kernels::gemm(qh, false, kh, true, scores);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t s = 0; s < S; ++s) {
        scores(t, s) *= scale_factor;
        if (causal && s > t) scores(t, s) = -std::numeric_limits<double>::infinity();
      }
    Matrix& p = (*probs)[h];
    kernels::softmax_rows(scores, p);
    Matrix oh;
    kernels::gemm(p, false, vh, false, oh);
    add_head_block(out, oh, h);
  }
  if (weights) *weights = *probs;
  const auto iq = q.id(), ik = k.id(), iv = v.id();
  return g.record(std::move(out), {q, k, v}, [iq, ik, iv, heads, dh, scale_factor, probs](Graph& g, std::uint32_t self) {
    const Matrix& dout = g.grad(self);
    const Matrix& qv = g.value(iq);
    const Matrix& kv = g.value(ik);
    const Matrix& vv = g.value(iv);
    for (std::size_t h = 0; h < heads; ++h) {
      const Matrix& p = (*probs)[h];
      const Matrix doh = head_block(dout, h, dh);
      if (g.requires_grad(iv)) {
        Matrix dvh;
        kernels::gemm(p, true, doh, false, dvh);
        add_head_block(g.grad(iv), dvh, h);
      }
      if (!g.requires_grad(iq) && !g.requires_grad(ik)) continue;
      const Matrix vh = head_block(vv, h, dh);
      Matrix dp;
      kernels::gemm(doh, false, vh, true, dp);
      Matrix ds(p.rows(), p.cols());
      for (std::size_t t = 0; t < p.rows(); ++t) {
        double dot = 0.0;
        for (std::size_t s = 0; s < p.cols(); ++s) dot += dp(t, s) * p(t, s);
        for (std::size_t s = 0; s < p.cols(); ++s) ds(t, s) = p(t, s) * (dp(t, s) - dot) * scale_factor;
      }
      if (g.requires_grad(iq)) {
        Matrix dqh;
        kernels::gemm(ds, false, head_block(kv, h, dh), false, dqh);
        add_head_block(g.grad(iq), dqh, h);
      }
      if (g.requires_grad(ik)) {
        Matrix dkh;
        kernels::gemm(ds, true, head_block(qv, h, dh), false, dkh);
        add_head_block(g.grad(ik), dkh, h);
      }
    }
  });
}

Var im2col(Var input, std::size_t height, std::size_t width, std::size_t kernel, std::size_t stride,
           std::size_t pad) {
  const Matrix& x = input.value();
  if (x.cols() != height * width) throw ShapeError("im2col: input is not channels x (h*w)");
  const std::size_t channels = x.rows();
  const std::size_t ho = (height + 2 * pad - kernel) / stride + 1;
  const std::size_t wo = (width + 2 * pad - kernel) / stride + 1;
  // source index per output entry, or -1 for padding
  auto src = std::make_shared<std::vector<long>>(ho * wo * channels * kernel * kernel, -1);
  Matrix y(ho * wo, channels * kernel * kernel);
  for (std::size_t oy = 0; oy < ho; ++oy)
    for (std::size_t ox = 0; ox < wo; ++ox)
      for (std::size_t ch = 0; ch < channels; ++ch)
        for (std::size_t ky = 0; ky < kernel; ++ky)
          for (std::size_t kx = 0; kx < kernel; ++kx) {
            const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
            const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
            const std::size_t row = oy * wo + ox;
            const std::size_t col = (ch * kernel + ky) * kernel + kx;
            if (iy < 0 || ix < 0 || iy >= static_cast<long>(height) || ix >= static_cast<long>(width)) continue;
            const std::size_t s = ch * height * width + static_cast<std::size_t>(iy) * width + static_cast<std::size_t>(ix);
            y(row, col) = x[s];
            (*src)[row * y.cols() + col] = static_cast<long>(s);
          }
  const auto ii = input.id();
  return input.graph().record(std::move(y), {input}, [ii, src](Graph& g, std::uint32_t self) {
    const Matrix& dy = g.grad(self);
    Matrix& dx = g.grad(ii);
    for (std::size_t i = 0; i < dy.size(); ++i)
      if ((*src)[i] >= 0) dx[static_cast<std::size_t>((*src)[i])] += dy[i];
  });
}

Var avg_pool2(Var input, std::size_t height, std::size_t width) {
  const Matrix& x = input.value();
  if (x.cols() != height * width || height % 2 || width % 2) throw ShapeError("avg_pool2: bad input shape");
  const std::size_t ho = height / 2, wo = width / 2;
  Matrix y(x.rows(), ho * wo);
  for (std::size_t ch = 0; ch < x.rows(); ++ch)
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox) {
        double s = 0.0;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) s += x(ch, (2 * oy + dy) * width + 2 * ox + dx);
        y(ch, oy * wo + ox) = 0.25 * s;
      }
  const auto ii = input.id();
  return input.graph().record(std::move(y), {input}, [ii, width, ho, wo](Graph& g, std::uint32_t self) {
    const Matrix& dyv = g.grad(self);
    Matrix& dxv = g.grad(ii);
    for (std::size_t ch = 0; ch < dyv.rows(); ++ch)
      for (std::size_t oy = 0; oy < ho; ++oy)
        for (std::size_t ox = 0; ox < wo; ++ox) {
          const double d = 0.25 * dyv(ch, oy * wo + ox);
          for (std::size_t a = 0; a < 2; ++a)
            for (std::size_t b = 0; b < 2; ++b) dxv(ch, (2 * oy + a) * width + 2 * ox + b) += d;
        }
  });
}

}  // namespace sgn
