#include "dtwin/autodiff.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "dtwin/error.hpp"
#include "dtwin/random.hpp"

namespace dtwin {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

MatMap as_mat(Tensor& t) { return MatMap(t.storage().data(), t.rows(), t.cols()); }
ConstMatMap as_mat(const Tensor& t) { return ConstMatMap(t.storage().data(), t.rows(), t.cols()); }

Tensor like(const Tensor& t, double fill = 0.0) { return Tensor(t.shape(), fill); }

// Result shape of a broadcast binary op, or throws.
Shape broadcast_shape(const Tensor& a, const Tensor& b, Graph& g, const char* op) {
  const std::size_t ar = a.rows(), ac = a.cols(), br = b.rows(), bc = b.cols();
  auto dim = [&](std::size_t x, std::size_t y) -> std::size_t {
    if (x == y) return x;
    if (x == 1) return y;
    if (y == 1) return x;
    throw ShapeError(g.where(op) + ": cannot broadcast " + shape_string(a.shape()) + " with " +
                     shape_string(b.shape()));
  };
  return {dim(ar, br), dim(ac, bc)};
}

// Sum `g` ([R,C]) down to the shape of `target` ([1,C], [R,1], [1,1] or [R,C]).
Tensor reduce_to(const Tensor& g, const Tensor& target) {
  const std::size_t R = g.rows(), C = g.cols();
  const std::size_t tr = target.rows(), tc = target.cols();
  if (tr == R && tc == C) return g.reshaped(target.shape());
  Tensor out(target.shape(), 0.0);
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t c = 0; c < C; ++c) {
      out[(tr == 1 ? 0 : r) * tc + (tc == 1 ? 0 : c)] += g(r, c);
    }
  }
  return out;
}

template <class F>
Tensor broadcast_apply(const Tensor& a, const Tensor& b, const Shape& shape, F f) {
  Tensor out(shape);
  const std::size_t R = shape[0], C = shape[1];
  const std::size_t ac = a.cols(), bc = b.cols();
  const bool ar1 = a.rows() == 1, ac1 = ac == 1, br1 = b.rows() == 1, bc1 = bc == 1;
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t c = 0; c < C; ++c) {
      const double x = a[(ar1 ? 0 : r) * ac + (ac1 ? 0 : c)];
      const double y = b[(br1 ? 0 : r) * bc + (bc1 ? 0 : c)];
      out[r * C + c] = f(x, y);
    }
  }
  return out;
}

template <class F, class D>
Var unary(Var a, F f, D dfdx) {
  Graph& g = a.graph();
  const Tensor& x = a.value();
  Tensor out = like(x);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  const std::size_t ia = a.id();
  return g.record(std::move(out), {ia}, [ia, dfdx](Graph& g, std::size_t self) {
    if (!g.requires_grad(ia)) return;
    const Tensor& x = g.value(ia);
    const Tensor& y = g.value(self);
    const Tensor& gy = g.grad(self);
    Tensor& gx = g.grad_slot(ia);
    for (std::size_t i = 0; i < x.size(); ++i) gx[i] += gy[i] * dfdx(x[i], y[i]);
  });
}

void require_same_graph(Var a, Var b, const char* op) {
  if (!a.valid() || !b.valid() || &a.graph() != &b.graph()) {
    throw UsageError(std::string(op) + ": operands belong to different graphs");
  }
}

}  // namespace

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

double sigmoid_value(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double normal_log_sf_value(double z) {
  if (z < 30.0) return std::log(0.5 * std::erfc(z / std::numbers::sqrt2));
  // Asymptotic expansion of the Mills ratio for the far upper tail.
  const double z2 = z * z;
  const double log_pdf = -0.5 * z2 - 0.5 * std::log(2.0 * std::numbers::pi);
  return log_pdf - std::log(z) + std::log1p(-1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2));
}

// ---------------------------------------------------------------- Var / Graph

Graph& Var::graph() const {
  if (!graph_) throw UsageError("use of an empty Var");
  return *graph_;
}

const Tensor& Var::value() const { return graph().value(id_); }
const Tensor& Var::grad() const { return graph().grad(id_); }

Graph::Graph(bool training, std::uint64_t seed) : training_(training), rng_(seed) {}

Var Graph::constant(Tensor value) { return input(std::move(value), false); }

Var Graph::input(Tensor value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Graph::param(Parameter& p) {
  Node n;
  n.value = p.value;
  n.param = &p;
  n.requires_grad = p.trainable;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Graph::record(Tensor value, std::vector<std::size_t> inputs, BackwardFn fn) {
  if (backward_done_) throw UsageError(where("record") + ": graph already differentiated");
  Node n;
  n.value = std::move(value);
  n.requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                [this](std::size_t i) { return nodes_[i].requires_grad; });
  n.inputs = std::move(inputs);
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Tensor& Graph::grad_slot(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty() && !n.value.empty()) n.grad = Tensor(n.value.shape(), 0.0);
  return n.grad;
}

void Graph::accumulate(std::size_t id, const Tensor& g) {
  if (!nodes_[id].requires_grad) return;
  Tensor& slot = grad_slot(id);
  if (slot.size() != g.size()) {
    throw ShapeError(where("accumulate") + ": gradient " + shape_string(g.shape()) +
                     " for value " + shape_string(slot.shape()));
  }
  for (std::size_t i = 0; i < g.size(); ++i) slot[i] += g[i];
}

void Graph::backward(Var out) {
  if (!out.valid()) throw UsageError("backward called before forward: no output node");
  if (out.value().size() != 1) {
    throw ShapeError("backward(out) needs a scalar output, got " + shape_string(out.value().shape()));
  }
  backward(out, Tensor(out.value().shape(), 1.0));
}

void Graph::backward(Var out, const Tensor& seed) {
  if (!out.valid() || nodes_.empty()) throw UsageError("backward called before forward: empty graph");
  if (&out.graph() != this) throw UsageError("backward: output belongs to another graph");
  if (backward_done_) throw UsageError("backward called twice on the same graph");
  if (seed.size() != out.value().size()) {
    throw ShapeError("backward seed " + shape_string(seed.shape()) + " does not match output " +
                     shape_string(out.value().shape()));
  }
  backward_done_ = true;
  if (!nodes_[out.id()].requires_grad) return;
  grad_slot(out.id()) = seed.reshaped(out.value().shape());
  for (std::size_t i = out.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(*this, i);
    if (n.param) {
      Parameter& p = *n.param;
      if (p.grad.size() != p.value.size()) p.grad = Tensor(p.value.shape(), 0.0);
      for (std::size_t k = 0; k < n.grad.size(); ++k) p.grad[k] += n.grad[k];
    }
  }
}

std::string Graph::where(const std::string& op) const {
  std::string path;
  for (const auto& s : scope_) {
    if (!path.empty()) path += "/";
    path += s;
  }
  return "op '" + op + "' at node '" + (path.empty() ? std::string("<root>") : path) + "'";
}

Graph::Scope::Scope(Graph& g, std::string name) : g_(g) { g_.scope_.push_back(std::move(name)); }
Graph::Scope::~Scope() { g_.scope_.pop_back(); }

// ------------------------------------------------------------------------ ops

namespace ad {

Var matmul(Var a, Var b) {
  require_same_graph(a, b, "matmul");
  Graph& g = a.graph();
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.cols() != y.rows()) {
    throw ShapeError(g.where("matmul") + ": " + shape_string(x.shape()) + " x " + shape_string(y.shape()));
  }
  Tensor out = Tensor::matrix(x.rows(), y.cols());
  as_mat(out).noalias() = as_mat(x) * as_mat(y);
  const std::size_t ia = a.id(), ib = b.id();
  return g.record(std::move(out), {ia, ib}, [ia, ib](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad(self);
    if (g.requires_grad(ia)) as_mat(g.grad_slot(ia)).noalias() += as_mat(gy) * as_mat(g.value(ib)).transpose();
    if (g.requires_grad(ib)) as_mat(g.grad_slot(ib)).noalias() += as_mat(g.value(ia)).transpose() * as_mat(gy);
  });
}

Var matmul_nt(Var a, Var b) {
  require_same_graph(a, b, "matmul_nt");
  Graph& g = a.graph();
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.cols() != y.cols()) {
    throw ShapeError(g.where("matmul_nt") + ": " + shape_string(x.shape()) + " x " +
                     shape_string(y.shape()) + "^T");
  }
  Tensor out = Tensor::matrix(x.rows(), y.rows());
  as_mat(out).noalias() = as_mat(x) * as_mat(y).transpose();
  const std::size_t ia = a.id(), ib = b.id();
  return g.record(std::move(out), {ia, ib}, [ia, ib](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad(self);
    if (g.requires_grad(ia)) as_mat(g.grad_slot(ia)).noalias() += as_mat(gy) * as_mat(g.value(ib));
    if (g.requires_grad(ib)) as_mat(g.grad_slot(ib)).noalias() += as_mat(gy).transpose() * as_mat(g.value(ia));
  });
}

Var transpose(Var a) {
  Graph& g = a.graph();
  const Tensor& x = a.value();
  Tensor out = Tensor::matrix(x.cols(), x.rows());
  as_mat(out) = as_mat(x).transpose();
  const std::size_t ia = a.id();
  return g.record(std::move(out), {ia}, [ia](Graph& g, std::size_t self) {
    if (g.requires_grad(ia)) as_mat(g.grad_slot(ia)) += as_mat(g.grad(self)).transpose();
  });
}

namespace {

// d/dx and d/dy of f(x, y) for elementwise binary ops.
template <class F, class DX, class DY>
Var binary(Var a, Var b, const char* op, F f, DX dx, DY dy) {
  require_same_graph(a, b, op);
  Graph& g = a.graph();
  const Shape shape = broadcast_shape(a.value(), b.value(), g, op);
  Tensor out = broadcast_apply(a.value(), b.value(), shape, f);
  const std::size_t ia = a.id(), ib = b.id();
  return g.record(std::move(out), {ia, ib}, [ia, ib, dx, dy](Graph& g, std::size_t self) {
    const Tensor& x = g.value(ia);
    const Tensor& y = g.value(ib);
    const Tensor& gy = g.grad(self);
    const Shape& shape = gy.shape();
    if (g.requires_grad(ia)) {
      Tensor full = broadcast_apply(x, y, shape, dx);
      for (std::size_t i = 0; i < full.size(); ++i) full[i] *= gy[i];
      g.accumulate(ia, reduce_to(full, x));
    }
    if (g.requires_grad(ib)) {
      Tensor full = broadcast_apply(x, y, shape, dy);
      for (std::size_t i = 0; i < full.size(); ++i) full[i] *= gy[i];
      g.accumulate(ib, reduce_to(full, y));
    }
  });
}

}  // namespace

Var add(Var a, Var b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Var div(Var a, Var b) {
  return binary(
      a, b, "div", [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Var add_scalar(Var a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var scale(Var a, double s) {
  return unary(a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Var neg(Var a) { return scale(a, -1.0); }

Var relu(Var a) {
  return unary(a, [](double x) { return x > 0 ? x : 0.0; }, [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Var sigmoid(Var a) {
  return unary(a, sigmoid_value, [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Var a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var exp(Var a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var softplus(Var a) {
  return unary(
      a, [](double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
      [](double x, double) { return sigmoid_value(x); });
}

Var square(Var a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var sqrt(Var a) {
  return unary(a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

Var normal_log_sf(Var z) {
  return unary(z, normal_log_sf_value, [](double x, double y) {
    const double log_pdf = -0.5 * x * x - 0.5 * std::log(2.0 * std::numbers::pi);
    return -std::exp(log_pdf - y);
  });
}

Var sum(Var a) {
  Graph& g = a.graph();
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const std::size_t ia = a.id();
  return g.record(Tensor::scalar(s), {ia}, [ia](Graph& g, std::size_t self) {
    if (!g.requires_grad(ia)) return;
    const double gy = g.grad(self)[0];
    Tensor& gx = g.grad_slot(ia);
    for (double& v : gx.data()) v += gy;
  });
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var sum_rows(Var a) {
  Graph& g = a.graph();
  const Tensor& x = a.value();
  Tensor out = Tensor::matrix(1, x.cols());
  as_mat(out) = as_mat(x).colwise().sum();
  const std::size_t ia = a.id();
  return g.record(std::move(out), {ia}, [ia](Graph& g, std::size_t self) {
    if (!g.requires_grad(ia)) return;
    as_mat(g.grad_slot(ia)).rowwise() += as_mat(g.grad(self)).row(0);
  });
}

Var sum_cols(Var a) {
  Graph& g = a.graph();
  const Tensor& x = a.value();
  Tensor out = Tensor::matrix(x.rows(), 1);
  as_mat(out) = as_mat(x).rowwise().sum();
  const std::size_t ia = a.id();
  return g.record(std::move(out), {ia}, [ia](Graph& g, std::size_t self) {
    if (!g.requires_grad(ia)) return;
    as_mat(g.grad_slot(ia)).colwise() += as_mat(g.grad(self)).col(0);
  });
}

Var mean_rows(Var a) { return scale(sum_rows(a), 1.0 / static_cast<double>(a.value().rows())); }
Var mean_cols(Var a) { return scale(sum_cols(a), 1.0 / static_cast<double>(a.value().cols())); }

Var softmax(Var a) {
  Graph& g = a.graph();
  const Tensor& x = a.value();
  Tensor out = like(x);
  const std::size_t R = x.rows(), C = x.cols();
  for (std::size_t r = 0; r < R; ++r) {
    double mx = -INFINITY;
    for (std::size_t c = 0; c < C; ++c) mx = std::max(mx, x(r, c));
    double s = 0.0;
    for (std::size_t c = 0; c < C; ++c) s += (out(r, c) = std::exp(x(r, c) - mx));
    for (std::size_t c = 0; c < C; ++c) out(r, c) /= s;
  }
  const std::size_t ia = a.id();
  return g.record(std::move(out), {ia}, [ia](Graph& g, std::size_t self) {
    if (!g.requires_grad(ia)) return;
    const Tensor& y = g.value(self);
    const Tensor& gy = g.grad(self);
    Tensor& gx = g.grad_slot(ia);
    const std::size_t R = y.rows(), C = y.cols();
    for (std::size_t r = 0; r < R; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < C; ++c) dot += gy(r, c) * y(r, c);
      for (std::size_t c = 0; c < C; ++c) gx(r, c) += y(r, c) * (gy(r, c) - dot);
    }
  });
}

Var logsumexp(Var a) {
  Graph& g = a.graph();
  const Tensor& x = a.value();
  const std::size_t R = x.rows(), C = x.cols();
  Tensor out = Tensor::matrix(R, 1);
  for (std::size_t r = 0; r < R; ++r) {
    double mx = -INFINITY;
    for (std::size_t c = 0; c < C; ++c) mx = std::max(mx, x(r, c));
    double s = 0.0;
    for (std::size_t c = 0; c < C; ++c) s += std::exp(x(r, c) - mx);
    out(r, 0) = mx + std::log(s);
  }
  const std::size_t ia = a.id();
  return g.record(std::move(out), {ia}, [ia](Graph& g, std::size_t self) {
    if (!g.requires_grad(ia)) return;
    const Tensor& x = g.value(ia);
    const Tensor& y = g.value(self);
    const Tensor& gy = g.grad(self);
    Tensor& gx = g.grad_slot(ia);
    for (std::size_t r = 0; r < x.rows(); ++r) {
      for (std::size_t c = 0; c < x.cols(); ++c) gx(r, c) += gy(r, 0) * std::exp(x(r, c) - y(r, 0));
    }
  });
}

Var log_softmax(Var a) { return sub(a, logsumexp(a)); }

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw UsageError("concat_cols: no inputs");
  Graph& g = parts[0].graph();
  const std::size_t R = parts[0].value().rows();
  std::size_t C = 0;
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    if (&p.graph() != &g) throw UsageError("concat_cols: operands belong to different graphs");
    if (p.value().rows() != R) {
      throw ShapeError(g.where("concat_cols") + ": row mismatch " + shape_string(parts[0].value().shape()) +
                       " vs " + shape_string(p.value().shape()));
    }
    C += p.value().cols();
    ids.push_back(p.id());
  }
  Tensor out = Tensor::matrix(R, C);
  std::size_t off = 0;
  for (const Var& p : parts) {
    as_mat(out).middleCols(off, p.value().cols()) = as_mat(p.value());
    off += p.value().cols();
  }
  return g.record(std::move(out), ids, [ids](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad(self);
    std::size_t off = 0;
    for (std::size_t id : ids) {
      const std::size_t c = g.value(id).cols();
      if (g.requires_grad(id)) as_mat(g.grad_slot(id)) += as_mat(gy).middleCols(off, c);
      off += c;
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw UsageError("concat_rows: no inputs");
  Graph& g = parts[0].graph();
  const std::size_t C = parts[0].value().cols();
  std::size_t R = 0;
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    if (&p.graph() != &g) throw UsageError("concat_rows: operands belong to different graphs");
    if (p.value().cols() != C) {
      throw ShapeError(g.where("concat_rows") + ": column mismatch " + shape_string(parts[0].value().shape()) +
                       " vs " + shape_string(p.value().shape()));
    }
    R += p.value().rows();
    ids.push_back(p.id());
  }
  Tensor out = Tensor::matrix(R, C);
  std::size_t off = 0;
  for (const Var& p : parts) {
    as_mat(out).middleRows(off, p.value().rows()) = as_mat(p.value());
    off += p.value().rows();
  }
  return g.record(std::move(out), ids, [ids](Graph& g, std::size_t self) {
    const Tensor& gy = g.grad(self);
    std::size_t off = 0;
    for (std::size_t id : ids) {
      const std::size_t r = g.value(id).rows();
      if (g.requires_grad(id)) as_mat(g.grad_slot(id)) += as_mat(gy).middleRows(off, r);
      off += r;
    }
  });
}

Var slice_cols(Var a, std::size_t start, std::size_t count) {
  Graph& g = a.graph();
  const Tensor& x = a.value();
  if (start + count > x.cols()) {
    throw ShapeError(g.where("slice_cols") + ": [" + std::to_string(start) + ", " + std::to_string(start + count) +
                     ") out of " + shape_string(x.shape()));
  }
  Tensor out = Tensor::matrix(x.rows(), count);
  as_mat(out) = as_mat(x).middleCols(start, count);
  const std::size_t ia = a.id();
  return g.record(std::move(out), {ia}, [ia, start, count](Graph& g, std::size_t self) {
    if (g.requires_grad(ia)) as_mat(g.grad_slot(ia)).middleCols(start, count) += as_mat(g.grad(self));
  });
}

Var slice_rows(Var a, std::size_t start, std::size_t count) {
  Graph& g = a.graph();
  const Tensor& x = a.value();
  if (start + count > x.rows()) {
    throw ShapeError(g.where("slice_rows") + ": [" + std::to_string(start) + ", " + std::to_string(start + count) +
                     ") out of " + shape_string(x.shape()));
  }
  Tensor out = Tensor::matrix(count, x.cols());
  as_mat(out) = as_mat(x).middleRows(start, count);
  const std::size_t ia = a.id();
  return g.record(std::move(out), {ia}, [ia, start, count](Graph& g, std::size_t self) {
    if (g.requires_grad(ia)) as_mat(g.grad_slot(ia)).middleRows(start, count) += as_mat(g.grad(self));
  });
}

Var gather_rows(Var a, std::span<const std::size_t> rows) {
  Graph& g = a.graph();
  const Tensor& x = a.value();
  const std::size_t C = x.cols();
  Tensor out = Tensor::matrix(rows.size(), C);
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= x.rows()) throw ShapeError(g.where("gather_rows") + ": row index out of range");
    as_mat(out).row(i) = as_mat(x).row(idx[i]);
  }
  const std::size_t ia = a.id();
  return g.record(std::move(out), {ia}, [ia, idx](Graph& g, std::size_t self) {
    if (!g.requires_grad(ia)) return;
    auto gx = as_mat(g.grad_slot(ia));
    auto gy = as_mat(g.grad(self));
    for (std::size_t i = 0; i < idx.size(); ++i) gx.row(idx[i]) += gy.row(i);
  });
}

Var dropout(Var a, double rate) {
  Graph& g = a.graph();
  if (rate < 0.0 || rate >= 1.0) {
    if (rate == 1.0 && !g.training()) return a;
    if (rate < 0.0 || rate > 1.0) throw ConfigError(g.where("dropout") + ": rate must be in [0,1]");
  }
  if (!g.training() || rate == 0.0) return a;
  const Tensor& x = a.value();
  Tensor mask = like(x);
  const double keep = 1.0 - rate;
  const double scale_kept = keep > 0 ? 1.0 / keep : 0.0;
  for (double& m : mask.data()) m = uniform01(g.rng()) < keep ? scale_kept : 0.0;
  return mul(a, g.constant(std::move(mask)));
}

}  // namespace ad
}  // namespace dtwin
