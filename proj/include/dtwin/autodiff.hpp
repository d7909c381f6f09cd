#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dtwin/tensor.hpp"

namespace dtwin {

// A trainable (or buffer) array owned by a ParameterSet.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;
};

class Graph;

// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;

  bool valid() const noexcept { return graph_ != nullptr; }
  Graph& graph() const;
  std::size_t id() const noexcept { return id_; }

  const Tensor& value() const;
  // Gradient of the last backward pass; empty if the node did not require one.
  const Tensor& grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  friend class Graph;
  Var(Graph* g, std::size_t id) : graph_(g), id_(id) {}

  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

// Dynamically recorded computation for reverse-mode differentiation. Every op
// appends a node, so insertion order is a topological order and backward
// walks it in reverse exactly once.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  explicit Graph(bool training = false, std::uint64_t seed = 0);
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool training() const noexcept { return training_; }
  std::mt19937_64& rng() noexcept { return rng_; }

  Var constant(Tensor value);
  Var input(Tensor value, bool requires_grad = false);
  Var param(Parameter& p);

  // Seeds d(out)/d(out) = 1; `out` must be 1x1.
  void backward(Var out);
  void backward(Var out, const Tensor& seed);

  // Op implementation interface.
  Var record(Tensor value, std::vector<std::size_t> inputs, BackwardFn fn);
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& grad(std::size_t id) const { return nodes_[id].grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  // Adds `g` into the gradient slot of node `id` (no-op if it needs none).
  void accumulate(std::size_t id, const Tensor& g);
  Tensor& grad_slot(std::size_t id);

  // Error-message context: "op 'matmul' at node 'policy/ffn1'".
  std::string where(const std::string& op) const;

  std::size_t node_count() const noexcept { return nodes_.size(); }

  class Scope {
   public:
    Scope(Graph& g, std::string name);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Graph& g_;
  };

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };

  bool training_;
  std::mt19937_64 rng_;
  std::deque<Node> nodes_;
  std::vector<std::string> scope_;
  bool backward_done_ = false;
};

namespace ad {

Var matmul(Var a, Var b);
// a * b^T
Var matmul_nt(Var a, Var b);
Var transpose(Var a);

// Elementwise with broadcasting of the second operand (or first) from
// [1,c], [r,1] or [1,1] to [r,c].
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);

Var add_scalar(Var a, double s);
Var scale(Var a, double s);
Var neg(Var a);

Var relu(Var a);
Var sigmoid(Var a);
Var tanh(Var a);
Var exp(Var a);
Var log(Var a);
Var softplus(Var a);
Var square(Var a);
Var sqrt(Var a);

Var sum(Var a);
Var mean(Var a);
Var sum_rows(Var a);   // [r,c] -> [1,c]
Var sum_cols(Var a);   // [r,c] -> [r,1]
Var mean_rows(Var a);  // [r,c] -> [1,c]
Var mean_cols(Var a);  // [r,c] -> [r,1]

// Row-wise normalizations.
Var softmax(Var a);
Var log_softmax(Var a);
Var logsumexp(Var a);  // [r,c] -> [r,1]

Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_cols(Var a, std::size_t start, std::size_t count);
Var slice_rows(Var a, std::size_t start, std::size_t count);
Var gather_rows(Var a, std::span<const std::size_t> rows);

// Inverted dropout; identity unless the graph is in training mode.
Var dropout(Var a, double rate);

// log(1 - Phi(z)) for the standard normal, stable in both tails.
Var normal_log_sf(Var z);

}  // namespace ad

// Scalar helpers shared by ops and tests.
double normal_cdf(double z);
double normal_log_sf_value(double z);
double sigmoid_value(double x);

}  // namespace dtwin
