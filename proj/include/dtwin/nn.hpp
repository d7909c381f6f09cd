#pragma once

#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "dtwin/autodiff.hpp"

namespace dtwin {

// Insertion-ordered, name-addressable collection of parameters and buffers.
// Parameter addresses are stable for the lifetime of the set.
class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(const ParameterSet& other);
  ParameterSet& operator=(const ParameterSet& other);
  ParameterSet(ParameterSet&&) noexcept = default;
  ParameterSet& operator=(ParameterSet&&) noexcept = default;

  Parameter& add(std::string name, Tensor value, bool trainable = true);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const noexcept { return params_.size(); }
  Parameter& at(std::size_t i) { return *params_[i]; }
  const Parameter& at(std::size_t i) const { return *params_[i]; }

  void zero_grad();
  std::size_t scalar_count() const;

  // Value snapshot/restore (for early stopping).
  std::vector<Tensor> snapshot() const;
  void restore(const std::vector<Tensor>& values);

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::map<std::string, std::size_t> index_;
};

// Tag for layer constructors that rebind to parameters already in a set.
struct BindExisting {};
inline constexpr BindExisting bind_existing{};

// Xavier/Glorot uniform in [-a, a], a = sqrt(6 / (fan_in + fan_out)).
Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng);

// y = x W + b with W stored [in, out].
class Linear {
 public:
  Linear() = default;
  Linear(ParameterSet& params, const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng);
  // Rebinds to parameters already present in `params` (after a copy or load).
  Linear(ParameterSet& params, const std::string& name);

  Var operator()(Graph& g, Var x) const;
  Parameter& weight() const { return *weight_; }
  Parameter& bias() const { return *bias_; }
  std::size_t in_features() const { return weight_->value.rows(); }
  std::size_t out_features() const { return weight_->value.cols(); }

 private:
  Parameter* weight_ = nullptr;
  Parameter* bias_ = nullptr;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParameterSet& params, const std::string& name, std::size_t width);
  LayerNorm(ParameterSet& params, const std::string& name, BindExisting);
  Var operator()(Graph& g, Var x) const;

 private:
  Parameter* gamma_ = nullptr;
  Parameter* beta_ = nullptr;
  double eps_ = 1e-5;
};

// Batch statistics in training graphs; running statistics otherwise.
class BatchNorm {
 public:
  BatchNorm() = default;
  BatchNorm(ParameterSet& params, const std::string& name, std::size_t width, double momentum = 0.1);
  BatchNorm(ParameterSet& params, const std::string& name, BindExisting, double momentum = 0.1);
  Var operator()(Graph& g, Var x) const;

 private:
  Parameter* gamma_ = nullptr;
  Parameter* beta_ = nullptr;
  Parameter* running_mean_ = nullptr;
  Parameter* running_var_ = nullptr;
  double momentum_ = 0.1;
  double eps_ = 1e-5;
};

struct AttentionResult {
  Var output;                // [queries, d]
  std::vector<Tensor> weights;  // one [queries, keys] matrix per head
};

// Scaled dot-product attention split across `heads` column blocks.
// query [q,d], keys [k,d], values [k,dv]; d and dv must be divisible by heads.
AttentionResult multi_head_attention(Var query, Var keys, Var values, std::size_t heads);

// Multi-head attention with input and output projections.
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(ParameterSet& params, const std::string& name, std::size_t width, std::size_t heads,
                     std::mt19937_64& rng);
  MultiHeadAttention(ParameterSet& params, const std::string& name, std::size_t heads);

  // `memory_keys_source` is projected to keys and values.
  Var operator()(Graph& g, Var queries_source, Var memory_source) const;

  const Linear& query_proj() const { return wq_; }
  const Linear& key_proj() const { return wk_; }
  const Linear& value_proj() const { return wv_; }
  const Linear& out_proj() const { return wo_; }
  std::size_t heads() const { return heads_; }

 private:
  Linear wq_, wk_, wv_, wo_;
  std::size_t heads_ = 1;
};

}  // namespace dtwin
