#include "dtwin/nn.hpp"

#include <cmath>

#include "dtwin/error.hpp"
#include "dtwin/random.hpp"

namespace dtwin {

ParameterSet::ParameterSet(const ParameterSet& other) { *this = other; }

ParameterSet& ParameterSet::operator=(const ParameterSet& other) {
  if (this == &other) return *this;
  params_.clear();
  index_.clear();
  for (const auto& p : other.params_) add(p->name, p->value, p->trainable);
  return *this;
}

Parameter& ParameterSet::add(std::string name, Tensor value, bool trainable) {
  if (index_.count(name)) throw UsageError("duplicate parameter name '" + name + "'");
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->grad = Tensor(value.shape(), 0.0);
  p->value = std::move(value);
  p->trainable = trainable;
  index_.emplace(std::move(name), params_.size());
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter& ParameterSet::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw UsageError("unknown parameter '" + name + "'");
  return *params_[it->second];
}

const Parameter& ParameterSet::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw UsageError("unknown parameter '" + name + "'");
  return *params_[it->second];
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) {
    if (p->grad.size() != p->value.size()) p->grad = Tensor(p->value.shape(), 0.0);
    p->grad.fill(0.0);
  }
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

std::vector<Tensor> ParameterSet::snapshot() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p->value);
  return out;
}

void ParameterSet::restore(const std::vector<Tensor>& values) {
  if (values.size() != params_.size()) throw UsageError("restore: snapshot size mismatch");
  for (std::size_t i = 0; i < values.size(); ++i) params_[i]->value = values[i];
}

Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor w = Tensor::matrix(fan_in, fan_out);
  for (double& v : w.data()) v = (2.0 * uniform01(rng) - 1.0) * a;
  return w;
}

// --------------------------------------------------------------------- Linear

Linear::Linear(ParameterSet& params, const std::string& name, std::size_t in, std::size_t out,
               std::mt19937_64& rng)
    : weight_(&params.add(name + ".weight", xavier_uniform(in, out, rng))),
      bias_(&params.add(name + ".bias", Tensor::matrix(1, out))) {}

Linear::Linear(ParameterSet& params, const std::string& name)
    : weight_(&params.get(name + ".weight")), bias_(&params.get(name + ".bias")) {}

Var Linear::operator()(Graph& g, Var x) const {
  if (!weight_) throw UsageError(g.where("linear") + ": layer not initialized");
  if (x.cols() != weight_->value.rows()) {
    throw ShapeError(g.where("linear " + weight_->name) + ": input " + shape_string(x.value().shape()) +
                     " vs weight " + shape_string(weight_->value.shape()));
  }
  return ad::add(ad::matmul(x, g.param(*weight_)), g.param(*bias_));
}

// ------------------------------------------------------------------ LayerNorm

LayerNorm::LayerNorm(ParameterSet& params, const std::string& name, std::size_t width)
    : gamma_(&params.add(name + ".gamma", Tensor::matrix(1, width, 1.0))),
      beta_(&params.add(name + ".beta", Tensor::matrix(1, width, 0.0))) {}

LayerNorm::LayerNorm(ParameterSet& params, const std::string& name, BindExisting)
    : gamma_(&params.get(name + ".gamma")), beta_(&params.get(name + ".beta")) {}

Var LayerNorm::operator()(Graph& g, Var x) const {
  Var centered = ad::sub(x, ad::mean_cols(x));
  Var var = ad::mean_cols(ad::square(centered));
  Var normed = ad::div(centered, ad::sqrt(ad::add_scalar(var, eps_)));
  return ad::add(ad::mul(normed, g.param(*gamma_)), g.param(*beta_));
}

// ------------------------------------------------------------------ BatchNorm

BatchNorm::BatchNorm(ParameterSet& params, const std::string& name, std::size_t width, double momentum)
    : gamma_(&params.add(name + ".gamma", Tensor::matrix(1, width, 1.0))),
      beta_(&params.add(name + ".beta", Tensor::matrix(1, width, 0.0))),
      running_mean_(&params.add(name + ".running_mean", Tensor::matrix(1, width, 0.0), false)),
      running_var_(&params.add(name + ".running_var", Tensor::matrix(1, width, 1.0), false)),
      momentum_(momentum) {}

BatchNorm::BatchNorm(ParameterSet& params, const std::string& name, BindExisting, double momentum)
    : gamma_(&params.get(name + ".gamma")),
      beta_(&params.get(name + ".beta")),
      running_mean_(&params.get(name + ".running_mean")),
      running_var_(&params.get(name + ".running_var")),
      momentum_(momentum) {}

Var BatchNorm::operator()(Graph& g, Var x) const {
  if (g.training()) {
    if (x.rows() < 2) throw ShapeError(g.where("batch_norm") + ": training needs at least 2 rows");
    Var mu = ad::mean_rows(x);
    Var centered = ad::sub(x, mu);
    Var var = ad::mean_rows(ad::square(centered));
    // Running statistics use the unbiased variance.
    const double n = static_cast<double>(x.rows());
    for (std::size_t c = 0; c < mu.cols(); ++c) {
      running_mean_->value[c] = (1.0 - momentum_) * running_mean_->value[c] + momentum_ * mu.value()[c];
      running_var_->value[c] =
          (1.0 - momentum_) * running_var_->value[c] + momentum_ * var.value()[c] * n / (n - 1.0);
    }
    Var normed = ad::div(centered, ad::sqrt(ad::add_scalar(var, eps_)));
    return ad::add(ad::mul(normed, g.param(*gamma_)), g.param(*beta_));
  }
  Tensor inv_std = running_var_->value;
  for (double& v : inv_std.data()) v = 1.0 / std::sqrt(v + eps_);
  Var normed = ad::mul(ad::sub(x, g.constant(running_mean_->value)), g.constant(std::move(inv_std)));
  return ad::add(ad::mul(normed, g.param(*gamma_)), g.param(*beta_));
}

// ------------------------------------------------------------------ attention

AttentionResult multi_head_attention(Var query, Var keys, Var values, std::size_t heads) {
  Graph& g = query.graph();
  const std::size_t d = query.cols();
  const std::size_t dv = values.cols();
  if (heads == 0 || d % heads != 0 || dv % heads != 0) {
    throw ConfigError(g.where("multi_head_attention") + ": embedding width " + std::to_string(d) +
                      " not divisible by " + std::to_string(heads) + " heads");
  }
  if (keys.cols() != d) {
    throw ShapeError(g.where("multi_head_attention") + ": query " + shape_string(query.value().shape()) +
                     " vs keys " + shape_string(keys.value().shape()));
  }
  if (keys.rows() != values.rows()) {
    throw ShapeError(g.where("multi_head_attention") + ": keys " + shape_string(keys.value().shape()) +
                     " vs values " + shape_string(values.value().shape()));
  }
  const std::size_t dh = d / heads;
  const std::size_t dvh = dv / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  AttentionResult result;
  std::vector<Var> outs;
  for (std::size_t h = 0; h < heads; ++h) {
    Var q = heads == 1 ? query : ad::slice_cols(query, h * dh, dh);
    Var k = heads == 1 ? keys : ad::slice_cols(keys, h * dh, dh);
    Var v = heads == 1 ? values : ad::slice_cols(values, h * dvh, dvh);
    Var w = ad::softmax(ad::scale(ad::matmul_nt(q, k), inv_sqrt));
    result.weights.push_back(w.value());
    outs.push_back(ad::matmul(w, v));
  }
  result.output = heads == 1 ? outs[0] : ad::concat_cols(outs);
  return result;
}

MultiHeadAttention::MultiHeadAttention(ParameterSet& params, const std::string& name, std::size_t width,
                                       std::size_t heads, std::mt19937_64& rng)
    : wq_(params, name + ".q", width, width, rng),
      wk_(params, name + ".k", width, width, rng),
      wv_(params, name + ".v", width, width, rng),
      wo_(params, name + ".o", width, width, rng),
      heads_(heads) {
  if (heads == 0 || width % heads != 0) {
    throw ConfigError("attention width " + std::to_string(width) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
}

MultiHeadAttention::MultiHeadAttention(ParameterSet& params, const std::string& name, std::size_t heads)
    : wq_(params, name + ".q"), wk_(params, name + ".k"), wv_(params, name + ".v"), wo_(params, name + ".o"),
      heads_(heads) {}

Var MultiHeadAttention::operator()(Graph& g, Var queries_source, Var memory_source) const {
  Graph::Scope scope(g, "attention");
  Var q = wq_(g, queries_source);
  Var k = wk_(g, memory_source);
  Var v = wv_(g, memory_source);
  return wo_(g, multi_head_attention(q, k, v, heads_).output);
}

}  // namespace dtwin
