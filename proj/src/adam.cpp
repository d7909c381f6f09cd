#include "dtwin/adam.hpp"

#include <cmath>

#include "dtwin/error.hpp"

namespace dtwin {

void Adam::step(ParameterSet& params) {
  if (m_.empty()) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_.emplace_back(params.at(i).value.shape(), 0.0);
      v_.emplace_back(params.at(i).value.shape(), 0.0);
    }
  }
  if (m_.size() != params.size()) throw UsageError("adam: parameter set changed between steps");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Parameter& p = params.at(i);
    if (!p.trainable) continue;
    if (p.grad.size() != p.value.size()) throw UsageError("adam: missing gradient for '" + p.name + "'");
    if (!p.grad.all_finite()) throw NumericError("adam: non-finite gradient for parameter '" + p.name + "'");
  }
  ++step_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = params.at(i);
    if (!p.trainable) continue;
    auto m = m_[i].data();
    auto v = v_[i].data();
    auto w = p.value.data();
    auto g = p.grad.data();
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = b1 * m[k] + (1.0 - b1) * g[k];
      v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
      w[k] -= config_.learning_rate * (m[k] / c1) / (std::sqrt(v[k] / c2) + config_.epsilon);
    }
  }
}

}  // namespace dtwin
