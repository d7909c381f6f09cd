#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "dtwin/autodiff.hpp"
#include "dtwin/nn.hpp"

namespace dtwin::testing {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;
};

inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / denom;
}

// Compares reverse-mode gradients of every trainable parameter, and of the
// extra inputs registered through `inputs`, against central differences.
// `loss` builds the scalar loss on a fresh graph, in inference mode unless
// `training` (dropout then needs a rate of 0 to stay deterministic).
inline GradCheckResult gradcheck(ParameterSet& params, const std::function<Var(Graph&)>& loss,
                                 double h = 1e-5, bool training = false) {
  params.zero_grad();
  {
    Graph g(training, 0);
    Var out = loss(g);
    g.backward(out);
  }
  auto eval = [&] {
    Graph g(training, 0);
    return loss(g).value()[0];
  };
  GradCheckResult result;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = params.at(i);
    if (!p.trainable) continue;
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double orig = p.value[k];
      p.value[k] = orig + h;
      const double up = eval();
      p.value[k] = orig - h;
      const double down = eval();
      p.value[k] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double err = relative_error(p.grad[k], numeric);
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst = p.name + "[" + std::to_string(k) + "] analytic=" + std::to_string(p.grad[k]) +
                       " numeric=" + std::to_string(numeric);
      }
    }
  }
  return result;
}

inline Tensor random_tensor(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double scale = 1.0) {
  Tensor t = Tensor::matrix(rows, cols);
  for (double& v : t.data()) v = scale * (2.0 * static_cast<double>(rng() >> 11) * 0x1.0p-53 - 1.0);
  return t;
}

}  // namespace dtwin::testing
