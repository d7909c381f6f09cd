#pragma once

#include <cstdint>
#include <vector>

#include "dtwin/nn.hpp"

namespace dtwin {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adam with bias correction. Moment buffers are created lazily to match the
// trainable parameters of the set passed to the first step().
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  // Updates every trainable parameter from its accumulated gradient.
  // Throws NumericError naming the parameter if a gradient is not finite.
  void step(ParameterSet& params);

  std::int64_t step_count() const noexcept { return step_; }
  const AdamConfig& config() const noexcept { return config_; }
  const std::vector<Tensor>& first_moments() const noexcept { return m_; }
  const std::vector<Tensor>& second_moments() const noexcept { return v_; }

 private:
  AdamConfig config_;
  std::int64_t step_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

}  // namespace dtwin
