#include "dtwin/losses.hpp"

#include <algorithm>

namespace dtwin {

Tensor one_hot(const std::vector<std::size_t>& labels, std::size_t classes) {
  Tensor t = Tensor::matrix(labels.size(), classes);
  for (std::size_t i = 0; i < labels.size(); ++i) t(i, labels[i]) = 1.0;
  return t;
}

Var bce_with_logits(Var z, Var y) {
  return ad::scale(ad::sum(ad::sub(ad::softplus(z), ad::mul(y, z))), 1.0 / static_cast<double>(z.rows()));
}

Var cross_entropy(Var logits, Var one_hot_targets) {
  return ad::scale(ad::neg(ad::sum(ad::mul(ad::log_softmax(logits), one_hot_targets))),
                   1.0 / static_cast<double>(logits.rows()));
}

namespace {

// Euclidean row distance; the 1e-12 keeps sqrt differentiable at 0.
Var row_distance(Var a, Var b) { return ad::sqrt(ad::add_scalar(ad::sum_cols(ad::square(ad::sub(a, b))), 1e-12)); }

}  // namespace

Var triplet_margin(Var anchor, Var positive, Var negative, double margin) {
  return ad::relu(ad::add_scalar(ad::sub(row_distance(anchor, positive), row_distance(anchor, negative)), margin));
}

double triplet_margin_value(double d_positive, double d_negative, double margin) {
  return std::max(d_positive - d_negative + margin, 0.0);
}

}  // namespace dtwin
