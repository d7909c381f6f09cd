#pragma once

#include <cstddef>
#include <vector>

#include "dtwin/autodiff.hpp"

namespace dtwin {

Tensor one_hot(const std::vector<std::size_t>& labels, std::size_t classes);

// Mean over rows of sum_j BCE(sigmoid(z_ij), y_ij), computed from logits.
Var bce_with_logits(Var z, Var y);

// Mean over rows of the softmax cross-entropy against one-hot targets.
Var cross_entropy(Var logits, Var one_hot_targets);

// max(d(a,b) - d(a,c) + margin, 0) with Euclidean distances, per row: [n,1].
Var triplet_margin(Var anchor, Var positive, Var negative, double margin);

// Scalar form used by tests and diagnostics.
double triplet_margin_value(double d_positive, double d_negative, double margin);

}  // namespace dtwin
