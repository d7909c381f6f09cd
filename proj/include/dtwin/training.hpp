#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "dtwin/adam.hpp"
#include "dtwin/autodiff.hpp"
#include "dtwin/nn.hpp"

namespace dtwin {

struct TrainConfig {
  std::size_t max_epochs = 300;
  std::size_t patience = 10;  // epochs without validation improvement
  std::size_t batch_size = 64;
  double validation_fraction = 0.2;
  AdamConfig adam;
};

struct TrainHistory {
  std::vector<double> train_loss;  // mean minibatch loss per epoch
  std::vector<double> val_loss;
  std::size_t best_epoch = 0;
  std::vector<std::size_t> train_rows;
  std::vector<std::size_t> val_rows;
};

// Mean loss over the given row indices, built on `g`.
using BatchLoss = std::function<Var(Graph& g, std::span<const std::size_t> rows)>;
// Called after each epoch with the epoch index.
using EpochHook = std::function<void(std::size_t epoch)>;

// Seeded 80/20 train/validation split of [0, n_rows), minibatch Adam with
// dropout active, validation loss in an inference graph; stops after
// `patience` epochs without improvement and restores the best parameters.
TrainHistory fit_early_stopping(ParameterSet& params, std::size_t n_rows, const TrainConfig& config,
                                std::uint64_t seed, const BatchLoss& loss, const EpochHook& hook = {});

// Rows of `t` selected by `rows`.
Tensor take_rows(const Tensor& t, std::span<const std::size_t> rows);

}  // namespace dtwin
