#include "dtwin/training.hpp"

#include <cmath>
#include <limits>
#include <numeric>

#include <spdlog/spdlog.h>

#include "dtwin/error.hpp"
#include "dtwin/random.hpp"

namespace dtwin {

Tensor take_rows(const Tensor& t, std::span<const std::size_t> rows) {
  const std::size_t c = t.cols();
  Tensor out = Tensor::matrix(rows.size(), c);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto src = t.row_span(rows[i]);
    std::copy(src.begin(), src.end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * c));
  }
  return out;
}

TrainHistory fit_early_stopping(ParameterSet& params, std::size_t n_rows, const TrainConfig& config,
                                std::uint64_t seed, const BatchLoss& loss, const EpochHook& hook) {
  if (n_rows < 2) throw ConfigError("training needs at least 2 rows");
  if (config.batch_size == 0 || config.max_epochs == 0) throw ConfigError("batch_size and max_epochs must be > 0");
  if (!(config.validation_fraction > 0.0 && config.validation_fraction < 1.0)) {
    throw ConfigError("validation_fraction must be in (0, 1)");
  }
  TrainHistory h;
  std::mt19937_64 rng(derive_seed(seed, 0x7a11u));
  std::vector<std::size_t> order(n_rows);
  std::iota(order.begin(), order.end(), 0);
  shuffle_range(order.begin(), order.end(), rng);
  std::size_t n_val = static_cast<std::size_t>(std::lround(config.validation_fraction * static_cast<double>(n_rows)));
  n_val = std::clamp<std::size_t>(n_val, 1, n_rows - 1);
  h.val_rows.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  h.train_rows.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());

  Adam adam(config.adam);
  double best = std::numeric_limits<double>::infinity();
  std::vector<Tensor> best_params = params.snapshot();
  std::size_t since_best = 0;
  std::vector<std::size_t> rows = h.train_rows;
  std::size_t batch_counter = 0;

  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    shuffle_range(rows.begin(), rows.end(), rng);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < rows.size(); start += config.batch_size) {
      std::size_t count = std::min(config.batch_size, rows.size() - start);
      // Avoid a singleton trailing batch (batch norm needs two rows).
      if (count == 1 && start > 0) break;
      std::span<const std::size_t> batch(rows.data() + start, count);
      params.zero_grad();
      Graph g(true, derive_seed(seed, 0x100000u + batch_counter++));
      Var l = loss(g, batch);
      if (!std::isfinite(l.value()[0])) throw NumericError("training loss became non-finite at epoch " + std::to_string(epoch));
      g.backward(l);
      adam.step(params);
      epoch_loss += l.value()[0];
      ++batches;
    }
    h.train_loss.push_back(epoch_loss / static_cast<double>(std::max<std::size_t>(batches, 1)));
    Graph vg(false);
    const double val = loss(vg, h.val_rows).value()[0];
    h.val_loss.push_back(val);
    if (hook) hook(epoch);
    spdlog::debug("epoch {}: train {:.5f} val {:.5f}", epoch, h.train_loss.back(), val);
    if (val < best) {
      best = val;
      best_params = params.snapshot();
      h.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  params.restore(best_params);
  return h;
}

}  // namespace dtwin
