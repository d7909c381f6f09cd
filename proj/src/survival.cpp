#include "dtwin/survival.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "dtwin/autodiff.hpp"
#include "dtwin/error.hpp"

namespace dtwin {

namespace {

double log_sum_exp(const std::vector<double>& v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

void check_time(double t) {
  if (!(t > 0.0) || !std::isfinite(t)) throw DomainError("survival time must be > 0 (got " + std::to_string(t) + ")");
}

}  // namespace

double LogNormalMixture::survival(double t) const {
  check_time(t);
  const double lt = std::log(t);
  double s = 0.0;
  for (std::size_t k = 0; k < weights.size(); ++k) s += weights[k] * (1.0 - normal_cdf((lt - mu[k]) / sigma[k]));
  return std::clamp(s, 0.0, 1.0);
}

double LogNormalMixture::log_density(double t) const {
  check_time(t);
  const double lt = std::log(t);
  std::vector<double> terms(weights.size());
  for (std::size_t k = 0; k < weights.size(); ++k) {
    const double z = (lt - mu[k]) / sigma[k];
    terms[k] = std::log(weights[k]) - 0.5 * z * z - 0.5 * std::log(2.0 * std::numbers::pi) - std::log(sigma[k]) - lt;
  }
  return log_sum_exp(terms);
}

double LogNormalMixture::log_survival(double t) const {
  check_time(t);
  const double lt = std::log(t);
  std::vector<double> terms(weights.size());
  for (std::size_t k = 0; k < weights.size(); ++k) {
    terms[k] = std::log(weights[k]) + normal_log_sf_value((lt - mu[k]) / sigma[k]);
  }
  return log_sum_exp(terms);
}

double LogNormalMixture::log_likelihood(double t, bool event) const {
  return event ? log_density(t) : log_survival(t);
}

double LogNormalMixture::median() const {
  // Bisection on log t; S is monotone.
  double lo = -20.0, hi = 20.0;
  for (std::size_t k = 0; k < mu.size(); ++k) {
    lo = std::min(lo, mu[k] - 10.0 * sigma[k]);
    hi = std::max(hi, mu[k] + 10.0 * sigma[k]);
  }
  for (int it = 0; it < 200 && hi - lo > 1e-12; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (survival(std::exp(mid)) > 0.5) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return std::exp(0.5 * (lo + hi));
}

std::vector<double> survival_curve(const LogNormalMixture& m, std::span<const double> grid) {
  std::vector<double> out;
  out.reserve(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (i > 0 && !(grid[i] > grid[i - 1])) throw DomainError("time grid must be strictly increasing");
    out.push_back(m.survival(grid[i]));
  }
  return out;
}

const std::vector<double>& serving_time_grid() {
  static const std::vector<double> grid = [] {
    std::vector<double> g(61);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = static_cast<double>(i);
    return g;
  }();
  return grid;
}

std::vector<double> serving_curve(const LogNormalMixture& m) {
  const auto& grid = serving_time_grid();
  std::vector<double> out = survival_curve(m, std::span<const double>(grid).subspan(1));
  out.insert(out.begin(), 1.0);
  return out;
}

std::vector<double> kaplan_meier(std::span<const double> times, std::span<const int> events,
                                 std::span<const double> grid) {
  if (times.size() != events.size()) throw ShapeError("kaplan_meier: one event flag per time");
  std::vector<double> out(grid.size(), std::numeric_limits<double>::quiet_NaN());
  if (times.empty()) return out;
  std::vector<std::size_t> order(times.size());
  std::iota(order.begin(), order.end(), 0);
  // Events first among ties.
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return times[a] < times[b] || (times[a] == times[b] && events[a] > events[b]);
  });
  double s = 1.0;
  std::size_t at_risk = times.size(), i = 0, g = 0;
  while (g < grid.size()) {
    if (i < order.size() && times[order[i]] <= grid[g]) {
      const double t = times[order[i]];
      std::size_t deaths = 0, leaving = 0;
      while (i < order.size() && times[order[i]] == t) {
        deaths += events[order[i]] != 0;
        ++leaving;
        ++i;
      }
      if (deaths > 0) s *= 1.0 - static_cast<double>(deaths) / static_cast<double>(at_risk);
      at_risk -= leaving;
    } else {
      out[g++] = s;
    }
  }
  return out;
}

}  // namespace dtwin
