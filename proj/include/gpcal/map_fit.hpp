#pragma once

#include <cmath>
#include <iostream>
#include <limits>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "gpcal/error.hpp"
#include "gpcal/likelihood.hpp"
#include "gpcal/model.hpp"
#include "gpcal/optimize.hpp"
#include "gpcal/parallel.hpp"

namespace gpcal {

inline constexpr Index kDefaultMiniBatch = 6;

struct FitOptions {
  int grid_points = 9;
  int max_iter = 500;
  double grad_tol_per_param = 1e-6;
  // Hold log a fixed (at fixed_factors, or zeros) and fit everything else.
  bool fix_factors = false;
  std::optional<CalibrationFactors> fixed_factors;
  unsigned threads = 0;
};

struct MapEstimate {
  HyperParams theta;
  double log_posterior = -std::numeric_limits<double>::infinity();
  double grad_norm = std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool converged = false;
  std::vector<double> seed_log_posteriors;   // objective at each length-scale seed
  std::vector<double> final_log_posteriors;  // objective after ascent from each seed
};

class MapFailed : public Error {
 public:
  MapFailed(HyperParams best) : Error("MAP failed"), best_(std::move(best)) {}
  [[nodiscard]] const HyperParams& best() const { return best_; }

 private:
  HyperParams best_;
};

namespace detail {

inline double masked_spread(const ProfileSet& ps) {
  double sum = 0.0, sum2 = 0.0;
  Index count = 0;
  for (Index j = 0; j < ps.profiles(); ++j) {
    for (Index i = 0; i < ps.channels(); ++i) {
      if (!ps.mask(i, j)) continue;
      sum += ps.data(i, j);
      sum2 += ps.data(i, j) * ps.data(i, j);
      ++count;
    }
  }
  if (count < 2) return 1.0;
  const double mean = sum / static_cast<double>(count);
  const double sd = std::sqrt(std::max(sum2 / static_cast<double>(count) - mean * mean, 0.0));
  return sd > 0.0 && std::isfinite(sd) ? sd : 1.0;
}

inline double clamp_to(const Bounds& b, double x) { return std::min(std::max(x, b.lo), b.hi); }

}  // namespace detail

/// Stage 1: maximize the log marginal posterior over all hyperparameters.
/// Each of opt.grid_points length-scale seeds (cell midpoints across the prior
/// bounds) starts a bounded ascent over every parameter jointly; the best end
/// point wins. Deterministic given inputs and options.
[[nodiscard]] inline MapEstimate fit_map(const CenteredProfiles& data, const Priors& pr, const FitOptions& opt = {}) {
  pr.check();
  const ProfileSet& centered = data.profiles;
  if (centered.profiles() < 1) throw InvalidArgument("at least one profile is required");
  if (opt.grid_points < 1) throw InvalidArgument("grid_points must be positive");
  if (centered.profiles() > kDefaultMiniBatch) {
    std::clog << "warning: mini-batch of " << centered.profiles()
              << " profiles; the independent-profile assumption degrades for large batches\n";
  }
  const Index n = centered.channels();
  const double spread = detail::masked_spread(centered);

  HyperParams base;
  base.kernel.log_signal_sigma = detail::clamp_to(pr.signal_bounds, std::log(spread));
  base.noise = NoiseParams::uniform(n, 1.0, pr.noise_hyper_scale);
  base.noise.log_sigma_base = detail::clamp_to(pr.base_noise_bounds, std::log(0.1 * spread));
  base.factors = opt.fixed_factors.value_or(CalibrationFactors::identity(n));
  if (base.factors.channels() != n) throw InvalidArgument("fixed factor count does not match channel count");
  const Index dim = base.size();

  VectorXd lo = VectorXd::Constant(dim, -std::numeric_limits<double>::infinity());
  VectorXd hi = VectorXd::Constant(dim, std::numeric_limits<double>::infinity());
  lo(HyperParams::kLogLength) = pr.length_scale_bounds.lo;
  hi(HyperParams::kLogLength) = pr.length_scale_bounds.hi;
  lo(HyperParams::kLogSignal) = pr.signal_bounds.lo;
  hi(HyperParams::kLogSignal) = pr.signal_bounds.hi;
  lo(HyperParams::kLogNoiseBase) = pr.base_noise_bounds.lo;
  hi(HyperParams::kLogNoiseBase) = pr.base_noise_bounds.hi;
  Eigen::Matrix<bool, Eigen::Dynamic, 1> free = Eigen::Matrix<bool, Eigen::Dynamic, 1>::Constant(dim, true);
  if (opt.fix_factors) free.segment(base.log_a_index(0), n).setConstant(false);

  auto objective = [&](const VectorXd& x, VectorXd& grad) {
    HyperParams hp = base;
    hp.unpack(x);
    try {
      LogDensity ld = log_marginal_posterior_with_grad(data, hp, pr);
      grad = ld.gradient;
      for (Index i = 0; i < dim; ++i) {
        if (!free(i)) grad(i) = 0.0;
      }
      return ld.value;
    } catch (const NotPositiveDefinite&) {
      grad.setZero();
      return -std::numeric_limits<double>::infinity();
    }
  };

  AscentOptions ascent;
  ascent.max_iter = opt.max_iter;
  ascent.grad_tol = opt.grad_tol_per_param * static_cast<double>(dim);

  const auto seeds = static_cast<std::size_t>(opt.grid_points);
  std::vector<AscentResult> results(seeds);
  std::vector<double> seed_values(seeds);
  const double width = pr.length_scale_bounds.hi - pr.length_scale_bounds.lo;
  parallel_for(seeds, [&](std::size_t k) {
    HyperParams start = base;
    start.kernel.log_length_scale =
        pr.length_scale_bounds.lo + (static_cast<double>(k) + 0.5) / static_cast<double>(seeds) * width;
    const VectorXd x0 = start.pack();
    VectorXd g0 = VectorXd::Zero(dim);
    seed_values[k] = objective(x0, g0);
    results[k] = maximize_in_box(objective, x0, lo, hi, free, ascent);
  }, opt.threads);

  MapEstimate out;
  out.seed_log_posteriors = seed_values;
  std::size_t best = 0;
  for (std::size_t k = 0; k < seeds; ++k) {
    out.final_log_posteriors.push_back(results[k].value);
    if (results[k].value > results[best].value || !std::isfinite(results[best].value)) best = k;
  }
  if (!results[best].converged && std::isfinite(results[best].value)) {
    results[best] = polish_newton(objective, results[best], lo, hi, free, ascent.grad_tol);
  }
  out.theta = base;
  out.theta.unpack(results[best].x);

  auto pinned = [&](const AscentResult& r) {
    for (Index i : {HyperParams::kLogLength, HyperParams::kLogSignal, HyperParams::kLogNoiseBase}) {
      if (r.x(i) > lo(i) && r.x(i) < hi(i)) return false;
    }
    return true;
  };
  bool any_usable = false;
  for (const auto& r : results) any_usable = any_usable || (std::isfinite(r.value) && !pinned(r));
  if (!any_usable) throw MapFailed(out.theta);

  out.log_posterior = results[best].value;
  out.grad_norm = results[best].projected_grad_norm;
  out.iterations = results[best].iterations;
  out.converged = results[best].converged;
  out.theta.noise.hyper_scale = pr.noise_hyper_scale;
  return out;
}

/// Zero-mean model on already-centered data.
[[nodiscard]] inline MapEstimate fit_map(const ProfileSet& centered, const Priors& pr, const FitOptions& opt = {}) {
  return fit_map(as_zero_mean(centered), with_zero_mean(pr), opt);
}

}  // namespace gpcal
