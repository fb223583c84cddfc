#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <vector>

#include <Eigen/Dense>

#include "gpcal/error.hpp"
#include "gpcal/kernels.hpp"
#include "gpcal/likelihood.hpp"
#include "gpcal/linalg.hpp"
#include "gpcal/mcmc.hpp"
#include "gpcal/model.hpp"
#include "gpcal/parallel.hpp"
#include "gpcal/random.hpp"

namespace gpcal {

inline constexpr Index kMinSummaryDraws = 100;

struct GaussianPosterior {
  VectorXd mean;
  MatrixXd cov;
};

/// Posterior of the order-th derivative of profile j's centered latent function
/// on the grid, given fixed gains in theta. Under the gain-scaled level model
/// the order-0 result includes the level's deviation from the removed mean.
[[nodiscard]] inline GaussianPosterior latent_posterior(const CenteredProfiles& data, Index profile,
                                                        const HyperParams& theta,
                                                        const Eigen::Ref<const VectorXd>& grid, int order,
                                                        const LevelPrior& level) {
  detail::check_order(order);
  if (grid.size() == 0) throw InvalidArgument("empty evaluation grid");
  if (!grid.allFinite()) throw InvalidArgument("non-finite grid position");
  const ProfileSet& ps = data.profiles;
  const auto active = ps.active_channels(profile);
  if (active.empty()) throw InvalidArgument("profile has no masked-in channels");
  const VectorXd x = detail::select(ps.positions, active);
  const VectorXd a = detail::select(theta.factors.gains(), active);
  const VectorXd r = detail::level_residual(ps.active_data(profile), a, data.means(profile), level);
  const double level_var = order == 0 ? level.variance() : 0.0;

  const JitteredCholesky chol = jittered_cholesky(observed_cov(x, theta, active, level.variance()));
  MatrixXd cross = rbf_cross_deriv_matrix(grid, x, theta.kernel, order);
  cross.array() += level_var;
  const MatrixXd rr = cross * a.asDiagonal();
  GaussianPosterior out;
  out.mean = rr * chol.llt.solve(r);
  const MatrixXd v = chol.llt.matrixL().solve(rr.transpose());
  MatrixXd prior = rbf_deriv_cov(grid, grid, theta.kernel, order);
  prior.array() += level_var;
  out.cov = prior - v.transpose() * v;
  return out;
}

/// Zero-mean model on already-centered data.
[[nodiscard]] inline GaussianPosterior latent_posterior(const ProfileSet& centered, Index profile,
                                                        const HyperParams& theta,
                                                        const Eigen::Ref<const VectorXd>& grid, int order) {
  return latent_posterior(as_zero_mean(centered), profile, theta, grid, order, LevelPrior::zero_mean());
}

/// Uniform grid over [min - 5% span, max + 5% span].
[[nodiscard]] inline VectorXd default_grid(const Eigen::Ref<const VectorXd>& positions, Index size = 200) {
  if (size < 2) throw InvalidArgument("grid size must be at least 2");
  const double lo = positions.minCoeff();
  const double hi = positions.maxCoeff();
  const double pad = 0.05 * (hi - lo);
  return VectorXd::LinSpaced(size, lo - pad, hi + pad);
}

/// Linear-interpolated quantile of an unsorted sample (modified in place).
[[nodiscard]] inline double quantile_inplace(std::vector<double>& xs, double p) {
  const double h = p * static_cast<double>(xs.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, xs.size() - 1);
  std::nth_element(xs.begin(), xs.begin() + static_cast<long>(lo), xs.end());
  const double x_lo = xs[lo];
  if (hi == lo) return x_lo;
  const double x_hi = *std::min_element(xs.begin() + static_cast<long>(lo) + 1, xs.end());
  return x_lo + (h - static_cast<double>(lo)) * (x_hi - x_lo);
}

struct Band {
  MatrixXd median;   // grid x profiles
  MatrixXd lower95;
  MatrixXd upper95;
};

struct PosteriorSummary {
  VectorXd grid;
  std::map<int, Band> bands;  // keyed by derivative order
  HyperParams map_hyperparams;
  Index total_draws = 0;
};

/// Pointwise median and central 95% interval of the latent function (and
/// derivatives) over the gain posterior. For every retained log-a sample and
/// profile, draws_per_sample exact Gaussian draws are taken by pathwise
/// conditioning on a joint prior draw, so no per-sample grid factorization is
/// needed. Per-profile centering means are restored on order 0 only. Each
/// (sample, profile, order) draws from sub-seed derive_seed(seed, 3 * (s * M + j) + order).
[[nodiscard]] inline PosteriorSummary summarize(const CenteredProfiles& data, const HyperParams& theta_map,
                                                const LevelPrior& level, const McmcChain& chain,
                                                const Eigen::Ref<const VectorXd>& grid, const std::vector<int>& orders,
                                                int draws_per_sample = 1, std::uint64_t seed = 1,
                                                unsigned threads = 0) {
  const ProfileSet& ps = data.profiles;
  if (chain.draws() == 0) throw InvalidArgument("empty chain");
  if (grid.size() == 0) throw InvalidArgument("empty evaluation grid");
  if (draws_per_sample < 1) throw InvalidArgument("draws_per_sample must be positive");
  if (chain.samples.cols() != ps.channels()) throw InvalidArgument("chain width does not match channel count");
  const Index samples = chain.draws();
  const Index total = samples * draws_per_sample;
  if (total < kMinSummaryDraws) throw Error("insufficient draws");
  for (int k : orders) detail::check_order(k);

  const Index g = grid.size();
  const Index n = ps.channels();
  const KernelParams& kp = theta_map.kernel;
  const VectorXd noise_var = theta_map.noise.sigmas().array().square().matrix();
  const double level_var = level.variance();

  // Joint prior of [f^(k)(grid); f(all channels)] for each requested order,
  // with the level variance on every order-0 entry.
  struct OrderPrior {
    int order;
    MatrixXd sqrt;   // (g + n) x (g + n)
    MatrixXd cross;  // g x n, cov(f^(k)(grid), f(x))
  };
  std::vector<OrderPrior> priors;
  MatrixXd k_xx = rbf_matrix(ps.positions, ps.positions, kp);
  k_xx.array() += level_var;
  for (int k : orders) {
    const double lv = k == 0 ? level_var : 0.0;
    OrderPrior op{k, {}, rbf_cross_deriv_matrix(grid, ps.positions, kp, k)};
    op.cross.array() += lv;
    MatrixXd joint(g + n, g + n);
    joint.topLeftCorner(g, g) = rbf_deriv_cov(grid, grid, kp, k);
    joint.topLeftCorner(g, g).array() += lv;
    joint.topRightCorner(g, n) = op.cross;
    joint.bottomLeftCorner(n, g) = op.cross.transpose();
    joint.bottomRightCorner(n, n) = k_xx;
    op.sqrt = psd_sqrt(joint);
    priors.push_back(std::move(op));
  }

  PosteriorSummary out;
  out.grid = grid;
  out.map_hyperparams = theta_map;
  out.total_draws = total;
  for (int k : orders) {
    out.bands[k] = Band{MatrixXd(g, ps.profiles()), MatrixXd(g, ps.profiles()), MatrixXd(g, ps.profiles())};
  }

  for (Index j = 0; j < ps.profiles(); ++j) {
    const auto active = ps.active_channels(j);
    const Index na = static_cast<Index>(active.size());
    const VectorXd x = detail::select(ps.positions, active);
    const VectorXd d = ps.active_data(j);
    const VectorXd nv = detail::select(noise_var, active);
    MatrixXd k_act = rbf_matrix(x, x, kp);
    k_act.array() += level_var;
    std::vector<MatrixXd> cross_act;
    for (const auto& op : priors) {
      MatrixXd c(g, na);
      for (Index p = 0; p < na; ++p) c.col(p) = op.cross.col(active[static_cast<std::size_t>(p)]);
      cross_act.push_back(std::move(c));
    }
    // draws[o] is g x total for this profile.
    std::vector<MatrixXd> draws(priors.size(), MatrixXd(g, total));

    parallel_for(static_cast<std::size_t>(samples), [&](std::size_t s) {
      const VectorXd a = detail::select(VectorXd(chain.samples.row(static_cast<Index>(s)).transpose().array().exp()), active);
      MatrixXd c = a.asDiagonal() * k_act * a.asDiagonal();
      c.diagonal() += nv;
      const JitteredCholesky chol = jittered_cholesky(c);
      const VectorXd noise_sd = (nv.array() + chol.jitter).sqrt();
      const std::uint64_t unit = static_cast<std::uint64_t>(s) * static_cast<std::uint64_t>(ps.profiles()) +
                                 static_cast<std::uint64_t>(j);
      for (std::size_t o = 0; o < priors.size(); ++o) {
        // One stream per (sample, profile, order): any subset of orders reproduces the same bands.
        Rng rng(derive_seed(seed, unit * 3 + static_cast<std::uint64_t>(priors[o].order)));
        for (int r = 0; r < draws_per_sample; ++r) {
          const VectorXd z = priors[o].sqrt * rng.normal_vector(g + n);
          VectorXd sim(na);
          for (Index p = 0; p < na; ++p) {
            sim(p) = a(p) * z(g + active[static_cast<std::size_t>(p)]) + noise_sd(p) * rng.normal();
          }
          const VectorXd w = chol.llt.solve(detail::level_residual(d, a, data.means(j), level) - sim);
          const Index col = static_cast<Index>(s) * draws_per_sample + r;
          draws[o].col(col) = z.head(g) + cross_act[o] * a.asDiagonal() * w;
        }
      }
    }, threads);

    for (std::size_t o = 0; o < priors.size(); ++o) {
      Band& band = out.bands[priors[o].order];
      const double shift = priors[o].order == 0 ? data.means(j) : 0.0;
      std::vector<double> row(static_cast<std::size_t>(total));
      for (Index gi = 0; gi < g; ++gi) {
        for (Index t = 0; t < total; ++t) row[static_cast<std::size_t>(t)] = draws[o](gi, t);
        band.lower95(gi, j) = quantile_inplace(row, 0.025) + shift;
        band.median(gi, j) = quantile_inplace(row, 0.5) + shift;
        band.upper95(gi, j) = quantile_inplace(row, 0.975) + shift;
      }
    }
  }
  return out;
}

/// Wraps fixed gains as a single-sample chain so summarize can be used for
/// plain (non-MCMC) fits.
[[nodiscard]] inline McmcChain point_chain(const CalibrationFactors& cf) {
  McmcChain chain;
  chain.samples = cf.log_a.transpose();
  chain.n_chains = 1;
  return chain;
}

}  // namespace gpcal
