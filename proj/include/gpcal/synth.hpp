#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <utility>

#include <Eigen/Dense>

#include "gpcal/error.hpp"
#include "gpcal/kernels.hpp"
#include "gpcal/linalg.hpp"
#include "gpcal/model.hpp"
#include "gpcal/random.hpp"

namespace gpcal {

struct SynthConfig {
  Index n_channels = 24;
  Index n_profiles = 6;
  double position_lo = 0.0;
  double position_hi = 1.0;
  KernelParams kernel = KernelParams::from_natural(0.15, 1.0);
  double factor_scale = 0.1;
  // When noise.log_eta is empty the generator draws eta_i ~ Normal(0, eta_scale^2).
  NoiseParams noise{std::log(0.08), VectorXd(), 0.4};
  double eta_scale = 0.4;
  double profile_offset = 2.5;
  std::uint64_t seed = 1;

  void check() const {
    if (n_channels < kMinActiveChannels) throw InvalidArgument("n_channels must be >= 3");
    if (n_profiles < 1) throw InvalidArgument("n_profiles must be >= 1");
    if (!(position_lo < position_hi)) throw InvalidArgument("position range must satisfy lower < upper");
    if (!(factor_scale >= 0.0) || !(eta_scale >= 0.0)) throw InvalidArgument("scales must be non-negative");
    if (noise.log_eta.size() != 0 && noise.log_eta.size() != n_channels) {
      throw InvalidArgument("noise.log_eta length must equal n_channels");
    }
  }
};

/// One draw from Normal(0, K_f) at the given positions.
[[nodiscard]] inline VectorXd sample_gp(const Eigen::Ref<const VectorXd>& positions, const KernelParams& kp,
                                        std::uint64_t seed) {
  Rng rng(seed);
  const VectorXd z = rng.normal_vector(positions.size());
  if (kp.signal_variance() == 0.0) return VectorXd::Zero(positions.size());
  const JitteredCholesky chol = jittered_cholesky(rbf_matrix(positions, positions, kp));
  return chol.llt.matrixL() * z;
}

namespace detail {

enum SynthStream : std::uint64_t { kFactorStream = 1, kEtaStream = 2, kNoiseStream = 3, kProfileStream = 100 };

inline std::string padded_label(const char* prefix, Index i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%03ld", prefix, static_cast<long>(i));
  return buf;
}

}  // namespace detail

/// Synthetic mini-batch: d_ij = a_i * f_j(x_i) + sigma_i * z_ij with f_j = GP draw + offset.
/// Positions are evenly spaced over the configured range.
[[nodiscard]] inline std::pair<ProfileSet, GroundTruth> generate(const SynthConfig& cfg) {
  cfg.check();
  const Index n = cfg.n_channels;
  const Index m = cfg.n_profiles;

  ProfileSet ps;
  ps.positions = VectorXd::LinSpaced(n, cfg.position_lo, cfg.position_hi);
  ps.data.resize(n, m);
  ps.mask = BoolMatrix::Constant(n, m, true);
  for (Index i = 0; i < n; ++i) ps.channel_ids.push_back(detail::padded_label("ch", i));
  for (Index j = 0; j < m; ++j) ps.profile_ids.push_back(detail::padded_label("p", j));

  GroundTruth truth;
  truth.kernel = cfg.kernel;
  truth.true_noise = cfg.noise;
  {
    Rng rng(derive_seed(cfg.seed, detail::kFactorStream));
    truth.true_factors.log_a = cfg.factor_scale * rng.normal_vector(n);
  }
  if (truth.true_noise.log_eta.size() == 0) {
    Rng rng(derive_seed(cfg.seed, detail::kEtaStream));
    truth.true_noise.log_eta = cfg.eta_scale * rng.normal_vector(n);
  }
  truth.true_noise.hyper_scale = cfg.eta_scale;

  // Slopes are drawn from their conditional given the latent values, which
  // yields an exact joint draw of (f, f') at the channel positions.
  const bool has_signal = cfg.kernel.signal_variance() > 0.0;
  MatrixXd slope_gain, slope_sqrt;
  if (has_signal) {
    const MatrixXd k = rbf_matrix(ps.positions, ps.positions, cfg.kernel);
    const JitteredCholesky chol = jittered_cholesky(k);
    const MatrixXd cross = rbf_cross_deriv_matrix(ps.positions, ps.positions, cfg.kernel, 1);  // cov(f', f)
    slope_gain = chol.llt.solve(cross.transpose()).transpose();
    const MatrixXd cond = rbf_deriv_cov(ps.positions, ps.positions, cfg.kernel, 1) - slope_gain * cross.transpose();
    slope_sqrt = psd_sqrt(0.5 * (cond + cond.transpose()));
  }

  truth.latents.resize(n, m);
  truth.latent_slopes.resize(n, m);
  for (Index j = 0; j < m; ++j) {
    const std::uint64_t profile_seed = derive_seed(cfg.seed, detail::kProfileStream + static_cast<std::uint64_t>(j));
    const VectorXd g = sample_gp(ps.positions, cfg.kernel, profile_seed);
    truth.latents.col(j) = g.array() + cfg.profile_offset;
    if (has_signal) {
      Rng rng(derive_seed(profile_seed, 1));
      truth.latent_slopes.col(j) = slope_gain * g + slope_sqrt * rng.normal_vector(n);
    } else {
      truth.latent_slopes.col(j).setZero();
    }
  }

  Rng noise_rng(derive_seed(cfg.seed, detail::kNoiseStream));
  const VectorXd gains = truth.true_factors.gains();
  const VectorXd sigmas = truth.true_noise.sigmas();
  for (Index j = 0; j < m; ++j) {
    for (Index i = 0; i < n; ++i) {
      const double z = noise_rng.normal();
      ps.data(i, j) = gains(i) * truth.latents(i, j) + sigmas(i) * z;
    }
  }
  return {std::move(ps), std::move(truth)};
}

}  // namespace gpcal
