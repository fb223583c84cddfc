#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gpcal/error.hpp"
#include "gpcal/kernels.hpp"
#include "gpcal/linalg.hpp"
#include "gpcal/model.hpp"

namespace gpcal {

/// Full parameter vector of the hierarchical model.
///
/// Packed layout used by the optimizer and the gradient:
///   [log l, log sigma_f, log sigma_b, eta_0 .. eta_{N-1}, log a_0 .. log a_{N-1}]
struct HyperParams {
  KernelParams kernel;
  NoiseParams noise;
  CalibrationFactors factors;

  static constexpr Index kLogLength = 0;
  static constexpr Index kLogSignal = 1;
  static constexpr Index kLogNoiseBase = 2;
  static constexpr Index kFirstEta = 3;

  [[nodiscard]] Index channels() const { return factors.channels(); }
  [[nodiscard]] Index size() const { return 3 + 2 * channels(); }
  [[nodiscard]] Index eta_index(Index i) const { return kFirstEta + i; }
  [[nodiscard]] Index log_a_index(Index i) const { return kFirstEta + channels() + i; }

  [[nodiscard]] VectorXd pack() const {
    VectorXd v(size());
    v(kLogLength) = kernel.log_length_scale;
    v(kLogSignal) = kernel.log_signal_sigma;
    v(kLogNoiseBase) = noise.log_sigma_base;
    v.segment(kFirstEta, channels()) = noise.log_eta;
    v.segment(kFirstEta + channels(), channels()) = factors.log_a;
    return v;
  }

  void unpack(const Eigen::Ref<const VectorXd>& v) {
    if (v.size() != size()) throw InvalidArgument("parameter vector has wrong length");
    kernel.log_length_scale = v(kLogLength);
    kernel.log_signal_sigma = v(kLogSignal);
    noise.log_sigma_base = v(kLogNoiseBase);
    noise.log_eta = v.segment(kFirstEta, channels());
    factors.log_a = v.segment(kFirstEta + channels(), channels());
  }

  static HyperParams neutral(Index channels, const KernelParams& kp, double sigma_base) {
    return {kp, NoiseParams::uniform(channels, sigma_base), CalibrationFactors::identity(channels)};
  }
};

struct Bounds {
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();

  [[nodiscard]] bool contains(double x) const { return x >= lo && x <= hi; }
  [[nodiscard]] bool valid() const { return lo < hi; }
};

/// How the per-profile level removed by centering enters the model.
///
/// kZeroMean treats centered data as zero-mean draws of A f + noise.
/// kGainScaled models the latent as level + zero-mean GP, so the data mean is
/// level * a_i; the level is marginalized with prior Normal(m_j, scale^2) around
/// the removed mean m_j. This keeps the gain information carried by the
/// profile level, which centering alone discards.
enum class LevelModel { kZeroMean, kGainScaled };

struct LevelPrior {
  LevelModel model = LevelModel::kGainScaled;
  double scale = 1.0;

  [[nodiscard]] double variance() const { return model == LevelModel::kGainScaled ? scale * scale : 0.0; }
  static LevelPrior zero_mean() { return {LevelModel::kZeroMean, 0.0}; }
};

struct Priors {
  double factor_scale = 0.1;
  double noise_hyper_scale = 0.5;
  Bounds length_scale_bounds{std::log(1e-3), std::log(1e3)};
  Bounds signal_bounds{std::log(1e-4), std::log(1e4)};
  Bounds base_noise_bounds{std::log(1e-8), std::log(1e4)};
  LevelPrior level;

  void check() const {
    if (!(factor_scale > 0.0) || !(noise_hyper_scale > 0.0)) throw InvalidArgument("prior scales must be positive");
    if (level.model == LevelModel::kGainScaled && !(level.scale > 0.0)) {
      throw InvalidArgument("level prior scale must be positive");
    }
    if (!length_scale_bounds.valid() || !signal_bounds.valid() || !base_noise_bounds.valid()) {
      throw InvalidArgument("prior bounds must satisfy lower < upper");
    }
  }

  /// Bounds scaled to the data: length scale from 2% to 200% of the position span,
  /// signal and base noise within wide log windows around the centered-data
  /// spread, and a level prior as wide as the largest removed mean.
  static Priors for_data(const CenteredProfiles& centered, double factor_scale = 0.1,
                         double noise_hyper_scale = 0.5) {
    const ProfileSet& ps = centered.profiles;
    Priors pr;
    pr.factor_scale = factor_scale;
    pr.noise_hyper_scale = noise_hyper_scale;
    const double span = ps.positions.maxCoeff() - ps.positions.minCoeff();
    pr.length_scale_bounds = {std::log(0.02 * span), std::log(2.0 * span)};
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
    double spread = 1.0;
    if (count > 1) {
      const double mean = sum / static_cast<double>(count);
      spread = std::sqrt(std::max(sum2 / static_cast<double>(count) - mean * mean, 0.0));
    }
    if (!(spread > 0.0) || !std::isfinite(spread)) spread = 1.0;
    const double log_spread = std::log(spread);
    pr.signal_bounds = {log_spread - 7.0, log_spread + 7.0};
    pr.base_noise_bounds = {log_spread - 14.0, log_spread + 3.0};
    const double max_level = centered.means.size() > 0 ? centered.means.cwiseAbs().maxCoeff() : 0.0;
    pr.level = {LevelModel::kGainScaled, std::max(max_level, spread)};
    return pr;
  }
};

[[nodiscard]] inline double log_normal_density(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return -0.5 * z * z - std::log(sd) - 0.5 * std::log(2.0 * std::numbers::pi);
}

namespace detail {

inline void check_shapes(const ProfileSet& ps, const HyperParams& hp) {
  if (hp.factors.channels() != ps.channels() || hp.noise.channels() != ps.channels()) {
    throw InvalidArgument("hyperparameter channel count does not match profile set");
  }
}

inline void check_active(const ProfileSet& ps, Index j, const std::vector<Index>& active) {
  if (static_cast<Index>(active.size()) < kMinActiveChannels) {
    const std::string label = j < static_cast<Index>(ps.profile_ids.size()) ? ps.profile_ids[j] : std::to_string(j);
    throw InvalidArgument("profile " + label + " has fewer than 3 masked-in channels");
  }
}

template <class Container>
VectorXd select(const VectorXd& v, const Container& idx) {
  VectorXd out(static_cast<Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) out(static_cast<Index>(k)) = v(idx[k]);
  return out;
}

}  // namespace detail

/// C = A (K_f + v) A + Sigma_n on the active channels, where v is the level
/// variance (zero for the zero-mean model). Jitter is added at factorization.
[[nodiscard]] inline MatrixXd observed_cov(const Eigen::Ref<const VectorXd>& active_positions,
                                           const HyperParams& hp, const std::vector<Index>& active,
                                           double level_variance = 0.0) {
  if (active.empty()) throw InvalidArgument("empty position set");
  if (static_cast<Index>(active.size()) != active_positions.size()) {
    throw InvalidArgument("active positions and channel indices differ in length");
  }
  const VectorXd gains = detail::select(hp.factors.gains(), active);
  MatrixXd c = rbf_matrix(active_positions, active_positions, hp.kernel);
  c.array() += level_variance;
  c = gains.asDiagonal() * c * gains.asDiagonal();
  c += noise_cov(hp.noise, active).toDenseMatrix();
  return c;
}

struct LogDensity {
  double value = 0.0;
  VectorXd gradient;  // empty unless requested
};

/// Wraps already-centered data for the zero-mean model.
[[nodiscard]] inline CenteredProfiles as_zero_mean(const ProfileSet& centered) {
  return {centered, VectorXd::Zero(centered.profiles())};
}

namespace detail {

inline constexpr double kLog2Pi = 1.8378770664093454836;

/// Data residual after removing the modeled mean: d_c - m_j (a - 1) under the
/// gain-scaled level model, d_c otherwise.
inline VectorXd level_residual(const VectorXd& d, const VectorXd& a, double level, const LevelPrior& lp) {
  if (lp.model != LevelModel::kGainScaled) return d;
  return d - level * (a.array() - 1.0).matrix();
}

inline double gaussian_log_density_chol(const JitteredCholesky& chol, const VectorXd& r) {
  const VectorXd alpha = chol.llt.solve(r);
  return -0.5 * r.dot(alpha) - 0.5 * chol.log_det() - 0.5 * static_cast<double>(r.size()) * kLog2Pi;
}

/// Sum over profiles of the Gaussian log density, optionally accumulating the
/// gradient of the likelihood part into grad (packed layout).
inline double likelihood_terms(const CenteredProfiles& data, const LevelPrior& lp, const HyperParams& hp,
                               VectorXd* grad) {
  const ProfileSet& ps = data.profiles;
  check_shapes(ps, hp);
  if (data.means.size() != ps.profiles()) throw InvalidArgument("level count does not match profile count");
  const VectorXd gains_all = hp.factors.gains();
  const double ell2 = std::exp(2.0 * hp.kernel.log_length_scale);
  const double level_var = lp.variance();
  const bool gain_scaled = lp.model == LevelModel::kGainScaled;
  double total = 0.0;
  for (Index j = 0; j < ps.profiles(); ++j) {
    const auto active = ps.active_channels(j);
    check_active(ps, j, active);
    const VectorXd x = select(ps.positions, active);
    const VectorXd a = select(gains_all, active);
    const VectorXd r = level_residual(ps.active_data(j), a, data.means(j), lp);
    const Index n = x.size();

    const MatrixXd k = rbf_matrix(x, x, hp.kernel);
    const MatrixXd b_signal = a.asDiagonal() * k * a.asDiagonal();
    const MatrixXd b = b_signal + level_var * a * a.transpose();
    VectorXd noise_var(n);
    for (Index p = 0; p < n; ++p) noise_var(p) = hp.noise.variance(active[static_cast<std::size_t>(p)]);
    MatrixXd c = b;
    c.diagonal() += noise_var;

    const JitteredCholesky chol = jittered_cholesky(c);
    const VectorXd alpha = chol.llt.solve(r);
    total += -0.5 * r.dot(alpha) - 0.5 * chol.log_det() - 0.5 * static_cast<double>(n) * kLog2Pi;

    if (grad == nullptr) continue;
    // dL/dtheta = 1/2 tr(W dC/dtheta) + alpha' dmu/dtheta with W = alpha alpha' - C^-1.
    const MatrixXd w = alpha * alpha.transpose() - chol.llt.solve(MatrixXd::Identity(n, n));
    double g_ell = 0.0;
    for (Index q = 0; q < n; ++q) {
      for (Index p = 0; p < n; ++p) {
        const double tau = x(p) - x(q);
        g_ell += w(p, q) * b_signal(p, q) * tau * tau / ell2;
      }
    }
    (*grad)(HyperParams::kLogLength) += 0.5 * g_ell;
    (*grad)(HyperParams::kLogSignal) += w.cwiseProduct(b_signal).sum();
    for (Index p = 0; p < n; ++p) {
      const Index i = active[static_cast<std::size_t>(p)];
      const double wn = w(p, p) * noise_var(p);
      (*grad)(HyperParams::kLogNoiseBase) += wn;
      (*grad)(hp.eta_index(i)) += wn;
      double g_a = w.row(p).dot(b.row(p));
      if (gain_scaled) g_a += alpha(p) * data.means(j) * a(p);
      (*grad)(hp.log_a_index(i)) += g_a;
    }
  }
  return total;
}

inline bool inside_bounds(const HyperParams& hp, const Priors& pr) {
  return pr.length_scale_bounds.contains(hp.kernel.log_length_scale) &&
         pr.signal_bounds.contains(hp.kernel.log_signal_sigma) &&
         pr.base_noise_bounds.contains(hp.noise.log_sigma_base);
}

inline double prior_terms(const HyperParams& hp, const Priors& pr, VectorXd* grad) {
  double total = 0.0;
  const double sa2 = pr.factor_scale * pr.factor_scale;
  const double se2 = pr.noise_hyper_scale * pr.noise_hyper_scale;
  for (Index i = 0; i < hp.channels(); ++i) {
    total += log_normal_density(hp.factors.log_a(i), 0.0, pr.factor_scale);
    total += log_normal_density(hp.noise.log_eta(i), 0.0, pr.noise_hyper_scale);
    if (grad != nullptr) {
      (*grad)(hp.log_a_index(i)) -= hp.factors.log_a(i) / sa2;
      (*grad)(hp.eta_index(i)) -= hp.noise.log_eta(i) / se2;
    }
  }
  return total;
}

}  // namespace detail

/// Sum over profiles of the log density of the masked-in data under the given level model.
[[nodiscard]] inline double log_marginal_likelihood(const CenteredProfiles& data, const HyperParams& hp,
                                                    const LevelPrior& level) {
  return detail::likelihood_terms(data, level, hp, nullptr);
}

/// Zero-mean model: centered data are draws from Normal(0, A K_f A + Sigma_n).
[[nodiscard]] inline double log_marginal_likelihood(const ProfileSet& centered, const HyperParams& hp) {
  return log_marginal_likelihood(as_zero_mean(centered), hp, LevelPrior::zero_mean());
}

/// Likelihood plus hyperparameter priors; -inf outside the flat bounds.
[[nodiscard]] inline double log_marginal_posterior(const CenteredProfiles& data, const HyperParams& hp,
                                                   const Priors& pr) {
  if (!detail::inside_bounds(hp, pr)) return -std::numeric_limits<double>::infinity();
  return detail::likelihood_terms(data, pr.level, hp, nullptr) + detail::prior_terms(hp, pr, nullptr);
}

/// Value and analytic gradient of log_marginal_posterior in the packed layout.
[[nodiscard]] inline LogDensity log_marginal_posterior_with_grad(const CenteredProfiles& data, const HyperParams& hp,
                                                                 const Priors& pr) {
  LogDensity out;
  out.gradient = VectorXd::Zero(hp.size());
  if (!detail::inside_bounds(hp, pr)) {
    out.value = -std::numeric_limits<double>::infinity();
    out.gradient.setConstant(std::numeric_limits<double>::quiet_NaN());
    return out;
  }
  out.value = detail::likelihood_terms(data, pr.level, hp, &out.gradient) + detail::prior_terms(hp, pr, &out.gradient);
  return out;
}

[[nodiscard]] inline VectorXd grad_log_marginal_posterior(const CenteredProfiles& data, const HyperParams& hp,
                                                          const Priors& pr) {
  return log_marginal_posterior_with_grad(data, hp, pr).gradient;
}

// Zero-mean overloads on already-centered data; pr.level is ignored.

[[nodiscard]] inline Priors with_zero_mean(Priors pr) {
  pr.level = LevelPrior::zero_mean();
  return pr;
}

[[nodiscard]] inline double log_marginal_posterior(const ProfileSet& centered, const HyperParams& hp, const Priors& pr) {
  return log_marginal_posterior(as_zero_mean(centered), hp, with_zero_mean(pr));
}

[[nodiscard]] inline LogDensity log_marginal_posterior_with_grad(const ProfileSet& centered, const HyperParams& hp,
                                                                 const Priors& pr) {
  return log_marginal_posterior_with_grad(as_zero_mean(centered), hp, with_zero_mean(pr));
}

[[nodiscard]] inline VectorXd grad_log_marginal_posterior(const ProfileSet& centered, const HyperParams& hp,
                                                          const Priors& pr) {
  return grad_log_marginal_posterior(as_zero_mean(centered), hp, with_zero_mean(pr));
}

/// Log posterior of the gains alone with kernel and noise held fixed. Kernel
/// matrices are cached per profile, so each evaluation costs one Cholesky per profile.
class FactorLogPosterior {
 public:
  FactorLogPosterior(const CenteredProfiles& data, const HyperParams& fixed, const Priors& pr)
      : fixed_(fixed), factor_scale_(pr.factor_scale), level_(pr.level) {
    const ProfileSet& ps = data.profiles;
    detail::check_shapes(ps, fixed);
    for (Index j = 0; j < ps.profiles(); ++j) {
      Block blk;
      blk.active = ps.active_channels(j);
      detail::check_active(ps, j, blk.active);
      const VectorXd x = detail::select(ps.positions, blk.active);
      blk.data = ps.active_data(j);
      blk.level = data.means(j);
      blk.kernel = rbf_matrix(x, x, fixed.kernel);
      blk.kernel.array() += level_.variance();
      blk.noise_var = noise_cov(fixed.noise, blk.active).diagonal();
      blocks_.push_back(std::move(blk));
    }
  }

  [[nodiscard]] Index channels() const { return fixed_.channels(); }
  [[nodiscard]] const HyperParams& fixed() const { return fixed_; }

  /// Returns -inf when a covariance cannot be factorized.
  [[nodiscard]] double operator()(const Eigen::Ref<const VectorXd>& log_a) const {
    double total = 0.0;
    for (Index i = 0; i < log_a.size(); ++i) total += log_normal_density(log_a(i), 0.0, factor_scale_);
    const VectorXd gains = log_a.array().exp().matrix();
    for (const Block& blk : blocks_) {
      const VectorXd a = detail::select(gains, blk.active);
      MatrixXd c = a.asDiagonal() * blk.kernel * a.asDiagonal();
      c.diagonal() += blk.noise_var;
      try {
        total += detail::gaussian_log_density_chol(jittered_cholesky(c),
                                                   detail::level_residual(blk.data, a, blk.level, level_));
      } catch (const NotPositiveDefinite&) {
        return -std::numeric_limits<double>::infinity();
      }
    }
    return total;
  }

 private:
  struct Block {
    std::vector<Index> active;
    VectorXd data;
    double level = 0.0;
    MatrixXd kernel;  // K_f + level variance
    VectorXd noise_var;
  };

  HyperParams fixed_;
  double factor_scale_;
  LevelPrior level_;
  std::vector<Block> blocks_;
};

}  // namespace gpcal
