#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "gpcal/error.hpp"

namespace gpcal {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Squared-exponential latent kernel, parameterized in log space.
struct KernelParams {
  double log_length_scale = 0.0;
  double log_signal_sigma = 0.0;

  [[nodiscard]] double length_scale() const { return std::exp(log_length_scale); }
  [[nodiscard]] double signal_sigma() const { return std::exp(log_signal_sigma); }
  [[nodiscard]] double signal_variance() const { return std::exp(2.0 * log_signal_sigma); }

  [[nodiscard]] bool valid() const {
    return std::isfinite(log_length_scale) && std::isfinite(log_signal_sigma) &&
           std::isfinite(length_scale()) && length_scale() > 0.0 &&
           std::isfinite(signal_sigma());
  }

  static KernelParams from_natural(double length_scale, double signal_sigma) {
    return {std::log(length_scale), std::log(signal_sigma)};
  }
};

/// Channel-dependent noise: sigma_i = sigma_base * exp(eta_i).
struct NoiseParams {
  double log_sigma_base = std::log(0.1);
  VectorXd log_eta;
  double hyper_scale = 0.5;

  [[nodiscard]] Index channels() const { return log_eta.size(); }
  [[nodiscard]] double sigma_base() const { return std::exp(log_sigma_base); }
  [[nodiscard]] double sigma(Index i) const { return std::exp(log_sigma_base + log_eta(i)); }
  [[nodiscard]] double variance(Index i) const { return std::exp(2.0 * (log_sigma_base + log_eta(i))); }

  [[nodiscard]] VectorXd sigmas() const {
    return (log_eta.array() + log_sigma_base).exp().matrix();
  }

  static NoiseParams uniform(Index channels, double sigma_base, double hyper_scale = 0.5) {
    return {std::log(sigma_base), VectorXd::Zero(channels), hyper_scale};
  }
};

namespace detail {

inline void check_order(int order) {
  if (order < 0 || order > 2) {
    throw InvalidArgument("unsupported derivative order " + std::to_string(order));
  }
}

inline void check_nonempty(const Eigen::Ref<const VectorXd>& x) {
  if (x.size() == 0) throw InvalidArgument("empty position set");
}

}  // namespace detail

[[nodiscard]] inline double rbf(double x, double x2, const KernelParams& kp) {
  const double tau = x - x2;
  const double ell = kp.length_scale();
  return kp.signal_variance() * std::exp(-0.5 * tau * tau / (ell * ell));
}

[[nodiscard]] inline MatrixXd rbf_matrix(const Eigen::Ref<const VectorXd>& x,
                                         const Eigen::Ref<const VectorXd>& x2,
                                         const KernelParams& kp) {
  detail::check_nonempty(x);
  detail::check_nonempty(x2);
  MatrixXd k(x.size(), x2.size());
  for (Index j = 0; j < x2.size(); ++j) {
    for (Index i = 0; i < x.size(); ++i) k(i, j) = rbf(x(i), x2(j), kp);
  }
  return k;
}

/// d^order k(x*, X[i]) / dx*^order for every i.
[[nodiscard]] inline VectorXd rbf_cross_deriv(double xstar, const Eigen::Ref<const VectorXd>& x,
                                              const KernelParams& kp, int order) {
  detail::check_order(order);
  const double ell2 = std::exp(2.0 * kp.log_length_scale);
  VectorXd out(x.size());
  for (Index i = 0; i < x.size(); ++i) {
    const double tau = xstar - x(i);
    const double k0 = rbf(xstar, x(i), kp);
    switch (order) {
      case 0: out(i) = k0; break;
      case 1: out(i) = -(tau / ell2) * k0; break;
      default: out(i) = (tau * tau / (ell2 * ell2) - 1.0 / ell2) * k0; break;
    }
  }
  return out;
}

/// Row g holds rbf_cross_deriv(grid[g], x, kp, order).
[[nodiscard]] inline MatrixXd rbf_cross_deriv_matrix(const Eigen::Ref<const VectorXd>& grid,
                                                     const Eigen::Ref<const VectorXd>& x,
                                                     const KernelParams& kp, int order) {
  detail::check_order(order);
  MatrixXd out(grid.size(), x.size());
  for (Index g = 0; g < grid.size(); ++g) out.row(g) = rbf_cross_deriv(grid(g), x, kp, order).transpose();
  return out;
}

/// Prior variance of the order-th derivative process at any single point.
[[nodiscard]] inline double deriv_prior_var(int order, const KernelParams& kp) {
  detail::check_order(order);
  const double s2 = kp.signal_variance();
  const double ell2 = std::exp(2.0 * kp.log_length_scale);
  switch (order) {
    case 0: return s2;
    case 1: return s2 / ell2;
    default: return 3.0 * s2 / (ell2 * ell2);
  }
}

/// Prior covariance between the order-th derivative process at two position sets,
/// i.e. the equal-order mixed derivative d^2k k(x, x') / dx^k dx'^k.
[[nodiscard]] inline MatrixXd rbf_deriv_cov(const Eigen::Ref<const VectorXd>& x,
                                            const Eigen::Ref<const VectorXd>& x2,
                                            const KernelParams& kp, int order) {
  detail::check_order(order);
  detail::check_nonempty(x);
  detail::check_nonempty(x2);
  const double ell2 = std::exp(2.0 * kp.log_length_scale);
  const double ell4 = ell2 * ell2;
  MatrixXd out(x.size(), x2.size());
  for (Index j = 0; j < x2.size(); ++j) {
    for (Index i = 0; i < x.size(); ++i) {
      const double tau = x(i) - x2(j);
      const double t2 = tau * tau;
      const double k0 = rbf(x(i), x2(j), kp);
      switch (order) {
        case 0: out(i, j) = k0; break;
        case 1: out(i, j) = (1.0 / ell2 - t2 / ell4) * k0; break;
        default: out(i, j) = (3.0 / ell4 - 6.0 * t2 / (ell4 * ell2) + t2 * t2 / (ell4 * ell4)) * k0; break;
      }
    }
  }
  return out;
}

struct KernelHyperGrads {
  MatrixXd d_log_length_scale;
  MatrixXd d_log_signal_sigma;
};

[[nodiscard]] inline KernelHyperGrads rbf_hyper_grads(const Eigen::Ref<const VectorXd>& x,
                                                      const KernelParams& kp) {
  const MatrixXd k = rbf_matrix(x, x, kp);
  const double ell2 = std::exp(2.0 * kp.log_length_scale);
  KernelHyperGrads out{MatrixXd(k.rows(), k.cols()), 2.0 * k};
  for (Index j = 0; j < k.cols(); ++j) {
    for (Index i = 0; i < k.rows(); ++i) {
      const double tau = x(i) - x(j);
      out.d_log_length_scale(i, j) = k(i, j) * tau * tau / ell2;
    }
  }
  return out;
}

using DiagonalMatrixXd = Eigen::DiagonalMatrix<double, Eigen::Dynamic>;

[[nodiscard]] inline DiagonalMatrixXd noise_cov(const NoiseParams& np, const std::vector<Index>& active) {
  VectorXd diag(static_cast<Index>(active.size()));
  for (std::size_t k = 0; k < active.size(); ++k) {
    const Index i = active[k];
    if (i < 0 || i >= np.channels()) {
      throw InvalidArgument("channel index " + std::to_string(i) + " out of range");
    }
    diag(static_cast<Index>(k)) = np.variance(i);
  }
  return DiagonalMatrixXd(diag);
}

/// Fourier transform of the RBF kernel with the e^{2 pi i s tau} convention,
/// so that the integral over s equals k(0).
[[nodiscard]] inline double rbf_spectral_density(double s, const KernelParams& kp) {
  const double ell = kp.length_scale();
  constexpr double pi = std::numbers::pi;
  return kp.signal_variance() * std::sqrt(2.0 * pi) * ell * std::exp(-2.0 * pi * pi * ell * ell * s * s);
}

}  // namespace gpcal
