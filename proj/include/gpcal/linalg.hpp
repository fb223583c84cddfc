#pragma once

#include <cmath>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "gpcal/error.hpp"

namespace gpcal {

inline constexpr double kJitterRelative = 1e-10;
inline constexpr int kJitterEscalations = 3;

struct JitteredCholesky {
  Eigen::LLT<Eigen::MatrixXd> llt;
  double jitter = 0.0;

  [[nodiscard]] double log_det() const {
    return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  }
};

/// Cholesky of c + jitter*I with jitter = 1e-10 * mean(diag c), escalated x10 up to
/// three times before giving up.
[[nodiscard]] inline JitteredCholesky jittered_cholesky(const Eigen::MatrixXd& c,
                                                        double relative = kJitterRelative) {
  const Eigen::Index n = c.rows();
  const double avg_diag = n > 0 ? c.trace() / static_cast<double>(n) : 0.0;
  double jitter = relative * (avg_diag > 0.0 && std::isfinite(avg_diag) ? avg_diag : 1.0);
  JitteredCholesky out;
  for (int attempt = 0; attempt <= kJitterEscalations; ++attempt) {
    Eigen::MatrixXd cj = c;
    cj.diagonal().array() += jitter;
    out.llt.compute(cj);
    if (out.llt.info() == Eigen::Success && out.llt.matrixLLT().diagonal().allFinite()) {
      out.jitter = jitter;
      return out;
    }
    jitter *= 10.0;
  }
  throw NotPositiveDefinite();
}

/// Symmetric square root S with S S' = c, via eigen-decomposition with negative
/// eigenvalues clamped to zero. Used for sampling from near-singular priors.
[[nodiscard]] inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& c) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(c);
  if (eig.info() != Eigen::Success) throw Error("eigen-decomposition failed");
  const Eigen::VectorXd root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * root.asDiagonal();
}

}  // namespace gpcal
