#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include <Eigen/Dense>

#include "gpcal/gpcal.hpp"

namespace testutil {

using gpcal::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

// A random, well-conditioned problem: sorted positions on [0, 1], unit-scale
// data, and hyperparameters away from any bound.
struct Instance {
  gpcal::ProfileSet ps;
  gpcal::HyperParams hp;
};

inline Instance random_instance(Index n, Index m, std::uint64_t seed, bool random_mask = false) {
  gpcal::Rng rng(seed);
  Instance out;
  auto& ps = out.ps;
  ps.positions.resize(n);
  double x = 0.0;
  for (Index i = 0; i < n; ++i) {
    x += 0.05 + rng.uniform() / static_cast<double>(n);
    ps.positions(i) = x;
  }
  ps.data.resize(n, m);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < m; ++j) ps.data(i, j) = rng.normal();
  }
  ps.mask = gpcal::BoolMatrix::Constant(n, m, true);
  if (random_mask && n > 3) {
    for (Index j = 0; j < m; ++j) ps.mask(static_cast<Index>(rng.uniform() * static_cast<double>(n)), j) = false;
  }
  for (Index i = 0; i < n; ++i) ps.channel_ids.push_back("c" + std::to_string(i));
  for (Index j = 0; j < m; ++j) ps.profile_ids.push_back("p" + std::to_string(j));

  auto& hp = out.hp;
  hp.kernel = gpcal::KernelParams::from_natural(0.1 + 0.4 * rng.uniform(), 0.5 + rng.uniform());
  hp.noise = gpcal::NoiseParams::uniform(n, 0.1 + 0.3 * rng.uniform(), 0.5);
  hp.factors = gpcal::CalibrationFactors::identity(n);
  for (Index i = 0; i < n; ++i) {
    hp.noise.log_eta(i) = 0.3 * rng.normal();
    hp.factors.log_a(i) = 0.1 * rng.normal();
  }
  return out;
}

// Wide bounds that never bind for random_instance.
inline gpcal::Priors loose_priors(gpcal::LevelPrior level = gpcal::LevelPrior::zero_mean()) {
  gpcal::Priors pr;
  pr.level = level;
  return pr;
}

// Dense multivariate normal log density with an explicit determinant and inverse.
inline double brute_force_mvn(const VectorXd& r, const MatrixXd& c) {
  const Eigen::FullPivLU<MatrixXd> lu(c);
  const MatrixXd inv = lu.inverse();
  return -0.5 * r.dot(inv * r) - 0.5 * std::log(lu.determinant()) -
         0.5 * static_cast<double>(r.size()) * std::log(2.0 * M_PI);
}

}  // namespace testutil
