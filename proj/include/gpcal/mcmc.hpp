#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "gpcal/diagnostics.hpp"
#include "gpcal/error.hpp"
#include "gpcal/likelihood.hpp"
#include "gpcal/model.hpp"
#include "gpcal/parallel.hpp"
#include "gpcal/random.hpp"

namespace gpcal {

struct McmcConfig {
  int n_samples = 10000;  // iterations per chain, burn-in included
  int burn_in = 2000;
  int thin = 4;
  int n_chains = 4;
  double target_accept = 0.35;
  std::uint64_t seed = 20140725;
  double init_step = 0.02;
  // Scale proposals by the Laplace covariance at the MAP gains; false gives
  // isotropic proposals starting at init_step.
  bool precondition = true;
  unsigned threads = 0;

  [[nodiscard]] int kept_per_chain() const { return (n_samples - burn_in) / thin; }

  void check() const {
    if (n_samples < 1 || burn_in < 0 || burn_in >= n_samples) {
      throw InvalidArgument("MCMC requires 0 <= burn_in < n_samples");
    }
    if (thin < 1 || n_chains < 1) throw InvalidArgument("thin and n_chains must be positive");
    if (!(target_accept > 0.0 && target_accept < 1.0)) throw InvalidArgument("target_accept must lie in (0, 1)");
    if (!(init_step > 0.0)) throw InvalidArgument("init_step must be positive");
    if (kept_per_chain() < 4) throw InvalidArgument("too few retained draws per chain");
  }
};

struct McmcChain {
  MatrixXd samples;  // (n_chains * kept_per_chain) x N draws of log a, chain-major
  int n_chains = 0;
  long accepted = 0;  // post burn-in
  long proposed = 0;  // post burn-in
  double acceptance_rate = 0.0;
  VectorXd split_rhat;
  VectorXd ess;
  VectorXd step_sizes;  // per chain, frozen after burn-in
  MatrixXd proposal_sqrt;  // L with proposal = x + step * L z
  std::uint64_t seed = 0;
  bool converged = true;
  std::vector<std::string> warnings;

  [[nodiscard]] Index draws() const { return samples.rows(); }
};

namespace detail {

struct ChainRun {
  MatrixXd kept;
  long accepted = 0;
  long proposed = 0;
  double step = 0.0;
};

/// One adaptive random-walk Metropolis chain on any log density
/// target(const VectorXd&) -> double (non-finite rejects the proposal).
template <class Target>
ChainRun run_chain(const Target& target, const VectorXd& start, const MatrixXd& proposal_sqrt,
                   double initial_step, const McmcConfig& mc, std::uint64_t chain_seed) {
  Rng rng(chain_seed);
  const Index n = start.size();
  VectorXd x = start;
  for (Index i = 0; i < n; ++i) x(i) += mc.init_step * rng.normal();
  double lp = target(x);
  if (!std::isfinite(lp)) throw Error("non-finite posterior at chain start");

  ChainRun out;
  out.kept.resize(mc.kept_per_chain(), n);
  double log_step = std::log(initial_step);
  Index kept = 0;
  for (int t = 0; t < mc.n_samples; ++t) {
    const double step = std::exp(log_step);
    const VectorXd proposal = x + step * (proposal_sqrt * rng.normal_vector(n));
    const double lp_new = target(proposal);
    const double log_ratio = lp_new - lp;
    const double u = rng.uniform();
    const bool accept = std::isfinite(lp_new) && std::log1p(-u) < log_ratio;
    if (accept) {
      x = proposal;
      lp = lp_new;
    }
    if (t < mc.burn_in) {
      // Robbins-Monro on the acceptance probability; frozen after burn-in.
      const double accept_prob = std::isfinite(lp_new) ? std::exp(std::min(0.0, log_ratio)) : 0.0;
      log_step += (accept_prob - mc.target_accept) / std::pow(static_cast<double>(t) + 1.0, 0.6);
      continue;
    }
    ++out.proposed;
    if (accept) ++out.accepted;
    if ((t - mc.burn_in + 1) % mc.thin == 0 && kept < out.kept.rows()) out.kept.row(kept++) = x.transpose();
  }
  out.step = std::exp(log_step);
  return out;
}

/// Square root of the inverse negative Hessian of the gain log posterior at
/// log_a, from central differences of the analytic gradient. Curvatures are
/// floored at 1% of the prior precision.
inline MatrixXd laplace_proposal_sqrt(const CenteredProfiles& data, const HyperParams& theta, const Priors& pr) {
  const Index n = theta.channels();
  const double h = 1e-4;
  MatrixXd jac(n, n);
  for (Index i = 0; i < n; ++i) {
    HyperParams plus = theta, minus = theta;
    plus.factors.log_a(i) += h;
    minus.factors.log_a(i) -= h;
    const VectorXd gp = log_marginal_posterior_with_grad(data, plus, pr).gradient.segment(theta.log_a_index(0), n);
    const VectorXd gm = log_marginal_posterior_with_grad(data, minus, pr).gradient.segment(theta.log_a_index(0), n);
    jac.col(i) = (gp - gm) / (2.0 * h);
  }
  const MatrixXd precision = -0.5 * (jac + jac.transpose());
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(precision);
  if (eig.info() != Eigen::Success || !eig.eigenvalues().allFinite()) return MatrixXd::Identity(n, n) * pr.factor_scale;
  const double floor = 0.01 / (pr.factor_scale * pr.factor_scale);
  const VectorXd scale = eig.eigenvalues().cwiseMax(floor).cwiseInverse().cwiseSqrt();
  return eig.eigenvectors() * scale.asDiagonal();
}

}  // namespace detail

/// Stage 2: random-walk Metropolis over log a with kernel and noise fixed at
/// theta_map. Chains start at the MAP gains jittered by Normal(0, init_step^2),
/// adapt a scalar step during burn-in only, and each owns the sub-seed
/// derive_seed(seed, chain). Proposals are Gaussian with covariance
/// step^2 * L L', where L is the Laplace square root (or the identity).
[[nodiscard]] inline McmcChain sample_factors(const CenteredProfiles& data, const HyperParams& theta_map,
                                              const Priors& pr, const McmcConfig& mc) {
  mc.check();
  pr.check();
  const FactorLogPosterior target(data, theta_map, pr);
  const Index n = theta_map.channels();
  if (!std::isfinite(target(theta_map.factors.log_a))) throw Error("non-finite posterior at MAP gains");

  MatrixXd proposal_sqrt = MatrixXd::Identity(n, n);
  double initial_step = mc.init_step;
  if (mc.precondition) {
    proposal_sqrt = detail::laplace_proposal_sqrt(data, theta_map, pr);
    initial_step = 2.38 / std::sqrt(static_cast<double>(n));
  }

  std::vector<detail::ChainRun> runs(static_cast<std::size_t>(mc.n_chains));
  parallel_for(runs.size(), [&](std::size_t c) {
    runs[c] = detail::run_chain(target, theta_map.factors.log_a, proposal_sqrt, initial_step, mc,
                                derive_seed(mc.seed, c));
  }, mc.threads);

  McmcChain chain;
  chain.n_chains = mc.n_chains;
  chain.seed = mc.seed;
  const Index per_chain = mc.kept_per_chain();
  chain.samples.resize(per_chain * mc.n_chains, n);
  chain.step_sizes.resize(mc.n_chains);
  chain.proposal_sqrt = proposal_sqrt;
  for (std::size_t c = 0; c < runs.size(); ++c) {
    chain.samples.middleRows(static_cast<Index>(c) * per_chain, per_chain) = runs[c].kept;
    chain.accepted += runs[c].accepted;
    chain.proposed += runs[c].proposed;
    chain.step_sizes(static_cast<Index>(c)) = runs[c].step;
  }
  chain.acceptance_rate = chain.proposed > 0 ? static_cast<double>(chain.accepted) / static_cast<double>(chain.proposed) : 0.0;

  const DiagnosticsReport report = diagnose_draws(chain.samples, chain.n_chains, chain.acceptance_rate);
  chain.split_rhat = report.split_rhat;
  chain.ess = report.ess;
  chain.converged = !report.rhat_flag;
  chain.warnings = report.warnings;
  return chain;
}

/// Zero-mean model on already-centered data.
[[nodiscard]] inline McmcChain sample_factors(const ProfileSet& centered, const HyperParams& theta_map,
                                              const Priors& pr, const McmcConfig& mc) {
  return sample_factors(as_zero_mean(centered), theta_map, with_zero_mean(pr), mc);
}

[[nodiscard]] inline DiagnosticsReport diagnostics(const McmcChain& chain) {
  return diagnose_draws(chain.samples, chain.n_chains, chain.acceptance_rate);
}

}  // namespace gpcal
