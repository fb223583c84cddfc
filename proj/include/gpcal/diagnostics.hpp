#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <boost/math/distributions/normal.hpp>
#include <Eigen/Dense>

#include "gpcal/error.hpp"

namespace gpcal {

inline constexpr double kRhatThreshold = 1.05;
inline constexpr double kEssThreshold = 100.0;

namespace detail {

// Draws of one parameter split into 2*chains halves (middle draw dropped when odd).
inline std::vector<Eigen::VectorXd> split_halves(const Eigen::Ref<const Eigen::VectorXd>& column, Eigen::Index chains) {
  const Eigen::Index per_chain = column.size() / chains;
  const Eigen::Index half = per_chain / 2;
  std::vector<Eigen::VectorXd> out;
  for (Eigen::Index c = 0; c < chains; ++c) {
    const Eigen::Index start = c * per_chain;
    out.emplace_back(column.segment(start, half));
    out.emplace_back(column.segment(start + per_chain - half, half));
  }
  return out;
}

/// Normal scores of pooled ranks (average rank for ties), Blom offset 3/8.
inline std::vector<Eigen::VectorXd> rank_normalize(const std::vector<Eigen::VectorXd>& chains) {
  std::vector<double> pooled;
  for (const auto& c : chains) pooled.insert(pooled.end(), c.data(), c.data() + c.size());
  const std::size_t total = pooled.size();
  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return pooled[a] < pooled[b]; });
  std::vector<double> rank(total);
  for (std::size_t i = 0; i < total;) {
    std::size_t j = i;
    while (j + 1 < total && pooled[order[j + 1]] == pooled[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }
  const boost::math::normal standard;
  std::vector<Eigen::VectorXd> out;
  std::size_t offset = 0;
  for (const auto& c : chains) {
    Eigen::VectorXd z(c.size());
    for (Eigen::Index t = 0; t < c.size(); ++t) {
      const double p = (rank[offset + static_cast<std::size_t>(t)] - 0.375) / (static_cast<double>(total) + 0.25);
      z(t) = boost::math::quantile(standard, p);
    }
    offset += static_cast<std::size_t>(c.size());
    out.push_back(std::move(z));
  }
  return out;
}

inline double classic_rhat(const std::vector<Eigen::VectorXd>& chains) {
  const double n = static_cast<double>(chains.front().size());
  const double m = static_cast<double>(chains.size());
  Eigen::VectorXd means(chains.size()), vars(chains.size());
  for (std::size_t c = 0; c < chains.size(); ++c) {
    means(static_cast<Eigen::Index>(c)) = chains[c].mean();
    vars(static_cast<Eigen::Index>(c)) = (chains[c].array() - chains[c].mean()).square().sum() / (n - 1.0);
  }
  const double w = vars.mean();
  const double b_over_n = (means.array() - means.mean()).square().sum() / (m - 1.0);
  if (!(w > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  const double var_plus = (n - 1.0) / n * w + b_over_n;
  return std::sqrt(var_plus / w);
}

/// Multi-chain ESS with Geyer's initial positive sequence: pair sums of the
/// combined autocorrelation are accumulated until the first negative one, and
/// forced to be non-increasing.
inline double multichain_ess(const std::vector<Eigen::VectorXd>& chains) {
  const Eigen::Index n = chains.front().size();
  const double m = static_cast<double>(chains.size());
  std::vector<Eigen::VectorXd> centered;
  Eigen::VectorXd means(chains.size());
  double mean_var = 0.0;
  for (std::size_t c = 0; c < chains.size(); ++c) {
    means(static_cast<Eigen::Index>(c)) = chains[c].mean();
    centered.emplace_back(chains[c].array() - chains[c].mean());
    mean_var += centered.back().squaredNorm() / static_cast<double>(n);
  }
  mean_var /= m;
  mean_var *= static_cast<double>(n) / static_cast<double>(n - 1);
  double var_plus = mean_var * static_cast<double>(n - 1) / static_cast<double>(n);
  if (chains.size() > 1) var_plus += (means.array() - means.mean()).square().sum() / (m - 1.0);
  if (!(var_plus > 0.0)) return 0.0;

  auto rho = [&](Eigen::Index lag) {
    double acov = 0.0;
    for (const auto& c : centered) {
      acov += c.head(n - lag).dot(c.tail(n - lag)) / static_cast<double>(n);
    }
    acov /= m;
    return 1.0 - (mean_var - acov) / var_plus;
  };

  double tau = -1.0;
  double prev_pair = std::numeric_limits<double>::infinity();
  for (Eigen::Index t = 0; t + 1 < n; t += 2) {
    double pair = rho(t) + rho(t + 1);
    if (pair < 0.0) break;
    pair = std::min(pair, prev_pair);
    tau += 2.0 * pair;
    prev_pair = pair;
  }
  tau = std::max(tau, 1.0 / std::log10(m * static_cast<double>(n)));
  return m * static_cast<double>(n) / tau;
}

}  // namespace detail

struct DiagnosticsReport {
  Eigen::VectorXd split_rhat;
  Eigen::VectorXd ess;
  double acceptance_rate = 0.0;
  bool rhat_flag = false;
  bool ess_flag = false;
  std::vector<std::string> warnings;
};

/// Rank-normalized split-Rhat (max of bulk and folded) and bulk ESS for every
/// column of an S x P draw matrix laid out chain-major.
[[nodiscard]] inline DiagnosticsReport diagnose_draws(const Eigen::MatrixXd& draws, Eigen::Index chains,
                                                      double acceptance_rate = 0.0) {
  if (chains < 1 || draws.rows() % chains != 0) throw InvalidArgument("draw count is not a multiple of chain count");
  if (draws.rows() / chains < 4) throw InvalidArgument("need at least 4 draws per chain");
  DiagnosticsReport report;
  report.acceptance_rate = acceptance_rate;
  report.split_rhat.resize(draws.cols());
  report.ess.resize(draws.cols());
  for (Eigen::Index p = 0; p < draws.cols(); ++p) {
    const auto halves = detail::split_halves(draws.col(p), chains);
    const auto z = detail::rank_normalize(halves);
    std::vector<Eigen::VectorXd> folded;
    const Eigen::VectorXd col = draws.col(p);
    std::vector<double> sorted(col.data(), col.data() + col.size());
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<long>(sorted.size() / 2), sorted.end());
    const double median = sorted[sorted.size() / 2];
    for (const auto& h : halves) folded.emplace_back((h.array() - median).abs());
    const double bulk = detail::classic_rhat(z);
    const double tail = detail::classic_rhat(detail::rank_normalize(folded));
    const bool constant = (col.array() == col(0)).all();
    report.split_rhat(p) = constant ? std::numeric_limits<double>::quiet_NaN() : std::max(bulk, tail);
    report.ess(p) = constant ? 0.0 : detail::multichain_ess(z);

    const double rhat = report.split_rhat(p);
    if (!(rhat <= kRhatThreshold)) {
      report.rhat_flag = true;
      report.warnings.push_back("parameter " + std::to_string(p) + ": split-Rhat " + std::to_string(rhat) + " > 1.05");
    }
    if (!(report.ess(p) >= kEssThreshold)) {
      report.ess_flag = true;
      report.warnings.push_back("parameter " + std::to_string(p) + ": ESS " + std::to_string(report.ess(p)) + " < 100");
    }
  }
  return report;
}

}  // namespace gpcal
