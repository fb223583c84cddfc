#include <cmath>

#include <gtest/gtest.h>

#include "gpcal/diagnostics.hpp"
#include "gpcal/random.hpp"

using namespace gpcal;
using Eigen::MatrixXd;

namespace {

MatrixXd iid_draws(int chains, int per_chain, int params, std::uint64_t seed) {
  Rng rng(seed);
  MatrixXd d(chains * per_chain, params);
  for (Eigen::Index r = 0; r < d.rows(); ++r) {
    for (Eigen::Index p = 0; p < params; ++p) d(r, p) = rng.normal();
  }
  return d;
}

MatrixXd ar1_draws(int chains, int per_chain, double rho, std::uint64_t seed) {
  Rng rng(seed);
  MatrixXd d(chains * per_chain, 1);
  const double innov = std::sqrt(1.0 - rho * rho);
  for (int c = 0; c < chains; ++c) {
    double x = rng.normal();
    for (int t = 0; t < per_chain; ++t) {
      x = rho * x + innov * rng.normal();
      d(c * per_chain + t, 0) = x;
    }
  }
  return d;
}

}  // namespace

TEST(Diagnostics, IndependentChainsLookConverged) {
  const DiagnosticsReport r = diagnose_draws(iid_draws(4, 1000, 3, 1), 4);
  for (Eigen::Index p = 0; p < 3; ++p) {
    EXPECT_GE(r.split_rhat(p), 0.99);
    EXPECT_LE(r.split_rhat(p), 1.01);
    EXPECT_GT(r.ess(p), 3000.0);
    EXPECT_LT(r.ess(p), 5500.0);
  }
  EXPECT_FALSE(r.rhat_flag);
  EXPECT_FALSE(r.ess_flag);
  EXPECT_TRUE(r.warnings.empty());
}

TEST(Diagnostics, ShiftedChainIsFlagged) {
  MatrixXd d = iid_draws(4, 500, 1, 2);
  d.topRows(500).array() += 1.0;
  const DiagnosticsReport r = diagnose_draws(d, 4);
  EXPECT_GT(r.split_rhat(0), 1.05);
  EXPECT_TRUE(r.rhat_flag);
  ASSERT_FALSE(r.warnings.empty());
  EXPECT_NE(r.warnings[0].find("split-Rhat"), std::string::npos);
}

TEST(Diagnostics, TrendWithinChainsIsFlagged) {
  MatrixXd d = iid_draws(4, 500, 1, 3);
  for (int c = 0; c < 4; ++c) {
    for (int t = 0; t < 500; ++t) d(c * 500 + t, 0) += 4.0 * t / 500.0;
  }
  EXPECT_TRUE(diagnose_draws(d, 4).rhat_flag);
}

TEST(Diagnostics, AutocorrelatedChainEss) {
  const double rho = 0.9;
  const int chains = 4, n = 5000;
  const DiagnosticsReport r = diagnose_draws(ar1_draws(chains, n, rho, 4), chains);
  const double want = chains * n * (1.0 - rho) / (1.0 + rho);
  EXPECT_NEAR(r.ess(0) / want, 1.0, 0.25);
  EXPECT_LT(r.split_rhat(0), 1.01);
}

TEST(Diagnostics, ConstantColumnGetsWarningNotCrash) {
  MatrixXd d = iid_draws(2, 100, 2, 5);
  d.col(1).setConstant(0.3);
  const DiagnosticsReport r = diagnose_draws(d, 2);
  EXPECT_TRUE(std::isnan(r.split_rhat(1)));
  EXPECT_EQ(r.ess(1), 0.0);
  EXPECT_TRUE(r.ess_flag);
  bool named = false;
  for (const auto& w : r.warnings) named = named || w.find("parameter 1: ESS") != std::string::npos;
  EXPECT_TRUE(named);
}

TEST(Diagnostics, RejectsBadShapes) {
  EXPECT_THROW((void)diagnose_draws(iid_draws(3, 10, 1, 6).topRows(29), 3), InvalidArgument);
  EXPECT_THROW((void)diagnose_draws(iid_draws(2, 3, 1, 6), 2), InvalidArgument);
}
