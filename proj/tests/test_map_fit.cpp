#include <cmath>

#include <gtest/gtest.h>

#include "gpcal/inference.hpp"
#include "helpers.hpp"

using namespace gpcal;

namespace {

std::pair<CenteredProfiles, GroundTruth> quiet_data(std::uint64_t seed) {
  SynthConfig cfg;
  cfg.n_channels = 20;
  cfg.n_profiles = 6;
  cfg.kernel = KernelParams::from_natural(0.2, 1.0);
  cfg.factor_scale = 0.0;
  cfg.noise.log_sigma_base = std::log(0.01);
  cfg.eta_scale = 0.0;
  cfg.seed = seed;
  auto [ps, truth] = generate(cfg);
  return {center_profiles(ps), truth};
}

}  // namespace

TEST(FitMap, RecoversLengthScaleOnNearNoiselessData) {
  const auto [data, truth] = quiet_data(5);
  const Priors pr = Priors::for_data(data, 0.001);
  const MapEstimate map = fit_map(data, pr);
  EXPECT_NEAR(map.theta.kernel.log_length_scale, std::log(0.2), 0.3);
  EXPECT_LT((map.theta.factors.gains().array() - 1.0).abs().maxCoeff(), 0.01);
  EXPECT_TRUE(map.converged);
  EXPECT_LT(map.grad_norm, 1e-6 * static_cast<double>(map.theta.size()));
}

TEST(FitMap, FinalObjectiveBeatsEverySeed) {
  const testutil::Instance inst = testutil::random_instance(8, 3, 77);
  const CenteredProfiles data = center_profiles(inst.ps);
  const MapEstimate map = fit_map(data, Priors::for_data(data));
  ASSERT_EQ(map.seed_log_posteriors.size(), 9u);
  for (double v : map.seed_log_posteriors) EXPECT_GE(map.log_posterior, v);
  for (double v : map.final_log_posteriors) EXPECT_GE(map.log_posterior, v);
  EXPECT_NEAR(map.log_posterior, log_marginal_posterior(data, map.theta, Priors::for_data(data)), 1e-9);
}

TEST(FitMap, DeterministicAndThreadInvariant) {
  const auto [data, truth] = quiet_data(8);
  const Priors pr = Priors::for_data(data);
  FitOptions one;
  one.threads = 1;
  FitOptions many;
  many.threads = 4;
  const MapEstimate a = fit_map(data, pr, one);
  const MapEstimate b = fit_map(data, pr, many);
  const MapEstimate c = fit_map(data, pr, one);
  EXPECT_EQ(a.theta.pack(), b.theta.pack());
  EXPECT_EQ(a.theta.pack(), c.theta.pack());
  EXPECT_EQ(a.log_posterior, b.log_posterior);
}

TEST(FitMap, FixedFactorsStayFixed) {
  const testutil::Instance inst = testutil::random_instance(8, 3, 12);
  const CenteredProfiles data = center_profiles(inst.ps);
  FitOptions opt;
  opt.fix_factors = true;
  opt.fixed_factors = inst.hp.factors;
  const MapEstimate map = fit_map(data, Priors::for_data(data), opt);
  EXPECT_EQ(map.theta.factors.log_a, inst.hp.factors.log_a);
}

TEST(FitMap, RejectsEmptyBatch) {
  ProfileSet ps;
  ps.positions = VectorXd::LinSpaced(4, 0, 1);
  ps.data.resize(4, 0);
  ps.mask.resize(4, 0);
  ps.channel_ids = {"a", "b", "c", "d"};
  EXPECT_THROW((void)fit_map(ps, testutil::loose_priors()), InvalidArgument);
}

TEST(FitMap, FailsWhenEveryStartIsPinned) {
  const auto [data, truth] = quiet_data(3);
  Priors pr = Priors::for_data(data);
  pr.length_scale_bounds = {std::log(100.0), std::log(100.5)};
  pr.signal_bounds = {std::log(1e3), std::log(1.001e3)};
  pr.base_noise_bounds = {std::log(1e3), std::log(1.001e3)};
  EXPECT_THROW((void)fit_map(data, pr), MapFailed);
}
