#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/multiprecision/cpp_dec_float.hpp>
#include <gtest/gtest.h>

#include "gpcal/kernels.hpp"
#include "gpcal/random.hpp"

using namespace gpcal;

namespace {

// exp(-1/2) to 50 digits, independent of libm.
double exp_minus_half() {
  using Big = boost::multiprecision::cpp_dec_float_50;
  return static_cast<double>(boost::multiprecision::exp(Big(-0.5)));
}

double rel_err(double got, double want, double scale) { return std::abs(got - want) / std::max(std::abs(want), scale); }

}  // namespace

TEST(Rbf, ZeroLagIsSignalVariance) {
  EXPECT_DOUBLE_EQ(rbf(0.0, 0.0, KernelParams::from_natural(1.0, 2.0)), 4.0);
}

TEST(Rbf, UnitLagMatchesHighPrecisionExp) {
  EXPECT_NEAR(rbf(0.0, 1.0, KernelParams::from_natural(1.0, 1.0)), exp_minus_half(), 1e-15);
}

TEST(Rbf, SymmetricAndBounded) {
  Rng rng(3);
  for (int t = 0; t < 200; ++t) {
    const KernelParams kp = KernelParams::from_natural(0.05 + rng.uniform(), 0.1 + 3.0 * rng.uniform());
    const double x = 4.0 * rng.normal(), y = 4.0 * rng.normal();
    EXPECT_EQ(rbf(x, y, kp), rbf(y, x, kp));
    EXPECT_GE(rbf(x, y, kp), 0.0);
    EXPECT_LE(rbf(x, y, kp), kp.signal_variance());
  }
  const KernelParams kp = KernelParams::from_natural(0.4, 1.3);
  EXPECT_EQ(rbf(0.3, 0.7, kp), rbf(0.7, 0.3, kp));
}

TEST(RbfMatrix, EmptyInputThrows) {
  const VectorXd empty(0), one = VectorXd::Zero(1);
  try {
    (void)rbf_matrix(empty, one, KernelParams{});
    FAIL() << "expected an error";
  } catch (const InvalidArgument& e) {
    EXPECT_STREQ(e.what(), "empty position set");
  }
  EXPECT_THROW((void)rbf_matrix(one, empty, KernelParams{}), InvalidArgument);
}

TEST(RbfMatrix, SinglePointIsSignalVariance) {
  const VectorXd x = VectorXd::Zero(1);
  const MatrixXd k = rbf_matrix(x, x, KernelParams::from_natural(0.7, 1.5));
  ASSERT_EQ(k.rows(), 1);
  EXPECT_DOUBLE_EQ(k(0, 0), 2.25);
}

TEST(RbfMatrix, CrossBlockAgainstScalarOracle) {
  const double ell = 0.37;
  VectorXd x(1), x2(2);
  x << 0.0;
  x2 << 0.0, ell;
  const MatrixXd k = rbf_matrix(x, x2, KernelParams::from_natural(ell, 1.0));
  EXPECT_DOUBLE_EQ(k(0, 0), 1.0);
  EXPECT_NEAR(k(0, 1), exp_minus_half(), 1e-15);
}

TEST(RbfMatrix, PositiveSemidefiniteUpTo64Points) {
  Rng rng(11);
  for (Index n : {5, 16, 64}) {
    for (int t = 0; t < 10; ++t) {
      VectorXd x(n);
      for (Index i = 0; i < n; ++i) x(i) = rng.uniform();
      const KernelParams kp = KernelParams::from_natural(0.05 + rng.uniform(), 0.5 + rng.uniform());
      const MatrixXd k = rbf_matrix(x, x, kp);
      EXPECT_TRUE(k.isApprox(k.transpose(), 0.0));
      const double min_eig = Eigen::SelfAdjointEigenSolver<MatrixXd>(k).eigenvalues().minCoeff();
      EXPECT_GE(min_eig, -1e-10 * kp.signal_variance()) << "n=" << n;
    }
  }
}

TEST(CrossDeriv, ClosedFormSpotValues) {
  const KernelParams unit = KernelParams::from_natural(1.0, 1.0);
  VectorXd x(1);
  x << 0.0;
  EXPECT_EQ(rbf_cross_deriv(0.0, x, unit, 1)(0), 0.0);
  EXPECT_DOUBLE_EQ(rbf_cross_deriv(0.0, x, unit, 2)(0), -1.0);
  EXPECT_NEAR(rbf_cross_deriv(1.0, x, unit, 1)(0), -exp_minus_half(), 1e-15);
}

TEST(CrossDeriv, UnitLagFirstDerivativeAgainstFiniteDifference) {
  const KernelParams unit = KernelParams::from_natural(1.0, 1.0);
  const double h = 1e-6;
  const double fd = (rbf(1.0 + h, 0.0, unit) - rbf(1.0 - h, 0.0, unit)) / (2.0 * h);
  VectorXd x(1);
  x << 0.0;
  EXPECT_NEAR(rbf_cross_deriv(1.0, x, unit, 1)(0), fd, 1e-9);
}

TEST(CrossDeriv, OrdersOneAndTwoMatchFiniteDifferencesOfOrderZero) {
  Rng rng(5);
  for (int t = 0; t < 50; ++t) {
    const KernelParams kp = KernelParams::from_natural(0.1 + rng.uniform(), 0.5 + rng.uniform());
    const double ell = kp.length_scale();
    VectorXd x(6);
    for (Index i = 0; i < 6; ++i) x(i) = 3.0 * ell * rng.normal();
    const double xs = ell * rng.normal();
    const double h = 1e-5 * ell;
    const VectorXd f0p = rbf_cross_deriv(xs + h, x, kp, 0), f0m = rbf_cross_deriv(xs - h, x, kp, 0),
                   f0 = rbf_cross_deriv(xs, x, kp, 0);
    const VectorXd d1 = rbf_cross_deriv(xs, x, kp, 1), d2 = rbf_cross_deriv(xs, x, kp, 2);
    for (Index i = 0; i < 6; ++i) {
      // Relative to the derivative's natural scale where the value itself crosses zero.
      EXPECT_LT(rel_err((f0p(i) - f0m(i)) / (2.0 * h), d1(i), kp.signal_variance() / ell), 1e-5);
      EXPECT_LT(rel_err((f0p(i) - 2.0 * f0(i) + f0m(i)) / (h * h), d2(i), kp.signal_variance() / (ell * ell)), 1e-5);
    }
  }
}

TEST(CrossDeriv, RejectsUnsupportedOrder) {
  const VectorXd x = VectorXd::Zero(2);
  EXPECT_THROW((void)rbf_cross_deriv(0.0, x, KernelParams{}, 3), InvalidArgument);
  EXPECT_THROW((void)rbf_cross_deriv(0.0, x, KernelParams{}, -1), InvalidArgument);
  EXPECT_THROW((void)deriv_prior_var(3, KernelParams{}), InvalidArgument);
}

TEST(DerivPriorVar, UnitKernelValues) {
  const KernelParams unit = KernelParams::from_natural(1.0, 1.0);
  EXPECT_DOUBLE_EQ(deriv_prior_var(0, unit), 1.0);
  EXPECT_DOUBLE_EQ(deriv_prior_var(1, unit), 1.0);
  EXPECT_DOUBLE_EQ(deriv_prior_var(2, unit), 3.0);
  const KernelParams kp = KernelParams::from_natural(0.5, 2.0);
  EXPECT_DOUBLE_EQ(deriv_prior_var(0, kp), 4.0);
  EXPECT_DOUBLE_EQ(deriv_prior_var(1, kp), 16.0);
  EXPECT_DOUBLE_EQ(deriv_prior_var(2, kp), 192.0);
}

TEST(DerivPriorVar, MatchesEvenDifferencesOfKernelAtZeroLag) {
  for (double ell : {0.2, 1.0, 3.0}) {
    const KernelParams kp = KernelParams::from_natural(ell, 1.7);
    auto k = [&](double tau) { return rbf(tau, 0.0, kp); };
    const double h2 = 1e-4 * ell;
    const double second = (k(h2) - 2.0 * k(0.0) + k(-h2)) / (h2 * h2);
    const double h4 = 2e-3 * ell;
    const double fourth = (k(2 * h4) - 4 * k(h4) + 6 * k(0.0) - 4 * k(-h4) + k(-2 * h4)) / std::pow(h4, 4);
    EXPECT_LT(rel_err(-second, deriv_prior_var(1, kp), 0.0), 1e-4);
    EXPECT_LT(rel_err(fourth, deriv_prior_var(2, kp), 0.0), 1e-4);
  }
}

TEST(DerivCov, EqualOrderMixedDerivativesAgainstFiniteDifferences) {
  const KernelParams kp = KernelParams::from_natural(0.3, 1.2);
  VectorXd x(3), y(3);
  x << 0.0, 0.1, -0.25;
  y << 0.05, 0.4, 0.3;
  const double h = 1e-4;
  const MatrixXd c1 = rbf_deriv_cov(x, y, kp, 1);
  for (Index p = 0; p < 3; ++p) {
    for (Index q = 0; q < 3; ++q) {
      auto k = [&](double a, double b) { return rbf(a, b, kp); };
      const double a = x(p), b = y(q);
      const double mixed = (k(a + h, b + h) - k(a + h, b - h) - k(a - h, b + h) + k(a - h, b - h)) / (4 * h * h);
      EXPECT_NEAR(c1(p, q), mixed, 1e-5 * deriv_prior_var(1, kp));
    }
  }
  const MatrixXd diag = rbf_deriv_cov(x, x, kp, 2);
  for (Index p = 0; p < 3; ++p) EXPECT_DOUBLE_EQ(diag(p, p), deriv_prior_var(2, kp));
}

TEST(HyperGrads, StructureAndFiniteDifferences) {
  Rng rng(2);
  VectorXd x(7);
  for (Index i = 0; i < 7; ++i) x(i) = rng.uniform();
  KernelParams kp = KernelParams::from_natural(0.3, 1.4);
  const KernelHyperGrads g = rbf_hyper_grads(x, kp);
  const MatrixXd k = rbf_matrix(x, x, kp);
  EXPECT_TRUE(g.d_log_length_scale.diagonal().isZero(0.0));
  EXPECT_TRUE(g.d_log_signal_sigma.isApprox(2.0 * k, 1e-15));
  const double h = 1e-6;
  KernelParams up = kp, down = kp;
  up.log_length_scale += h;
  down.log_length_scale -= h;
  const MatrixXd fd = (rbf_matrix(x, x, up) - rbf_matrix(x, x, down)) / (2.0 * h);
  for (Index p = 0; p < 7; ++p) {
    for (Index q = 0; q < 7; ++q) {
      if (p == q) continue;
      EXPECT_LT(rel_err(g.d_log_length_scale(p, q), fd(p, q), 1e-8), 1e-6);
    }
  }
  EXPECT_THROW((void)rbf_hyper_grads(VectorXd(0), kp), InvalidArgument);
}

TEST(NoiseCov, Examples) {
  NoiseParams np = NoiseParams::uniform(4, 0.3);
  const auto all = noise_cov(np, {0, 1, 2, 3});
  EXPECT_TRUE(all.toDenseMatrix().isApprox(0.09 * MatrixXd::Identity(4, 4), 1e-15));

  np = NoiseParams::uniform(3, 0.1);
  np.log_eta(1) = std::log(2.0);
  const auto one = noise_cov(np, {1});
  ASSERT_EQ(one.rows(), 1);
  EXPECT_NEAR(one.diagonal()(0), 0.04, 1e-16);
  EXPECT_THROW((void)noise_cov(np, {3}), InvalidArgument);
  EXPECT_THROW((void)noise_cov(np, {-1}), InvalidArgument);
}

TEST(Spectral, ZeroFrequencyUnitKernel) {
  EXPECT_NEAR(rbf_spectral_density(0.0, KernelParams::from_natural(1.0, 1.0)), 2.5066282746310002, 1e-15);
}

TEST(Spectral, NumericalFourierTransformOfKernel) {
  using boost::math::quadrature::gauss_kronrod;
  const KernelParams kp = KernelParams::from_natural(0.7, 1.3);
  const double inf = std::numeric_limits<double>::infinity();
  for (double s : {0.0, 0.1, 0.25, 0.5, 1.0}) {
    auto f = [&](double tau) { return rbf(tau, 0.0, kp) * std::cos(2.0 * M_PI * s * tau); };
    const double num = gauss_kronrod<double, 61>::integrate(f, -inf, inf, 15, 1e-13);
    EXPECT_NEAR(num, rbf_spectral_density(s, kp), 1e-9) << "s=" << s;
  }
}

TEST(Spectral, InverseTransformReproducesKernel) {
  using boost::math::quadrature::gauss_kronrod;
  const KernelParams kp = KernelParams::from_natural(0.45, 2.0);
  const double ell = kp.length_scale();
  const double inf = std::numeric_limits<double>::infinity();
  for (double tau : {0.0, ell / 2, ell, 2 * ell}) {
    auto f = [&](double s) { return rbf_spectral_density(s, kp) * std::cos(2.0 * M_PI * s * tau); };
    const double num = gauss_kronrod<double, 61>::integrate(f, -inf, inf, 15, 1e-13);
    EXPECT_NEAR(num, rbf(tau, 0.0, kp), 1e-6 * kp.signal_variance()) << "tau=" << tau;
  }
}

TEST(Spectral, WhiteNoiseAddsAFlatFloor) {
  // Kernel k_f + s2 * delta has density S_f + s2 everywhere.
  const KernelParams kp = KernelParams::from_natural(0.2, 1.0);
  const double s2 = 0.01;
  double previous = std::numeric_limits<double>::infinity();
  for (double s : {0.0, 0.3, 2.0, 10.0}) {
    const double total = rbf_spectral_density(s, kp) + s2;
    EXPECT_GE(total, s2);
    EXPECT_LT(total, previous);
    previous = total;
  }
  EXPECT_NEAR(rbf_spectral_density(10.0, kp) + s2, s2, 1e-15);
}
