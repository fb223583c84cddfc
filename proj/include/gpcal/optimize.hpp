#pragma once

#include <cmath>
#include <deque>
#include <limits>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

namespace gpcal {

struct AscentOptions {
  int max_iter = 500;
  double grad_tol = 1e-6;  // on the projected-gradient 2-norm
  int memory = 10;
  int max_backtracks = 50;
  double armijo = 1e-4;
  // Stop early after this many consecutive steps gaining less than
  // stall_gain * (1 + |f|); 0 disables.
  int stall_iters = 10;
  double stall_gain = 1e-12;
};

struct AscentResult {
  Eigen::VectorXd x;
  double value = -std::numeric_limits<double>::infinity();
  Eigen::VectorXd gradient;
  double projected_grad_norm = std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool converged = false;
};

namespace detail {

inline Eigen::VectorXd clamp_box(const Eigen::VectorXd& x, const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
  return x.cwiseMax(lo).cwiseMin(hi);
}

/// Gradient components that can still move the iterate inside the box.
inline Eigen::VectorXd projected_gradient(const Eigen::VectorXd& x, const Eigen::VectorXd& g,
                                          const Eigen::VectorXd& lo, const Eigen::VectorXd& hi,
                                          const Eigen::Matrix<bool, Eigen::Dynamic, 1>& free) {
  Eigen::VectorXd pg = g;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (!free(i) || (x(i) <= lo(i) && g(i) < 0.0) || (x(i) >= hi(i) && g(i) > 0.0)) pg(i) = 0.0;
  }
  return pg;
}

}  // namespace detail

/// Gradient ascent with backtracking (Armijo) line search on a box. The search
/// direction is the L-BFGS two-loop product restricted to coordinates not pinned
/// at a bound; it falls back to the plain projected gradient whenever that
/// direction fails to ascend. Coordinates with free(i) == false never move.
///
/// objective(x, grad) returns the value and writes the gradient; a non-finite
/// value rejects the trial point.
template <class Objective>
AscentResult maximize_in_box(Objective&& objective, Eigen::VectorXd x0, const Eigen::VectorXd& lo,
                             const Eigen::VectorXd& hi, const Eigen::Matrix<bool, Eigen::Dynamic, 1>& free,
                             const AscentOptions& opt = {}) {
  using Eigen::VectorXd;
  const Eigen::Index n = x0.size();
  AscentResult res;
  res.x = detail::clamp_box(x0, lo, hi);
  res.gradient = VectorXd::Zero(n);
  res.value = objective(res.x, res.gradient);
  if (!std::isfinite(res.value)) return res;

  std::deque<VectorXd> s_hist, y_hist;
  VectorXd pg = detail::projected_gradient(res.x, res.gradient, lo, hi, free);
  res.projected_grad_norm = pg.norm();
  int stalled = 0;

  for (int iter = 0; iter < opt.max_iter; ++iter) {
    if (res.projected_grad_norm < opt.grad_tol) {
      res.converged = true;
      break;
    }
    res.iterations = iter + 1;

    // Two-loop recursion for ascent: direction approximates -H^{-1} grad of -f.
    VectorXd q = pg;
    std::vector<double> alpha(s_hist.size());
    for (int k = static_cast<int>(s_hist.size()) - 1; k >= 0; --k) {
      const double rho = 1.0 / y_hist[k].dot(s_hist[k]);
      alpha[k] = rho * s_hist[k].dot(q);
      q -= alpha[k] * y_hist[k];
    }
    if (!s_hist.empty()) q *= s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
    for (std::size_t k = 0; k < s_hist.size(); ++k) {
      const double rho = 1.0 / y_hist[k].dot(s_hist[k]);
      const double beta = rho * y_hist[k].dot(q);
      q += (alpha[k] - beta) * s_hist[k];
    }
    VectorXd dir = detail::projected_gradient(res.x, q, lo, hi, free);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (pg(i) == 0.0) dir(i) = 0.0;
    }
    bool quasi_newton = !s_hist.empty();
    if (!(dir.dot(pg) > 0.0)) {
      dir = pg;
      quasi_newton = false;
    }

    const double previous = res.value;
    bool accepted = false;
    for (int attempt = 0; attempt < 2 && !accepted; ++attempt) {
      double step = quasi_newton ? 1.0 : std::min(1.0, 1.0 / std::max(dir.norm(), 1e-300));
      for (int bt = 0; bt < opt.max_backtracks; ++bt) {
        const VectorXd trial = detail::clamp_box(res.x + step * dir, lo, hi);
        VectorXd g_trial = VectorXd::Zero(n);
        const double f_trial = objective(trial, g_trial);
        if (std::isfinite(f_trial) && g_trial.allFinite() &&
            f_trial >= res.value + opt.armijo * res.gradient.dot(trial - res.x) && f_trial >= res.value) {
          const VectorXd s = trial - res.x;
          // Curvature pair for the ascent problem uses y = -(g_new - g_old).
          const VectorXd y = -(g_trial - res.gradient);
          if (s.dot(y) > 1e-12 * s.norm() * y.norm()) {
            s_hist.push_back(s);
            y_hist.push_back(y);
            if (static_cast<int>(s_hist.size()) > opt.memory) {
              s_hist.pop_front();
              y_hist.pop_front();
            }
          }
          res.x = trial;
          res.value = f_trial;
          res.gradient = g_trial;
          accepted = true;
          break;
        }
        step *= 0.5;
      }
      if (!accepted && quasi_newton) {
        s_hist.clear();
        y_hist.clear();
        dir = pg;
        quasi_newton = false;
      } else {
        break;
      }
    }
    pg = detail::projected_gradient(res.x, res.gradient, lo, hi, free);
    res.projected_grad_norm = pg.norm();
    if (!accepted) break;
    stalled = res.value - previous < opt.stall_gain * (1.0 + std::abs(res.value)) ? stalled + 1 : 0;
    if (opt.stall_iters > 0 && stalled >= opt.stall_iters) break;
  }
  if (res.projected_grad_norm < opt.grad_tol) res.converged = true;
  return res;
}

/// Damped Newton refinement on the box, for ill-conditioned optima where
/// quasi-Newton steps stall. The Hessian over coordinates not pinned at a bound
/// comes from central differences of the analytic gradient; its eigenvalues are
/// sign-flipped and floored so every step ascends.
template <class Objective>
AscentResult polish_newton(Objective&& objective, AscentResult start, const Eigen::VectorXd& lo,
                           const Eigen::VectorXd& hi, const Eigen::Matrix<bool, Eigen::Dynamic, 1>& free,
                           double grad_tol, int max_steps = 10, double fd_step = 1e-5) {
  using Eigen::VectorXd;
  AscentResult res = std::move(start);
  if (!std::isfinite(res.value)) return res;
  const Eigen::Index n = res.x.size();
  for (int it = 0; it < max_steps; ++it) {
    VectorXd pg = detail::projected_gradient(res.x, res.gradient, lo, hi, free);
    res.projected_grad_norm = pg.norm();
    if (res.projected_grad_norm < grad_tol) break;
    std::vector<Eigen::Index> idx;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (pg(i) != 0.0 || (free(i) && res.x(i) > lo(i) && res.x(i) < hi(i))) idx.push_back(i);
    }
    const auto m = static_cast<Eigen::Index>(idx.size());
    Eigen::MatrixXd h(m, m);
    bool ok = true;
    for (Eigen::Index a = 0; a < m && ok; ++a) {
      VectorXd xp = res.x, xm = res.x, gp = VectorXd::Zero(n), gm = VectorXd::Zero(n);
      xp(idx[a]) += fd_step;
      xm(idx[a]) -= fd_step;
      ok = std::isfinite(objective(xp, gp)) && std::isfinite(objective(xm, gm));
      for (Eigen::Index b = 0; b < m; ++b) h(b, a) = (gp(idx[b]) - gm(idx[b])) / (2.0 * fd_step);
    }
    if (!ok || !h.allFinite()) break;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(-0.5 * (h + h.transpose()));
    if (eig.info() != Eigen::Success) break;
    const VectorXd lam = eig.eigenvalues().cwiseAbs();
    const VectorXd floored = lam.cwiseMax(1e-10 * std::max(lam.maxCoeff(), 1e-300));
    VectorXd g_sub(m);
    for (Eigen::Index a = 0; a < m; ++a) g_sub(a) = res.gradient(idx[a]);
    const VectorXd d_sub = eig.eigenvectors() * (eig.eigenvectors().transpose() * g_sub).cwiseQuotient(floored);
    VectorXd dir = VectorXd::Zero(n);
    for (Eigen::Index a = 0; a < m; ++a) dir(idx[a]) = d_sub(a);

    bool accepted = false;
    double step = 1.0;
    for (int bt = 0; bt < 30; ++bt, step *= 0.5) {
      const VectorXd trial = detail::clamp_box(res.x + step * dir, lo, hi);
      VectorXd g_trial = VectorXd::Zero(n);
      const double f_trial = objective(trial, g_trial);
      if (std::isfinite(f_trial) && g_trial.allFinite() && f_trial >= res.value) {
        res.x = trial;
        res.value = f_trial;
        res.gradient = g_trial;
        accepted = true;
        break;
      }
    }
    ++res.iterations;
    if (!accepted) break;
  }
  res.projected_grad_norm = detail::projected_gradient(res.x, res.gradient, lo, hi, free).norm();
  res.converged = res.projected_grad_norm < grad_tol;
  return res;
}

}  // namespace gpcal
