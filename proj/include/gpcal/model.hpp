#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "gpcal/error.hpp"
#include "gpcal/kernels.hpp"

namespace gpcal {

using BoolMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

inline constexpr Index kMinActiveChannels = 3;

/// A mini-batch of profiles measured by the same N channels.
/// data(i, j) is channel i in profile j; mask(i, j) == true means the entry is used for inference.
struct ProfileSet {
  VectorXd positions;
  MatrixXd data;
  BoolMatrix mask;
  std::vector<std::string> channel_ids;
  std::vector<std::string> profile_ids;

  [[nodiscard]] Index channels() const { return data.rows(); }
  [[nodiscard]] Index profiles() const { return data.cols(); }

  [[nodiscard]] std::vector<Index> active_channels(Index profile) const {
    std::vector<Index> out;
    for (Index i = 0; i < channels(); ++i) {
      if (mask(i, profile)) out.push_back(i);
    }
    return out;
  }

  [[nodiscard]] VectorXd active_data(Index profile) const {
    const auto active = active_channels(profile);
    VectorXd out(static_cast<Index>(active.size()));
    for (std::size_t k = 0; k < active.size(); ++k) out(static_cast<Index>(k)) = data(active[k], profile);
    return out;
  }

  [[nodiscard]] VectorXd active_positions(Index profile) const {
    const auto active = active_channels(profile);
    VectorXd out(static_cast<Index>(active.size()));
    for (std::size_t k = 0; k < active.size(); ++k) out(static_cast<Index>(k)) = positions(active[k]);
    return out;
  }

  friend bool operator==(const ProfileSet& a, const ProfileSet& b) {
    if (a.positions.size() != b.positions.size() || a.data.rows() != b.data.rows() ||
        a.data.cols() != b.data.cols() || a.mask.rows() != b.mask.rows() || a.mask.cols() != b.mask.cols()) {
      return false;
    }
    if (a.positions != b.positions || a.mask != b.mask) return false;
    for (Index j = 0; j < a.data.cols(); ++j) {
      for (Index i = 0; i < a.data.rows(); ++i) {
        const double x = a.data(i, j);
        const double y = b.data(i, j);
        if (!(x == y || (std::isnan(x) && std::isnan(y)))) return false;
      }
    }
    return a.channel_ids == b.channel_ids && a.profile_ids == b.profile_ids;
  }
};

/// Per-channel multiplicative gains a_i, stored as log a_i.
struct CalibrationFactors {
  VectorXd log_a;

  [[nodiscard]] Index channels() const { return log_a.size(); }
  [[nodiscard]] VectorXd gains() const { return log_a.array().exp().matrix(); }
  [[nodiscard]] CalibrationFactors inverse() const { return {-log_a}; }

  static CalibrationFactors identity(Index channels) { return {VectorXd::Zero(channels)}; }
};

/// Synthetic-data bookkeeping: everything the generator drew.
struct GroundTruth {
  MatrixXd latents;        // f_j(x_i), offset included
  MatrixXd latent_slopes;  // f_j'(x_i)
  CalibrationFactors true_factors;
  NoiseParams true_noise;
  KernelParams kernel;
};

struct CenteredProfiles {
  ProfileSet profiles;
  VectorXd means;
};

[[nodiscard]] inline CenteredProfiles center_profiles(const ProfileSet& ps) {
  CenteredProfiles out{ps, VectorXd::Zero(ps.profiles())};
  for (Index j = 0; j < ps.profiles(); ++j) {
    const auto active = ps.active_channels(j);
    if (static_cast<Index>(active.size()) < kMinActiveChannels) {
      const std::string label = j < static_cast<Index>(ps.profile_ids.size()) ? ps.profile_ids[j] : std::to_string(j);
      throw InvalidArgument("underdetermined profile " + label);
    }
    double sum = 0.0;
    for (Index i : active) sum += ps.data(i, j);
    const double mean = sum / static_cast<double>(active.size());
    for (Index i : active) out.profiles.data(i, j) -= mean;
    out.means(j) = mean;
  }
  return out;
}

/// Inverse of center_profiles on masked-in entries.
[[nodiscard]] inline ProfileSet uncenter_profiles(const CenteredProfiles& centered) {
  ProfileSet out = centered.profiles;
  for (Index j = 0; j < out.profiles(); ++j) {
    for (Index i = 0; i < out.channels(); ++i) {
      if (out.mask(i, j)) out.data(i, j) += centered.means(j);
    }
  }
  return out;
}

/// Divides each channel by its gain: d_ij / a_i.
[[nodiscard]] inline ProfileSet post_calibrate(const ProfileSet& ps, const CalibrationFactors& cf) {
  if (cf.channels() != ps.channels()) throw InvalidArgument("calibration factor count does not match channel count");
  if (!cf.log_a.allFinite()) throw InvalidArgument("non-finite calibration factor");
  ProfileSet out = ps;
  const VectorXd inv_gain = (-cf.log_a.array()).exp().matrix();
  for (Index j = 0; j < out.profiles(); ++j) out.data.col(j) = out.data.col(j).cwiseProduct(inv_gain);
  return out;
}

struct Violation {
  std::string message;
  std::string channel;  // empty when not channel-specific
  std::string profile;  // empty when not profile-specific
};

using ValidationReport = std::vector<Violation>;

[[nodiscard]] inline std::string describe(const Violation& v) {
  std::string s = v.message;
  if (!v.channel.empty()) s += " (channel " + v.channel + ")";
  if (!v.profile.empty()) s += " (profile " + v.profile + ")";
  return s;
}

[[nodiscard]] inline ValidationReport validate(const ProfileSet& ps) {
  ValidationReport report;
  const Index n = ps.data.rows();
  const Index m = ps.data.cols();
  if (ps.positions.size() != n || ps.mask.rows() != n || ps.mask.cols() != m ||
      static_cast<Index>(ps.channel_ids.size()) != n || static_cast<Index>(ps.profile_ids.size()) != m) {
    report.push_back({"inconsistent shapes", {}, {}});
    return report;
  }
  if (n < kMinActiveChannels) report.push_back({"fewer than 3 channels", {}, {}});
  if (m < 1) report.push_back({"no profiles", {}, {}});
  for (Index i = 0; i < n; ++i) {
    if (!std::isfinite(ps.positions(i))) report.push_back({"non-finite position", ps.channel_ids[i], {}});
    if (i > 0 && !(ps.positions(i) > ps.positions(i - 1))) {
      report.push_back({"non-increasing positions", ps.channel_ids[i], {}});
    }
  }
  for (Index j = 0; j < m; ++j) {
    Index active = 0;
    for (Index i = 0; i < n; ++i) {
      if (!ps.mask(i, j)) continue;
      ++active;
      if (!std::isfinite(ps.data(i, j))) report.push_back({"non-finite masked-in value", ps.channel_ids[i], ps.profile_ids[j]});
    }
    if (active < kMinActiveChannels) {
      report.push_back({"fewer than 3 masked-in channels", {}, ps.profile_ids[j]});
    }
  }
  return report;
}

}  // namespace gpcal
