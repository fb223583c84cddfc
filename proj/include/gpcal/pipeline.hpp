#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "gpcal/error.hpp"
#include "gpcal/inference.hpp"
#include "gpcal/io.hpp"
#include "gpcal/kernels.hpp"
#include "gpcal/likelihood.hpp"
#include "gpcal/model.hpp"
#include "gpcal/random.hpp"
#include "gpcal/synth.hpp"

#ifndef GPCAL_VERSION
#define GPCAL_VERSION "unknown"
#endif

namespace gpcal {

using Json = nlohmann::json;

inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitNotConverged = 2;

// Sub-stream of the run seed reserved for posterior summary draws; chains use 0..chains-1.
inline constexpr std::uint64_t kSummaryStream = 0xFFFFFFFFULL;

class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what) : Error(stage + ": " + what), stage_(std::move(stage)) {}
  [[nodiscard]] const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct RunConfig {
  std::string input;
  std::string outdir = ".";
  std::uint64_t seed = 20140725;
  Index grid_size = 200;
  std::vector<int> orders{0, 1, 2};
  bool renormalize_gains = false;

  double factor_scale = 0.1;
  double noise_hyper_scale = 0.5;
  // Log-space bound overrides; unset bounds are derived from the data.
  std::optional<Bounds> length_scale_bounds;
  std::optional<Bounds> signal_bounds;
  std::optional<Bounds> base_noise_bounds;
  LevelModel level_model = LevelModel::kGainScaled;

  McmcConfig mcmc;
  FitOptions fit;
  int draws_per_sample = 1;
  unsigned threads = 0;

  void check() const {
    if (grid_size < 2) throw InvalidArgument("grid_size must be at least 2");
    if (orders.empty()) throw InvalidArgument("orders must not be empty");
    for (int k : orders) detail::check_order(k);
    if (!(factor_scale > 0.0) || !(noise_hyper_scale > 0.0)) throw InvalidArgument("prior scales must be positive");
    for (const auto* b : {&length_scale_bounds, &signal_bounds, &base_noise_bounds}) {
      if (b->has_value() && !(*b)->valid()) throw InvalidArgument("bounds must satisfy lower < upper");
    }
    if (draws_per_sample < 1) throw InvalidArgument("draws_per_sample must be positive");
    McmcConfig mc = mcmc;
    mc.seed = seed;
    mc.check();
  }
};

namespace detail {

inline bool parse_bool(const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw InvalidArgument("expected a boolean, got '" + v + "'");
}

inline double parse_real(const std::string& v) {
  double x = 0.0;
  if (!parse_double(v, x)) throw InvalidArgument("expected a number, got '" + v + "'");
  return x;
}

inline long long parse_integer(const std::string& v) {
  long long x = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), x);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) throw InvalidArgument("expected an integer, got '" + v + "'");
  return x;
}

inline std::uint64_t parse_seed(const std::string& v) {
  std::uint64_t x = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), x);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) throw InvalidArgument("expected a seed, got '" + v + "'");
  return x;
}

inline std::vector<int> parse_orders(const std::string& v) {
  std::vector<int> out;
  for (auto field : split_csv(v)) {
    const auto k = parse_integer(std::string(field));
    if (k < 0 || k > 2) throw InvalidArgument("orders must be drawn from {0,1,2}");
    if (std::find(out.begin(), out.end(), static_cast<int>(k)) == out.end()) out.push_back(static_cast<int>(k));
  }
  if (out.empty()) throw InvalidArgument("orders must not be empty");
  std::sort(out.begin(), out.end());
  return out;
}

inline void set_bound(std::optional<Bounds>& b, bool lower, double x) {
  Bounds v = b.value_or(Bounds{});
  (lower ? v.lo : v.hi) = x;
  b = v;
}

}  // namespace detail

/// key = value lines; '#' starts a comment. Returns entries in file order.
[[nodiscard]] inline std::vector<std::pair<std::string, std::string>> read_settings(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  std::vector<std::pair<std::string, std::string>> out;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    std::string_view line = detail::trim(std::string_view(raw).substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError(detail::where(path, line_no) + "expected key = value");
    const auto key = detail::trim(line.substr(0, eq));
    const auto value = detail::trim(line.substr(eq + 1));
    if (key.empty()) throw ParseError(detail::where(path, line_no) + "empty key");
    out.emplace_back(std::string(key), std::string(value));
  }
  return out;
}

inline void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
  using namespace detail;
  if (key == "input") cfg.input = value;
  else if (key == "outdir") cfg.outdir = value;
  else if (key == "seed") cfg.seed = parse_seed(value);
  else if (key == "grid_size") cfg.grid_size = parse_integer(value);
  else if (key == "orders") cfg.orders = parse_orders(value);
  else if (key == "renormalize_gains") cfg.renormalize_gains = parse_bool(value);
  else if (key == "factor_scale") cfg.factor_scale = parse_real(value);
  else if (key == "noise_hyper_scale") cfg.noise_hyper_scale = parse_real(value);
  else if (key == "log_length_scale_min") set_bound(cfg.length_scale_bounds, true, parse_real(value));
  else if (key == "log_length_scale_max") set_bound(cfg.length_scale_bounds, false, parse_real(value));
  else if (key == "log_signal_sigma_min") set_bound(cfg.signal_bounds, true, parse_real(value));
  else if (key == "log_signal_sigma_max") set_bound(cfg.signal_bounds, false, parse_real(value));
  else if (key == "log_noise_base_min") set_bound(cfg.base_noise_bounds, true, parse_real(value));
  else if (key == "log_noise_base_max") set_bound(cfg.base_noise_bounds, false, parse_real(value));
  else if (key == "level_model") {
    if (value == "gain_scaled") cfg.level_model = LevelModel::kGainScaled;
    else if (value == "zero_mean") cfg.level_model = LevelModel::kZeroMean;
    else throw InvalidArgument("level_model must be gain_scaled or zero_mean");
  }
  else if (key == "chains") cfg.mcmc.n_chains = static_cast<int>(parse_integer(value));
  else if (key == "samples") cfg.mcmc.n_samples = static_cast<int>(parse_integer(value));
  else if (key == "burn_in") cfg.mcmc.burn_in = static_cast<int>(parse_integer(value));
  else if (key == "thin") cfg.mcmc.thin = static_cast<int>(parse_integer(value));
  else if (key == "target_accept") cfg.mcmc.target_accept = parse_real(value);
  else if (key == "init_step") cfg.mcmc.init_step = parse_real(value);
  else if (key == "precondition") cfg.mcmc.precondition = parse_bool(value);
  else if (key == "map_grid_points") cfg.fit.grid_points = static_cast<int>(parse_integer(value));
  else if (key == "map_max_iter") cfg.fit.max_iter = static_cast<int>(parse_integer(value));
  else if (key == "map_grad_tol") cfg.fit.grad_tol_per_param = parse_real(value);
  else if (key == "draws_per_sample") cfg.draws_per_sample = static_cast<int>(parse_integer(value));
  else if (key == "threads") cfg.threads = static_cast<unsigned>(parse_integer(value));
  else throw InvalidArgument("unknown config key '" + key + "'");
}

inline void load_config(const std::string& path, RunConfig& cfg) {
  for (const auto& [key, value] : read_settings(path)) {
    try {
      apply_setting(cfg, key, value);
    } catch (const InvalidArgument& e) {
      throw InvalidArgument(path + ": " + key + ": " + e.what());
    }
  }
}

namespace detail {

inline Json bounds_json(const std::optional<Bounds>& b) {
  if (!b) return "data";
  return Json::array({b->lo, b->hi});
}

inline const char* level_name(LevelModel m) { return m == LevelModel::kGainScaled ? "gain_scaled" : "zero_mean"; }

}  // namespace detail

[[nodiscard]] inline Json config_json(const RunConfig& cfg) {
  return Json{
      {"input", cfg.input},
      {"outdir", cfg.outdir},
      {"seed", cfg.seed},
      {"grid_size", cfg.grid_size},
      {"orders", cfg.orders},
      {"renormalize_gains", cfg.renormalize_gains},
      {"factor_scale", cfg.factor_scale},
      {"noise_hyper_scale", cfg.noise_hyper_scale},
      {"log_length_scale_bounds", detail::bounds_json(cfg.length_scale_bounds)},
      {"log_signal_sigma_bounds", detail::bounds_json(cfg.signal_bounds)},
      {"log_noise_base_bounds", detail::bounds_json(cfg.base_noise_bounds)},
      {"level_model", detail::level_name(cfg.level_model)},
      {"chains", cfg.mcmc.n_chains},
      {"samples", cfg.mcmc.n_samples},
      {"burn_in", cfg.mcmc.burn_in},
      {"thin", cfg.mcmc.thin},
      {"target_accept", cfg.mcmc.target_accept},
      {"init_step", cfg.mcmc.init_step},
      {"precondition", cfg.mcmc.precondition},
      {"map_grid_points", cfg.fit.grid_points},
      {"map_max_iter", cfg.fit.max_iter},
      {"map_grad_tol", cfg.fit.grad_tol_per_param},
      {"draws_per_sample", cfg.draws_per_sample},
  };
}

[[nodiscard]] inline Priors make_priors(const RunConfig& cfg, const CenteredProfiles& centered) {
  Priors pr = Priors::for_data(centered, cfg.factor_scale, cfg.noise_hyper_scale);
  auto merge = [](Bounds& target, const std::optional<Bounds>& over) {
    if (!over) return;
    if (std::isfinite(over->lo)) target.lo = over->lo;
    if (std::isfinite(over->hi)) target.hi = over->hi;
  };
  merge(pr.length_scale_bounds, cfg.length_scale_bounds);
  merge(pr.signal_bounds, cfg.signal_bounds);
  merge(pr.base_noise_bounds, cfg.base_noise_bounds);
  if (cfg.level_model == LevelModel::kZeroMean) pr.level = LevelPrior::zero_mean();
  pr.check();
  return pr;
}

struct GainSummary {
  VectorXd median, lower95, upper95;
};

/// Pointwise quantiles of exp(log a) over the draws. With renormalize, each
/// draw is first divided by its own geometric mean.
[[nodiscard]] inline GainSummary summarize_gains(const MatrixXd& log_a_draws, bool renormalize) {
  const Index n = log_a_draws.cols();
  GainSummary out{VectorXd(n), VectorXd(n), VectorXd(n)};
  MatrixXd d = log_a_draws;
  if (renormalize) d.colwise() -= d.rowwise().mean();
  std::vector<double> col(static_cast<std::size_t>(d.rows()));
  for (Index i = 0; i < n; ++i) {
    for (Index r = 0; r < d.rows(); ++r) col[static_cast<std::size_t>(r)] = d(r, i);
    out.lower95(i) = std::exp(quantile_inplace(col, 0.025));
    out.median(i) = std::exp(quantile_inplace(col, 0.5));
    out.upper95(i) = std::exp(quantile_inplace(col, 0.975));
  }
  return out;
}

struct CalibrationResult {
  ProfileSet input;
  CenteredProfiles centered;
  Priors priors;
  MapEstimate map;
  McmcChain chain;
  PosteriorSummary summary;
  GainSummary gains;
  std::optional<GainSummary> renormalized;
  ProfileSet calibrated;
  std::uint64_t summary_seed = 0;
  bool converged = false;
};

[[nodiscard]] inline McmcConfig mcmc_config(const RunConfig& cfg) {
  McmcConfig mc = cfg.mcmc;
  mc.seed = cfg.seed;
  mc.threads = cfg.threads;
  return mc;
}

/// The two-stage pipeline in memory: center, MAP, gain MCMC, summaries, and
/// post-calibration at the posterior-median gains. Errors carry the stage name.
[[nodiscard]] inline CalibrationResult calibrate(const ProfileSet& ps, const RunConfig& cfg) {
  CalibrationResult res;
  res.input = ps;
  try {
    cfg.check();
  } catch (const Error& e) {
    throw StageError("config", e.what());
  }
  try {
    const ValidationReport report = validate(ps);
    if (!report.empty()) {
      std::string msg = "invalid profile set:";
      for (const auto& v : report) msg += " " + describe(v) + ";";
      throw InvalidArgument(msg);
    }
    res.centered = center_profiles(ps);
    res.priors = make_priors(cfg, res.centered);
  } catch (const Error& e) {
    throw StageError("center", e.what());
  }
  try {
    FitOptions fo = cfg.fit;
    fo.threads = cfg.threads;
    res.map = fit_map(res.centered, res.priors, fo);
  } catch (const Error& e) {
    throw StageError("fit_map", e.what());
  }
  try {
    res.chain = sample_factors(res.centered, res.map.theta, res.priors, mcmc_config(cfg));
  } catch (const Error& e) {
    throw StageError("sample_factors", e.what());
  }
  try {
    res.summary_seed = derive_seed(cfg.seed, kSummaryStream);
    const VectorXd grid = default_grid(ps.positions, cfg.grid_size);
    res.summary = summarize(res.centered, res.map.theta, res.priors.level, res.chain, grid, cfg.orders,
                            cfg.draws_per_sample, res.summary_seed, cfg.threads);
    res.gains = summarize_gains(res.chain.samples, false);
    if (cfg.renormalize_gains) res.renormalized = summarize_gains(res.chain.samples, true);
  } catch (const Error& e) {
    throw StageError("summarize", e.what());
  }
  try {
    res.calibrated = post_calibrate(ps, CalibrationFactors{res.gains.median.array().log().matrix()});
  } catch (const Error& e) {
    throw StageError("post_calibrate", e.what());
  }
  res.converged = res.chain.converged;
  return res;
}

/// MAP hyperparameters in log space (exact) and natural units (readable).
[[nodiscard]] inline Json hyperparams_json(const HyperParams& theta, const LevelPrior& level) {
  return Json{
      {"log_length_scale", theta.kernel.log_length_scale},
      {"log_signal_sigma", theta.kernel.log_signal_sigma},
      {"log_noise_base", theta.noise.log_sigma_base},
      {"noise_hyper_scale", theta.noise.hyper_scale},
      {"length_scale", theta.kernel.length_scale()},
      {"signal_sigma", theta.kernel.signal_sigma()},
      {"noise_base", theta.noise.sigma_base()},
      {"log_eta", std::vector<double>(theta.noise.log_eta.data(), theta.noise.log_eta.data() + theta.noise.log_eta.size())},
      {"log_a", std::vector<double>(theta.factors.log_a.data(), theta.factors.log_a.data() + theta.factors.log_a.size())},
      {"level_model", detail::level_name(level.model)},
      {"level_scale", level.scale},
  };
}

[[nodiscard]] inline std::pair<HyperParams, LevelPrior> hyperparams_from_json(const Json& j, Index channels) {
  HyperParams theta;
  theta.kernel.log_length_scale = j.at("log_length_scale").get<double>();
  theta.kernel.log_signal_sigma = j.at("log_signal_sigma").get<double>();
  theta.noise.log_sigma_base = j.at("log_noise_base").get<double>();
  theta.noise.hyper_scale = j.at("noise_hyper_scale").get<double>();
  const auto eta = j.at("log_eta").get<std::vector<double>>();
  const auto log_a = j.at("log_a").get<std::vector<double>>();
  if (static_cast<Index>(eta.size()) != channels || static_cast<Index>(log_a.size()) != channels) {
    throw InvalidArgument("hyperparameter channel count does not match the data");
  }
  theta.noise.log_eta = Eigen::Map<const VectorXd>(eta.data(), channels);
  theta.factors.log_a = Eigen::Map<const VectorXd>(log_a.data(), channels);
  LevelPrior level = LevelPrior::zero_mean();
  if (j.at("level_model").get<std::string>() == "gain_scaled") level = {LevelModel::kGainScaled, j.at("level_scale").get<double>()};
  return {theta, level};
}

namespace detail {

inline Json gains_json(const ProfileSet& ps, const GainSummary& g) {
  Json out = Json::array();
  for (Index i = 0; i < ps.channels(); ++i) {
    out.push_back({{"channel_id", ps.channel_ids[static_cast<std::size_t>(i)]},
                   {"median", g.median(i)},
                   {"lower95", g.lower95(i)},
                   {"upper95", g.upper95(i)}});
  }
  return out;
}

inline Json nullable(double x) { return std::isfinite(x) ? Json(x) : Json(nullptr); }

}  // namespace detail

[[nodiscard]] inline Json calibration_json(const CalibrationResult& res) {
  const ProfileSet& ps = res.input;
  const HyperParams& theta = res.map.theta;
  Json channels = Json::array();
  for (Index i = 0; i < ps.channels(); ++i) {
    channels.push_back({
        {"channel_id", ps.channel_ids[static_cast<std::size_t>(i)]},
        {"position", ps.positions(i)},
        {"gain_map", std::exp(theta.factors.log_a(i))},
        {"gain_median", res.gains.median(i)},
        {"gain_lower95", res.gains.lower95(i)},
        {"gain_upper95", res.gains.upper95(i)},
        {"noise_sigma", theta.noise.sigma(i)},
        {"split_rhat", detail::nullable(res.chain.split_rhat(i))},
        {"ess", res.chain.ess(i)},
    });
  }
  Json diag{
      {"acceptance_rate", res.chain.acceptance_rate},
      {"max_split_rhat", detail::nullable(res.chain.split_rhat.maxCoeff())},
      {"min_ess", res.chain.ess.minCoeff()},
      {"retained_draws", res.chain.draws()},
      {"chains", res.chain.n_chains},
      {"step_sizes", std::vector<double>(res.chain.step_sizes.data(), res.chain.step_sizes.data() + res.chain.step_sizes.size())},
      {"converged", res.converged},
      {"warnings", res.chain.warnings},
  };
  Json out{
      {"format", kFormatTag},
      {"calibration_point", "posterior_median"},
      {"gain_convention", "data = gain * latent + noise; calibrated = data / gain"},
      {"map",
       {{"hyperparameters", hyperparams_json(theta, res.priors.level)},
        {"log_posterior", res.map.log_posterior},
        {"grad_norm", res.map.grad_norm},
        {"iterations", res.map.iterations},
        {"converged", res.map.converged}}},
      {"profile_means", std::vector<double>(res.centered.means.data(), res.centered.means.data() + res.centered.means.size())},
      {"profile_ids", ps.profile_ids},
      {"channels", channels},
      {"diagnostics", diag},
  };
  if (res.renormalized) {
    out["renormalized_gains"] = {{"convention", "each draw divided by its geometric mean"},
                                 {"channels", detail::gains_json(ps, *res.renormalized)}};
  }
  return out;
}

namespace detail {

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("failed writing " + path.string());
}

inline std::string band_text(const PosteriorSummary& s, int order, const std::vector<std::string>& ids) {
  std::ostringstream os;
  write_band(os, s, order, ids);
  return os.str();
}

}  // namespace detail

[[nodiscard]] inline Json manifest_json(const RunConfig& cfg, const std::string& input_digest, std::uint64_t summary_seed,
                                        const std::vector<std::string>& artifacts, int exit_status) {
  std::vector<std::uint64_t> chain_seeds;
  for (int c = 0; c < cfg.mcmc.n_chains; ++c) chain_seeds.push_back(derive_seed(cfg.seed, static_cast<std::uint64_t>(c)));
  return Json{
      {"format", kFormatTag},
      {"tool", "gpcal"},
      {"version", GPCAL_VERSION},
      {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                    std::to_string(EIGEN_MINOR_VERSION)},
      {"compiler", __VERSION__},
      {"rng", "mt19937_64; Box-Muller normals; sub-seeds splitmix64(seed ^ splitmix64(unit + 0x632BE59BD9B4E019))"},
      {"input_fnv1a64", input_digest},
      {"seeds", {{"run", cfg.seed}, {"chains", chain_seeds}, {"summary", summary_seed}}},
      {"config", config_json(cfg)},
      {"artifacts", artifacts},
      {"exit_status", exit_status},
  };
}

/// Full `calibrate` run: reads cfg.input and writes calibration.json,
/// posterior_order{k}.csv, calibrated.csv, chain.csv and run_manifest.json into
/// cfg.outdir. Returns kExitOk or kExitNotConverged; throws StageError.
inline int run_pipeline(const RunConfig& cfg) {
  ProfileSet ps;
  std::string digest;
  try {
    if (cfg.input.empty()) throw InvalidArgument("no input file given");
    ps = read_profiles(cfg.input);
    digest = file_digest(cfg.input);
  } catch (const Error& e) {
    throw StageError("ingest", e.what());
  }
  const CalibrationResult res = calibrate(ps, cfg);
  const int status = res.converged ? kExitOk : kExitNotConverged;
  try {
    const std::filesystem::path dir(cfg.outdir);
    std::filesystem::create_directories(dir);
    std::vector<std::string> artifacts;
    detail::write_text(dir / "calibration.json", calibration_json(res).dump(2) + "\n");
    artifacts.emplace_back("calibration.json");
    for (int k : cfg.orders) {
      const std::string name = "posterior_order" + std::to_string(k) + ".csv";
      detail::write_text(dir / name, detail::band_text(res.summary, k, ps.profile_ids));
      artifacts.push_back(name);
    }
    std::ostringstream cal;
    write_profiles(cal, res.calibrated, {"calibrated: data divided by posterior-median gain"});
    detail::write_text(dir / "calibrated.csv", cal.str());
    artifacts.emplace_back("calibrated.csv");
    std::ostringstream ch;
    write_chain(ch, res.chain, ps.channel_ids);
    detail::write_text(dir / "chain.csv", ch.str());
    artifacts.emplace_back("chain.csv");
    artifacts.emplace_back("run_manifest.json");
    detail::write_text(dir / "run_manifest.json",
                       manifest_json(cfg, digest, res.summary_seed, artifacts, status).dump(2) + "\n");
  } catch (const std::exception& e) {
    throw StageError("write", e.what());
  }
  for (const auto& w : res.chain.warnings) std::cerr << "warning: " << w << '\n';
  if (!res.map.converged) std::cerr << "warning: MAP ascent stopped before reaching the gradient tolerance\n";
  return status;
}

/// Stage 1 only; returns the MAP summary as JSON.
[[nodiscard]] inline Json run_fit(const RunConfig& cfg, bool& converged) {
  ProfileSet ps;
  try {
    if (cfg.input.empty()) throw InvalidArgument("no input file given");
    ps = read_profiles(cfg.input);
  } catch (const Error& e) {
    throw StageError("ingest", e.what());
  }
  CenteredProfiles centered;
  Priors pr;
  try {
    cfg.check();
    centered = center_profiles(ps);
    pr = make_priors(cfg, centered);
  } catch (const Error& e) {
    throw StageError("center", e.what());
  }
  MapEstimate map;
  try {
    FitOptions fo = cfg.fit;
    fo.threads = cfg.threads;
    map = fit_map(centered, pr, fo);
  } catch (const Error& e) {
    throw StageError("fit_map", e.what());
  }
  converged = map.converged;
  return Json{{"format", kFormatTag},
              {"hyperparameters", hyperparams_json(map.theta, pr.level)},
              {"log_posterior", map.log_posterior},
              {"grad_norm", map.grad_norm},
              {"iterations", map.iterations},
              {"converged", map.converged},
              {"channel_ids", ps.channel_ids},
              {"profile_means", std::vector<double>(centered.means.data(), centered.means.data() + centered.means.size())}};
}

/// Band files for cfg.orders from a finished run: MAP hyperparameters from
/// run_dir/calibration.json and draws from run_dir/chain.csv.
inline void run_derivatives(const RunConfig& cfg, const std::string& run_dir) {
  ProfileSet ps;
  try {
    if (cfg.input.empty()) throw InvalidArgument("no input file given");
    ps = read_profiles(cfg.input);
  } catch (const Error& e) {
    throw StageError("ingest", e.what());
  }
  HyperParams theta;
  LevelPrior level;
  McmcChain chain;
  try {
    const std::filesystem::path dir(run_dir);
    std::ifstream in(dir / "calibration.json");
    if (!in) throw Error("cannot open " + (dir / "calibration.json").string());
    const Json cal = Json::parse(in);
    if (cal.at("format").get<std::string>() != kFormatTag) throw Error("unsupported calibration.json format");
    std::tie(theta, level) = hyperparams_from_json(cal.at("map").at("hyperparameters"), ps.channels());
    chain = read_chain((dir / "chain.csv").string());
    if (chain.samples.cols() != ps.channels()) throw Error("chain width does not match channel count");
  } catch (const std::exception& e) {
    throw StageError("load", e.what());
  }
  PosteriorSummary summary;
  try {
    cfg.check();
    CenteredProfiles centered = center_profiles(ps);
    const VectorXd grid = default_grid(ps.positions, cfg.grid_size);
    summary = summarize(centered, theta, level, chain, grid, cfg.orders, cfg.draws_per_sample,
                        derive_seed(cfg.seed, kSummaryStream), cfg.threads);
  } catch (const Error& e) {
    throw StageError("summarize", e.what());
  }
  try {
    const std::filesystem::path dir(cfg.outdir);
    std::filesystem::create_directories(dir);
    for (int k : cfg.orders) {
      detail::write_text(dir / ("posterior_order" + std::to_string(k) + ".csv"),
                         detail::band_text(summary, k, ps.profile_ids));
    }
  } catch (const std::exception& e) {
    throw StageError("write", e.what());
  }
}

/// Columns s, S_f, S_n, S_total on a uniform frequency grid [0, s_max].
/// White noise of standard deviation sigma sampled every `spacing` position
/// units has the flat density sigma^2 * spacing under the same convention.
inline void write_spectrum(std::ostream& out, const KernelParams& kp, double noise_sigma, double spacing,
                           double s_max, Index points) {
  if (points < 1) throw InvalidArgument("frequency grid must not be empty");
  if (!(s_max >= 0.0) || !(spacing > 0.0) || !(noise_sigma >= 0.0)) {
    throw InvalidArgument("need s_max >= 0, spacing > 0 and noise_sigma >= 0");
  }
  const double s_n = noise_sigma * noise_sigma * spacing;
  out << "# format: " << kFormatTag << '\n';
  out << "# length_scale: " << format_number(kp.length_scale()) << '\n';
  out << "# signal_sigma: " << format_number(kp.signal_sigma()) << '\n';
  out << "# noise_sigma: " << format_number(noise_sigma) << '\n';
  out << "# spacing: " << format_number(spacing) << '\n';
  out << "s,S_f,S_n,S_total\n";
  for (Index k = 0; k < points; ++k) {
    const double s = points == 1 ? 0.0 : s_max * static_cast<double>(k) / static_cast<double>(points - 1);
    const double s_f = rbf_spectral_density(s, kp);
    out << format_number(s) << ',' << format_number(s_f) << ',' << format_number(s_n) << ','
        << format_number(s_f + s_n) << '\n';
  }
}

inline void apply_synth_setting(SynthConfig& cfg, const std::string& key, const std::string& value) {
  using namespace detail;
  if (key == "n_channels") cfg.n_channels = parse_integer(value);
  else if (key == "n_profiles") cfg.n_profiles = parse_integer(value);
  else if (key == "position_lo") cfg.position_lo = parse_real(value);
  else if (key == "position_hi") cfg.position_hi = parse_real(value);
  else if (key == "length_scale") cfg.kernel.log_length_scale = std::log(parse_real(value));
  else if (key == "signal_sigma") cfg.kernel.log_signal_sigma = std::log(parse_real(value));
  else if (key == "noise_sigma") cfg.noise.log_sigma_base = std::log(parse_real(value));
  else if (key == "eta_scale") cfg.eta_scale = parse_real(value);
  else if (key == "factor_scale") cfg.factor_scale = parse_real(value);
  else if (key == "profile_offset") cfg.profile_offset = parse_real(value);
  else if (key == "seed") cfg.seed = parse_seed(value);
  else throw InvalidArgument("unknown synth key '" + key + "'");
}

[[nodiscard]] inline Json truth_json(const SynthConfig& cfg, const ProfileSet& ps, const GroundTruth& truth) {
  Json channels = Json::array();
  for (Index i = 0; i < ps.channels(); ++i) {
    channels.push_back({{"channel_id", ps.channel_ids[static_cast<std::size_t>(i)]},
                        {"position", ps.positions(i)},
                        {"log_a", truth.true_factors.log_a(i)},
                        {"gain", std::exp(truth.true_factors.log_a(i))},
                        {"log_eta", truth.true_noise.log_eta(i)},
                        {"noise_sigma", truth.true_noise.sigma(i)}});
  }
  Json profiles = Json::array();
  for (Index j = 0; j < ps.profiles(); ++j) {
    const VectorXd f = truth.latents.col(j), df = truth.latent_slopes.col(j);
    profiles.push_back({{"profile_id", ps.profile_ids[static_cast<std::size_t>(j)]},
                        {"latent", std::vector<double>(f.data(), f.data() + f.size())},
                        {"latent_slope", std::vector<double>(df.data(), df.data() + df.size())}});
  }
  return Json{{"format", kFormatTag},
              {"seed", cfg.seed},
              {"length_scale", truth.kernel.length_scale()},
              {"signal_sigma", truth.kernel.signal_sigma()},
              {"noise_base", truth.true_noise.sigma_base()},
              {"eta_scale", cfg.eta_scale},
              {"factor_scale", cfg.factor_scale},
              {"profile_offset", cfg.profile_offset},
              {"channels", channels},
              {"profiles", profiles}};
}

}  // namespace gpcal
