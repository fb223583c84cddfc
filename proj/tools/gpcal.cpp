// gpcal command-line front end: synth, fit, calibrate, derivatives, spectrum.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "gpcal/pipeline.hpp"

namespace {

using gpcal::Json;

// Flags that mirror config-file keys. Values stay strings so that the config
// parser is the only place that interprets them.
struct SharedFlags {
  std::string config;
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;
  bool renormalize = false;
  CLI::Option* renormalize_opt = nullptr;

  void add(CLI::App& app, const std::string& flag, const std::string& key, const std::string& help) {
    options[key] = app.add_option(flag, values[key], help);
  }

  gpcal::RunConfig resolve() {
    gpcal::RunConfig cfg;
    if (!config.empty()) gpcal::load_config(config, cfg);
    for (const auto& [key, opt] : options) {
      if (opt->count() > 0) gpcal::apply_setting(cfg, key, values[key]);
    }
    if (renormalize_opt != nullptr && renormalize_opt->count() > 0) cfg.renormalize_gains = true;
    return cfg;
  }
};

void add_run_flags(CLI::App& app, SharedFlags& f, bool with_mcmc) {
  f.add(app, "--input", "input", "measurement CSV (channel_id,position,profile_id,value,mask)");
  f.add(app, "--outdir", "outdir", "output directory");
  app.add_option("--config", f.config, "key = value config file; flags override it")->check(CLI::ExistingFile);
  f.add(app, "--seed", "seed", "run seed");
  f.add(app, "--threads", "threads", "worker threads (0 = hardware)");
  if (!with_mcmc) return;
  f.add(app, "--grid-size", "grid_size", "evaluation grid points");
  f.add(app, "--orders", "orders", "derivative orders to emit, e.g. 0,1,2");
  f.add(app, "--chains", "chains", "MCMC chains");
  f.add(app, "--samples", "samples", "MCMC iterations per chain, burn-in included");
  f.add(app, "--burn-in", "burn_in", "adaptive burn-in iterations per chain");
  f.renormalize_opt = app.add_flag("--renormalize-gains", f.renormalize, "also report gains scaled to geometric mean 1");
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw gpcal::Error("cannot write " + path.string());
  out << text;
}

int run_synth(const std::string& outdir, const std::string& config, const std::string& seed, long long channels,
              long long profiles) {
  gpcal::SynthConfig cfg;
  if (!config.empty()) {
    for (const auto& [key, value] : gpcal::read_settings(config)) gpcal::apply_synth_setting(cfg, key, value);
  }
  if (!seed.empty()) gpcal::apply_synth_setting(cfg, "seed", seed);
  if (channels > 0) cfg.n_channels = channels;
  if (profiles > 0) cfg.n_profiles = profiles;
  const auto [ps, truth] = gpcal::generate(cfg);
  std::ostringstream csv;
  gpcal::write_profiles(csv, ps, {"synthetic seed " + std::to_string(cfg.seed)});
  const std::filesystem::path dir(outdir);
  write_file(dir / "synthetic.csv", csv.str());
  write_file(dir / "truth.json", gpcal::truth_json(cfg, ps, truth).dump(2) + "\n");
  std::cout << (dir / "synthetic.csv").string() << '\n';
  return gpcal::kExitOk;
}

struct SpectrumFlags {
  std::string input;
  std::string outdir = ".";
  double length_scale = 0.15;
  double signal_sigma = 1.0;
  double noise_sigma = 0.08;
  double spacing = 1.0;
  double s_max = -1.0;
  long long points = 200;
};

int run_spectrum(const SpectrumFlags& f) {
  gpcal::KernelParams kp = gpcal::KernelParams::from_natural(f.length_scale, f.signal_sigma);
  double noise = f.noise_sigma;
  if (!f.input.empty()) {
    std::ifstream in(f.input);
    if (!in) throw gpcal::Error("cannot open " + f.input);
    const Json j = Json::parse(in);
    const Json& hp = j.contains("map") ? j.at("map").at("hyperparameters") : j.at("hyperparameters");
    kp.log_length_scale = hp.at("log_length_scale").get<double>();
    kp.log_signal_sigma = hp.at("log_signal_sigma").get<double>();
    noise = std::exp(hp.at("log_noise_base").get<double>());
  }
  if (!kp.valid()) throw gpcal::InvalidArgument("length scale and signal sigma must be positive");
  // Default band edge: where S_f has fallen by exp(-18) from its peak.
  const double s_max = f.s_max >= 0.0 ? f.s_max : 3.0 / (M_PI * kp.length_scale());
  std::ostringstream os;
  gpcal::write_spectrum(os, kp, noise, f.spacing, s_max, f.points);
  write_file(std::filesystem::path(f.outdir) / "spectrum.csv", os.str());
  return gpcal::kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gain self-calibration of multichannel profile measurements"};
  app.require_subcommand(1);
  app.set_version_flag("--version", GPCAL_VERSION);

  auto* synth = app.add_subcommand("synth", "write a seeded synthetic dataset and its ground truth");
  std::string synth_outdir = ".", synth_config, synth_seed;
  long long synth_channels = 0, synth_profiles = 0;
  synth->add_option("--outdir", synth_outdir, "output directory");
  synth->add_option("--config", synth_config, "key = value generator settings")->check(CLI::ExistingFile);
  synth->add_option("--seed", synth_seed, "generator seed");
  synth->add_option("--channels", synth_channels, "number of channels");
  synth->add_option("--profiles", synth_profiles, "number of profiles");

  auto* fit = app.add_subcommand("fit", "MAP hyperparameters only; prints JSON");
  SharedFlags fit_flags;
  add_run_flags(*fit, fit_flags, false);

  auto* calibrate = app.add_subcommand("calibrate", "full pipeline: MAP, gain MCMC, bands, calibrated data");
  SharedFlags cal_flags;
  add_run_flags(*calibrate, cal_flags, true);

  auto* derivatives = app.add_subcommand("derivatives", "band files from a finished calibrate run");
  SharedFlags der_flags;
  add_run_flags(*derivatives, der_flags, true);
  std::string run_dir;
  derivatives->add_option("--run-dir", run_dir, "directory holding calibration.json and chain.csv (default: --outdir)");

  auto* spectrum = app.add_subcommand("spectrum", "signal, noise and total spectral density");
  SpectrumFlags spec;
  spectrum->add_option("--input", spec.input, "calibration.json or fit output to take hyperparameters from");
  spectrum->add_option("--outdir", spec.outdir, "output directory");
  spectrum->add_option("--length-scale", spec.length_scale, "kernel length scale");
  spectrum->add_option("--signal-sigma", spec.signal_sigma, "kernel amplitude");
  spectrum->add_option("--noise-sigma", spec.noise_sigma, "white-noise standard deviation");
  spectrum->add_option("--spacing", spec.spacing, "sample spacing of the noise");
  spectrum->add_option("--s-max", spec.s_max, "highest frequency");
  spectrum->add_option("--grid-size", spec.points, "number of frequencies");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? gpcal::kExitOk : gpcal::kExitError;
  }

  try {
    if (synth->parsed()) return run_synth(synth_outdir, synth_config, synth_seed, synth_channels, synth_profiles);
    if (fit->parsed()) {
      const gpcal::RunConfig cfg = fit_flags.resolve();
      bool converged = false;
      const Json out = gpcal::run_fit(cfg, converged);
      if (fit_flags.options["outdir"]->count() > 0) {
        write_file(std::filesystem::path(cfg.outdir) / "map.json", out.dump(2) + "\n");
      }
      std::cout << out.dump(2) << '\n';
      return converged ? gpcal::kExitOk : gpcal::kExitNotConverged;
    }
    if (calibrate->parsed()) return gpcal::run_pipeline(cal_flags.resolve());
    if (derivatives->parsed()) {
      const gpcal::RunConfig cfg = der_flags.resolve();
      gpcal::run_derivatives(cfg, run_dir.empty() ? cfg.outdir : run_dir);
      return gpcal::kExitOk;
    }
    if (spectrum->parsed()) return run_spectrum(spec);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return gpcal::kExitError;
  }
  return gpcal::kExitError;
}
