#include <cmath>
#include <sstream>
#include <string>

#include <boost/math/quadrature/trapezoidal.hpp>
#include <gtest/gtest.h>

#include "gpcal/io.hpp"
#include "gpcal/pipeline.hpp"
#include "helpers.hpp"

using namespace gpcal;

namespace {

ProfileSet parse(const std::string& text) {
  std::istringstream in(text);
  return parse_profiles(in, "t.csv");
}

std::string parse_error(const std::string& text) {
  try {
    (void)parse(text);
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

const std::string kHeader = "channel_id,position,profile_id,value,mask\n";

struct SpectrumRow {
  double s, f, n, total;
};

std::vector<SpectrumRow> spectrum_rows(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<SpectrumRow> rows;
  bool header = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      EXPECT_EQ(line, "s,S_f,S_n,S_total");
      header = true;
      continue;
    }
    SpectrumRow r{};
    char c1, c2, c3;
    std::istringstream ls(line);
    ls >> r.s >> c1 >> r.f >> c2 >> r.n >> c3 >> r.total;
    rows.push_back(r);
  }
  return rows;
}

}  // namespace

TEST(ParseProfiles, MinimalFile) {
  const ProfileSet ps = parse(kHeader + "a,0.0,p,1.5,1\nb,0.5,p,2.5,1\nc,1.0,p,3.5,1\n");
  ASSERT_EQ(ps.channels(), 3);
  ASSERT_EQ(ps.profiles(), 1);
  EXPECT_EQ(ps.data(2, 0), 3.5);
  EXPECT_TRUE(ps.mask.all());
}

TEST(ParseProfiles, MaskedOutRowsAreKept) {
  const ProfileSet ps = parse(kHeader + "a,0.0,p,1.5,1\nb,0.5,p,2.5,1\nc,1.0,p,3.5,0\nd,1.5,p,4.5,1\n");
  ASSERT_EQ(ps.channels(), 4);
  EXPECT_EQ(ps.data(2, 0), 3.5);
  EXPECT_FALSE(ps.mask(2, 0));
  EXPECT_EQ(ps.positions(1), 0.5);
}

TEST(ParseProfiles, SortsChannelsByPositionAndFillsGaps) {
  const ProfileSet ps = parse("# comment\n" + kHeader +
                              "z,2.0,p1,1,1\nx,0.0,p1,2,1\ny,1.0,p1,3,1\nx,0.0,p2,4,1\ny,1.0,p2,5,1\nz,2.0,p2,6,1\n"
                              "w,3.0,p1,7,1\n");
  EXPECT_EQ(ps.channel_ids, (std::vector<std::string>{"x", "y", "z", "w"}));
  EXPECT_EQ(ps.profile_ids, (std::vector<std::string>{"p1", "p2"}));
  EXPECT_FALSE(ps.mask(3, 1));
  EXPECT_TRUE(std::isnan(ps.data(3, 1)));
}

TEST(ParseProfiles, RoundTripIsExact) {
  testutil::Instance inst = testutil::random_instance(7, 3, 5, true);
  inst.ps.data(0, 0) = std::numeric_limits<double>::quiet_NaN();
  inst.ps.mask(0, 0) = false;
  inst.ps.data(1, 1) = 1.0 / 3.0;
  std::ostringstream out;
  write_profiles(out, inst.ps, {"note"});
  EXPECT_EQ(out.str().rfind("# format: gpcal/1\n", 0), 0u);
  EXPECT_TRUE(parse(out.str()) == inst.ps);
}

TEST(ParseProfiles, ErrorsCarryLineNumbers) {
  EXPECT_NE(parse_error("a,b\n").find("t.csv:1: expected header"), std::string::npos);
  EXPECT_NE(parse_error(kHeader + "a,0,p,1,1\nb,0.5,p,1\n").find("t.csv:3: expected 5 fields"), std::string::npos);
  EXPECT_NE(parse_error(kHeader + "a,zero,p,1,1\n").find("t.csv:2: bad position"), std::string::npos);
  EXPECT_NE(parse_error(kHeader + "a,0,p,x,1\n").find("bad value 'x'"), std::string::npos);
  EXPECT_NE(parse_error(kHeader + "a,0,p,1,2\n").find("mask must be 0 or 1"), std::string::npos);
  EXPECT_NE(parse_error(kHeader + "a,0,p,1,1\na,0,p,1,1\n").find("t.csv:3: duplicate row"), std::string::npos);
  EXPECT_NE(parse_error(kHeader + "a,0,p,1,1\na,0.1,q,1,1\n").find("t.csv:3: channel a position disagrees with line 2"),
            std::string::npos);
  EXPECT_NE(parse_error("").find("missing header"), std::string::npos);
}

TEST(ParseProfiles, ValidationFailureNamesTheProfile) {
  const std::string msg = parse_error(kHeader + "a,0,p,1,1\nb,1,p,1,1\nc,2,p,1,0\nd,3,p,1,1\n" +
                                      "a,0,q,1,1\nb,1,q,1,1\nc,2,q,nan,1\nd,3,q,1,1\n");
  EXPECT_NE(msg.find("invalid profile set"), std::string::npos);
  EXPECT_NE(msg.find("c"), std::string::npos);
  EXPECT_NE(msg.find("q"), std::string::npos);
}

TEST(FormatNumber, SeventeenSignificantDigits) {
  EXPECT_EQ(format_number(0.1), "0.10000000000000001");
  EXPECT_EQ(format_number(1.0), "1");
  EXPECT_EQ(std::stod(format_number(M_PI)), M_PI);
  EXPECT_EQ(format_number(std::numeric_limits<double>::quiet_NaN()), "nan");
}

TEST(Chain, RoundTrip) {
  McmcChain chain;
  chain.n_chains = 2;
  chain.samples = MatrixXd::Random(10, 3);
  chain.samples(4, 1) = 1.0 / 7.0;
  chain.acceptance_rate = 0.3;
  std::ostringstream out;
  write_chain(out, chain, {"a", "b", "c"});
  std::istringstream in(out.str());
  const McmcChain back = parse_chain(in);
  EXPECT_EQ(back.n_chains, 2);
  EXPECT_EQ(back.samples, chain.samples);
}

TEST(Chain, BadInputRejected) {
  std::istringstream in("chain,draw,log_a_x\n0,0,abc\n");
  EXPECT_THROW((void)parse_chain(in), ParseError);
}

TEST(Settings, ParsesAndRejects) {
  RunConfig cfg;
  apply_setting(cfg, "orders", "0,2");
  apply_setting(cfg, "seed", "7");
  apply_setting(cfg, "renormalize_gains", "true");
  EXPECT_EQ(cfg.orders, (std::vector<int>{0, 2}));
  EXPECT_EQ(cfg.seed, 7u);
  EXPECT_TRUE(cfg.renormalize_gains);
  EXPECT_THROW(apply_setting(cfg, "nonsense", "1"), InvalidArgument);
  EXPECT_THROW(apply_setting(cfg, "chains", "two"), Error);
  EXPECT_THROW(apply_setting(cfg, "orders", "0,5"), Error);
}

TEST(Spectrum, TotalIsSignalPlusNoise) {
  const KernelParams kp = KernelParams::from_natural(0.15, 1.3);
  std::ostringstream out;
  write_spectrum(out, kp, 0.08, 0.04, 3.0 / (M_PI * 0.15), 101);
  const auto rows = spectrum_rows(out.str());
  ASSERT_EQ(rows.size(), 101u);
  EXPECT_EQ(out.str().rfind("# format: gpcal/1\n", 0), 0u);
  for (const auto& r : rows) {
    EXPECT_EQ(r.total, r.f + r.n);
    EXPECT_EQ(r.n, 0.08 * 0.08 * 0.04);
    EXPECT_EQ(r.f, rbf_spectral_density(r.s, kp));
  }
}

TEST(Spectrum, SignalDensityIntegratesToVariance) {
  const KernelParams kp = KernelParams::from_natural(0.2, 1.5);
  const double half = boost::math::quadrature::trapezoidal([&](double s) { return rbf_spectral_density(s, kp); }, 0.0,
                                                           20.0 / kp.length_scale());
  EXPECT_NEAR(2.0 * half, kp.signal_variance(), 1e-4);
}

TEST(Spectrum, ZeroNoiseAndBadArguments) {
  std::ostringstream out;
  write_spectrum(out, KernelParams::from_natural(0.2, 1.0), 0.0, 1.0, 1.0, 5);
  for (const auto& r : spectrum_rows(out.str())) EXPECT_EQ(r.n, 0.0);
  EXPECT_THROW(write_spectrum(out, KernelParams{}, 0.1, 0.0, 1.0, 5), InvalidArgument);
  EXPECT_THROW(write_spectrum(out, KernelParams{}, 0.1, 1.0, 1.0, 0), InvalidArgument);
}
