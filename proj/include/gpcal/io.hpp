#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "gpcal/error.hpp"
#include "gpcal/mcmc.hpp"
#include "gpcal/model.hpp"
#include "gpcal/posterior.hpp"

namespace gpcal {

inline constexpr const char* kFormatTag = "gpcal/1";
inline constexpr const char* kProfileHeader = "channel_id,position,profile_id,value,mask";

class ParseError : public Error {
 public:
  using Error::Error;
};

/// 17 significant digits; enough to round-trip any double.
[[nodiscard]] inline std::string format_number(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline bool parse_double(std::string_view s, double& out) {
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

inline std::string where(const std::string& source, std::size_t line) {
  return source + ":" + std::to_string(line) + ": ";
}

}  // namespace detail

/// Parses the long-format profile CSV. Lines starting with '#' are comments.
/// Channels are ordered by position and profiles by first appearance; cells
/// absent from the file are masked out. Throws ParseError naming the line, or
/// listing every validation failure.
[[nodiscard]] inline ProfileSet parse_profiles(std::istream& in, const std::string& source = "<input>") {
  struct Row {
    double position;
    double value;
    bool mask;
  };
  std::vector<std::string> channel_order, profile_order;
  std::map<std::string, double> channel_pos;
  std::map<std::string, std::size_t> channel_line;
  std::map<std::string, Index> profile_index;
  std::map<std::pair<std::string, std::string>, Row> rows;

  std::string raw;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = detail::trim(raw);
    if (line_no == 1 && line.substr(0, 3) == "\xEF\xBB\xBF") line.remove_prefix(3);
    if (line.empty() || line.front() == '#') continue;
    if (!header_seen) {
      if (line != kProfileHeader) {
        throw ParseError(detail::where(source, line_no) + "expected header '" + kProfileHeader + "'");
      }
      header_seen = true;
      continue;
    }
    const auto f = detail::split_csv(line);
    if (f.size() != 5) {
      throw ParseError(detail::where(source, line_no) + "expected 5 fields, found " + std::to_string(f.size()));
    }
    if (f[0].empty() || f[2].empty()) throw ParseError(detail::where(source, line_no) + "empty channel_id or profile_id");
    Row row{};
    if (!detail::parse_double(f[1], row.position)) {
      throw ParseError(detail::where(source, line_no) + "bad position '" + std::string(f[1]) + "'");
    }
    if (!detail::parse_double(f[3], row.value)) {
      throw ParseError(detail::where(source, line_no) + "bad value '" + std::string(f[3]) + "'");
    }
    if (f[4] == "1") {
      row.mask = true;
    } else if (f[4] == "0") {
      row.mask = false;
    } else {
      throw ParseError(detail::where(source, line_no) + "mask must be 0 or 1");
    }
    const std::string ch(f[0]), pr(f[2]);
    const auto known = channel_pos.find(ch);
    if (known == channel_pos.end()) {
      channel_pos.emplace(ch, row.position);
      channel_line.emplace(ch, line_no);
      channel_order.push_back(ch);
    } else if (known->second != row.position) {
      throw ParseError(detail::where(source, line_no) + "channel " + ch + " position disagrees with line " +
                       std::to_string(channel_line[ch]));
    }
    if (profile_index.emplace(pr, static_cast<Index>(profile_order.size())).second) profile_order.push_back(pr);
    if (!rows.emplace(std::make_pair(ch, pr), row).second) {
      throw ParseError(detail::where(source, line_no) + "duplicate row for channel " + ch + ", profile " + pr);
    }
  }
  if (!header_seen) throw ParseError(source + ": missing header");

  std::stable_sort(channel_order.begin(), channel_order.end(),
                   [&](const std::string& a, const std::string& b) { return channel_pos[a] < channel_pos[b]; });
  const auto n = static_cast<Index>(channel_order.size());
  const auto m = static_cast<Index>(profile_order.size());
  ProfileSet ps;
  ps.positions.resize(n);
  ps.data = MatrixXd::Constant(n, m, std::numeric_limits<double>::quiet_NaN());
  ps.mask = BoolMatrix::Constant(n, m, false);
  ps.channel_ids = channel_order;
  ps.profile_ids = profile_order;
  for (Index i = 0; i < n; ++i) {
    ps.positions(i) = channel_pos[channel_order[static_cast<std::size_t>(i)]];
    for (Index j = 0; j < m; ++j) {
      const auto it = rows.find({channel_order[static_cast<std::size_t>(i)], profile_order[static_cast<std::size_t>(j)]});
      if (it == rows.end()) continue;
      ps.data(i, j) = it->second.value;
      ps.mask(i, j) = it->second.mask;
    }
  }
  const ValidationReport report = validate(ps);
  if (!report.empty()) {
    std::string msg = source + ": invalid profile set:";
    for (const auto& v : report) msg += "\n  " + describe(v);
    throw ParseError(msg);
  }
  return ps;
}

[[nodiscard]] inline ProfileSet read_profiles(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  return parse_profiles(in, path);
}

/// Emits every cell (masked-out ones included) in profile-major order.
inline void write_profiles(std::ostream& out, const ProfileSet& ps, const std::vector<std::string>& comments = {}) {
  out << "# format: " << kFormatTag << '\n';
  for (const auto& c : comments) out << "# " << c << '\n';
  out << kProfileHeader << '\n';
  for (Index j = 0; j < ps.profiles(); ++j) {
    for (Index i = 0; i < ps.channels(); ++i) {
      out << ps.channel_ids[static_cast<std::size_t>(i)] << ',' << format_number(ps.positions(i)) << ','
          << ps.profile_ids[static_cast<std::size_t>(j)] << ',' << format_number(ps.data(i, j)) << ','
          << (ps.mask(i, j) ? '1' : '0') << '\n';
    }
  }
}

/// Long-format band file: one row per grid point and profile.
inline void write_band(std::ostream& out, const PosteriorSummary& summary, int order,
                       const std::vector<std::string>& profile_ids) {
  const Band& band = summary.bands.at(order);
  out << "# format: " << kFormatTag << '\n';
  out << "# derivative_order: " << order << '\n';
  out << "position,profile_id,median,lower95,upper95\n";
  for (Index j = 0; j < band.median.cols(); ++j) {
    for (Index g = 0; g < summary.grid.size(); ++g) {
      out << format_number(summary.grid(g)) << ',' << profile_ids[static_cast<std::size_t>(j)] << ','
          << format_number(band.median(g, j)) << ',' << format_number(band.lower95(g, j)) << ','
          << format_number(band.upper95(g, j)) << '\n';
    }
  }
}

/// Retained log-gain draws, one row per draw, chain-major.
inline void write_chain(std::ostream& out, const McmcChain& chain, const std::vector<std::string>& channel_ids) {
  out << "# format: " << kFormatTag << '\n';
  out << "# chains: " << chain.n_chains << '\n';
  out << "# acceptance_rate: " << format_number(chain.acceptance_rate) << '\n';
  out << "chain,draw";
  for (const auto& id : channel_ids) out << ",log_a_" << id;
  out << '\n';
  const Index per_chain = chain.n_chains > 0 ? chain.draws() / chain.n_chains : 0;
  for (Index r = 0; r < chain.draws(); ++r) {
    out << r / per_chain << ',' << r % per_chain;
    for (Index p = 0; p < chain.samples.cols(); ++p) out << ',' << format_number(chain.samples(r, p));
    out << '\n';
  }
}

/// Reads a file written by write_chain. Diagnostics are not stored; callers
/// that need them recompute with diagnose_draws.
[[nodiscard]] inline McmcChain parse_chain(std::istream& in, const std::string& source = "<chain>") {
  McmcChain chain;
  std::string raw;
  std::size_t line_no = 0;
  Index columns = -1;
  std::vector<std::vector<double>> rows;
  int max_chain = -1;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = detail::trim(raw);
    if (line.empty()) continue;
    if (line.front() == '#') {
      constexpr std::string_view key = "# acceptance_rate: ";
      if (line.substr(0, key.size()) == key) detail::parse_double(line.substr(key.size()), chain.acceptance_rate);
      continue;
    }
    const auto f = detail::split_csv(line);
    if (columns < 0) {
      if (f.size() < 3 || f[0] != "chain" || f[1] != "draw") throw ParseError(detail::where(source, line_no) + "bad chain header");
      columns = static_cast<Index>(f.size()) - 2;
      continue;
    }
    if (static_cast<Index>(f.size()) != columns + 2) throw ParseError(detail::where(source, line_no) + "wrong field count");
    double c = 0.0;
    if (!detail::parse_double(f[0], c) || c < 0 || c != std::floor(c)) {
      throw ParseError(detail::where(source, line_no) + "bad chain index");
    }
    max_chain = std::max(max_chain, static_cast<int>(c));
    std::vector<double> row(static_cast<std::size_t>(columns));
    for (Index p = 0; p < columns; ++p) {
      if (!detail::parse_double(f[static_cast<std::size_t>(p) + 2], row[static_cast<std::size_t>(p)])) {
        throw ParseError(detail::where(source, line_no) + "bad draw value");
      }
    }
    rows.push_back(std::move(row));
  }
  if (columns < 0 || rows.empty()) throw ParseError(source + ": no draws");
  chain.n_chains = max_chain + 1;
  chain.samples.resize(static_cast<Index>(rows.size()), columns);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (Index p = 0; p < columns; ++p) chain.samples(static_cast<Index>(r), p) = rows[r][static_cast<std::size_t>(p)];
  }
  return chain;
}

[[nodiscard]] inline McmcChain read_chain(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  return parse_chain(in, path);
}

/// 64-bit FNV-1a of a file's bytes, recorded in manifests.
[[nodiscard]] inline std::string file_digest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char c;
  while (in.get(c)) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace gpcal
