#pragma once
// File formats: CSV readers and writers for every stage, atomic writes, checksums.

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "jjtls/bayes.hpp"
#include "jjtls/detector.hpp"

namespace jjtls::io {

namespace fs = std::filesystem;

/// FNV-1a, 64 bit, as 16 hex digits.
inline std::string fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Writes through a sibling temporary and renames it into place.
inline void write_atomic(const fs::path& p, std::string_view content) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw ValidationError("write failed: " + tmp.string());
  }
  fs::rename(tmp, p);
}

/// Shortest text that reads back to the same double.
inline std::string num(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

struct CsvRow {
  std::vector<std::string> cells;
  int line = 0;
};

/// Header-checked CSV with per-row locations for error reports.
class CsvTable {
 public:
  static CsvTable parse(std::string_view text, const std::string& origin,
                        const std::vector<std::string>& header) {
    CsvTable t;
    t.origin_ = origin;
    std::size_t pos = 0;
    int line = 0;
    bool saw_header = false;
    while (pos <= text.size()) {
      auto nl = text.find('\n', pos);
      if (nl == std::string_view::npos) nl = text.size();
      std::string raw(text.substr(pos, nl - pos));
      pos = nl + 1;
      ++line;
      if (!raw.empty() && raw.back() == '\r') raw.pop_back();
      if (raw.empty()) continue;
      auto cells = split(raw);
      if (!saw_header) {
        saw_header = true;
        for (std::size_t i = 0; i < header.size(); ++i)
          if (i >= cells.size() || cells[i] != header[i])
            throw ValidationError(origin + ":" + std::to_string(line) + ": expected column `" +
                                  header[i] + "` at position " + std::to_string(i + 1));
        if (cells.size() != header.size())
          throw ValidationError(origin + ":" + std::to_string(line) + ": unexpected column `" +
                                cells[header.size()] + "`");
        continue;
      }
      if (cells.size() != header.size())
        throw ValidationError(origin + ":" + std::to_string(line) + ": expected " +
                              std::to_string(header.size()) + " fields, got " +
                              std::to_string(cells.size()));
      t.rows_.push_back({std::move(cells), line});
    }
    if (!saw_header) throw ValidationError(origin + ": empty file, missing header");
    return t;
  }

  static CsvTable load(const fs::path& p, const std::vector<std::string>& header) {
    return parse(read_file(p), p.string(), header);
  }

  const std::vector<CsvRow>& rows() const { return rows_; }

  double number(const CsvRow& r, std::size_t col) const {
    const auto& s = r.cells[col];
    double v = 0;
    auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || end != s.data() + s.size() || !std::isfinite(v))
      throw ValidationError(origin_ + ":" + std::to_string(r.line) + ": column " +
                            std::to_string(col + 1) + " expects a finite number, got `" + s + "`");
    return v;
  }

  [[noreturn]] void fail(const CsvRow& r, const std::string& what) const {
    throw ValidationError(origin_ + ":" + std::to_string(r.line) + ": " + what);
  }

  const std::string& origin() const { return origin_; }

 private:
  static std::vector<std::string> split(const std::string& s) {
    std::vector<std::string> out;
    std::size_t b = 0;
    while (true) {
      auto c = s.find(',', b);
      auto cell = s.substr(b, c == std::string::npos ? std::string::npos : c - b);
      const auto l = cell.find_first_not_of(" \t"), r = cell.find_last_not_of(" \t");
      out.push_back(l == std::string::npos ? std::string() : cell.substr(l, r - l + 1));
      if (c == std::string::npos) break;
      b = c + 1;
    }
    return out;
  }

  std::string origin_;
  std::vector<CsvRow> rows_;
};

// ------------------------------------------------------------------ traces

inline const std::vector<std::string> kTraceHeader{"current_mA", "freq_GHz", "re_s21", "im_s21"};

inline std::string format_trace(const Trace& t) {
  std::string s = "current_mA,freq_GHz,re_s21,im_s21\n";
  for (std::size_t i = 0; i < t.size(); ++i)
    s += num(t.bias_current) + "," + num(t.freqs[i]) + "," + num(t.s21[i].real()) + "," +
         num(t.s21[i].imag()) + "\n";
  return s;
}

/// One trace per file; every row must carry the same bias current.
inline Trace parse_trace(std::string_view text, const std::string& origin) {
  const auto tab = CsvTable::parse(text, origin, kTraceHeader);
  Trace t;
  bool first = true;
  for (const auto& r : tab.rows()) {
    const double bias = tab.number(r, 0);
    if (first) t.bias_current = bias;
    else if (bias != t.bias_current) tab.fail(r, "bias current differs within one trace");
    const double f = tab.number(r, 1);
    if (!first && !(f > t.freqs.back())) tab.fail(r, "frequencies must be strictly increasing");
    t.freqs.push_back(f);
    t.s21.emplace_back(tab.number(r, 2), tab.number(r, 3));
    first = false;
  }
  if (t.size() < 16) throw ValidationError(origin + ": a trace needs at least 16 rows");
  return t;
}

inline Trace load_trace(const fs::path& p) { return parse_trace(read_file(p), p.string()); }

// -------------------------------------------------------------------- fits

inline std::string format_fits(const SweepDataset& s) {
  std::string out = "current_mA,f0_GHz,Ql,Qe,theta,residual_metric,converged\n";
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto& f = s.fits[i];
    out += num(s.traces[i].bias_current) + "," + num(f.params.f_r) + "," + num(f.params.Q_l) + "," +
           num(f.params.Q_e_mag) + "," + num(f.params.theta) + "," + num(f.residual_metric) + "," +
           (f.converged ? "1" : "0") + "\n";
  }
  return out;
}

// ---------------------------------------------------------- detector output

inline std::string format_residual_series(const ResidualSeries& s) {
  std::string out = "shift_kappa,residual\n";
  for (std::size_t i = 0; i < s.size(); ++i) out += num(s.shift[i]) + "," + num(s.residual[i]) + "\n";
  return out;
}

inline std::string format_events(const std::vector<DetectionEvent>& ev) {
  std::string out = "shift_kappa,freq_GHz,peak_residual\n";
  for (const auto& e : ev)
    out += num(e.shift_position) + "," + num(e.frequency) + "," + num(e.peak_residual) + "\n";
  return out;
}

inline std::vector<DetectionEvent> parse_events(std::string_view text, const std::string& origin) {
  const auto tab = CsvTable::parse(text, origin, {"shift_kappa", "freq_GHz", "peak_residual"});
  std::vector<DetectionEvent> ev;
  for (const auto& r : tab.rows())
    ev.push_back({tab.number(r, 0), tab.number(r, 2), 0.0, tab.number(r, 1)});
  return ev;
}

// --------------------------------------------------------------- inference

inline std::string format_posterior(const PosteriorDensity& p) {
  std::string out = "n_t,prob\n";
  for (std::size_t k = 0; k < p.pmf.size(); ++k) out += std::to_string(k) + "," + num(p.pmf[k]) + "\n";
  return out;
}

// --------------------------------------------------------------- densities

struct DensityRow {
  std::string treatment;
  std::string resonator_id;
  double rho = 0, ci_lo = 0, ci_hi = 0;
};

inline const std::vector<std::string> kDensityHeader{"treatment", "resonator_id", "rho", "ci_lo", "ci_hi"};

inline std::vector<DensityRow> parse_densities(std::string_view text, const std::string& origin) {
  const auto tab = CsvTable::parse(text, origin, kDensityHeader);
  std::vector<DensityRow> out;
  for (const auto& r : tab.rows()) {
    DensityRow d{r.cells[0], r.cells[1], tab.number(r, 2), tab.number(r, 3), tab.number(r, 4)};
    if (d.treatment.empty()) tab.fail(r, "empty treatment label");
    if (d.rho < 0) tab.fail(r, "rho must be >= 0");
    if (!(d.ci_lo <= d.rho && d.rho <= d.ci_hi)) tab.fail(r, "expected ci_lo <= rho <= ci_hi");
    out.push_back(std::move(d));
  }
  return out;
}

inline std::string format_densities(const std::vector<DensityRow>& rows) {
  std::string out = "treatment,resonator_id,rho,ci_lo,ci_hi\n";
  for (const auto& d : rows)
    out += d.treatment + "," + d.resonator_id + "," + num(d.rho) + "," + num(d.ci_lo) + "," +
           num(d.ci_hi) + "\n";
  return out;
}

// -------------------------------------------------------------- morphology

inline const std::vector<std::string> kMorphologyHeader{
    "device",
    "electrode_thickness_mean", "electrode_thickness_std", "electrode_thickness_rms",
    "grain_width_mean",         "grain_width_std",         "junction_thickness_mean",
    "junction_thickness_std",   "junction_thickness_rms",  "tls_density"};

struct MorphologyTable {
  std::vector<std::string> devices;
  std::vector<std::string> features;  // metric column names
  Eigen::MatrixXd X;                  // devices x metrics, nm
  Eigen::VectorXd density;            // /GHz/um^2
};

inline MorphologyTable parse_morphology(std::string_view text, const std::string& origin) {
  const auto tab = CsvTable::parse(text, origin, kMorphologyHeader);
  MorphologyTable m;
  m.features.assign(kMorphologyHeader.begin() + 1, kMorphologyHeader.end() - 1);
  const auto n = static_cast<Eigen::Index>(tab.rows().size());
  const auto p = static_cast<Eigen::Index>(m.features.size());
  m.X.resize(n, p);
  m.density.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = tab.rows()[static_cast<std::size_t>(i)];
    m.devices.push_back(r.cells[0]);
    for (Eigen::Index j = 0; j < p; ++j) {
      const double v = tab.number(r, static_cast<std::size_t>(j) + 1);
      if (!(v > 0)) tab.fail(r, "`" + m.features[j] + "` must be positive");
      m.X(i, j) = v;
    }
    m.density(i) = tab.number(r, static_cast<std::size_t>(p) + 1);
    if (m.density(i) < 0) tab.fail(r, "tls_density must be >= 0");
  }
  return m;
}

}  // namespace jjtls::io
