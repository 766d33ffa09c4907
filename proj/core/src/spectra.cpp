#include "novoseq/spectra.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numbers>
#include <random>
#include <sstream>

#include "novoseq/errors.hpp"

namespace novoseq {

// ---------------------------------------------------------------------------
// Amino-acid table

AminoAcidTable::AminoAcidTable(std::vector<Residue> residues)
    : residues_(std::move(residues)), by_symbol_(128, -1) {
  if (residues_.empty()) throw DataError("amino-acid table is empty");
  for (std::size_t i = 0; i < residues_.size(); ++i) {
    const Residue& r = residues_[i];
    const auto c = static_cast<unsigned char>(r.symbol);
    if (c >= 128 || !std::isupper(c))
      throw DataError(std::string("residue symbol must be an uppercase letter: ") + r.symbol);
    if (!(r.mass > 0.0) || !std::isfinite(r.mass))
      throw DataError(std::string("residue mass must be positive: ") + r.symbol);
    if (by_symbol_[c] >= 0) throw DataError(std::string("duplicate residue symbol ") + r.symbol);
    by_symbol_[c] = static_cast<std::int16_t>(i);
  }
}

const AminoAcidTable& AminoAcidTable::standard() {
  static const AminoAcidTable table({
      {'G', 57.021464},  {'A', 71.037114},  {'S', 87.032028},  {'P', 97.052764},
      {'V', 99.068414},  {'T', 101.047678}, {'C', 103.009185}, {'L', 113.084064},
      {'I', 113.084064}, {'N', 114.042927}, {'D', 115.026943}, {'Q', 128.058578},
      {'K', 128.094963}, {'E', 129.042593}, {'M', 131.040485}, {'H', 137.058912},
      {'F', 147.068414}, {'R', 156.101111}, {'Y', 163.063329}, {'W', 186.079313},
  });
  return table;
}

std::optional<std::size_t> AminoAcidTable::index_of(char symbol) const {
  const auto c = static_cast<unsigned char>(symbol);
  if (c >= 128 || by_symbol_[c] < 0) return std::nullopt;
  return static_cast<std::size_t>(by_symbol_[c]);
}

std::optional<std::size_t> AminoAcidTable::residue_of_at(std::size_t id) const {
  if (id < kAtResidueOffset || id >= at_vocab_size()) return std::nullopt;
  return id - kAtResidueOffset;
}

std::optional<std::size_t> AminoAcidTable::residue_of_nat(std::size_t id) const {
  if (id < kNatResidueOffset || id >= nat_vocab_size()) return std::nullopt;
  return id - kNatResidueOffset;
}

bool AminoAcidTable::operator==(const AminoAcidTable& other) const {
  return residues_ == other.residues_;
}

std::vector<std::size_t> residue_indices(const Peptide& p, const AminoAcidTable& table) {
  std::vector<std::size_t> out;
  out.reserve(p.size());
  for (char c : p.residues) {
    auto idx = table.index_of(c);
    if (!idx) throw DataError(std::string("residue '") + c + "' not in vocabulary");
    out.push_back(*idx);
  }
  return out;
}

Peptide peptide_from_indices(std::span<const std::size_t> residues, const AminoAcidTable& table) {
  Peptide p;
  p.residues.reserve(residues.size());
  for (std::size_t r : residues) p.residues.push_back(table.symbol(r));
  return p;
}

double residue_mass(const Peptide& p, const AminoAcidTable& table) {
  double m = 0.0;
  for (std::size_t r : residue_indices(p, table)) m += table.mass(r);
  return m;
}

// ---------------------------------------------------------------------------
// Float encoding

void FloatEncoderConfig::validate() const {
  if (d == 0 || d % 2 != 0) throw DataError("float encoder dimension must be even and positive");
  if (!(v_min > 0.0) || !(v_min < v_max)) throw DataError("float encoder needs 0 < v_min < v_max");
}

FloatEncoderConfig mz_encoder_config(std::size_t d) { return {d, 1e-3, 1e4, false}; }

FloatEncoderConfig intensity_encoder_config(std::size_t d) { return {d, 1e-4, 1.0, false}; }

void encode_float_into(double v, const FloatEncoderConfig& cfg, std::span<double> out) {
  const std::size_t d = cfg.d;
  const std::size_t half = d / 2;
  const double base = cfg.v_min / (2.0 * std::numbers::pi);
  const double c = cfg.scale();
  for (std::size_t j = 0; j < d; ++j) {
    const std::size_t k = (cfg.paired_frequencies && j >= half) ? j - half : j;
    const double denom = c * std::pow(base, 2.0 * static_cast<double>(k) / static_cast<double>(d));
    out[j] = j < half ? std::sin(v / denom) : std::cos(v / denom);
  }
}

std::vector<double> encode_float(double v, const FloatEncoderConfig& cfg) {
  std::vector<double> out(cfg.d);
  encode_float_into(v, cfg, out);
  return out;
}

std::vector<double> embed_peak(const Peak& p, double max_intensity,
                               const FloatEncoderConfig& mz_cfg,
                               const FloatEncoderConfig& int_cfg) {
  if (!(max_intensity > 0.0)) throw DataError("spectrum has zero maximum intensity");
  if (mz_cfg.d != int_cfg.d) throw ShapeError("peak encoders disagree on dimension");
  std::vector<double> out = encode_float(p.mz, mz_cfg);
  const std::vector<double> inten = encode_float(p.intensity / max_intensity, int_cfg);
  for (std::size_t j = 0; j < out.size(); ++j) out[j] += inten[j];
  return out;
}

// ---------------------------------------------------------------------------
// Fragments and simulation

std::vector<Peak> theoretical_ions(const Peptide& p, const AminoAcidTable& table) {
  const auto idx = residue_indices(p, table);
  if (idx.empty()) throw DataError("theoretical_ions: empty peptide");
  double total = 0.0;
  for (std::size_t r : idx) total += table.mass(r);
  std::vector<Peak> ions;
  ions.reserve(2 * (idx.size() - 1));
  double prefix = 0.0;
  for (std::size_t i = 0; i + 1 < idx.size(); ++i) {
    prefix += table.mass(idx[i]);
    ions.push_back({prefix + kProton, 1.0});
    ions.push_back({total - prefix + kWater + kProton, 1.0});
  }
  std::stable_sort(ions.begin(), ions.end(),
                   [](const Peak& a, const Peak& b) { return a.mz < b.mz; });
  return ions;
}

Spectrum simulate_spectrum(const Peptide& p, std::uint64_t seed, const SimulationConfig& cfg,
                           const AminoAcidTable& table) {
  if (p.empty()) throw DataError("simulate_spectrum: empty peptide");
  if (cfg.charges.empty()) throw DataError("simulate_spectrum: no charge states configured");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const double mass = residue_mass(p, table);
  Spectrum s;
  s.id = "sim-" + std::to_string(seed);
  s.truth = p;
  const int charge = cfg.charges[static_cast<std::size_t>(unit(rng) * cfg.charges.size()) %
                                 cfg.charges.size()];
  s.charge = charge;
  s.precursor_mz = (mass + kWater + charge * kProton) / charge;

  std::vector<Peak> ions = theoretical_ions(p, table);
  std::vector<Peak> kept;
  for (Peak ion : ions) {
    const bool drop = cfg.drop_probability > 0.0 && unit(rng) < cfg.drop_probability;
    if (cfg.mz_jitter > 0.0) {
      std::normal_distribution<double> jitter(0.0, cfg.mz_jitter);
      ion.mz += jitter(rng);
    }
    if (cfg.ion_intensity_min < 1.0)
      ion.intensity = cfg.ion_intensity_min + (1.0 - cfg.ion_intensity_min) * unit(rng);
    if (!drop) kept.push_back(ion);
  }
  if (kept.empty()) {
    if (!ions.empty()) {
      kept.push_back(ions[static_cast<std::size_t>(unit(rng) * ions.size()) % ions.size()]);
    } else {
      // A single residue has no cleavage sites; the precursor peak stands in.
      kept.push_back({s.precursor_mz, 1.0});
    }
  }
  const double noise_hi = std::max(mass + kWater, 100.0);
  for (std::size_t i = 0; i < cfg.noise_peaks; ++i) {
    const double mz = 50.0 + (noise_hi - 50.0) * unit(rng);
    const double inten = std::max(1e-3, cfg.noise_intensity_max * unit(rng));
    kept.push_back({mz, inten});
  }
  std::stable_sort(kept.begin(), kept.end(),
                   [](const Peak& a, const Peak& b) { return a.mz < b.mz; });
  s.peaks = std::move(kept);
  return s;
}

// ---------------------------------------------------------------------------
// MGF

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  return s;
}

bool parse_double(std::string_view s, double& out) {
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size() && std::isfinite(out);
}

bool parse_int(std::string_view s, int& out) {
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

}  // namespace

std::vector<Spectrum> parse_mgf(std::istream& in, std::vector<std::string>* warnings) {
  std::vector<Spectrum> out;
  std::string raw;
  std::size_t lineno = 0;
  bool in_block = false;
  std::size_t block_start = 0;
  Spectrum cur;
  bool have_pepmass = false, have_charge = false;

  auto warn = [&](const std::string& msg) {
    if (warnings) warnings->push_back("line " + std::to_string(lineno) + ": " + msg);
  };

  while (std::getline(in, raw)) {
    ++lineno;
    const std::string_view line = trim(raw);
    if (line.empty()) continue;
    if (line == "BEGIN IONS") {
      if (in_block) throw ParseError(lineno, "BEGIN IONS inside an open block");
      in_block = true;
      block_start = lineno;
      cur = Spectrum{};
      cur.id = std::to_string(out.size());
      have_pepmass = have_charge = false;
      continue;
    }
    if (!in_block) {
      if (line.find('=') == std::string_view::npos)
        throw ParseError(lineno, "unexpected content outside BEGIN IONS/END IONS");
      warn("ignoring global parameter " + std::string(line));
      continue;
    }
    if (line == "END IONS") {
      if (!have_pepmass) throw ParseError(lineno, "block starting at line " +
                                                      std::to_string(block_start) + " lacks PEPMASS");
      if (!have_charge) throw ParseError(lineno, "block starting at line " +
                                                     std::to_string(block_start) + " lacks CHARGE");
      if (cur.peaks.empty()) throw ParseError(lineno, "block has no peaks");
      std::stable_sort(cur.peaks.begin(), cur.peaks.end(),
                       [](const Peak& a, const Peak& b) { return a.mz < b.mz; });
      out.push_back(std::move(cur));
      in_block = false;
      continue;
    }
    const auto eq = line.find('=');
    if (eq != std::string_view::npos) {
      const std::string_view key = line.substr(0, eq);
      const std::string_view value = line.substr(eq + 1);
      if (key == "TITLE") {
        cur.id = std::string(value);
      } else if (key == "PEPMASS") {
        // Some writers append the precursor intensity after a space.
        const std::string_view first = value.substr(0, value.find(' '));
        if (!parse_double(first, cur.precursor_mz) || cur.precursor_mz <= 0.0)
          throw ParseError(lineno, "malformed PEPMASS '" + std::string(value) + "'");
        have_pepmass = true;
      } else if (key == "CHARGE") {
        std::string_view v = value;
        if (!v.empty() && v.back() == '+') v.remove_suffix(1);
        if (!parse_int(v, cur.charge) || cur.charge < 1)
          throw ParseError(lineno, "malformed CHARGE '" + std::string(value) + "'");
        have_charge = true;
      } else if (key == "SEQ") {
        if (value.empty()) throw ParseError(lineno, "empty SEQ");
        for (char c : value)
          if (c < 'A' || c > 'Z') throw ParseError(lineno, "SEQ contains '" + std::string(1, c) + "'");
        cur.truth = Peptide{std::string(value)};
      } else {
        warn("ignoring unknown key " + std::string(key));
      }
      continue;
    }
    const auto sp = line.find(' ');
    Peak pk{};
    if (sp == std::string_view::npos || !parse_double(line.substr(0, sp), pk.mz) ||
        !parse_double(line.substr(sp + 1), pk.intensity))
      throw ParseError(lineno, "malformed peak line '" + std::string(line) + "'");
    if (pk.mz <= 0.0 || pk.intensity < 0.0)
      throw ParseError(lineno, "peak needs mz > 0 and intensity >= 0");
    cur.peaks.push_back(pk);
  }
  if (in_block)
    throw ParseError(lineno, "unterminated block starting at line " + std::to_string(block_start));
  return out;
}

std::vector<Spectrum> parse_mgf(std::string_view text, std::vector<std::string>* warnings) {
  std::istringstream in{std::string(text)};
  return parse_mgf(in, warnings);
}

std::vector<Spectrum> read_mgf_file(const std::string& path, std::vector<std::string>* warnings) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  return parse_mgf(in, warnings);
}

void write_mgf(std::ostream& out, std::span<const Spectrum> spectra) {
  char buf[96];
  for (const Spectrum& s : spectra) {
    out << "BEGIN IONS\n";
    out << "TITLE=" << s.id << '\n';
    std::snprintf(buf, sizeof buf, "PEPMASS=%.6f\n", s.precursor_mz);
    out << buf;
    out << "CHARGE=" << s.charge << "+\n";
    if (s.truth) out << "SEQ=" << s.truth->residues << '\n';
    for (const Peak& p : s.peaks) {
      std::snprintf(buf, sizeof buf, "%.6f %.6f\n", p.mz, p.intensity);
      out << buf;
    }
    out << "END IONS\n";
  }
}

std::string write_mgf(std::span<const Spectrum> spectra) {
  std::ostringstream os;
  write_mgf(os, spectra);
  return os.str();
}

void write_mgf_file(const std::string& path, std::span<const Spectrum> spectra) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  write_mgf(out, spectra);
  if (!out) throw DataError("write failed for " + path);
}

}  // namespace novoseq
