#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace novoseq {

inline constexpr double kWater = 18.010565;
inline constexpr double kProton = 1.007276;

struct Residue {
  char symbol;
  double mass;  // monoisotopic residue mass, Da
};

// Amino-acid vocabulary plus the special tokens of both decoders.
//
// Autoregressive ids:      0 PAD, 1 BOS, 2 EOS, 3.. residues in table order.
// Non-autoregressive ids:  0 blank, 1.. residues in table order.
class AminoAcidTable {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kBos = 1;
  static constexpr std::size_t kEos = 2;
  static constexpr std::size_t kAtResidueOffset = 3;
  static constexpr std::size_t kBlank = 0;
  static constexpr std::size_t kNatResidueOffset = 1;

  explicit AminoAcidTable(std::vector<Residue> residues);

  // The 20 canonical residues, unmodified.
  static const AminoAcidTable& standard();

  std::size_t size() const { return residues_.size(); }
  const std::vector<Residue>& residues() const { return residues_; }
  char symbol(std::size_t residue) const { return residues_.at(residue).symbol; }
  double mass(std::size_t residue) const { return residues_.at(residue).mass; }
  std::optional<std::size_t> index_of(char symbol) const;

  std::size_t at_vocab_size() const { return residues_.size() + kAtResidueOffset; }
  std::size_t nat_vocab_size() const { return residues_.size() + kNatResidueOffset; }
  std::size_t at_id(std::size_t residue) const { return residue + kAtResidueOffset; }
  std::size_t nat_id(std::size_t residue) const { return residue + kNatResidueOffset; }
  // Residue index for an AT/NAT id, or nullopt for special tokens.
  std::optional<std::size_t> residue_of_at(std::size_t id) const;
  std::optional<std::size_t> residue_of_nat(std::size_t id) const;

  bool operator==(const AminoAcidTable&) const;

 private:
  std::vector<Residue> residues_;
  std::vector<std::int16_t> by_symbol_;
};

inline bool operator==(const Residue& a, const Residue& b) {
  return a.symbol == b.symbol && a.mass == b.mass;
}

// Amino-acid sequence as one-letter symbols. Empty is allowed for
// predictions; ground-truth peptides are non-empty.
struct Peptide {
  std::string residues;

  std::size_t size() const { return residues.size(); }
  bool empty() const { return residues.empty(); }
  bool operator==(const Peptide&) const = default;
  auto operator<=>(const Peptide&) const = default;
};

// Residue indices for a peptide; throws DataError on a symbol outside the table.
std::vector<std::size_t> residue_indices(const Peptide& p, const AminoAcidTable& table);
Peptide peptide_from_indices(std::span<const std::size_t> residues, const AminoAcidTable& table);
// Sum of residue masses (no water).
double residue_mass(const Peptide& p, const AminoAcidTable& table);

struct Peak {
  double mz;
  double intensity;
  bool operator==(const Peak&) const = default;
};

struct Spectrum {
  std::string id;
  std::vector<Peak> peaks;  // ascending mz
  double precursor_mz = 0.0;
  int charge = 0;
  std::optional<Peptide> truth;

  // (precursor_mz − proton)·charge
  double neutral_mass() const { return (precursor_mz - kProton) * charge; }
  bool operator==(const Spectrum&) const = default;
};

// Bounds and width of the sinusoidal float encoding.
struct FloatEncoderConfig {
  std::size_t d = 64;
  double v_min = 1e-3;
  double v_max = 1e4;
  // Re-index the cosine half to reuse the sine half's frequencies.
  bool paired_frequencies = false;

  double scale() const { return v_max / v_min; }
  void validate() const;
};

FloatEncoderConfig mz_encoder_config(std::size_t d);
FloatEncoderConfig intensity_encoder_config(std::size_t d);

// Component j of the d-vector is sin(v / (C·(v_min/2π)^(2j/d))) for j < d/2
// and cos of the same argument otherwise, with C = v_max/v_min.
std::vector<double> encode_float(double v, const FloatEncoderConfig& cfg);
void encode_float_into(double v, const FloatEncoderConfig& cfg, std::span<double> out);

// encode_float(mz) + encode_float(intensity / max_intensity).
std::vector<double> embed_peak(const Peak& p, double max_intensity,
                               const FloatEncoderConfig& mz_cfg,
                               const FloatEncoderConfig& int_cfg);

// Singly charged b and y ions for every cleavage site, intensity 1, sorted by mz.
std::vector<Peak> theoretical_ions(const Peptide& p, const AminoAcidTable& table);

struct SimulationConfig {
  double mz_jitter = 0.0;       // Gaussian sigma on fragment mz, Da
  double drop_probability = 0.0;
  std::size_t noise_peaks = 0;
  // Fragment intensities are uniform in [ion_intensity_min, 1].
  double ion_intensity_min = 1.0;
  double noise_intensity_max = 0.2;
  std::vector<int> charges{2, 3};
};

// Deterministic in (peptide, seed, cfg).
Spectrum simulate_spectrum(const Peptide& p, std::uint64_t seed, const SimulationConfig& cfg,
                           const AminoAcidTable& table = AminoAcidTable::standard());

// MGF subset:
//   BEGIN IONS / TITLE= / PEPMASS= / CHARGE=<n>+ / [SEQ=] / "<mz> <intensity>" / END IONS
// Unknown KEY=VALUE lines are skipped and reported through `warnings`.
std::vector<Spectrum> parse_mgf(std::istream& in, std::vector<std::string>* warnings = nullptr);
std::vector<Spectrum> parse_mgf(std::string_view text, std::vector<std::string>* warnings = nullptr);
std::vector<Spectrum> read_mgf_file(const std::string& path,
                                    std::vector<std::string>* warnings = nullptr);

void write_mgf(std::ostream& out, std::span<const Spectrum> spectra);
std::string write_mgf(std::span<const Spectrum> spectra);
void write_mgf_file(const std::string& path, std::span<const Spectrum> spectra);

}  // namespace novoseq
