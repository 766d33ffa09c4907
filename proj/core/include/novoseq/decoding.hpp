#pragma once

// Inference: CTC collapse, greedy and beam AT decoding, and mass-constrained
// decoding of NAT output with its exhaustive reference.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "novoseq/autodiff.hpp"
#include "novoseq/network.hpp"
#include "novoseq/spectra.hpp"

namespace novoseq {

// Merge runs of equal ids, then drop blanks. Ids are NAT ids.
std::vector<std::size_t> ctc_collapse_ids(std::span<const std::size_t> path);
Peptide ctc_collapse(std::span<const std::size_t> path, const AminoAcidTable& table);

// Log-probabilities over the whole vocabulary for the next token after
// `tokens` (generated tokens only, no BOS).
using StepScorer = std::function<std::vector<double>(std::span<const std::size_t> tokens)>;

struct BeamOptions {
  std::size_t width = 5;
  std::size_t max_len = 24;            // generated tokens, EOS included
  std::size_t eos = AminoAcidTable::kEos;
  std::vector<std::size_t> candidates;  // ids that may be emitted
};

struct Hypothesis {
  std::vector<std::size_t> tokens;  // generated ids; ends with eos when finished
  double log_prob = 0.0;            // total
  bool finished = false;

  // Mean log-probability per emitted token (EOS included); 0 when empty.
  double confidence() const;
};

// Hypotheses are ranked by total log-probability; equal totals fall back to
// the smaller token sequence. Unfinished hypotheses still alive at max_len
// are returned with finished = false.
std::vector<Hypothesis> beam_search(const StepScorer& scorer, const BeamOptions& opts);
// Argmax per step, lowest id on ties.
Hypothesis greedy_search(const StepScorer& scorer, const BeamOptions& opts);

// Wraps a model and one spectrum. The encoder (and, with cross_decoder on,
// the augmented context) is evaluated once; each call re-runs the AT decoder
// over the full prefix.
class AtScorer {
 public:
  AtScorer(Model& model, const Spectrum& spectrum);
  std::vector<double> operator()(std::span<const std::size_t> tokens);

 private:
  Model* model_;
  double neutral_mass_;
  ad::Tensor features_;
  ad::Tensor context_;
  bool has_context_ = false;
};

// Residue ids plus EOS.
BeamOptions at_beam_options(const AminoAcidTable& table, std::size_t width, std::size_t max_len);

struct DecodedPeptide {
  Peptide peptide;
  double confidence = 0.0;
  double log_prob = 0.0;
  bool truncated = false;  // max_len reached without EOS
};

DecodedPeptide greedy_at_decode(Model& model, const Spectrum& s, std::size_t max_len);
std::vector<DecodedPeptide> beam_search_at(Model& model, const Spectrum& s, std::size_t width,
                                           std::size_t max_len);

struct PmcConfig {
  double bin = 0.001;          // Da per discrete mass unit
  double target_mass = 0.0;    // summed residue mass to hit, Da
  double tolerance = 0.1;      // Da
  // 0 keeps every state. Otherwise the highest-scoring states per step are
  // kept, which makes the search approximate.
  std::size_t max_states = 0;

  std::int64_t lower() const;
  std::int64_t upper() const;
  void validate() const;
};

std::int64_t discretize(double mass, double bin);

struct PmcResult {
  Peptide peptide;
  double log_prob = 0.0;
  bool feasible = false;
};

// Best single path (Viterbi) whose collapse has discretized mass inside the
// window. Equal scores prefer the lexicographically smaller peptide.
// logprobs: row-major [steps, nat vocab].
PmcResult pmc_decode(std::span<const double> logprobs, std::size_t steps, const PmcConfig& cfg,
                     const AminoAcidTable& table);

inline constexpr std::size_t kOracleMaxSteps = 8;
inline constexpr std::size_t kOracleMaxVocab = 5;

// Enumerates every path. Same contract as pmc_decode.
PmcResult pmc_bruteforce_oracle(std::span<const double> logprobs, std::size_t steps,
                                const PmcConfig& cfg, const AminoAcidTable& table);

enum class DecoderKind { AtGreedy, AtBeam, NatPmc };

std::string to_string(DecoderKind k);
DecoderKind parse_decoder_kind(const std::string& s);

struct DecodeOptions {
  DecoderKind kind = DecoderKind::AtBeam;
  std::size_t beam = 5;
  std::size_t max_len = 0;  // 0: model t_max
  double pmc_tolerance = 0.1;
  double pmc_bin = 0.001;
  std::size_t pmc_max_states = 0;
};

struct DecodeRow {
  std::string spectrum_id;
  Peptide peptide;
  double confidence = 0.0;
  DecoderKind decoder = DecoderKind::AtBeam;
  bool feasible = true;
};

// For nat-pmc the confidence is the path log-probability divided by t_max;
// an infeasible window falls back to collapsing the per-step argmax path.
DecodeRow decode_spectrum(Model& model, const Spectrum& s, const DecodeOptions& opts);

void write_decode_csv(std::ostream& out, std::span<const DecodeRow> rows);
std::vector<DecodeRow> read_decode_csv(std::istream& in);

}  // namespace novoseq
