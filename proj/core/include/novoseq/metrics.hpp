#pragma once

// Amino-acid and peptide level scoring with mass tolerances, corpus reports
// and precision-coverage curves.

#include <cstddef>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "novoseq/spectra.hpp"

namespace novoseq {

inline constexpr double kResidueTolerance = 0.1;  // Da, per aligned residue pair
inline constexpr double kPrefixTolerance = 0.5;   // Da, cumulative prefix or suffix

struct MatchResult {
  std::size_t matched = 0;    // M_AA
  std::size_t predicted = 0;  // residues in the prediction
  std::size_t truth = 0;      // residues in the ground truth
  bool peptide_correct = false;
  bool operator==(const MatchResult&) const = default;
};

// Index pairs (prediction, truth) aligned and mass-matched by the prefix
// pass and the suffix pass, merged.
std::vector<std::pair<std::size_t, std::size_t>> aa_match_pairs(const Peptide& pred,
                                                                 const Peptide& truth,
                                                                 const AminoAcidTable& table);

// matched = min(#distinct prediction indices, #distinct truth indices) over
// aa_match_pairs.
MatchResult aa_match(const Peptide& pred, const Peptide& truth, const AminoAcidTable& table);

struct Prediction {
  std::string id;
  Peptide peptide;
  double confidence = 0.0;
};

struct SpectrumScore {
  std::string id;
  Peptide predicted;
  Peptide truth;
  double confidence = 0.0;
  MatchResult match;
  bool has_prediction = true;
};

struct EvalReport {
  double aa_precision = 0.0;    // ΣM_AA / Σ predicted residues
  double peptide_recall = 0.0;  // correct peptides / evaluated spectra
  std::size_t matched_aa = 0;
  std::size_t predicted_aa = 0;
  std::size_t correct_peptides = 0;
  std::vector<SpectrumScore> rows;  // sorted by id
};

// Every truth is evaluated; a missing prediction scores as an empty peptide
// with confidence −inf. Unknown or duplicate prediction ids throw DataError.
EvalReport corpus_eval(std::span<const Prediction> preds,
                       const std::map<std::string, Peptide>& truths,
                       const AminoAcidTable& table);

struct CoveragePoint {
  double coverage;
  double value;
};

// Rows by descending confidence (ties by id); point k is (k/N, correct in top k / k).
std::vector<CoveragePoint> precision_coverage(const EvalReport& report);

void write_eval_rows_csv(std::ostream& out, const EvalReport& report);
void write_summary_csv(std::ostream& out, const EvalReport& report);
void write_curve_csv(std::ostream& out, std::span<const CoveragePoint> curve);

}  // namespace novoseq
