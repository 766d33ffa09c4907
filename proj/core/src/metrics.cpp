#include "novoseq/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <set>

#include "novoseq/errors.hpp"

namespace novoseq {

namespace {

std::vector<double> masses_of(const Peptide& p, const AminoAcidTable& table) {
  std::vector<double> m;
  m.reserve(p.size());
  for (std::size_t r : residue_indices(p, table)) m.push_back(table.mass(r));
  return m;
}

// Walks both sequences by cumulative mass. Pairs whose running ends agree
// within the prefix tolerance are aligned; an aligned pair matches when the
// residue masses agree within the residue tolerance.
template <typename Emit>
void two_cursor(const std::vector<double>& a, const std::vector<double>& b, Emit emit) {
  std::size_t i = 0, j = 0;
  double ca = 0.0, cb = 0.0;
  while (i < a.size() && j < b.size()) {
    const double ea = ca + a[i], eb = cb + b[j];
    if (std::abs(ea - eb) < kPrefixTolerance) {
      if (std::abs(a[i] - b[j]) < kResidueTolerance) emit(i, j);
      ca = ea;
      cb = eb;
      ++i;
      ++j;
    } else if (ea < eb) {
      ca = ea;
      ++i;
    } else {
      cb = eb;
      ++j;
    }
  }
}

}  // namespace

std::vector<std::pair<std::size_t, std::size_t>> aa_match_pairs(const Peptide& pred,
                                                                 const Peptide& truth,
                                                                 const AminoAcidTable& table) {
  std::vector<double> a = masses_of(pred, table), b = masses_of(truth, table);
  std::set<std::pair<std::size_t, std::size_t>> pairs;
  two_cursor(a, b, [&](std::size_t i, std::size_t j) { pairs.emplace(i, j); });
  std::reverse(a.begin(), a.end());
  std::reverse(b.begin(), b.end());
  const std::size_t na = a.size(), nb = b.size();
  two_cursor(a, b, [&](std::size_t i, std::size_t j) { pairs.emplace(na - 1 - i, nb - 1 - j); });
  return {pairs.begin(), pairs.end()};
}

MatchResult aa_match(const Peptide& pred, const Peptide& truth, const AminoAcidTable& table) {
  const auto pairs = aa_match_pairs(pred, truth, table);
  std::set<std::size_t> pi, ti;
  for (const auto& [i, j] : pairs) {
    pi.insert(i);
    ti.insert(j);
  }
  MatchResult r;
  r.matched = std::min(pi.size(), ti.size());
  r.predicted = pred.size();
  r.truth = truth.size();
  r.peptide_correct = r.matched == r.predicted && r.predicted == r.truth;
  return r;
}

EvalReport corpus_eval(std::span<const Prediction> preds,
                       const std::map<std::string, Peptide>& truths,
                       const AminoAcidTable& table) {
  std::map<std::string, const Prediction*> by_id;
  std::vector<std::string> unknown, duplicate;
  for (const Prediction& p : preds) {
    if (!truths.count(p.id)) unknown.push_back(p.id);
    else if (!by_id.emplace(p.id, &p).second) duplicate.push_back(p.id);
  }
  auto join = [](const std::vector<std::string>& ids) {
    std::string s;
    for (const auto& id : ids) s += (s.empty() ? "" : ", ") + id;
    return s;
  };
  if (!unknown.empty()) throw DataError("predictions for unknown spectrum ids: " + join(unknown));
  if (!duplicate.empty()) throw DataError("duplicate prediction ids: " + join(duplicate));

  EvalReport rep;
  for (const auto& [id, truth] : truths) {
    SpectrumScore row;
    row.id = id;
    row.truth = truth;
    const auto it = by_id.find(id);
    if (it != by_id.end()) {
      row.predicted = it->second->peptide;
      row.confidence = it->second->confidence;
    } else {
      row.has_prediction = false;
      row.confidence = -std::numeric_limits<double>::infinity();
    }
    row.match = aa_match(row.predicted, truth, table);
    rep.matched_aa += row.match.matched;
    rep.predicted_aa += row.match.predicted;
    rep.correct_peptides += row.match.peptide_correct ? 1 : 0;
    rep.rows.push_back(std::move(row));
  }
  rep.aa_precision = rep.predicted_aa ? static_cast<double>(rep.matched_aa) /
                                            static_cast<double>(rep.predicted_aa)
                                      : 0.0;
  rep.peptide_recall = rep.rows.empty() ? 0.0
                                        : static_cast<double>(rep.correct_peptides) /
                                              static_cast<double>(rep.rows.size());
  return rep;
}

std::vector<CoveragePoint> precision_coverage(const EvalReport& report) {
  std::vector<const SpectrumScore*> order;
  for (const auto& r : report.rows) order.push_back(&r);
  std::sort(order.begin(), order.end(), [](const SpectrumScore* a, const SpectrumScore* b) {
    if (a->confidence != b->confidence) return a->confidence > b->confidence;
    return a->id < b->id;
  });
  std::vector<CoveragePoint> curve;
  const double n = static_cast<double>(order.size());
  std::size_t correct = 0;
  for (std::size_t k = 1; k <= order.size(); ++k) {
    correct += order[k - 1]->match.peptide_correct ? 1 : 0;
    curve.push_back({static_cast<double>(k) / n,
                     static_cast<double>(correct) / static_cast<double>(k)});
  }
  return curve;
}

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

void write_eval_rows_csv(std::ostream& out, const EvalReport& report) {
  out << "spectrum_id,predicted_sequence,true_sequence,confidence,matched_aa,predicted_aa,"
         "truth_aa,peptide_correct\n";
  for (const auto& r : report.rows) {
    out << r.id << ',' << r.predicted.residues << ',' << r.truth.residues << ','
        << num(r.confidence) << ',' << r.match.matched << ',' << r.match.predicted << ','
        << r.match.truth << ',' << (r.match.peptide_correct ? 1 : 0) << '\n';
  }
}

void write_summary_csv(std::ostream& out, const EvalReport& report) {
  out << "aa_precision,peptide_recall\n"
      << num(report.aa_precision) << ',' << num(report.peptide_recall) << '\n';
}

void write_curve_csv(std::ostream& out, std::span<const CoveragePoint> curve) {
  out << "coverage,value\n";
  for (const auto& p : curve) out << num(p.coverage) << ',' << num(p.value) << '\n';
}

}  // namespace novoseq
