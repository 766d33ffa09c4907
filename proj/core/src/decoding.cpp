#include "novoseq/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <ostream>
#include <unordered_map>

#include "novoseq/errors.hpp"

namespace novoseq {

using ad::Graph;
using ad::Tensor;
using ad::Var;

std::vector<std::size_t> ctc_collapse_ids(std::span<const std::size_t> path) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < path.size(); ++i) {
    if (i > 0 && path[i] == path[i - 1]) continue;
    if (path[i] != AminoAcidTable::kBlank) out.push_back(path[i]);
  }
  return out;
}

Peptide ctc_collapse(std::span<const std::size_t> path, const AminoAcidTable& table) {
  Peptide p;
  for (std::size_t id : ctc_collapse_ids(path)) {
    const auto r = table.residue_of_nat(id);
    if (!r) throw DataError("ctc_collapse: id " + std::to_string(id) + " outside NAT vocabulary");
    p.residues.push_back(table.symbol(*r));
  }
  return p;
}

// ---- AT search ---------------------------------------------------------------

double Hypothesis::confidence() const {
  return tokens.empty() ? 0.0 : log_prob / static_cast<double>(tokens.size());
}

namespace {

bool better(const Hypothesis& a, const Hypothesis& b) {
  if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
  return a.tokens < b.tokens;
}

void check_options(const BeamOptions& opts) {
  if (opts.width == 0) throw DataError("beam width must be >= 1");
  if (opts.candidates.empty()) throw DataError("beam search needs at least one candidate token");
}

std::vector<double> score(const StepScorer& scorer, const Hypothesis& h,
                          const BeamOptions& opts) {
  std::vector<double> lp = scorer(h.tokens);
  for (std::size_t c : opts.candidates)
    if (c >= lp.size()) throw DataError("scorer returned too few log-probabilities");
  return lp;
}

}  // namespace

std::vector<Hypothesis> beam_search(const StepScorer& scorer, const BeamOptions& opts) {
  check_options(opts);
  std::vector<Hypothesis> beams(1);
  for (std::size_t step = 0; step < opts.max_len; ++step) {
    std::vector<Hypothesis> next;
    for (const Hypothesis& h : beams) {
      if (h.finished) {
        next.push_back(h);
        continue;
      }
      const std::vector<double> lp = score(scorer, h, opts);
      for (std::size_t c : opts.candidates) {
        Hypothesis e = h;
        e.tokens.push_back(c);
        e.log_prob = h.log_prob + lp[c];
        e.finished = c == opts.eos;
        next.push_back(std::move(e));
      }
    }
    const std::size_t keep = std::min(opts.width, next.size());
    std::partial_sort(next.begin(), next.begin() + static_cast<std::ptrdiff_t>(keep), next.end(),
                      better);
    next.resize(keep);
    beams = std::move(next);
    if (std::all_of(beams.begin(), beams.end(), [](const Hypothesis& h) { return h.finished; }))
      break;
  }
  std::sort(beams.begin(), beams.end(), better);
  return beams;
}

Hypothesis greedy_search(const StepScorer& scorer, const BeamOptions& opts) {
  check_options(opts);
  Hypothesis h;
  for (std::size_t step = 0; step < opts.max_len && !h.finished; ++step) {
    const std::vector<double> lp = score(scorer, h, opts);
    std::size_t best = opts.candidates.front();
    double best_total = h.log_prob + lp[best];
    for (std::size_t c : opts.candidates) {
      const double total = h.log_prob + lp[c];
      if (total > best_total || (total == best_total && c < best)) {
        best = c;
        best_total = total;
      }
    }
    h.tokens.push_back(best);
    h.log_prob = best_total;
    h.finished = best == opts.eos;
  }
  return h;
}

AtScorer::AtScorer(Model& model, const Spectrum& spectrum)
    : model_(&model), neutral_mass_(spectrum.neutral_mass()) {
  Graph g;
  const EncoderOutput enc = model.encode_spectrum(g, spectrum, false);
  features_ = enc.features.value();
  if (model.config().cross_decoder) {
    const NatFeatures nat = model.nat_forward(g, enc, false);
    context_ = model.cross_context(g, nat, enc, true, false).value();
    has_context_ = true;
  }
}

std::vector<double> AtScorer::operator()(std::span<const std::size_t> tokens) {
  std::vector<std::size_t> input;
  input.reserve(tokens.size() + 1);
  input.push_back(AminoAcidTable::kBos);
  input.insert(input.end(), tokens.begin(), tokens.end());
  const auto masses = step_masses(input, model_->table(), neutral_mass_);
  Graph g;
  const EncoderOutput enc{g.constant(features_)};
  Var ctx;
  if (has_context_) ctx = g.constant(context_);
  const Var logits =
      model_->at_forward(g, input, masses, enc, has_context_ ? &ctx : nullptr, false);
  const Var last = ad::softmax_logprob(ad::slice_rows(logits, input.size() - 1, input.size()));
  return last.value().storage();
}

BeamOptions at_beam_options(const AminoAcidTable& table, std::size_t width, std::size_t max_len) {
  BeamOptions o;
  o.width = width;
  o.max_len = max_len;
  o.eos = AminoAcidTable::kEos;
  o.candidates.push_back(AminoAcidTable::kEos);
  for (std::size_t r = 0; r < table.size(); ++r) o.candidates.push_back(table.at_id(r));
  return o;
}

namespace {

DecodedPeptide to_decoded(const Hypothesis& h, const AminoAcidTable& table) {
  DecodedPeptide d;
  for (std::size_t id : h.tokens)
    if (const auto r = table.residue_of_at(id)) d.peptide.residues.push_back(table.symbol(*r));
  d.confidence = h.confidence();
  d.log_prob = h.log_prob;
  d.truncated = !h.finished;
  return d;
}

}  // namespace

DecodedPeptide greedy_at_decode(Model& model, const Spectrum& s, std::size_t max_len) {
  AtScorer scorer(model, s);
  return to_decoded(greedy_search(std::ref(scorer), at_beam_options(model.table(), 1, max_len)),
                    model.table());
}

std::vector<DecodedPeptide> beam_search_at(Model& model, const Spectrum& s, std::size_t width,
                                           std::size_t max_len) {
  AtScorer scorer(model, s);
  std::vector<DecodedPeptide> out;
  for (const Hypothesis& h :
       beam_search(std::ref(scorer), at_beam_options(model.table(), width, max_len)))
    out.push_back(to_decoded(h, model.table()));
  return out;
}

// ---- mass-constrained decoding -----------------------------------------------

std::int64_t discretize(double mass, double bin) { return std::llround(mass / bin); }

std::int64_t PmcConfig::lower() const {
  return std::max<std::int64_t>(0, discretize(target_mass - tolerance, bin));
}

std::int64_t PmcConfig::upper() const { return discretize(target_mass + tolerance, bin); }

void PmcConfig::validate() const {
  if (!(bin > 0.0) || !std::isfinite(bin)) throw DataError("PMC bin width must be > 0");
  if (!(tolerance >= 0.0) || !std::isfinite(tolerance) || !std::isfinite(target_mass))
    throw DataError("PMC target mass and tolerance must be finite, tolerance >= 0");
}

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void check_logprobs(std::span<const double> logprobs, std::size_t steps,
                    const AminoAcidTable& table) {
  if (logprobs.size() != steps * table.nat_vocab_size())
    throw ShapeError("pmc: log-probability table must be [steps, nat vocab]");
  for (double v : logprobs)
    if (std::isnan(v)) throw NumericError("pmc: NaN log-probability");
}

std::vector<std::int64_t> residue_bins(const AminoAcidTable& table, double bin) {
  std::vector<std::int64_t> u(table.size());
  for (std::size_t r = 0; r < table.size(); ++r) u[r] = discretize(table.mass(r), bin);
  return u;
}

// Collapsed peptides as a shared-prefix tree.
struct PeptideArena {
  struct Node {
    std::uint32_t parent;
    char symbol;
  };
  std::vector<Node> nodes{{0, '\0'}};

  std::uint32_t extend(std::uint32_t parent, char symbol) {
    nodes.push_back({parent, symbol});
    return static_cast<std::uint32_t>(nodes.size() - 1);
  }
  std::string spell(std::uint32_t n) const {
    std::string s;
    for (; n != 0; n = nodes[n].parent) s.push_back(nodes[n].symbol);
    std::reverse(s.begin(), s.end());
    return s;
  }
};

struct Cell {
  double log_prob;
  std::uint32_t node;
};

// last: 0 for "no pending residue", otherwise the NAT id of the last emitted one.
std::uint64_t pack(std::int64_t mass, std::size_t last) {
  return (static_cast<std::uint64_t>(mass) << 16) | static_cast<std::uint64_t>(last);
}
std::int64_t unpack_mass(std::uint64_t key) { return static_cast<std::int64_t>(key >> 16); }
std::size_t unpack_last(std::uint64_t key) { return static_cast<std::size_t>(key & 0xffff); }

}  // namespace

PmcResult pmc_decode(std::span<const double> logprobs, std::size_t steps, const PmcConfig& cfg,
                     const AminoAcidTable& table) {
  cfg.validate();
  check_logprobs(logprobs, steps, table);
  const std::int64_t lo = cfg.lower(), hi = cfg.upper();
  if (hi < lo) return {};
  if (table.nat_vocab_size() > 0xffff) throw DataError("pmc: vocabulary too large");
  const std::size_t V = table.nat_vocab_size();
  const std::vector<std::int64_t> u = residue_bins(table, cfg.bin);

  PeptideArena arena;
  std::unordered_map<std::uint64_t, Cell> cur, next;
  cur.emplace(pack(0, 0), Cell{0.0, 0});

  auto relax = [&](std::uint64_t key, double lp, std::uint32_t node) {
    auto [it, inserted] = next.try_emplace(key, Cell{lp, node});
    if (inserted) return;
    Cell& c = it->second;
    if (lp > c.log_prob ||
        (lp == c.log_prob && node != c.node && arena.spell(node) < arena.spell(c.node)))
      c = {lp, node};
  };

  for (std::size_t t = 0; t < steps; ++t) {
    const double* row = logprobs.data() + t * V;
    next.clear();
    next.reserve(cur.size() * 2);
    for (const auto& [key, cell] : cur) {
      const std::int64_t m = unpack_mass(key);
      const std::size_t last = unpack_last(key);
      // Blank: peptide unchanged and a following residue starts a new run.
      relax(pack(m, 0), cell.log_prob + row[AminoAcidTable::kBlank], cell.node);
      for (std::size_t y = AminoAcidTable::kNatResidueOffset; y < V; ++y) {
        const double lp = cell.log_prob + row[y];
        if (y == last) {
          relax(key, lp, cell.node);  // repeat merges into the current run
          continue;
        }
        const std::size_t r = y - AminoAcidTable::kNatResidueOffset;
        const std::int64_t m2 = m + u[r];
        if (m2 > hi) continue;
        // Only extend the arena when this candidate can win its cell.
        const std::uint64_t k2 = pack(m2, y);
        const auto it = next.find(k2);
        if (it != next.end() && lp < it->second.log_prob) continue;
        relax(k2, lp, arena.extend(cell.node, table.symbol(r)));
      }
    }
    if (cfg.max_states > 0 && next.size() > cfg.max_states) {
      std::vector<std::pair<std::uint64_t, Cell>> all(next.begin(), next.end());
      std::nth_element(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(cfg.max_states),
                       all.end(), [](const auto& a, const auto& b) {
                         if (a.second.log_prob != b.second.log_prob)
                           return a.second.log_prob > b.second.log_prob;
                         return a.first < b.first;
                       });
      all.resize(cfg.max_states);
      next = std::unordered_map<std::uint64_t, Cell>(all.begin(), all.end());
    }
    std::swap(cur, next);
  }

  PmcResult best;
  std::string best_spelling;
  for (const auto& [key, cell] : cur) {
    const std::int64_t m = unpack_mass(key);
    if (m < lo || m > hi || cell.log_prob == kNegInf) continue;
    std::string s = arena.spell(cell.node);
    if (!best.feasible || cell.log_prob > best.log_prob ||
        (cell.log_prob == best.log_prob && s < best_spelling)) {
      best.feasible = true;
      best.log_prob = cell.log_prob;
      best_spelling = std::move(s);
    }
  }
  if (best.feasible) best.peptide.residues = best_spelling;
  return best;
}

PmcResult pmc_bruteforce_oracle(std::span<const double> logprobs, std::size_t steps,
                                const PmcConfig& cfg, const AminoAcidTable& table) {
  const std::size_t V = table.nat_vocab_size();
  if (steps > kOracleMaxSteps || V > kOracleMaxVocab)
    throw DataError("pmc oracle limited to " + std::to_string(kOracleMaxSteps) + " steps and " +
                    std::to_string(kOracleMaxVocab) + " NAT tokens");
  cfg.validate();
  check_logprobs(logprobs, steps, table);
  const std::int64_t lo = cfg.lower(), hi = cfg.upper();
  const std::vector<std::int64_t> u = residue_bins(table, cfg.bin);

  PmcResult best;
  std::vector<std::size_t> path(steps, 0);
  while (true) {
    double lp = 0.0;
    for (std::size_t t = 0; t < steps; ++t) lp += logprobs[t * V + path[t]];
    const std::vector<std::size_t> ids = ctc_collapse_ids(path);
    std::int64_t m = 0;
    std::string s;
    for (std::size_t id : ids) {
      const std::size_t r = id - AminoAcidTable::kNatResidueOffset;
      m += u[r];
      s.push_back(table.symbol(r));
    }
    if (hi >= lo && m >= lo && m <= hi && lp != kNegInf &&
        (!best.feasible || lp > best.log_prob ||
         (lp == best.log_prob && s < best.peptide.residues))) {
      best.feasible = true;
      best.log_prob = lp;
      best.peptide.residues = std::move(s);
    }
    std::size_t t = 0;
    while (t < steps && ++path[t] == V) path[t++] = 0;
    if (t == steps) break;
  }
  return best;
}

// ---- per-spectrum driver and CSV ---------------------------------------------

std::string to_string(DecoderKind k) {
  switch (k) {
    case DecoderKind::AtGreedy: return "at-greedy";
    case DecoderKind::AtBeam: return "at-beam";
    case DecoderKind::NatPmc: return "nat-pmc";
  }
  return "?";
}

DecoderKind parse_decoder_kind(const std::string& s) {
  if (s == "at-greedy") return DecoderKind::AtGreedy;
  if (s == "at-beam") return DecoderKind::AtBeam;
  if (s == "nat-pmc") return DecoderKind::NatPmc;
  throw DataError("unknown decoder '" + s + "' (expected at-greedy, at-beam or nat-pmc)");
}

DecodeRow decode_spectrum(Model& model, const Spectrum& s, const DecodeOptions& opts) {
  const std::size_t max_len = opts.max_len ? opts.max_len : model.config().t_max;
  DecodeRow row;
  row.spectrum_id = s.id;
  row.decoder = opts.kind;
  switch (opts.kind) {
    case DecoderKind::AtGreedy:
    case DecoderKind::AtBeam: {
      const DecodedPeptide d = opts.kind == DecoderKind::AtGreedy
                                   ? greedy_at_decode(model, s, max_len)
                                   : beam_search_at(model, s, opts.beam, max_len).front();
      row.peptide = d.peptide;
      row.confidence = d.confidence;
      row.feasible = !d.truncated;
      return row;
    }
    case DecoderKind::NatPmc: {
      Graph g;
      const EncoderOutput enc = model.encode_spectrum(g, s, false);
      const NatFeatures nat = model.nat_forward(g, enc, false);
      const Tensor lp = ad::softmax_logprob(nat.logits).value();
      const std::size_t T = lp.rows(), V = lp.cols();
      PmcConfig pc;
      pc.bin = opts.pmc_bin;
      pc.tolerance = opts.pmc_tolerance;
      pc.target_mass = s.neutral_mass() - kWater;
      pc.max_states = opts.pmc_max_states;
      const PmcResult r = pmc_decode(lp.data(), T, pc, model.table());
      if (r.feasible) {
        row.peptide = r.peptide;
        row.confidence = r.log_prob / static_cast<double>(T);
        return row;
      }
      std::vector<std::size_t> path(T);
      double total = 0.0;
      for (std::size_t t = 0; t < T; ++t) {
        std::size_t best = 0;
        for (std::size_t v = 1; v < V; ++v)
          if (lp.at(t, v) > lp.at(t, best)) best = v;
        path[t] = best;
        total += lp.at(t, best);
      }
      row.peptide = ctc_collapse(path, model.table());
      row.confidence = total / static_cast<double>(T);
      row.feasible = false;
      return row;
    }
  }
  return row;
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q.push_back('"');
    q.push_back(c);
  }
  q.push_back('"');
  return q;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        out.back().push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        out.back().push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back();
    } else {
      out.back().push_back(c);
    }
  }
  return out;
}

}  // namespace

void write_decode_csv(std::ostream& out, std::span<const DecodeRow> rows) {
  out << "spectrum_id,predicted_sequence,confidence,decoder,feasible_flag\n";
  char buf[64];
  for (const DecodeRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%.17g", r.confidence);
    out << csv_field(r.spectrum_id) << ',' << r.peptide.residues << ',' << buf << ','
        << to_string(r.decoder) << ',' << (r.feasible ? "true" : "false") << '\n';
  }
}

std::vector<DecodeRow> read_decode_csv(std::istream& in) {
  std::vector<DecodeRow> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (lineno == 1) {
      if (line.rfind("spectrum_id,", 0) != 0) throw ParseError(lineno, "missing predictions header");
      continue;
    }
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 5) throw ParseError(lineno, "expected 5 fields");
    DecodeRow r;
    r.spectrum_id = f[0];
    r.peptide.residues = f[1];
    try {
      std::size_t used = 0;
      r.confidence = std::stod(f[2], &used);
      if (used != f[2].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ParseError(lineno, "bad confidence '" + f[2] + "'");
    }
    try {
      r.decoder = parse_decoder_kind(f[3]);
    } catch (const DataError& e) {
      throw ParseError(lineno, e.what());
    }
    if (f[4] != "true" && f[4] != "false") throw ParseError(lineno, "bad feasible_flag");
    r.feasible = f[4] == "true";
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace novoseq
