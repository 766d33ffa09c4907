#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <random>
#include <sstream>

#include "novoseq/decoding.hpp"
#include "novoseq/errors.hpp"
#include "oracles.hpp"

using namespace novoseq;

namespace {

// NAT ids for a string over the standard table, with '_' as blank.
std::vector<std::size_t> nat_path(const std::string& s) {
  const auto& t = AminoAcidTable::standard();
  std::vector<std::size_t> out;
  for (char c : s) out.push_back(c == '_' ? AminoAcidTable::kBlank : t.nat_id(*t.index_of(c)));
  return out;
}

// Toy scorer over ids {0, 1, 2} with eos = 0: a fixed random distribution
// per prefix.
struct ToyScorer {
  std::uint64_t seed;
  std::vector<double> operator()(std::span<const std::size_t> prefix) const {
    std::uint64_t h = seed;
    for (std::size_t x : prefix) h = h * 1000003 + x + 1;
    std::mt19937_64 rng(h);
    return oracle::random_logprobs(rng, 1, 3, 3.0);
  }
};

// Best total log-probability over every sequence the beam can produce:
// ends at eos, or runs to max_len without it.
double exhaustive_best(const ToyScorer& f, std::size_t max_len, std::vector<std::size_t>& best_seq) {
  double best = -INFINITY;
  std::function<void(std::vector<std::size_t>&, double)> walk = [&](std::vector<std::size_t>& p, double lp) {
    if ((!p.empty() && p.back() == 0) || p.size() == max_len) {
      if (lp > best) {
        best = lp;
        best_seq = p;
      }
      return;
    }
    const auto next = f(p);
    for (std::size_t c = 0; c < 3; ++c) {
      p.push_back(c);
      walk(p, lp + next[c]);
      p.pop_back();
    }
  };
  std::vector<std::size_t> p;
  walk(p, 0.0);
  return best;
}

BeamOptions toy_options(std::size_t width) {
  BeamOptions o;
  o.width = width;
  o.max_len = 3;
  o.eos = 0;
  o.candidates = {0, 1, 2};
  return o;
}

AminoAcidTable ga_table() { return AminoAcidTable({{'G', 57.021464}, {'A', 71.037114}}); }

}  // namespace

TEST(CtcCollapse, MergesRepeatsThenDropsBlanks) {
  const auto& t = AminoAcidTable::standard();
  EXPECT_EQ(ctc_collapse(nat_path("AAT_TG"), t).residues, "ATTG");
  EXPECT_EQ(ctc_collapse(nat_path("___"), t).residues, "");
  EXPECT_EQ(ctc_collapse(nat_path("A_A"), t).residues, "AA");
}

TEST(CtcCollapse, IdempotentOnCleanSequences) {
  const auto p = nat_path("PEPTIDE");
  EXPECT_EQ(ctc_collapse_ids(p), p);
  EXPECT_EQ(ctc_collapse_ids(ctc_collapse_ids(p)), p);
}

TEST(Beam, WidthOneEqualsGreedy) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const ToyScorer f{seed};
    const auto g = greedy_search(f, toy_options(1));
    const auto b = beam_search(f, toy_options(1));
    ASSERT_EQ(b.size(), 1u);
    EXPECT_EQ(g.tokens, b[0].tokens);
    EXPECT_EQ(g.log_prob, b[0].log_prob);
    EXPECT_EQ(g.confidence(), b[0].confidence());
  }
}

TEST(Beam, FullWidthEqualsExhaustiveSearch) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const ToyScorer f{seed};
    std::vector<std::size_t> want;
    const double best = exhaustive_best(f, 3, want);
    const auto b = beam_search(f, toy_options(27));
    EXPECT_DOUBLE_EQ(b[0].log_prob, best);
    EXPECT_EQ(b[0].tokens, want);
  }
}

TEST(Beam, WiderIsNeverWorse) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const ToyScorer f{seed};
    EXPECT_GE(beam_search(f, toy_options(5))[0].log_prob, beam_search(f, toy_options(1))[0].log_prob);
  }
}

TEST(Beam, TruncationFlagged) {
  const ToyScorer f{1};
  BeamOptions o = toy_options(2);
  o.candidates = {1, 2};  // eos never offered
  for (const auto& h : beam_search(f, o)) {
    EXPECT_FALSE(h.finished);
    EXPECT_EQ(h.tokens.size(), 3u);
  }
}

TEST(Pmc, GlycineAlanineWindow) {
  const AminoAcidTable t = ga_table();
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const auto lp = oracle::random_logprobs(rng, 3, 3);
    PmcConfig cfg;
    cfg.bin = 1.0;  // G → 57, A → 71
    cfg.target_mass = 128.0;
    cfg.tolerance = 0.0;
    const auto r = pmc_decode(lp, 3, cfg, t);
    ASSERT_TRUE(r.feasible);
    EXPECT_TRUE(r.peptide.residues == "GA" || r.peptide.residues == "AG") << r.peptide.residues;
    // Independent enumeration of all 27 paths.
    double best = -INFINITY;
    std::string best_pep;
    oracle::for_each_path(3, 3, [&](const std::vector<std::size_t>& p) {
      const auto ids = oracle::collapse(p);
      long m = 0;
      std::string s;
      for (auto id : ids) {
        m += id == 1 ? 57 : 71;
        s += id == 1 ? 'G' : 'A';
      }
      if (m != 128) return;
      const double v = lp[p[0]] + lp[3 + p[1]] + lp[6 + p[2]];
      if (v > best || (v == best && s < best_pep)) {
        best = v;
        best_pep = s;
      }
    });
    EXPECT_EQ(r.peptide.residues, best_pep);
    EXPECT_NEAR(r.log_prob, best, 1e-12);
  }
}

TEST(Pmc, ZeroWindowGivesAllBlankPath) {
  const AminoAcidTable t = ga_table();
  std::mt19937_64 rng(3);
  const auto lp = oracle::random_logprobs(rng, 4, 3);
  PmcConfig cfg;
  cfg.bin = 1.0;
  cfg.target_mass = 0.0;
  cfg.tolerance = 0.0;
  const auto r = pmc_decode(lp, 4, cfg, t);
  ASSERT_TRUE(r.feasible);
  EXPECT_EQ(r.peptide.residues, "");
  EXPECT_NEAR(r.log_prob, lp[0] + lp[3] + lp[6] + lp[9], 1e-12);
}

TEST(Pmc, OpenWindowEqualsBestUnconstrainedPath) {
  const AminoAcidTable t = ga_table();
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t T = 4;
    const auto lp = oracle::random_logprobs(rng, T, 3);
    PmcConfig cfg;
    cfg.bin = 1.0;
    cfg.target_mass = 71.0 * T / 2;
    cfg.tolerance = 71.0 * T / 2;  // [0, 71·T] holds every path
    std::vector<std::size_t> argmax(T);
    double total = 0;
    for (std::size_t s = 0; s < T; ++s) {
      argmax[s] = std::max_element(lp.begin() + s * 3, lp.begin() + s * 3 + 3) - (lp.begin() + s * 3);
      total += lp[s * 3 + argmax[s]];
    }
    const auto r = pmc_decode(lp, T, cfg, t);
    // With every path admitted the best path is the per-step argmax.
    EXPECT_NEAR(r.log_prob, total, 1e-12);
    EXPECT_EQ(r.peptide, ctc_collapse(argmax, t));
  }
}

TEST(Pmc, NegativeWindowInfeasible) {
  const AminoAcidTable t = ga_table();
  std::vector<double> lp(3, std::log(1.0 / 3));
  PmcConfig cfg;
  cfg.bin = 1.0;
  cfg.target_mass = -10;
  cfg.tolerance = 1;
  EXPECT_FALSE(pmc_decode(lp, 1, cfg, t).feasible);
  EXPECT_FALSE(pmc_bruteforce_oracle(lp, 1, cfg, t).feasible);
}

TEST(Pmc, SingleStepPicksBestResidueInWindow) {
  const AminoAcidTable t = ga_table();
  std::vector<double> lp{std::log(0.5), std::log(0.2), std::log(0.3)};
  PmcConfig cfg;
  cfg.bin = 1.0;
  cfg.target_mass = 64;
  cfg.tolerance = 10;  // [54, 74] excludes the empty peptide
  const auto r = pmc_bruteforce_oracle(lp, 1, cfg, t);
  EXPECT_EQ(r.peptide.residues, "A");
  EXPECT_EQ(pmc_decode(lp, 1, cfg, t).peptide.residues, "A");
}

TEST(Pmc, OracleBounds) {
  const AminoAcidTable t = ga_table();
  std::vector<double> lp(9 * 3, std::log(1.0 / 3));
  PmcConfig cfg;
  EXPECT_THROW(pmc_bruteforce_oracle(lp, 9, cfg, t), DataError);
}

TEST(Pmc, AgreesWithOracleOnRandomInstances) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t nres = 1 + rng() % 3, T = 1 + rng() % 6;
    std::vector<Residue> res;
    for (std::size_t r = 0; r < nres; ++r) res.push_back({static_cast<char>('A' + r), 1.0 + (rng() % 40) * 0.5});
    const AminoAcidTable t(res);
    const auto lp = oracle::random_logprobs(rng, T, t.nat_vocab_size());
    PmcConfig cfg;
    cfg.bin = 0.5;
    cfg.target_mass = (rng() % 120) * 0.5;
    cfg.tolerance = (rng() % 6) * 0.5;
    const auto a = pmc_decode(lp, T, cfg, t), b = pmc_bruteforce_oracle(lp, T, cfg, t);
    ASSERT_EQ(a.feasible, b.feasible) << trial;
    if (!a.feasible) continue;
    EXPECT_EQ(a.peptide, b.peptide) << trial;
    EXPECT_NEAR(a.log_prob, b.log_prob, 1e-9) << trial;
  }
}

TEST(Pmc, StateCapStillRespectsWindow) {
  std::mt19937_64 rng(10);
  const auto& t = AminoAcidTable::standard();
  const auto lp = oracle::random_logprobs(rng, 12, t.nat_vocab_size());
  PmcConfig cfg;
  cfg.target_mass = 500.0;
  cfg.tolerance = 0.1;
  cfg.max_states = 2000;
  const auto r = pmc_decode(lp, 12, cfg, t);
  if (r.feasible) {
    const double m = residue_mass(r.peptide, t);
    EXPECT_LE(std::abs(m - 500.0), 0.1 + 12 * 0.0005);
  }
}

TEST(DecoderKind, ParseAndPrint) {
  for (auto k : {DecoderKind::AtGreedy, DecoderKind::AtBeam, DecoderKind::NatPmc})
    EXPECT_EQ(parse_decoder_kind(to_string(k)), k);
  EXPECT_THROW(parse_decoder_kind("ctc"), DataError);
}

TEST(DecodeCsv, RoundTrip) {
  std::vector<DecodeRow> rows{{"a,b", Peptide{"PEP"}, -0.25, DecoderKind::AtBeam, true},
                              {"c", Peptide{""}, -1.5e-3, DecoderKind::NatPmc, false}};
  std::stringstream ss;
  write_decode_csv(ss, rows);
  const auto back = read_decode_csv(ss);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].spectrum_id, "a,b");
  EXPECT_EQ(back[0].peptide.residues, "PEP");
  EXPECT_EQ(back[1].confidence, -1.5e-3);
  EXPECT_FALSE(back[1].feasible);
  EXPECT_EQ(back[1].decoder, DecoderKind::NatPmc);
}

TEST(DecodeCsv, BadRowsReportLine) {
  std::stringstream ss("spectrum_id,predicted_sequence,confidence,decoder,feasible_flag\nx,PEP,abc,at-beam,true\n");
  try {
    read_decode_csv(ss);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}
