#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "novoseq/errors.hpp"
#include "novoseq/training.hpp"
#include "oracles.hpp"

using namespace novoseq;
using ad::Graph;
using ad::Tensor;
using ad::Var;

namespace {

ModelConfig toy_config() {
  ModelConfig c;
  c.d = 16;
  c.heads = 2;
  c.hidden = 32;
  c.t_max = 12;
  return c;
}

struct Corpus {
  std::vector<Spectrum> spectra;
  std::vector<TrainingExample> examples;
};

Corpus make_corpus(std::size_t n, std::uint64_t seed) {
  const auto& t = AminoAcidTable::standard();
  std::mt19937_64 rng(seed);
  Corpus c;
  c.spectra.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::string seq;
    const std::size_t len = 4 + rng() % 3;
    for (std::size_t j = 0; j < len; ++j) seq += t.symbol(rng() % t.size());
    c.spectra.push_back(simulate_spectrum(Peptide{seq}, rng(), SimulationConfig{}));
  }
  for (const auto& s : c.spectra) c.examples.push_back(make_example(s, t));
  return c;
}

std::vector<TrainingExample> batch_of(const Corpus& c, std::uint64_t seed, std::uint64_t step, std::size_t b) {
  std::vector<TrainingExample> out;
  for (std::size_t i : batch_indices(seed, step, b, c.examples.size())) out.push_back(c.examples[i]);
  return out;
}

std::vector<Tensor> partition(const ad::ParameterStore& s, const char* p) {
  std::vector<Tensor> out;
  s.for_each([&](const std::string& part, const std::string&, const ad::Parameter& x) {
    if (part == p) out.push_back(x.value);
  });
  return out;
}

}  // namespace

TEST(CtcForward, SingleStepSingleResidue) {
  std::vector<double> lp{std::log(0.2), std::log(0.5), std::log(0.3)};
  std::vector<std::size_t> target{1};
  const auto r = ctc_forward(lp, 1, 3, target);
  EXPECT_TRUE(r.feasible);
  EXPECT_DOUBLE_EQ(r.log_prob, std::log(0.5));
}

TEST(CtcForward, RepeatNeedsSeparatingBlank) {
  std::vector<double> lp(2 * 3, std::log(1.0 / 3));
  std::vector<std::size_t> target{1, 1};
  const auto r = ctc_forward(lp, 2, 3, target);
  EXPECT_FALSE(r.feasible);
  EXPECT_EQ(r.log_prob, -INFINITY);
  EXPECT_EQ(ctc_min_length(target), 3u);
}

TEST(CtcForward, UniformThreeStepsOneResidue) {
  std::vector<double> lp(3 * 3, std::log(1.0 / 3));
  std::vector<std::size_t> target{1};
  EXPECT_NEAR(ctc_forward(lp, 3, 3, target).log_prob, std::log(2.0 / 9.0), 1e-14);
}

TEST(CtcForward, TableBoundary) {
  std::mt19937_64 rng(3);
  const auto lp = oracle::random_logprobs(rng, 4, 3);
  std::vector<std::size_t> target{1, 2};
  const auto r = ctc_forward(lp, 4, 3, target);
  ASSERT_EQ(r.table.augmented.size(), 5u);
  for (std::size_t s = 2; s < 5; ++s) EXPECT_EQ(r.table.at(0, s), -INFINITY);
  for (double a : r.table.alpha) EXPECT_LE(a, 0.0);
}

TEST(CtcForward, MatchesEnumerationSmallShapes) {
  std::mt19937_64 rng(11);
  for (std::size_t T = 1; T <= 5; ++T)
    for (std::size_t V = 2; V <= 3; ++V)
      for (std::size_t U = 1; U <= 3; ++U)
        for (int draw = 0; draw < 5; ++draw) {
          const auto lp = oracle::random_logprobs(rng, T, V);
          std::vector<std::size_t> target(U);
          for (auto& a : target) a = 1 + rng() % (V - 1);
          const double want = oracle::ctc_log_prob(lp, T, V, target);
          const auto got = ctc_forward(lp, T, V, target);
          if (want == -INFINITY) {
            EXPECT_FALSE(got.feasible);
          } else {
            EXPECT_NEAR(got.log_prob, want, 1e-9);
          }
        }
}

TEST(CtcForward, BlankPaddingNeverLowersProbability) {
  // Appending certain-blank steps keeps every valid path valid.
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t T = 3, V = 3;
    auto lp = oracle::random_logprobs(rng, T, V);
    std::vector<std::size_t> target{1 + rng() % 2};
    const double base = ctc_forward(lp, T, V, target).log_prob;
    for (std::size_t t = 0; t < T; ++t) lp.insert(lp.end(), {0.0, -INFINITY, -INFINITY});
    EXPECT_GE(ctc_forward(lp, 2 * T, V, target).log_prob, base - 1e-12);
  }
}

TEST(CtcLoss, InfeasibleClampsWithZeroGradient) {
  Graph g;
  const Var logits = g.input(Tensor({2, 3}, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6}));
  std::vector<std::size_t> target{1, 1};
  const Var loss = ctc_loss(logits, target);
  EXPECT_EQ(loss.value()[0], kInfeasibleCtcLoss);
  g.backward(ad::add(loss, ad::scale(ad::sum(logits), 0.0)));
  for (double v : g.grad(logits)) EXPECT_EQ(v, 0.0);
}

TEST(CtcLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<double> x(5 * 3);
  for (auto& v : x) v = u(rng);
  std::vector<std::size_t> target{1, 2};
  Graph g;
  const Var in = g.input(Tensor({5, 3}, x));
  g.backward(ctc_loss(in, target));
  const auto an = g.grad(in);
  const auto num = oracle::numeric_gradient(
      [&](const std::vector<double>& v) {
        Graph h;
        return ctc_loss(h.input(Tensor({5, 3}, v)), target).value()[0];
      },
      x, 1e-6);
  EXPECT_LT(oracle::max_rel_err({an.begin(), an.end()}, num), 1e-4);
}

TEST(CeLoss, UniformLogits) {
  Graph g;
  std::vector<std::size_t> target{3, AminoAcidTable::kEos};
  const Var loss = ce_loss(g.input(Tensor({2, 4})), target);
  EXPECT_NEAR(loss.value()[0], 2 * std::log(4.0), 1e-14);
}

TEST(CeLoss, ConfidentCorrectLogitsApproachZero) {
  Graph g;
  std::vector<std::size_t> target{1, 2};
  const Var loss = ce_loss(g.input(Tensor({2, 3}, {0, 60, 0, 0, 0, 60})), target);
  EXPECT_LT(loss.value()[0], 1e-20);
}

TEST(CeLoss, PadRowsIgnored) {
  Graph g1, g2;
  std::vector<std::size_t> t1{3, AminoAcidTable::kEos}, t2{3, AminoAcidTable::kEos, AminoAcidTable::kPad};
  const Var a = ce_loss(g1.input(Tensor({2, 4}, {1, 2, 3, 4, 0.5, 0.1, 0.9, 0})), t1);
  const Var b = ce_loss(g2.input(Tensor({3, 4}, {1, 2, 3, 4, 0.5, 0.1, 0.9, 0, 7, -3, 2, 2})), t2);
  EXPECT_DOUBLE_EQ(a.value()[0], b.value()[0]);
}

TEST(CeLoss, LengthMismatchThrows) {
  Graph g;
  std::vector<std::size_t> t{1};
  EXPECT_THROW(ce_loss(g.input(Tensor({2, 3})), t), ShapeError);
}

TEST(Anneal, Endpoints) {
  EXPECT_EQ(lambda_at({0, 2000}), 0.0);
  EXPECT_EQ(lambda_at({2000, 2000}), 1.0);
  EXPECT_EQ(lambda_at({1000, 2000}), 0.5);
  EXPECT_THROW(lambda_at({2001, 2000}), DataError);
}

TEST(TotalLoss, Weighting) {
  Graph g;
  const Var at = g.input(Tensor::scalar(2.0)), nat = g.input(Tensor::scalar(4.0));
  EXPECT_EQ(total_loss(at, nat, 0.0).value()[0], 4.0);
  EXPECT_EQ(total_loss(at, nat, 1.0).value()[0], 2.0);
  EXPECT_EQ(total_loss(at, nat, 0.5).value()[0], 3.0);
}

TEST(LrSchedule, WarmupAndCosine) {
  const LrSchedule s{5e-4, 100, 2000};
  EXPECT_EQ(lr_at(0, s), 0.0);
  EXPECT_DOUBLE_EQ(lr_at(50, s), 2.5e-4);
  EXPECT_DOUBLE_EQ(lr_at(100, s), 5e-4);
  EXPECT_NEAR(lr_at(2000, s), 0.0, 1e-20);
  for (std::uint64_t i = 100; i < 2000; ++i) EXPECT_LE(lr_at(i + 1, s), lr_at(i, s));
}

TEST(BatchIndices, DeterministicEpochPermutations) {
  EXPECT_EQ(batch_indices(3, 7, 4, 10), batch_indices(3, 7, 4, 10));
  // Steps within one epoch visit each spectrum once.
  std::vector<int> seen(12, 0);
  for (std::uint64_t step = 0; step < 3; ++step)
    for (std::size_t i : batch_indices(3, step, 4, 12)) ++seen[i];
  for (int c : seen) EXPECT_EQ(c, 1);
}

TEST(Stage1, LossDecreasesAndLambdaIncreases) {
  const Corpus c = make_corpus(10, 1);
  Model m = Model::initialize(toy_config(), AminoAcidTable::standard(), 1);
  TrainState st;
  st.anneal = {0, 200};
  st.lr = {2e-3, 20, 200};
  std::vector<StepMetrics> log;
  for (int i = 0; i < 200; ++i) log.push_back(train_stage1_step(m, batch_of(c, 1, i, 4), st));
  auto total = [](const StepMetrics& s) { return s.lambda * s.at_loss + (1 - s.lambda) * s.nat_loss; };
  double first = 0, last = 0, at_first = 0, at_last = 0;
  for (int i = 0; i < 20; ++i) {
    first += total(log[i]);
    last += total(log[180 + i]);
    at_first += log[i].at_loss;
    at_last += log[180 + i].at_loss;
  }
  EXPECT_LT(last, first);
  EXPECT_LT(at_last, at_first);
  for (int i = 1; i < 200; ++i) EXPECT_GT(log[i].lambda, log[i - 1].lambda);
  EXPECT_EQ(st.anneal.i, 200u);
}

TEST(Stage1, LambdaOneLeavesNatDecoderGradientsZero) {
  const Corpus c = make_corpus(4, 2);
  Model m = Model::initialize(toy_config(), AminoAcidTable::standard(), 2);
  accumulate_stage1_gradients(m, batch_of(c, 2, 0, 4), 1.0);
  m.params().for_each([](const std::string& part, const std::string& name, const ad::Parameter& p) {
    if (part != kNatPartition) return;
    for (double v : p.grad) ASSERT_EQ(v, 0.0) << name;
  });
}

TEST(Stage1, FrozenPartitionRejected) {
  const Corpus c = make_corpus(2, 3);
  Model m = Model::initialize(toy_config(), AminoAcidTable::standard(), 2);
  m.params().set_frozen(kNatPartition, true);
  TrainState st;
  st.anneal = {0, 10};
  EXPECT_THROW(train_stage1_step(m, batch_of(c, 0, 0, 2), st), Error);
}

TEST(Stage2, RequiresFrozenEncoderAndNat) {
  const Corpus c = make_corpus(2, 3);
  Model m = Model::initialize(toy_config(), AminoAcidTable::standard(), 2);
  FinetuneState st;
  EXPECT_THROW(finetune_stage2_step(m, batch_of(c, 0, 0, 2), st), Error);
}

TEST(Stage2, FrozenPartitionsBitIdenticalAndLossFalls) {
  const Corpus c = make_corpus(10, 4);
  Model m = Model::initialize(toy_config(), AminoAcidTable::standard(), 4);
  m.params().set_frozen(kEncoderPartition, true);
  m.params().set_frozen(kNatPartition, true);
  m.config().cross_decoder = true;
  const auto enc = partition(m.params(), kEncoderPartition), nat = partition(m.params(), kNatPartition);
  FinetuneState st;
  st.lr_ft = 1e-3;
  std::vector<double> losses;
  for (int i = 0; i < 200; ++i) losses.push_back(finetune_stage2_step(m, batch_of(c, 4, i, 4), st).at_loss);
  EXPECT_EQ(partition(m.params(), kEncoderPartition), enc);
  EXPECT_EQ(partition(m.params(), kNatPartition), nat);
  double first = 0, last = 0;
  for (int i = 0; i < 20; ++i) {
    first += losses[i];
    last += losses[180 + i];
  }
  EXPECT_LT(last, first);
}

TEST(Stage2, BlockingRedundantWhenSourcesFrozen) {
  const Corpus c = make_corpus(6, 5);
  auto run = [&](bool blocked) {
    Model m = Model::initialize(toy_config(), AminoAcidTable::standard(), 6);
    m.params().set_frozen(kEncoderPartition, true);
    m.params().set_frozen(kNatPartition, true);
    m.config().cross_decoder = true;
    FinetuneState st;
    st.blocked = blocked;
    for (int i = 0; i < 5; ++i) finetune_stage2_step(m, batch_of(c, 5, i, 3), st);
    return serialize_checkpoint(m, {"stage2", 5, 0});
  };
  EXPECT_EQ(run(true), run(false));
}

TEST(Stage2, UnblockedUnfrozenNatReceivesGradient) {
  const Corpus c = make_corpus(3, 6);
  ModelConfig cfg = toy_config();
  cfg.enc_layers = cfg.at_layers = cfg.nat_layers = 2;
  Model m = Model::initialize(cfg, AminoAcidTable::standard(), 7);
  m.config().cross_decoder = true;
  accumulate_stage2_gradients(m, batch_of(c, 0, 0, 3), false);
  double nat = 0;
  m.params().for_each([&](const std::string& part, const std::string&, const ad::Parameter& p) {
    if (part == kNatPartition)
      for (double v : p.grad) nat += std::abs(v);
  });
  EXPECT_GT(nat, 0.0);
}

TEST(Metrics, CsvRowFormat) {
  std::ostringstream os;
  write_metrics_header(os);
  write_metrics_row(os, {3, "stage1", 1.5, 2.25, 0.5, 1e-4});
  EXPECT_EQ(os.str(), "step,stage,at_loss,nat_loss,lambda,lr\n3,stage1,1.5,2.25,0.5,0.0001\n");
}
