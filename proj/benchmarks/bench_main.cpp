#include <benchmark/benchmark.h>

#include <cmath>
#include <random>

#include "novoseq/decoding.hpp"
#include "novoseq/training.hpp"

using namespace novoseq;

namespace {

std::vector<double> random_logprobs(std::size_t steps, std::size_t vocab, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-3, 3);
  std::vector<double> lp(steps * vocab);
  for (std::size_t t = 0; t < steps; ++t) {
    double z = 0;
    for (std::size_t v = 0; v < vocab; ++v) z += std::exp(lp[t * vocab + v] = u(rng));
    for (std::size_t v = 0; v < vocab; ++v) lp[t * vocab + v] -= std::log(z);
  }
  return lp;
}

Spectrum bench_spectrum() {
  return simulate_spectrum(Peptide{"PEPTIDEK"}, 1, SimulationConfig{});
}

}  // namespace

static void BM_CtcForward(benchmark::State& state) {
  const auto& t = AminoAcidTable::standard();
  const std::size_t T = static_cast<std::size_t>(state.range(0));
  const auto lp = random_logprobs(T, t.nat_vocab_size(), 1);
  std::vector<std::size_t> target;
  for (std::size_t i = 0; i < T / 2; ++i) target.push_back(1 + i % t.size());
  for (auto _ : state) benchmark::DoNotOptimize(ctc_forward(lp, T, t.nat_vocab_size(), target).log_prob);
}
BENCHMARK(BM_CtcForward)->Arg(12)->Arg(24)->Arg(48);

static void BM_CtcForwardBackward(benchmark::State& state) {
  const auto& t = AminoAcidTable::standard();
  const std::size_t T = static_cast<std::size_t>(state.range(0)), V = t.nat_vocab_size();
  const auto logits = random_logprobs(T, V, 2);
  std::vector<std::size_t> target;
  for (std::size_t i = 0; i < T / 2; ++i) target.push_back(1 + i % t.size());
  for (auto _ : state) {
    ad::Graph g;
    const ad::Var x = g.input(ad::Tensor({T, V}, logits), true);
    g.backward(ctc_loss(x, target));
    benchmark::DoNotOptimize(g.grad(x).data());
  }
}
BENCHMARK(BM_CtcForwardBackward)->Arg(12)->Arg(24)->Arg(48);

static void BM_PmcDecode(benchmark::State& state) {
  const auto& t = AminoAcidTable::standard();
  const std::size_t T = 24;
  const auto lp = random_logprobs(T, t.nat_vocab_size(), 3);
  PmcConfig cfg;
  cfg.target_mass = residue_mass(Peptide{"PEPTIDEK"}, t);
  cfg.max_states = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(pmc_decode(lp, T, cfg, t).log_prob);
}
BENCHMARK(BM_PmcDecode)->Arg(2000)->Arg(20000)->Unit(benchmark::kMillisecond);

static void BM_EncoderForward(benchmark::State& state) {
  Model m = Model::initialize(ModelConfig{}, AminoAcidTable::standard(), 1);
  const Spectrum s = bench_spectrum();
  for (auto _ : state) {
    ad::Graph g;
    benchmark::DoNotOptimize(m.encode_spectrum(g, s, false).features.value().data());
  }
}
BENCHMARK(BM_EncoderForward)->Unit(benchmark::kMicrosecond);

static void BM_Stage1Step(benchmark::State& state) {
  Model m = Model::initialize(ModelConfig{}, AminoAcidTable::standard(), 1);
  const Spectrum s = bench_spectrum();
  const std::vector<TrainingExample> batch(8, make_example(s, m.table()));
  TrainState st;
  st.anneal.total = 1u << 30;
  st.lr.total = 1u << 30;
  for (auto _ : state) benchmark::DoNotOptimize(train_stage1_step(m, batch, st).at_loss);
}
BENCHMARK(BM_Stage1Step)->Unit(benchmark::kMillisecond);

static void BM_GreedyDecode(benchmark::State& state) {
  Model m = Model::initialize(ModelConfig{}, AminoAcidTable::standard(), 1);
  const Spectrum s = bench_spectrum();
  for (auto _ : state) benchmark::DoNotOptimize(greedy_at_decode(m, s, 12).log_prob);
}
BENCHMARK(BM_GreedyDecode)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
