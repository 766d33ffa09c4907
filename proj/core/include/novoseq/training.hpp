#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "novoseq/autodiff.hpp"
#include "novoseq/network.hpp"
#include "novoseq/spectra.hpp"

namespace novoseq {

// Forward variables of the blank-augmented CTC lattice, log domain.
// augmented = (ε, a1, ε, a2, …, ε, aU, ε) as NAT ids, length 2U+1.
struct CtcTable {
  std::size_t steps = 0;
  std::vector<std::size_t> augmented;
  std::vector<double> alpha;  // [steps, augmented.size()]

  double at(std::size_t t, std::size_t s) const { return alpha[t * augmented.size() + s]; }
};

struct CtcResult {
  double log_prob;  // log P(target | logprobs); −inf when infeasible
  bool feasible;
  CtcTable table;
};

// Shortest output length that can collapse to `target`: U plus one blank
// between every pair of equal neighbours.
std::size_t ctc_min_length(std::span<const std::size_t> target);

// logprobs: row-major [steps, vocab] normalized log-probabilities.
// target: NAT ids, none of them blank.
CtcResult ctc_forward(std::span<const double> logprobs, std::size_t steps, std::size_t vocab,
                      std::span<const std::size_t> target);

// Loss used in place of −log P when the target cannot fit in the output grid.
inline constexpr double kInfeasibleCtcLoss = 1e4;

// −log P(target) as a graph node over log-probabilities [steps, vocab]. The
// backward pass runs the adjoint of the forward recursion. Infeasible targets
// give kInfeasibleCtcLoss with zero gradient.
ad::Var ctc_nll(ad::Var logprobs, std::span<const std::size_t> target);
// ctc_nll(log_softmax(logits), target)
ad::Var ctc_loss(ad::Var logits, std::span<const std::size_t> target);

// −Σ_t log softmax(logits)[t, target_t]; rows whose target is PAD are skipped.
ad::Var ce_loss(ad::Var logits, std::span<const std::size_t> targets);

struct AnnealSchedule {
  std::uint64_t i = 0;
  std::uint64_t total = 1;
};

// i / total
double lambda_at(const AnnealSchedule& sched);

// λ·at + (1−λ)·nat
ad::Var total_loss(ad::Var at, ad::Var nat, double lambda);

struct LrSchedule {
  double base = 5e-4;
  std::uint64_t warmup = 100;
  std::uint64_t total = 2000;
};

// Linear warm-up to `base`, then cosine decay to zero at `total`.
double lr_at(std::uint64_t step, const LrSchedule& sched);

// Teacher-forcing inputs/targets for one annotated spectrum.
struct TrainingExample {
  const Spectrum* spectrum = nullptr;
  std::vector<std::size_t> at_input;   // BOS a1 … an
  std::vector<std::size_t> at_target;  // a1 … an EOS
  std::vector<MassPair> masses;
  std::vector<std::size_t> nat_target;  // a1 … an as NAT ids
};

TrainingExample make_example(const Spectrum& s, const AminoAcidTable& table);

struct StepMetrics {
  std::uint64_t step = 0;
  std::string stage;
  double at_loss = 0.0;
  double nat_loss = 0.0;
  double lambda = 0.0;
  double lr = 0.0;
};

struct TrainState {
  ad::OptimizerState optimizer;
  AnnealSchedule anneal;
  LrSchedule lr;
  std::uint64_t seed = 0;
};

// Runs forward+backward for a batch with the given λ and leaves batch-mean
// gradients in the parameter store. No optimizer step.
StepMetrics accumulate_stage1_gradients(Model& model, std::span<const TrainingExample> batch,
                                        double lambda);

// One joint step: λ = i/T_total, lr from the warm-up/cosine schedule, AdamW
// on all partitions, then i += 1. Plain cross-attention only.
StepMetrics train_stage1_step(Model& model, std::span<const TrainingExample> batch,
                              TrainState& state);

struct FinetuneState {
  ad::OptimizerState optimizer;
  double lr_ft = 1e-4;
  bool blocked = true;
  std::uint64_t step = 0;
};

// AT loss through the augmented [NAT ⊕ spectrum] context, gradients left in
// the store. Does not check partition freezing.
StepMetrics accumulate_stage2_gradients(Model& model, std::span<const TrainingExample> batch,
                                        bool blocked);

// One fine-tuning step. Requires the encoder and NAT partitions to be frozen.
StepMetrics finetune_stage2_step(Model& model, std::span<const TrainingExample> batch,
                                 FinetuneState& state);

// Corpus indices for `step`: consecutive slices of a per-epoch shuffle that
// depends only on (seed, epoch).
std::vector<std::size_t> batch_indices(std::uint64_t seed, std::uint64_t step,
                                       std::size_t batch_size, std::size_t corpus_size);

void write_metrics_header(std::ostream& out);
void write_metrics_row(std::ostream& out, const StepMetrics& m);

}  // namespace novoseq
