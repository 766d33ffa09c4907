#include "novoseq/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <numeric>
#include <ostream>
#include <random>

#include "novoseq/errors.hpp"

namespace novoseq {

using ad::Graph;
using ad::Tensor;
using ad::Var;

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

double log_sum(std::span<const double> xs) {
  double m = kNegInf;
  for (double x : xs) m = std::max(m, x);
  if (m == kNegInf) return kNegInf;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

// Predecessor states of s in the augmented lattice.
std::size_t predecessors(const std::vector<std::size_t>& aug, std::size_t s, std::size_t out[3]) {
  std::size_t n = 0;
  out[n++] = s;
  if (s >= 1) out[n++] = s - 1;
  if (s >= 2 && aug[s] != AminoAcidTable::kBlank && aug[s] != aug[s - 2]) out[n++] = s - 2;
  return n;
}

struct CtcLattice {
  CtcTable table;
  std::vector<double> incoming;  // log-sum of predecessor alphas, per (t, s)
  double log_prob = kNegInf;
};

CtcLattice run_ctc(std::span<const double> lp, std::size_t steps, std::size_t vocab,
                   std::span<const std::size_t> target) {
  CtcLattice lat;
  auto& tab = lat.table;
  tab.steps = steps;
  tab.augmented.reserve(2 * target.size() + 1);
  tab.augmented.push_back(AminoAcidTable::kBlank);
  for (std::size_t a : target) {
    if (a == AminoAcidTable::kBlank || a >= vocab)
      throw DataError("ctc: target id " + std::to_string(a) + " is blank or out of vocabulary");
    tab.augmented.push_back(a);
    tab.augmented.push_back(AminoAcidTable::kBlank);
  }
  const std::size_t S = tab.augmented.size();
  if (lp.size() != steps * vocab) throw ShapeError("ctc: log-probability table has wrong size");
  if (steps == 0) return lat;
  tab.alpha.assign(steps * S, kNegInf);
  lat.incoming.assign(steps * S, kNegInf);

  tab.alpha[0] = lp[tab.augmented[0]];
  if (S > 1) tab.alpha[1] = lp[tab.augmented[1]];
  lat.incoming[0] = 0.0;
  if (S > 1) lat.incoming[1] = 0.0;

  std::size_t pred[3];
  double terms[3];
  for (std::size_t t = 1; t < steps; ++t) {
    const double* prev = tab.alpha.data() + (t - 1) * S;
    double* cur = tab.alpha.data() + t * S;
    for (std::size_t s = 0; s < S; ++s) {
      const std::size_t n = predecessors(tab.augmented, s, pred);
      for (std::size_t i = 0; i < n; ++i) terms[i] = prev[pred[i]];
      const double in = log_sum(std::span<const double>(terms, n));
      lat.incoming[t * S + s] = in;
      cur[s] = in == kNegInf ? kNegInf : in + lp[t * vocab + tab.augmented[s]];
    }
  }
  const double* last = tab.alpha.data() + (steps - 1) * S;
  lat.log_prob = S > 1 ? log_add(last[S - 1], last[S - 2]) : last[S - 1];
  return lat;
}

}  // namespace

std::size_t ctc_min_length(std::span<const std::size_t> target) {
  std::size_t n = target.size();
  for (std::size_t i = 1; i < target.size(); ++i)
    if (target[i] == target[i - 1]) ++n;
  return n;
}

CtcResult ctc_forward(std::span<const double> logprobs, std::size_t steps, std::size_t vocab,
                      std::span<const std::size_t> target) {
  CtcLattice lat = run_ctc(logprobs, steps, vocab, target);
  const bool feasible = lat.log_prob > kNegInf && !std::isnan(lat.log_prob);
  if (std::isnan(lat.log_prob)) throw NumericError("ctc_forward: NaN log-probability");
  return {feasible ? lat.log_prob : kNegInf, feasible, std::move(lat.table)};
}

Var ctc_nll(Var logprobs, std::span<const std::size_t> target) {
  const Tensor& lpv = logprobs.value();
  const std::size_t steps = lpv.rows(), vocab = lpv.cols();
  CtcLattice lat = run_ctc(lpv.data(), steps, vocab, target);
  if (std::isnan(lat.log_prob)) throw NumericError("ctc: NaN log-probability");
  Graph& g = logprobs.graph();
  if (lat.log_prob == kNegInf) return g.constant(Tensor::scalar(kInfeasibleCtcLoss));

  return g.record(
      Tensor::scalar(-lat.log_prob), {logprobs},
      [logprobs, lat = std::move(lat), steps, vocab](Graph& gg, auto dy) {
        double* glp = gg.grad_sink(logprobs.id());
        if (!glp) return;
        const auto& tab = lat.table;
        const std::size_t S = tab.augmented.size();
        const auto lp = logprobs.value().data();
        // adj[s] = ∂(log P)/∂alpha[t][s] for the current t.
        std::vector<double> adj(S, 0.0), prev_adj(S, 0.0);
        adj[S - 1] = std::exp(tab.at(steps - 1, S - 1) - lat.log_prob);
        if (S > 1) adj[S - 2] = std::exp(tab.at(steps - 1, S - 2) - lat.log_prob);
        const double scale = -dy[0];
        std::size_t pred[3];
        for (std::size_t t = steps; t-- > 0;) {
          std::fill(prev_adj.begin(), prev_adj.end(), 0.0);
          for (std::size_t s = 0; s < S; ++s) {
            const double a = adj[s];
            if (a == 0.0 || tab.at(t, s) == kNegInf) continue;
            glp[t * vocab + tab.augmented[s]] += scale * a;
            if (t == 0) continue;
            const double in = lat.incoming[t * S + s];
            const std::size_t n = predecessors(tab.augmented, s, pred);
            for (std::size_t i = 0; i < n; ++i) {
              const double pa = tab.at(t - 1, pred[i]);
              if (pa != kNegInf) prev_adj[pred[i]] += a * std::exp(pa - in);
            }
          }
          std::swap(adj, prev_adj);
        }
        (void)lp;
      });
}

Var ctc_loss(Var logits, std::span<const std::size_t> target) {
  return ctc_nll(ad::softmax_logprob(logits), target);
}

Var ce_loss(Var logits, std::span<const std::size_t> targets) {
  if (logits.rows() != targets.size())
    throw ShapeError("ce_loss: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(logits.rows()) + " logit rows");
  const Var lp = ad::softmax_logprob(logits);
  std::vector<std::size_t> cols(targets.begin(), targets.end());
  Tensor keep({targets.size()});
  bool any_pad = false;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    const bool pad = targets[t] == AminoAcidTable::kPad;
    any_pad |= pad;
    keep[t] = pad ? 0.0 : 1.0;
    if (pad) cols[t] = 0;
  }
  Var picked = ad::pick(lp, cols);
  if (any_pad) picked = ad::mul(picked, logits.graph().constant(std::move(keep)));
  return ad::scale(ad::sum(picked), -1.0);
}

double lambda_at(const AnnealSchedule& sched) {
  if (sched.total == 0) throw DataError("anneal schedule needs total >= 1");
  if (sched.i > sched.total) throw DataError("anneal schedule: i exceeds total");
  return static_cast<double>(sched.i) / static_cast<double>(sched.total);
}

Var total_loss(Var at, Var nat, double lambda) {
  return ad::add(ad::scale(at, lambda), ad::scale(nat, 1.0 - lambda));
}

double lr_at(std::uint64_t step, const LrSchedule& s) {
  if (step < s.warmup)
    return s.base * static_cast<double>(step) / static_cast<double>(s.warmup);
  if (s.total <= s.warmup) return s.base;
  const double progress = std::min(
      1.0, static_cast<double>(step - s.warmup) / static_cast<double>(s.total - s.warmup));
  return s.base * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

TrainingExample make_example(const Spectrum& s, const AminoAcidTable& table) {
  if (!s.truth || s.truth->empty())
    throw DataError("spectrum " + s.id + " has no ground-truth peptide");
  TrainingExample ex;
  ex.spectrum = &s;
  const auto residues = residue_indices(*s.truth, table);
  ex.at_input.push_back(AminoAcidTable::kBos);
  for (std::size_t r : residues) {
    ex.at_input.push_back(table.at_id(r));
    ex.at_target.push_back(table.at_id(r));
    ex.nat_target.push_back(table.nat_id(r));
  }
  ex.at_target.push_back(AminoAcidTable::kEos);
  ex.masses = step_masses(ex.at_input, table, s.neutral_mass());
  return ex;
}

namespace {

void check_finite(double v, const char* what, const TrainingExample& ex, std::uint64_t step) {
  if (!std::isfinite(v))
    throw NumericError(std::string(what) + " is not finite at step " + std::to_string(step) +
                       " on spectrum " + ex.spectrum->id);
}

}  // namespace

StepMetrics accumulate_stage1_gradients(Model& model, std::span<const TrainingExample> batch,
                                        double lambda) {
  if (batch.empty()) throw DataError("empty training batch");
  model.params().zero_grad();
  StepMetrics m;
  m.stage = "stage1";
  m.lambda = lambda;
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (const TrainingExample& ex : batch) {
    Graph g;
    const EncoderOutput enc = model.encode_spectrum(g, *ex.spectrum, true);
    const Var at_logits = model.at_forward(g, ex.at_input, ex.masses, enc, nullptr, true);
    const Var at = ce_loss(at_logits, ex.at_target);
    const NatFeatures nat = model.nat_forward(g, enc, true);
    const Var natl = ctc_loss(nat.logits, ex.nat_target);
    check_finite(at.value()[0], "AT loss", ex, 0);
    check_finite(natl.value()[0], "NAT loss", ex, 0);
    m.at_loss += at.value()[0] * inv;
    m.nat_loss += natl.value()[0] * inv;
    g.backward(ad::scale(total_loss(at, natl, lambda), inv));
  }
  return m;
}

StepMetrics train_stage1_step(Model& model, std::span<const TrainingExample> batch,
                              TrainState& state) {
  for (const char* p : {kEncoderPartition, kAtPartition, kNatPartition})
    if (model.params().frozen(p))
      throw Error(std::string("stage-1 training with frozen partition ") + p);
  const double lambda = lambda_at(state.anneal);
  const double lr = lr_at(state.anneal.i + 1, state.lr);
  StepMetrics m;
  try {
    m = accumulate_stage1_gradients(model, batch, lambda);
  } catch (const NumericError& e) {
    throw NumericError("stage-1 step " + std::to_string(state.anneal.i) + ": " + e.what());
  }
  state.optimizer.lr = lr;
  ad::adamw_step(model.params(), state.optimizer);
  m.step = state.anneal.i;
  m.lr = lr;
  ++state.anneal.i;
  return m;
}

StepMetrics accumulate_stage2_gradients(Model& model, std::span<const TrainingExample> batch,
                                        bool blocked) {
  if (batch.empty()) throw DataError("empty training batch");
  model.params().zero_grad();
  StepMetrics m;
  m.stage = "stage2";
  m.lambda = 1.0;
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (const TrainingExample& ex : batch) {
    Graph g;
    const EncoderOutput enc = model.encode_spectrum(g, *ex.spectrum, true);
    const NatFeatures nat = model.nat_forward(g, enc, true);
    const Var ctx = model.cross_context(g, nat, enc, blocked, true);
    const Var logits = model.at_forward(g, ex.at_input, ex.masses, enc, &ctx, true);
    const Var at = ce_loss(logits, ex.at_target);
    check_finite(at.value()[0], "AT fine-tune loss", ex, 0);
    m.at_loss += at.value()[0] * inv;
    g.backward(ad::scale(at, inv));
  }
  return m;
}

StepMetrics finetune_stage2_step(Model& model, std::span<const TrainingExample> batch,
                                 FinetuneState& state) {
  if (!model.params().frozen(kEncoderPartition) || !model.params().frozen(kNatPartition))
    throw Error("fine-tuning requires frozen encoder and NAT partitions");
  if (model.params().frozen(kAtPartition)) throw Error("fine-tuning with a frozen AT partition");
  StepMetrics m = accumulate_stage2_gradients(model, batch, state.blocked);
  state.optimizer.lr = state.lr_ft;
  ad::adamw_step(model.params(), state.optimizer);
  m.step = state.step++;
  m.lr = state.lr_ft;
  return m;
}

std::vector<std::size_t> batch_indices(std::uint64_t seed, std::uint64_t step,
                                       std::size_t batch_size, std::size_t corpus_size) {
  if (corpus_size == 0 || batch_size == 0) throw DataError("batch_indices: empty corpus or batch");
  std::vector<std::size_t> out;
  out.reserve(batch_size);
  std::uint64_t cached_epoch = std::numeric_limits<std::uint64_t>::max();
  std::vector<std::size_t> perm(corpus_size);
  for (std::size_t j = 0; j < batch_size; ++j) {
    const std::uint64_t global = step * batch_size + j;
    const std::uint64_t epoch = global / corpus_size;
    if (epoch != cached_epoch) {
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      std::mt19937_64 rng(seed ^ (0x9E3779B97F4A7C15ULL * (epoch + 1)));
      // Fisher-Yates with explicit draws so the order is library independent.
      for (std::size_t i = corpus_size; i > 1; --i) {
        const std::size_t k = static_cast<std::size_t>(rng() % i);
        std::swap(perm[i - 1], perm[k]);
      }
      cached_epoch = epoch;
    }
    out.push_back(perm[global % corpus_size]);
  }
  return out;
}

void write_metrics_header(std::ostream& out) { out << "step,stage,at_loss,nat_loss,lambda,lr\n"; }

void write_metrics_row(std::ostream& out, const StepMetrics& m) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%llu,%s,%.9g,%.9g,%.9g,%.9g\n",
                static_cast<unsigned long long>(m.step), m.stage.c_str(), m.at_loss, m.nat_loss,
                m.lambda, m.lr);
  out << buf;
}

}  // namespace novoseq
