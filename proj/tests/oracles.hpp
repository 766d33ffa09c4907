#pragma once

// Reference computations written independently of the library code they
// check: exhaustive enumeration, central differences, element compositions.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "novoseq/autodiff.hpp"

namespace oracle {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Visits every length-T sequence over {0, …, V−1}.
inline void for_each_path(std::size_t T, std::size_t V,
                          const std::function<void(const std::vector<std::size_t>&)>& fn) {
  std::vector<std::size_t> p(T, 0);
  while (true) {
    fn(p);
    std::size_t t = 0;
    while (t < T && ++p[t] == V) p[t++] = 0;
    if (t == T) return;
  }
}

// Γ: drop repeats, then blanks (id 0).
inline std::vector<std::size_t> collapse(const std::vector<std::size_t>& path) {
  std::vector<std::size_t> merged;
  for (std::size_t x : path)
    if (merged.empty() || merged.back() != x) merged.push_back(x);
  std::vector<std::size_t> out;
  for (std::size_t x : merged)
    if (x != 0) out.push_back(x);
  return out;
}

inline double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

// log Σ over all paths with Γ(path) = target of Π_t P_t(path_t).
inline double ctc_log_prob(const std::vector<double>& lp, std::size_t T, std::size_t V,
                           const std::vector<std::size_t>& target) {
  double total = kNegInf;
  for_each_path(T, V, [&](const std::vector<std::size_t>& p) {
    if (collapse(p) != target) return;
    double s = 0.0;
    for (std::size_t t = 0; t < T; ++t) s += lp[t * V + p[t]];
    total = log_add(total, s);
  });
  return total;
}

// Row-wise log-softmax of random logits in [−scale, scale].
inline std::vector<double> random_logprobs(std::mt19937_64& rng, std::size_t T, std::size_t V,
                                           double scale = 2.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  std::vector<double> lp(T * V);
  for (std::size_t t = 0; t < T; ++t) {
    double m = kNegInf;
    for (std::size_t v = 0; v < V; ++v) m = std::max(m, lp[t * V + v] = u(rng));
    double z = 0.0;
    for (std::size_t v = 0; v < V; ++v) z += std::exp(lp[t * V + v] - m);
    for (std::size_t v = 0; v < V; ++v) lp[t * V + v] -= m + std::log(z);
  }
  return lp;
}

// Central differences of a scalar function of one flat vector.
inline std::vector<double> numeric_gradient(const std::function<double(const std::vector<double>&)>& f,
                                            std::vector<double> x, double eps) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + eps;
    const double hi = f(x);
    x[i] = keep - eps;
    const double lo = f(x);
    x[i] = keep;
    g[i] = (hi - lo) / (2 * eps);
  }
  return g;
}

inline double max_rel_err(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double den = std::max({std::abs(a[i]), std::abs(b[i]), 1e-8});
    worst = std::max(worst, std::abs(a[i] - b[i]) / den);
  }
  return worst;
}

// Monoisotopic residue masses from elemental composition (residue = amino
// acid minus water). Element masses: C 12, H 1.00782503207, N 14.0030740048,
// O 15.99491461956, S 31.97207100.
inline std::map<char, double> residue_masses_from_composition() {
  constexpr double C = 12.0, H = 1.00782503207, N = 14.0030740048, O = 15.99491461956,
                   S = 31.97207100;
  struct F {
    char aa;
    int c, h, n, o, s;
  };
  const F table[] = {
      {'G', 2, 3, 1, 1, 0},  {'A', 3, 5, 1, 1, 0},  {'S', 3, 5, 1, 2, 0},
      {'P', 5, 7, 1, 1, 0},  {'V', 5, 9, 1, 1, 0},  {'T', 4, 7, 1, 2, 0},
      {'C', 3, 5, 1, 1, 1},  {'L', 6, 11, 1, 1, 0}, {'I', 6, 11, 1, 1, 0},
      {'N', 4, 6, 2, 2, 0},  {'D', 4, 5, 1, 3, 0},  {'Q', 5, 8, 2, 2, 0},
      {'K', 6, 12, 2, 1, 0}, {'E', 5, 7, 1, 3, 0},  {'M', 5, 9, 1, 1, 1},
      {'H', 6, 7, 3, 1, 0},  {'F', 9, 9, 1, 1, 0},  {'R', 6, 12, 4, 1, 0},
      {'Y', 9, 9, 1, 2, 0},  {'W', 11, 10, 2, 1, 0},
  };
  std::map<char, double> out;
  for (const F& f : table) out[f.aa] = f.c * C + f.h * H + f.n * N + f.o * O + f.s * S;
  return out;
}

inline double water_from_composition() { return 2 * 1.00782503207 + 15.99491461956; }

}  // namespace oracle
