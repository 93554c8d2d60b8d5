#pragma once

// Measurement machinery for learning dynamics: per-step influence and its
// first-order prediction, interference (delta-plus) and influence magnitude
// over probe sets, perplexity, per-problem accuracy change, pass@k, clip
// violation rates and strategy frequencies, plus checkpoint-pair statistics.

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "rldyn/gradient.hpp"
#include "rldyn/policy.hpp"
#include "rldyn/probe.hpp"
#include "rldyn/suite.hpp"

namespace rldyn {

// Delta log pi(y|x) between two parameter snapshots; negative values on
// correct pairs are negative interference. Unnormalized by length (length
// normalization only enters perplexity).
inline double per_step_influence(const SoftmaxPolicy& policy_old, const SoftmaxPolicy& policy_new,
                                 std::span<const double> x, std::span<const int> y) {
  return log_prob(policy_new, x, y) - log_prob(policy_old, x, y);
}

// eta * <applied_gradient, grad log pi(y'|x')> — the first-order Taylor
// prediction of per_step_influence for a step theta += eta * applied_gradient.
inline double first_order_prediction(const SoftmaxPolicy& policy,
                                     const GradientVector& applied_gradient, double eta,
                                     std::span<const double> x_prime,
                                     std::span<const int> y_prime) {
  if (applied_gradient.dim() != policy.param_count())
    throw std::invalid_argument("first_order_prediction: gradient dimension mismatch");
  return eta * applied_gradient.dot(grad_log_prob(policy, x_prime, y_prime));
}

// mean delta log pi over the probe's correct pairs; empty correct set yields
// a distinguished empty result
inline std::optional<double> interference_delta_plus(const SoftmaxPolicy& policy_old,
                                                     const SoftmaxPolicy& policy_new,
                                                     const ProblemSuite& suite,
                                                     const ProbeSet& probe) {
  double s = 0.0;
  int n = 0;
  for (const auto& e : probe.entries) {
    if (e.reward != 1.0) continue;
    s += per_step_influence(policy_old, policy_new, suite.problem(e.problem_id).features,
                            e.tokens);
    ++n;
  }
  if (n == 0) return std::nullopt;
  return s / n;
}

// mean of (delta log pi)^2 over all probe pairs
inline double influence_magnitude(const SoftmaxPolicy& policy_old,
                                  const SoftmaxPolicy& policy_new, const ProblemSuite& suite,
                                  const ProbeSet& probe) {
  double s = 0.0;
  for (const auto& e : probe.entries) {
    const double d = per_step_influence(policy_old, policy_new,
                                        suite.problem(e.problem_id).features, e.tokens);
    s += d * d;
  }
  return probe.entries.empty() ? 0.0 : s / static_cast<double>(probe.entries.size());
}

// mean over pairs of exp(-(1/|y|) log pi(y|x))
inline double perplexity(const SoftmaxPolicy& eval_policy, const ProblemSuite& suite,
                         const std::vector<std::pair<int, std::vector<int>>>& pairs) {
  if (pairs.empty()) throw std::invalid_argument("perplexity: empty pair list");
  double s = 0.0;
  for (const auto& [pid, tokens] : pairs) {
    if (tokens.empty()) throw std::invalid_argument("perplexity: empty completion");
    const double lp = log_prob(eval_policy, suite.problem(pid).features, tokens);
    s += std::exp(-lp / static_cast<double>(tokens.size()));
  }
  return s / static_cast<double>(pairs.size());
}

inline double perplexity_on_probe(const SoftmaxPolicy& eval_policy, const ProblemSuite& suite,
                                  const ProbeSet& probe, bool correct_only = false) {
  std::vector<std::pair<int, std::vector<int>>> pairs;
  for (const auto& e : probe.entries)
    if (!correct_only || e.reward == 1.0) pairs.emplace_back(e.problem_id, e.tokens);
  if (pairs.empty()) throw std::invalid_argument("perplexity_on_probe: no qualifying pairs");
  return perplexity(eval_policy, suite, pairs);
}

// ---------------------------------------------------------------------------
// accuracy change and pass@k

// E_{pi}[r] - E_{pi_b}[r] for one problem under binary reward. Exact mode sums
// the probability mass of the correct set (every correct completion is
// reachable by ancestral sampling); Monte Carlo mode estimates both terms.
inline double delta_r_exact(const Problem& problem, const SoftmaxPolicy& policy,
                            const SoftmaxPolicy& base_policy) {
  return correct_mass(policy, problem) - correct_mass(base_policy, problem);
}

inline double delta_r_sampled(const Problem& problem, const SoftmaxPolicy& policy,
                              const SoftmaxPolicy& base_policy, int terminator, int n_samples,
                              double temperature, std::uint64_t seed) {
  if (n_samples < 1) throw std::invalid_argument("delta_r_sampled: n_samples must be >= 1");
  const RewardSpec binary;
  double acc_new = 0.0, acc_base = 0.0;
  for (int j = 0; j < n_samples; ++j) {
    Rng rng_new = derive_rng(seed, {stream::eval_samples, 0,
                                    static_cast<std::uint64_t>(problem.id),
                                    static_cast<std::uint64_t>(j)});
    Rng rng_base = derive_rng(seed, {stream::eval_samples, 1,
                                     static_cast<std::uint64_t>(problem.id),
                                     static_cast<std::uint64_t>(j)});
    acc_new += verify(problem, sample(policy, problem.features, rng_new, temperature,
                                      terminator, problem.id).tokens,
                      binary, terminator);
    acc_base += verify(problem, sample(base_policy, problem.features, rng_base, temperature,
                                       terminator, problem.id).tokens,
                       binary, terminator);
  }
  return (acc_new - acc_base) / n_samples;
}

// unbiased per-problem estimator 1 - C(n-c, k) / C(n, k)
inline double pass_at_k(int n, int c, int k) {
  if (c < 0 || c > n || n < 1) throw std::invalid_argument("pass_at_k: need 0 <= c <= n, n >= 1");
  if (k < 1 || k > n) throw std::invalid_argument("pass_at_k: need 1 <= k <= n");
  if (c == 0) return 0.0;
  if (n - c < k) return 1.0;
  double ratio = 1.0;
  for (int i = 0; i < k; ++i)
    ratio *= static_cast<double>(n - c - i) / static_cast<double>(n - i);
  return 1.0 - ratio;
}

inline double pass_at_k_mean(const std::vector<std::pair<int, int>>& per_problem_outcomes,
                             int k) {
  if (per_problem_outcomes.empty())
    throw std::invalid_argument("pass_at_k_mean: empty outcome list");
  double s = 0.0;
  for (const auto& [n, c] : per_problem_outcomes) s += pass_at_k(n, c, k);
  return s / static_cast<double>(per_problem_outcomes.size());
}

// exact pass@k for i.i.d. samples given the correct-set probability mass
inline double pass_at_k_from_mass(double correct_mass_value, int k) {
  if (k < 1) throw std::invalid_argument("pass_at_k_from_mass: k must be >= 1");
  const double p = std::min(1.0, std::max(0.0, correct_mass_value));
  if (p >= 1.0) return 1.0;
  return -std::expm1(static_cast<double>(k) * std::log1p(-p));
}

inline double pass_at_k_exact_mean(const SoftmaxPolicy& policy, const ProblemSuite& suite,
                                   const std::vector<int>& problem_ids, int k) {
  if (problem_ids.empty()) throw std::invalid_argument("pass_at_k_exact_mean: empty id list");
  double s = 0.0;
  for (int pid : problem_ids) s += pass_at_k_from_mass(correct_mass(policy, suite.problem(pid)), k);
  return s / static_cast<double>(problem_ids.size());
}

// ---------------------------------------------------------------------------
// trust-region violations

// fraction of tokens whose probability ratio pi_new / pi_old falls outside
// (1 - eps, 1 + eps)
inline double clip_violation_rate(const SoftmaxPolicy& policy, const SoftmaxPolicy& old_policy,
                                  const ProblemSuite& suite,
                                  const std::vector<std::pair<int, std::vector<int>>>& pairs,
                                  double epsilon) {
  if (epsilon <= 0.0 || epsilon >= 1.0)
    throw std::invalid_argument("clip_violation_rate: epsilon must lie in (0,1)");
  int total = 0, violated = 0;
  for (const auto& [pid, tokens] : pairs) {
    const auto& x = suite.problem(pid).features;
    const auto lp_new = per_token_log_probs(policy, x, tokens);
    const auto lp_old = per_token_log_probs(old_policy, x, tokens);
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      const double rho = std::exp(lp_new[t] - lp_old[t]);
      ++total;
      if (rho < 1.0 - epsilon || rho > 1.0 + epsilon) ++violated;
    }
  }
  return total > 0 ? static_cast<double>(violated) / total : 0.0;
}

inline double clip_violation_rate_probe(const SoftmaxPolicy& policy,
                                        const SoftmaxPolicy& old_policy,
                                        const ProblemSuite& suite, const ProbeSet& probe,
                                        double epsilon) {
  std::vector<std::pair<int, std::vector<int>>> pairs;
  pairs.reserve(probe.entries.size());
  for (const auto& e : probe.entries) pairs.emplace_back(e.problem_id, e.tokens);
  return clip_violation_rate(policy, old_policy, suite, pairs, epsilon);
}

// ---------------------------------------------------------------------------
// strategy mixture tracking

struct StrategyStats {
  double freq_a = 0.0;
  double freq_b = 0.0;
  double freq_unlabeled = 0.0;
  // mean binary accuracy over samples carrying each label; empty when a label
  // never appeared
  std::optional<double> acc_a;
  std::optional<double> acc_b;
};

// n_samples per problem; completions are labeled by first-token parity class
// and accuracies computed within each label.
inline StrategyStats strategy_frequency(const SoftmaxPolicy& policy, const ProblemSuite& suite,
                                        const std::vector<int>& problem_ids, int n_samples,
                                        double temperature, std::uint64_t seed) {
  if (n_samples < 1) throw std::invalid_argument("strategy_frequency: n_samples must be >= 1");
  const RewardSpec binary;
  std::uint64_t count_a = 0, count_b = 0, count_u = 0;
  double correct_a = 0.0, correct_b = 0.0;
  for (int pid : problem_ids) {
    const Problem& p = suite.problem(pid);
    for (int j = 0; j < n_samples; ++j) {
      Rng rng = derive_rng(seed, {stream::strategy, static_cast<std::uint64_t>(pid),
                                  static_cast<std::uint64_t>(j)});
      const Rollout r = sample(policy, p.features, rng, temperature, suite.terminator(), pid);
      const double reward = verify(p, r.tokens, binary, suite.terminator());
      const auto label = suite.strategy_of(r.tokens);
      if (!label) {
        ++count_u;
      } else if (*label == StrategyLabel::A) {
        ++count_a;
        correct_a += reward;
      } else {
        ++count_b;
        correct_b += reward;
      }
    }
  }
  const double total = static_cast<double>(count_a + count_b + count_u);
  StrategyStats stats;
  if (total > 0) {
    stats.freq_a = count_a / total;
    stats.freq_b = count_b / total;
    stats.freq_unlabeled = count_u / total;
  }
  if (count_a > 0) stats.acc_a = correct_a / static_cast<double>(count_a);
  if (count_b > 0) stats.acc_b = correct_b / static_cast<double>(count_b);
  return stats;
}

// ---------------------------------------------------------------------------
// checkpoint pair statistics

struct CheckpointPairStats {
  int step_t = 0;
  int step_t_prime = 0;
  std::optional<double> delta_plus;       // over correct pairs sampled from pi_{theta_T}
  std::vector<double> delta_pass_at_k;    // aligned with the k list, exact mode
  int correct_pairs = 0;
};

// The two-checkpoint protocol: sample k completions per eval problem from the
// earlier checkpoint, keep the correct pairs, and measure the log-likelihood
// drift to the later checkpoint alongside the exact pass@k change.
inline CheckpointPairStats checkpoint_pair_stats(const SoftmaxPolicy& policy_t,
                                                 const SoftmaxPolicy& policy_t_prime, int step_t,
                                                 int step_t_prime, const ProblemSuite& suite,
                                                 const std::vector<int>& eval_ids, int k,
                                                 double temperature,
                                                 const std::vector<int>& pass_k_list,
                                                 std::uint64_t seed) {
  if (step_t_prime < step_t)
    throw std::invalid_argument("checkpoint_pair_stats: need T' >= T");
  CheckpointPairStats stats;
  stats.step_t = step_t;
  stats.step_t_prime = step_t_prime;
  const ProbeSet pair_probe =
      build_probe(policy_t, suite, eval_ids, k, temperature,
                  derive_seed(seed, {stream::pair_probe, static_cast<std::uint64_t>(step_t)}));
  stats.correct_pairs = static_cast<int>(pair_probe.correct_count());
  stats.delta_plus = interference_delta_plus(policy_t, policy_t_prime, suite, pair_probe);
  for (int kk : pass_k_list)
    stats.delta_pass_at_k.push_back(pass_at_k_exact_mean(policy_t_prime, suite, eval_ids, kk) -
                                    pass_at_k_exact_mean(policy_t, suite, eval_ids, kk));
  return stats;
}

// Pearson correlation; nullopt when either side is degenerate
inline std::optional<double> pearson(const std::vector<double>& xs,
                                     const std::vector<double>& ys) {
  if (xs.size() != ys.size()) throw std::invalid_argument("pearson: size mismatch");
  const std::size_t n = xs.size();
  if (n < 2) return std::nullopt;
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace rldyn
