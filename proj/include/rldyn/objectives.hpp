#pragma once

// Update rules: REINFORCE (with optional negative-gradient upweighting),
// MLE / forward-KL, GRPO (group-normalized advantages + clipped probability
// ratio), and SELF (greedy-fail filtering + forward-KL regularization).
// Every rule produces an exact gradient over the policy parameters; steps are
// plain constant-rate SGD ascent.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rldyn/gradient.hpp"
#include "rldyn/policy.hpp"
#include "rldyn/probe.hpp"
#include "rldyn/suite.hpp"

namespace rldyn {

struct GroupRollouts {
  int problem_id = -1;
  std::vector<Rollout> rollouts;
  std::vector<double> rewards;
  std::vector<double> advantages;  // populated by grpo_advantages
};

struct UpdateReport {
  std::string objective;
  double step_size = 0.0;
  double grad_norm = 0.0;
  double clip_fraction = 0.0;  // tokens with rho outside (1-eps, 1+eps), train batch
  int problems_filtered = 0;   // SELF only
  double kl_estimate = 0.0;
  int tokens_total = 0;
  int tokens_clipped = 0;
  double reward_mean = 0.0;
};

enum class BaselineMode { none, mean };

// ---------------------------------------------------------------------------
// REINFORCE

// sum over rollouts of A(y) * grad log pi(y|x); negative-advantage terms are
// scaled by neg_weight (W-REINFORCE for neg_weight > 1). Rollouts must come
// from the current policy for the estimator to be on-policy.
inline GradientVector reinforce_grad(const SoftmaxPolicy& policy, const ProblemSuite& suite,
                                     const std::vector<Rollout>& batch, BaselineMode baseline,
                                     double neg_weight = 1.0) {
  if (batch.empty()) throw std::invalid_argument("reinforce_grad: empty batch");
  if (neg_weight <= 0.0) throw std::invalid_argument("reinforce_grad: neg_weight must be positive");
  double b = 0.0;
  if (baseline == BaselineMode::mean) {
    for (const auto& r : batch) b += r.reward;
    b /= static_cast<double>(batch.size());
  }
  std::map<std::uint64_t, double> acc;
  for (const auto& r : batch) {
    const double adv = r.reward - b;
    if (adv == 0.0) continue;
    const double coef = adv < 0.0 ? neg_weight * adv : adv;
    detail::accumulate_grad_log_prob(policy, suite.problem(r.problem_id).features, r.tokens,
                                     coef, acc);
  }
  return GradientVector::from_map(policy.param_count(), acc);
}

// ---------------------------------------------------------------------------
// MLE / forward KL

// mean of grad log pi over the pairs; ascending increases their likelihood.
// This is also the ascent direction of -KL(pi_b || pi_theta) when the pairs
// are samples from pi_b.
inline GradientVector mle_grad(const SoftmaxPolicy& policy, const ProblemSuite& suite,
                               const std::vector<std::pair<int, std::vector<int>>>& pairs) {
  if (pairs.empty()) throw std::invalid_argument("mle_grad: empty pair list");
  std::map<std::uint64_t, double> acc;
  const double w = 1.0 / static_cast<double>(pairs.size());
  for (const auto& [pid, tokens] : pairs)
    detail::accumulate_grad_log_prob(policy, suite.problem(pid).features, tokens, w, acc);
  return GradientVector::from_map(policy.param_count(), acc);
}

// ---------------------------------------------------------------------------
// GRPO

// A_i = (r_i - mean) / std with the sample (G-1) standard deviation; a
// degenerate group (std < 1e-8) carries no signal and gets all-zero advantages.
inline std::vector<double> grpo_advantages(const std::vector<double>& rewards) {
  const std::size_t g = rewards.size();
  if (g < 2) throw std::invalid_argument("grpo_advantages: group size must be >= 2");
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= static_cast<double>(g);
  double ss = 0.0;
  for (double r : rewards) ss += (r - mean) * (r - mean);
  const double sd = std::sqrt(ss / static_cast<double>(g - 1));
  std::vector<double> a(g, 0.0);
  if (sd < 1e-8) return a;
  for (std::size_t i = 0; i < g; ++i) a[i] = (rewards[i] - mean) / sd;
  return a;
}

namespace detail {

struct ClipStats {
  int tokens_total = 0;
  int tokens_clipped = 0;
};

// Exact ascent gradient of the clipped surrogate
//   sum_t min(rho_t A, clip(rho_t, 1-eps, 1+eps) A),
// rho_t = pi_theta(y_t|s_t) / pi_old(y_t|s_t); pi_old comes from the recorded
// behavior log-probs. Tokens on the flat branch contribute zero gradient.
inline ClipStats accumulate_clipped_ratio_grad(const SoftmaxPolicy& policy,
                                               const ProblemSuite& suite,
                                               const std::vector<GroupRollouts>& groups,
                                               double epsilon,
                                               std::map<std::uint64_t, double>& acc) {
  if (epsilon <= 0.0 || epsilon >= 1.0)
    throw std::invalid_argument("grpo: epsilon must lie in (0,1)");
  ClipStats stats;
  for (const auto& group : groups) {
    const Problem& problem = suite.problem(group.problem_id);
    if (group.rollouts.size() != group.advantages.size())
      throw std::invalid_argument("grpo: rollouts/advantages size mismatch");
    for (std::size_t i = 0; i < group.rollouts.size(); ++i) {
      const Rollout& r = group.rollouts[i];
      const double adv = group.advantages[i];
      if (r.logp_behavior.size() != r.tokens.size())
        throw std::invalid_argument("grpo: rollout missing behavior log-probs");
      const auto logp_now = per_token_log_probs(policy, problem.features, r.tokens);
      for (std::size_t t = 0; t < r.tokens.size(); ++t) {
        const double rho = std::exp(logp_now[t] - r.logp_behavior[t]);
        ++stats.tokens_total;
        if (rho < 1.0 - epsilon || rho > 1.0 + epsilon) ++stats.tokens_clipped;
        const bool flat = (adv > 0.0 && rho > 1.0 + epsilon) ||
                          (adv < 0.0 && rho < 1.0 - epsilon);
        if (flat || adv == 0.0) continue;
        // d/dtheta [rho_t * A] = A * rho_t * grad log pi_theta(y_t | s_t)
        const auto prefix = std::span<const int>(r.tokens).subspan(0, t);
        const auto probs = softmax(policy.logits(problem.features, prefix), 1.0);
        const std::uint64_t base =
            policy.prefix_index(prefix) *
            static_cast<std::uint64_t>(policy.feature_dim()) * policy.vocab_size();
        const double coef = adv * rho;
        for (int f = 0; f < policy.feature_dim(); ++f) {
          const double xf = problem.features[static_cast<std::size_t>(f)];
          if (xf == 0.0) continue;
          const std::uint64_t row = base + static_cast<std::uint64_t>(f) * policy.vocab_size();
          for (int v = 0; v < policy.vocab_size(); ++v) {
            const double e = (v == r.tokens[t]) ? 1.0 : 0.0;
            acc[row + static_cast<std::uint64_t>(v)] +=
                coef * xf * (e - probs[static_cast<std::size_t>(v)]);
          }
        }
      }
    }
  }
  return stats;
}

inline double mean_group_reward(const std::vector<GroupRollouts>& groups) {
  double s = 0.0;
  int n = 0;
  for (const auto& g : groups)
    for (double r : g.rewards) {
      s += r;
      ++n;
    }
  return n > 0 ? s / n : 0.0;
}

}  // namespace detail

// G rollouts from the current policy for one problem, with rewards and
// group-normalized advantages filled in
inline GroupRollouts sample_group(const SoftmaxPolicy& policy, const ProblemSuite& suite,
                                  int problem_id, int group_size, double temperature,
                                  const RewardSpec& reward_spec, Rng& rng) {
  if (group_size < 2) throw std::invalid_argument("sample_group: group size must be >= 2");
  GroupRollouts group;
  group.problem_id = problem_id;
  const Problem& p = suite.problem(problem_id);
  for (int i = 0; i < group_size; ++i) {
    Rollout r = sample(policy, p.features, rng, temperature, suite.terminator(), problem_id);
    r.reward = verify(p, r.tokens, reward_spec, suite.terminator());
    group.rewards.push_back(r.reward);
    group.rollouts.push_back(std::move(r));
  }
  group.advantages = grpo_advantages(group.rewards);
  return group;
}

enum class ForwardKlMode {
  exact,          // exact tree-walk gradient of -KL(pi_b || pi_theta)
  probe_pairs,    // sample estimate over all probe pairs
  probe_correct,  // sample estimate over correct probe pairs (SFT reading)
};

struct SelfStepOptions {
  bool filter = true;       // keep only problems whose greedy decode fails
  double epsilon = 0.2;     // PPO clip range
  double step_size = 0.05;  // eta
  double kl_beta = 1e-4;    // forward-KL weight
  ForwardKlMode kl_mode = ForwardKlMode::exact;
};

// Exact per-problem forward KL and its ascent gradient. The KL of two
// sequence distributions decomposes over prefix states weighted by the base
// policy's reach probability:
//   KL(pi_b || pi_theta) = sum_s P_b(s|x) KL(pi_b(.|s,x) || pi_theta(.|s,x)),
// and the gradient of -KL with respect to the logits at state s is
// P_b(s) (pi_b - pi_theta). The desk-scale prefix tree is small enough to
// walk exactly, pruning branches below a reach-probability cutoff.
namespace detail {

inline double accumulate_forward_kl_exact(const SoftmaxPolicy& policy,
                                          const SoftmaxPolicy& base, const Problem& problem,
                                          double weight, int terminator,
                                          std::map<std::uint64_t, double>& acc,
                                          std::vector<int>& prefix, double reach_mass) {
  if (reach_mass < 1e-6) return 0.0;
  const auto pb = softmax(base.logits(problem.features, prefix), 1.0);
  const auto pt = softmax(policy.logits(problem.features, prefix), 1.0);
  double kl = 0.0;
  for (int v = 0; v < policy.vocab_size(); ++v)
    kl += pb[static_cast<std::size_t>(v)] *
          std::log(pb[static_cast<std::size_t>(v)] / pt[static_cast<std::size_t>(v)]);
  kl *= reach_mass;

  if (weight != 0.0) {
    const std::uint64_t block =
        policy.prefix_index(prefix) *
        static_cast<std::uint64_t>(policy.feature_dim()) * policy.vocab_size();
    for (int f = 0; f < policy.feature_dim(); ++f) {
      const double xf = problem.features[static_cast<std::size_t>(f)];
      if (xf == 0.0) continue;
      const std::uint64_t row = block + static_cast<std::uint64_t>(f) * policy.vocab_size();
      for (int v = 0; v < policy.vocab_size(); ++v)
        acc[row + static_cast<std::uint64_t>(v)] +=
            weight * reach_mass * xf *
            (pb[static_cast<std::size_t>(v)] - pt[static_cast<std::size_t>(v)]);
    }
  }

  if (static_cast<int>(prefix.size()) + 1 < policy.max_len()) {
    for (int v = 0; v < policy.vocab_size(); ++v) {
      if (v == terminator) continue;  // terminated sequences have no next state
      prefix.push_back(v);
      kl += accumulate_forward_kl_exact(policy, base, problem, weight, terminator, acc, prefix,
                                        reach_mass * pb[static_cast<std::size_t>(v)]);
      prefix.pop_back();
    }
  }
  return kl;
}

}  // namespace detail

// mean over the given problems of KL(pi_b || pi_theta); accumulates
// beta * grad of the negated KL into acc (ascent direction)
inline double forward_kl_exact(const SoftmaxPolicy& policy, const SoftmaxPolicy& base,
                               const ProblemSuite& suite, const std::vector<int>& ids,
                               double beta, std::map<std::uint64_t, double>& acc) {
  if (ids.empty()) return 0.0;
  double kl = 0.0;
  const double weight = beta / static_cast<double>(ids.size());
  std::vector<int> prefix;
  for (int pid : ids)
    kl += detail::accumulate_forward_kl_exact(policy, base, suite.problem(pid), weight,
                                              suite.terminator(), acc, prefix, 1.0);
  return kl / static_cast<double>(ids.size());
}

// GRPO ascent step. Advantage vectors must already be populated (see
// grpo_advantages). kl_beta > 0 adds a reverse-KL(pi_theta || pi_ref) penalty
// estimated over the visited rollout states (the Eq.-style regularizer; off by
// default, matching training without KL).
inline std::pair<SoftmaxPolicy, UpdateReport> grpo_step(
    const SoftmaxPolicy& policy, const SoftmaxPolicy& old_policy, const ProblemSuite& suite,
    const std::vector<GroupRollouts>& groups, double epsilon, double step_size,
    double kl_beta = 0.0, const SoftmaxPolicy* kl_ref = nullptr) {
  (void)old_policy;  // rollout behavior log-probs carry pi_old at the visited tokens
  std::map<std::uint64_t, double> acc;
  const auto stats = detail::accumulate_clipped_ratio_grad(policy, suite, groups, epsilon, acc);

  UpdateReport report;
  report.objective = "grpo";
  report.step_size = step_size;
  report.tokens_total = stats.tokens_total;
  report.tokens_clipped = stats.tokens_clipped;
  report.clip_fraction =
      stats.tokens_total > 0 ? static_cast<double>(stats.tokens_clipped) / stats.tokens_total : 0.0;
  report.reward_mean = detail::mean_group_reward(groups);

  if (kl_beta > 0.0) {
    const SoftmaxPolicy& ref = kl_ref ? *kl_ref : old_policy;
    double kl_sum = 0.0;
    int kl_states = 0;
    for (const auto& group : groups) {
      const Problem& problem = suite.problem(group.problem_id);
      for (const auto& r : group.rollouts) {
        for (std::size_t t = 0; t < r.tokens.size(); ++t) {
          const auto prefix = std::span<const int>(r.tokens).subspan(0, t);
          const auto p = detail::softmax(policy.logits(problem.features, prefix), 1.0);
          const auto q = detail::softmax(ref.logits(problem.features, prefix), 1.0);
          double kl = 0.0;
          for (int v = 0; v < policy.vocab_size(); ++v)
            kl += p[static_cast<std::size_t>(v)] *
                  std::log(p[static_cast<std::size_t>(v)] / q[static_cast<std::size_t>(v)]);
          kl_sum += kl;
          ++kl_states;
          // d KL / d z_k = p_k (log(p_k/q_k) - KL); penalty enters with -beta
          const std::uint64_t base =
              policy.prefix_index(prefix) *
              static_cast<std::uint64_t>(policy.feature_dim()) * policy.vocab_size();
          for (int f = 0; f < policy.feature_dim(); ++f) {
            const double xf = problem.features[static_cast<std::size_t>(f)];
            if (xf == 0.0) continue;
            const std::uint64_t row = base + static_cast<std::uint64_t>(f) * policy.vocab_size();
            for (int v = 0; v < policy.vocab_size(); ++v) {
              const double pk = p[static_cast<std::size_t>(v)];
              const double dkl = pk * (std::log(pk / q[static_cast<std::size_t>(v)]) - kl);
              acc[row + static_cast<std::uint64_t>(v)] += -kl_beta * xf * dkl;
            }
          }
        }
      }
    }
    report.kl_estimate = kl_states > 0 ? kl_sum / kl_states : 0.0;
  }

  GradientVector grad = GradientVector::from_map(policy.param_count(), acc);
  report.grad_norm = grad.norm();
  SoftmaxPolicy updated = policy;
  updated.apply_gradient(grad, step_size);
  return {std::move(updated), std::move(report)};
}

// Partition problems by whether the greedy response fails binary verification.
// kept = greedy-incorrect (the problems SELF trains on); dropped = the rest.
inline std::pair<std::vector<int>, std::vector<int>> self_filter(const SoftmaxPolicy& policy,
                                                                 const ProblemSuite& suite,
                                                                 const std::vector<int>& ids) {
  std::vector<int> kept, dropped;
  const RewardSpec binary;
  for (int id : ids) {
    const Problem& p = suite.problem(id);
    const auto y_star = greedy_decode(policy, p.features, suite.terminator());
    if (verify(p, y_star, binary, suite.terminator()) == 1.0)
      dropped.push_back(id);
    else
      kept.push_back(id);
  }
  return {kept, dropped};
}

// SELF step: the GRPO surrogate restricted to greedy-fail problems plus a
// kl_beta-weighted forward-KL pull toward the base model. The KL term is
// computed exactly over the prefix tree by default; the probe-pair sample
// estimators remain available. With the filter disabled and kl_beta = 0 this
// reproduces grpo_step exactly. An empty kept set reduces the step to pure
// forward-KL regularization.
inline std::pair<SoftmaxPolicy, UpdateReport> self_step(
    const SoftmaxPolicy& policy, const SoftmaxPolicy& old_policy, const ProblemSuite& suite,
    const std::vector<GroupRollouts>& groups, const ProbeSet& probe,
    const SoftmaxPolicy* base_policy, const SelfStepOptions& opts) {
  (void)old_policy;
  if (opts.kl_mode == ForwardKlMode::exact && opts.kl_beta > 0.0 && base_policy == nullptr)
    throw std::invalid_argument("self_step: exact forward KL requires the base policy");

  std::vector<const GroupRollouts*> kept_groups;
  int dropped_count = 0;
  if (opts.filter) {
    std::vector<int> ids;
    ids.reserve(groups.size());
    for (const auto& g : groups) ids.push_back(g.problem_id);
    const auto [kept, dropped] = self_filter(policy, suite, ids);
    dropped_count = static_cast<int>(dropped.size());
    std::set<int> kept_set(kept.begin(), kept.end());
    for (const auto& g : groups)
      if (kept_set.count(g.problem_id)) kept_groups.push_back(&g);
  } else {
    for (const auto& g : groups) kept_groups.push_back(&g);
  }

  std::vector<GroupRollouts> kept_copy;
  kept_copy.reserve(kept_groups.size());
  for (const auto* g : kept_groups) kept_copy.push_back(*g);

  std::map<std::uint64_t, double> acc;
  const auto stats =
      detail::accumulate_clipped_ratio_grad(policy, suite, kept_copy, opts.epsilon, acc);

  double kl_estimate = 0.0;
  if (opts.kl_mode == ForwardKlMode::exact) {
    if (opts.kl_beta > 0.0 && base_policy != nullptr) {
      std::vector<int> train_ids;
      std::set<int> seen;
      for (const auto& e : probe.entries) seen.insert(e.problem_id);
      train_ids.assign(seen.begin(), seen.end());
      kl_estimate = forward_kl_exact(policy, *base_policy, suite, train_ids, opts.kl_beta, acc);
    }
  } else {
    const bool correct_only = opts.kl_mode == ForwardKlMode::probe_correct;
    int kl_pairs = 0;
    const double n_used = [&] {
      int n = 0;
      for (const auto& e : probe.entries)
        if (!correct_only || e.reward == 1.0) ++n;
      return static_cast<double>(n);
    }();
    for (const auto& e : probe.entries) {
      if (correct_only && e.reward != 1.0) continue;
      const Problem& p = suite.problem(e.problem_id);
      kl_estimate += e.logp_base - log_prob(policy, p.features, e.tokens);
      ++kl_pairs;
      if (opts.kl_beta > 0.0 && n_used > 0)
        detail::accumulate_grad_log_prob(policy, p.features, e.tokens, opts.kl_beta / n_used,
                                         acc);
    }
    if (kl_pairs > 0) kl_estimate /= kl_pairs;
  }

  GradientVector grad = GradientVector::from_map(policy.param_count(), acc);
  UpdateReport report;
  report.objective = "self";
  report.step_size = opts.step_size;
  report.grad_norm = grad.norm();
  report.tokens_total = stats.tokens_total;
  report.tokens_clipped = stats.tokens_clipped;
  report.clip_fraction =
      stats.tokens_total > 0 ? static_cast<double>(stats.tokens_clipped) / stats.tokens_total : 0.0;
  report.problems_filtered = dropped_count;
  report.kl_estimate = kl_estimate;
  report.reward_mean = detail::mean_group_reward(groups);

  SoftmaxPolicy updated = policy;
  updated.apply_gradient(grad, opts.step_size);
  return {std::move(updated), std::move(report)};
}

}  // namespace rldyn
