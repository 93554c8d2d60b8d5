#pragma once

// Base-model construction. pretrain_base runs maximum-likelihood SGD on
// completions sampled proportionally to each problem's exposure weights, so
// high-exposure problems end up with confident correct modes while
// low-exposure problems keep their correct solutions in low-likelihood
// regions behind a confident distractor mode. make_bandit builds the toy
// contextual-bandit instances (uniform or peaky initialization).

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "rldyn/policy.hpp"
#include "rldyn/suite.hpp"

namespace rldyn {

struct ConstructionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct PretrainConfig {
  int exposure_steps = 20000;
  double learning_rate = 0.3;
  double required_margin = 1.0;  // nats, high-vs-low mean correct log-likelihood
};

struct PretrainReport {
  // high-vs-low difference of the mean per-token log-likelihood of the
  // correct sets, in nats (a uniform policy scores exactly 0)
  double margin = 0.0;
  double high_greedy_solve_rate = 0.0;
  double low_greedy_solve_rate = 0.0;
  double mean_correct_mass_high = 0.0;  // mean total probability of C(x)
  double mean_correct_mass_low = 0.0;
};

inline double mean_correct_log_prob_per_token(const SoftmaxPolicy& policy, const Problem& p) {
  double s = 0.0;
  for (const auto& c : p.correct)
    s += log_prob(policy, p.features, c.tokens) / static_cast<double>(c.tokens.size());
  return s / static_cast<double>(p.correct.size());
}

inline PretrainReport evaluate_base_bias(const SoftmaxPolicy& policy, const ProblemSuite& suite) {
  PretrainReport rep;
  double lp_high = 0.0, lp_low = 0.0;
  int n_high = 0, n_low = 0, solved_high = 0, solved_low = 0;
  const RewardSpec binary;
  for (const auto& p : suite.problems) {
    const double lp = mean_correct_log_prob_per_token(policy, p);
    const auto y_star = greedy_decode(policy, p.features, suite.terminator());
    const bool solved = verify(p, y_star, binary, suite.terminator()) == 1.0;
    if (p.is_high()) {
      lp_high += lp;
      rep.mean_correct_mass_high += correct_mass(policy, p);
      solved_high += solved ? 1 : 0;
      ++n_high;
    } else {
      lp_low += lp;
      rep.mean_correct_mass_low += correct_mass(policy, p);
      solved_low += solved ? 1 : 0;
      ++n_low;
    }
  }
  if (n_high > 0) {
    lp_high /= n_high;
    rep.mean_correct_mass_high /= n_high;
    rep.high_greedy_solve_rate = static_cast<double>(solved_high) / n_high;
  }
  if (n_low > 0) {
    lp_low /= n_low;
    rep.mean_correct_mass_low /= n_low;
    rep.low_greedy_solve_rate = static_cast<double>(solved_low) / n_low;
  }
  rep.margin = (n_high > 0 && n_low > 0) ? lp_high - lp_low : 0.0;
  return rep;
}

// MLE pretraining over the whole suite (train and test problems alike; the
// policy trained later only ever touches the train split). Throws
// ConstructionError if the requested bias margin is not reached.
inline PretrainReport pretrain_base(SoftmaxPolicy& policy, const ProblemSuite& suite,
                                    const PretrainConfig& cfg, std::uint64_t seed) {
  std::vector<double> problem_weights;
  problem_weights.reserve(suite.problems.size());
  for (const auto& p : suite.problems) problem_weights.push_back(p.base_frequency);

  Rng rng = derive_rng(seed, {stream::pretrain});
  for (int step = 0; step < cfg.exposure_steps; ++step) {
    const Problem& p = suite.problems[static_cast<std::size_t>(rng.weighted(problem_weights))];
    const double share =
        p.is_high() ? suite.config.correct_share_high : suite.config.correct_share_low;
    std::span<const int> target;
    if (p.distractors.empty() || rng.uniform01() < share) {
      std::vector<double> w;
      for (const auto& c : p.correct) w.push_back(c.exposure_weight);
      target = p.correct[static_cast<std::size_t>(rng.weighted(w))].tokens;
    } else {
      std::vector<double> w;
      for (const auto& dtr : p.distractors) w.push_back(dtr.exposure_weight);
      target = p.distractors[static_cast<std::size_t>(rng.weighted(w))].tokens;
    }
    std::map<std::uint64_t, double> acc;
    detail::accumulate_grad_log_prob(policy, p.features, target, 1.0, acc);
    for (const auto& [idx, v] : acc) policy.add_param(idx, cfg.learning_rate * v);
  }

  PretrainReport rep = evaluate_base_bias(policy, suite);
  if (cfg.exposure_steps > 0 && rep.margin < cfg.required_margin)
    throw ConstructionError("pretrain_base: bias margin " + std::to_string(rep.margin) +
                            " below required " + std::to_string(cfg.required_margin) +
                            " after " + std::to_string(cfg.exposure_steps) +
                            " exposure steps; increase exposure_steps");
  if (cfg.exposure_steps == 0 && cfg.required_margin > 0.0)
    throw ConstructionError("pretrain_base: zero exposure steps cannot reach a positive margin");
  return rep;
}

// ---------------------------------------------------------------------------
// toy bandit construction

enum class BanditInit { uniform, peaky };

struct BanditInstance {
  SoftmaxPolicy policy;        // bandit kind, d x V
  std::vector<double> features;  // the single context vector x
};

// uniform: theta = 0. peaky: logits via theta = x z^T / ||x||^2 with z putting
// `margin` nats on each peak action (default peak {8}, margin 7, which gives
// pi(peak) ~ 0.96 at V=50).
inline BanditInstance make_bandit(int vocab_size, int feature_dim, std::uint64_t seed,
                                  BanditInit init, std::vector<int> peak_actions = {8},
                                  double margin = 7.0) {
  if (vocab_size < 3) throw std::invalid_argument("make_bandit: vocab_size must be >= 3");
  if (feature_dim < 1) throw std::invalid_argument("make_bandit: feature_dim must be >= 1");
  BanditInstance inst;
  inst.policy = SoftmaxPolicy::bandit(feature_dim, vocab_size);
  Rng rng = derive_rng(seed, {stream::bandit});
  inst.features.resize(static_cast<std::size_t>(feature_dim));
  double norm_sq = 0.0;
  for (auto& f : inst.features) {
    f = rng.normal();
    norm_sq += f * f;
  }
  if (init == BanditInit::peaky) {
    std::vector<double> target(static_cast<std::size_t>(vocab_size), 0.0);
    for (int a : peak_actions) {
      if (a < 0 || a >= vocab_size) throw std::invalid_argument("make_bandit: peak out of range");
      target[static_cast<std::size_t>(a)] = margin;
    }
    auto& theta = inst.policy.mutable_bandit_params();
    for (int f = 0; f < feature_dim; ++f)
      for (int v = 0; v < vocab_size; ++v)
        theta[static_cast<std::size_t>(f) * vocab_size + v] =
            inst.features[static_cast<std::size_t>(f)] * target[static_cast<std::size_t>(v)] /
            norm_sq;
  }
  return inst;
}

}  // namespace rldyn
