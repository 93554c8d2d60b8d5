#pragma once

// Closed-form verification of the softmax-bandit confidence-change ratios.
//
// Setting: linear softmax policy pi(y_i|x) = softmax(theta^T x)_i with two
// positively rewarded actions y1, y2 and gradient-ascent objectives
//   J_REINFORCE = pi(y1) + pi(y2),   J_MLE = log pi(y1) + log pi(y2).
// One step theta -> theta + eta * grad J moves the logits by
// eta' * grad_z J with eta' = eta * ||x||^2, and the per-action probability
// ratio alpha_i = pi^{t+1}_i / pi^t_i admits the coefficient-table closed form
//   alpha_i = sum_j e^{z_j} / sum_j c_j e^{z_j},   c_j = e^{delta_j - delta_i},
// with separate tables for i in {y1, y2} (case 1) and i outside (case 2).
// numerical_ratio performs the explicit theta update and acts as the
// independent oracle for closed_form_ratio.

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "rldyn/policy.hpp"
#include "rldyn/pretrain.hpp"
#include "rldyn/rng.hpp"

namespace rldyn {

enum class ToyObjective { mle, reinforce };

struct LemmaInstance {
  std::vector<double> logits;    // z^t, length V
  int y1 = 0;                    // positive action with pi(y1) >= pi(y2)
  int y2 = 1;
  double eta_eff = 0.0;          // eta * ||x||^2
  std::vector<double> features;  // the context vector x

  int vocab() const { return static_cast<int>(logits.size()); }
};

// random instance: z ~ N(0, spread^2), x ~ N(0, I_d), positive actions
// ordered so that pi(y1) >= pi(y2)
inline LemmaInstance make_lemma_instance(int vocab, int feature_dim, double eta,
                                         std::uint64_t seed, double spread = 1.5) {
  if (vocab < 3) throw std::invalid_argument("make_lemma_instance: vocab must be >= 3");
  LemmaInstance inst;
  Rng rng = derive_rng(seed, {stream::toy, 1});
  inst.logits.resize(static_cast<std::size_t>(vocab));
  for (auto& z : inst.logits) z = spread * rng.normal();
  inst.features.resize(static_cast<std::size_t>(feature_dim));
  double norm_sq = 0.0;
  for (auto& f : inst.features) {
    f = rng.normal();
    norm_sq += f * f;
  }
  inst.eta_eff = eta * norm_sq;
  inst.y1 = rng.uniform_int(vocab);
  do {
    inst.y2 = rng.uniform_int(vocab);
  } while (inst.y2 == inst.y1);
  if (inst.logits[static_cast<std::size_t>(inst.y1)] <
      inst.logits[static_cast<std::size_t>(inst.y2)])
    std::swap(inst.y1, inst.y2);
  return inst;
}

inline double closed_form_ratio(const LemmaInstance& inst, ToyObjective objective, int action) {
  const int v = inst.vocab();
  if (action < 0 || action >= v)
    throw std::invalid_argument("closed_form_ratio: action out of range");
  const auto probs = detail::softmax(inst.logits, 1.0);
  const double eta = inst.eta_eff;
  const double pi_i = probs[static_cast<std::size_t>(action)];
  const double delta_pi = probs[static_cast<std::size_t>(inst.y1)] +
                          probs[static_cast<std::size_t>(inst.y2)];
  const bool case1 = (action == inst.y1 || action == inst.y2);

  // coefficient c_j for each vocab entry
  auto coeff = [&](int j) {
    const double pi_j = probs[static_cast<std::size_t>(j)];
    const bool j_pos = (j == inst.y1 || j == inst.y2);
    if (case1) {
      if (j == action) return 1.0;
      if (j_pos) {
        // the other positive action
        if (objective == ToyObjective::mle) return std::exp(-2.0 * eta * (pi_j - pi_i));
        return std::exp(-eta * (delta_pi - 1.0) * (pi_j - pi_i));
      }
      if (objective == ToyObjective::mle)
        return std::exp(-eta * (2.0 * (pi_j - pi_i) + 1.0));
      return std::exp(-eta * (delta_pi * (pi_j - pi_i) + pi_i));
    }
    // case 2: action outside {y1, y2}
    if (j_pos) {
      if (objective == ToyObjective::mle)
        return std::exp(-eta * (2.0 * (pi_j - pi_i) - 1.0));
      return std::exp(-eta * (delta_pi * (pi_j - pi_i) - pi_j));
    }
    if (objective == ToyObjective::mle) return std::exp(-2.0 * eta * (pi_j - pi_i));
    return std::exp(-eta * delta_pi * (pi_j - pi_i));
  };

  const double zmax = *std::max_element(inst.logits.begin(), inst.logits.end());
  double num = 0.0, den = 0.0;
  for (int j = 0; j < v; ++j) {
    const double e = std::exp(inst.logits[static_cast<std::size_t>(j)] - zmax);
    num += e;
    den += coeff(j) * e;
  }
  return num / den;
}

namespace detail {

// grad_z of the two-positive-action objectives
inline std::vector<double> toy_logit_gradient(const std::vector<double>& probs, int y1, int y2,
                                              ToyObjective objective) {
  const int v = static_cast<int>(probs.size());
  std::vector<double> g(static_cast<std::size_t>(v), 0.0);
  if (objective == ToyObjective::mle) {
    // grad log pi(y1) + grad log pi(y2) = e1 + e2 - 2 pi
    for (int j = 0; j < v; ++j) g[static_cast<std::size_t>(j)] = -2.0 * probs[static_cast<std::size_t>(j)];
    g[static_cast<std::size_t>(y1)] += 1.0;
    g[static_cast<std::size_t>(y2)] += 1.0;
  } else {
    // grad pi(y1) + grad pi(y2) = pi1 (e1 - pi) + pi2 (e2 - pi)
    const double p1 = probs[static_cast<std::size_t>(y1)];
    const double p2 = probs[static_cast<std::size_t>(y2)];
    for (int j = 0; j < v; ++j)
      g[static_cast<std::size_t>(j)] = -(p1 + p2) * probs[static_cast<std::size_t>(j)];
    g[static_cast<std::size_t>(y1)] += p1;
    g[static_cast<std::size_t>(y2)] += p2;
  }
  return g;
}

}  // namespace detail

// One explicit gradient-ascent step on theta (reconstructed from the logits
// via theta = x z^T / ||x||^2) followed by a softmax re-evaluation. Returns
// pi^{t+1}_action / pi^t_action.
inline double numerical_ratio(const LemmaInstance& inst, ToyObjective objective, int action) {
  const int v = inst.vocab();
  const int d = static_cast<int>(inst.features.size());
  if (action < 0 || action >= v)
    throw std::invalid_argument("numerical_ratio: action out of range");
  double norm_sq = 0.0;
  for (double f : inst.features) norm_sq += f * f;
  const double eta = norm_sq > 0.0 ? inst.eta_eff / norm_sq : 0.0;

  // theta with theta^T x = z
  std::vector<double> theta(static_cast<std::size_t>(d) * v);
  for (int f = 0; f < d; ++f)
    for (int j = 0; j < v; ++j)
      theta[static_cast<std::size_t>(f) * v + j] =
          inst.features[static_cast<std::size_t>(f)] * inst.logits[static_cast<std::size_t>(j)] /
          norm_sq;

  // evaluate the pre-step probabilities through the same theta^T x path as the
  // post-step ones, so eta = 0 returns exactly one
  std::vector<double> z_before(static_cast<std::size_t>(v), 0.0);
  for (int f = 0; f < d; ++f)
    for (int j = 0; j < v; ++j)
      z_before[static_cast<std::size_t>(j)] +=
          theta[static_cast<std::size_t>(f) * v + j] * inst.features[static_cast<std::size_t>(f)];
  const auto probs = detail::softmax(z_before, 1.0);
  const auto gz = detail::toy_logit_gradient(probs, inst.y1, inst.y2, objective);
  // grad_theta J = x (grad_z J)^T
  for (int f = 0; f < d; ++f)
    for (int j = 0; j < v; ++j)
      theta[static_cast<std::size_t>(f) * v + j] +=
          eta * inst.features[static_cast<std::size_t>(f)] * gz[static_cast<std::size_t>(j)];

  std::vector<double> z_new(static_cast<std::size_t>(v), 0.0);
  for (int f = 0; f < d; ++f)
    for (int j = 0; j < v; ++j)
      z_new[static_cast<std::size_t>(j)] +=
          theta[static_cast<std::size_t>(f) * v + j] * inst.features[static_cast<std::size_t>(f)];
  const auto probs_new = detail::softmax(z_new, 1.0);
  return probs_new[static_cast<std::size_t>(action)] / probs[static_cast<std::size_t>(action)];
}

// ---------------------------------------------------------------------------
// toy experiment scenarios

enum class ToyScenario { uniform_pos, uniform_neg, peaky_pos, peaky_neg };

struct ToyTrajectory {
  ToyScenario scenario;
  ToyObjective objective;
  // action roles: positive scenarios reinforce (y1, y2); negative scenarios
  // push down y_neg and watch probe_action
  int y1 = -1;
  int y2 = -1;
  int y_neg = -1;
  int probe_action = -1;
  std::vector<std::vector<double>> probs;        // steps + 1 probability vectors
  std::vector<std::vector<double>> step_ratios;  // per step, alpha for every action
};

// Replicates the V=50, d=5 toy runs: positive scenarios reinforce
// (y1, y2) = (11, 5) from uniform or (11, 8) from a peaky init concentrated
// on action 8; negative scenarios apply ascent on -pi(y-) (REINFORCE) or
// -log pi(y-) (MLE) with y- = 11.
inline ToyTrajectory run_toy_experiment(ToyScenario scenario, ToyObjective objective, int steps,
                                        double eta, std::uint64_t seed, int vocab = 50,
                                        int feature_dim = 5) {
  if (steps < 1) throw std::invalid_argument("run_toy_experiment: steps must be >= 1");
  const bool peaky = (scenario == ToyScenario::peaky_pos || scenario == ToyScenario::peaky_neg);
  const bool positive =
      (scenario == ToyScenario::uniform_pos || scenario == ToyScenario::peaky_pos);
  BanditInstance bandit = make_bandit(vocab, feature_dim, seed,
                                      peaky ? BanditInit::peaky : BanditInit::uniform);

  ToyTrajectory traj;
  traj.scenario = scenario;
  traj.objective = objective;
  if (positive) {
    traj.y1 = 11;
    traj.y2 = peaky ? 8 : 5;
  } else {
    traj.y_neg = 11;
    traj.probe_action = peaky ? 8 : 5;
  }

  const int v = vocab;
  const int d = feature_dim;
  auto logits_of = [&](const SoftmaxPolicy& p) {
    return p.logits(bandit.features, std::span<const int>());
  };

  traj.probs.push_back(detail::softmax(logits_of(bandit.policy), 1.0));
  for (int s = 0; s < steps; ++s) {
    const auto probs = traj.probs.back();
    std::vector<double> gz;
    if (positive) {
      gz = detail::toy_logit_gradient(probs, traj.y1, traj.y2, objective);
    } else {
      // ascent on -pi(y-) or -log pi(y-)
      gz.assign(static_cast<std::size_t>(v), 0.0);
      const double pn = probs[static_cast<std::size_t>(traj.y_neg)];
      if (objective == ToyObjective::mle) {
        for (int j = 0; j < v; ++j) gz[static_cast<std::size_t>(j)] = probs[static_cast<std::size_t>(j)];
        gz[static_cast<std::size_t>(traj.y_neg)] -= 1.0;
      } else {
        for (int j = 0; j < v; ++j)
          gz[static_cast<std::size_t>(j)] = pn * probs[static_cast<std::size_t>(j)];
        gz[static_cast<std::size_t>(traj.y_neg)] -= pn;
      }
    }
    auto& theta = bandit.policy.mutable_bandit_params();
    for (int f = 0; f < d; ++f)
      for (int j = 0; j < v; ++j)
        theta[static_cast<std::size_t>(f) * v + j] +=
            eta * bandit.features[static_cast<std::size_t>(f)] * gz[static_cast<std::size_t>(j)];
    const auto next = detail::softmax(logits_of(bandit.policy), 1.0);
    std::vector<double> ratios(static_cast<std::size_t>(v));
    for (int j = 0; j < v; ++j)
      ratios[static_cast<std::size_t>(j)] =
          next[static_cast<std::size_t>(j)] / probs[static_cast<std::size_t>(j)];
    traj.step_ratios.push_back(std::move(ratios));
    traj.probs.push_back(next);
  }
  return traj;
}

}  // namespace rldyn
