#pragma once

// Exact-likelihood, exact-gradient softmax policies.
//
// Two kinds share one parameter layout W[state] in R^{d x V}:
//   bandit   — single state, logits z = W^T x for a context feature x; an
//              action is a length-1 token sequence.
//   sequence — autoregressive over prefix states. The state is the prefix
//              y_<t alone; the problem enters through its feature vector, so
//              logits(x, y_<t) = W[y_<t]^T x. With one-hot problem features
//              this is exactly a tabular per-(problem, prefix) policy; any
//              shared feature coordinate couples problems and lets updates on
//              one problem move the distribution of another.
//
// Likelihood is always evaluated at temperature 1; temperature only shapes
// sampling. Canonical parameter enumeration (for GradientVector and the
// checkpoint format): flat index = prefix_index * (d*V) + feature * V + token,
// prefixes enumerated by length then base-V value. Blocks are lazily
// materialized; an absent block reads as zeros.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rldyn/gradient.hpp"
#include "rldyn/rng.hpp"

namespace rldyn {

enum class PolicyKind { bandit, sequence };

struct Rollout {
  int problem_id = -1;
  std::vector<int> tokens;
  double reward = 0.0;
  // per-token log-probs at tau=1 under the policy that generated the rollout
  std::vector<double> logp_behavior;

  double logp_behavior_total() const {
    double s = 0.0;
    for (double v : logp_behavior) s += v;
    return s;
  }
};

namespace detail {

inline std::vector<double> softmax(std::vector<double> z, double temperature) {
  if (temperature != 1.0)
    for (double& v : z) v /= temperature;
  const double m = *std::max_element(z.begin(), z.end());
  double total = 0.0;
  for (double& v : z) {
    v = std::exp(v - m);
    total += v;
  }
  for (double& v : z) v /= total;
  return z;
}

inline double log_sum_exp(const std::vector<double>& z) {
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - m);
  return m + std::log(s);
}

}  // namespace detail

class SoftmaxPolicy {
 public:
  SoftmaxPolicy() = default;

  static SoftmaxPolicy bandit(int feature_dim, int vocab_size) {
    SoftmaxPolicy p;
    p.kind_ = PolicyKind::bandit;
    p.init(feature_dim, vocab_size, 1);
    p.theta_.assign(static_cast<std::size_t>(feature_dim) * vocab_size, 0.0);
    return p;
  }

  static SoftmaxPolicy sequence(int feature_dim, int vocab_size, int max_len) {
    SoftmaxPolicy p;
    p.kind_ = PolicyKind::sequence;
    p.init(feature_dim, vocab_size, max_len);
    return p;
  }

  PolicyKind kind() const { return kind_; }
  int feature_dim() const { return d_; }
  int vocab_size() const { return V_; }
  int max_len() const { return T_; }
  double temperature() const { return temperature_; }
  void set_temperature(double t) {
    if (t <= 0.0) throw std::invalid_argument("SoftmaxPolicy: temperature must be positive");
    temperature_ = t;
  }

  // number of addressable prefix states (all token strings of length < T)
  std::uint64_t prefix_count() const {
    if (kind_ == PolicyKind::bandit) return 1;
    std::uint64_t s = 0, pow = 1;
    for (int l = 0; l < T_; ++l) {
      s += pow;
      pow *= static_cast<std::uint64_t>(V_);
    }
    return s;
  }

  std::uint64_t param_count() const {
    return prefix_count() * static_cast<std::uint64_t>(d_) * static_cast<std::uint64_t>(V_);
  }

  std::uint64_t prefix_index(std::span<const int> prefix) const {
    if (kind_ == PolicyKind::bandit) {
      if (!prefix.empty())
        throw std::domain_error("SoftmaxPolicy: bandit policies have no prefix states");
      return 0;
    }
    if (static_cast<int>(prefix.size()) >= T_)
      throw std::domain_error("SoftmaxPolicy: prefix length must be < max_len");
    std::uint64_t offset = 0, pow = 1;
    for (std::size_t l = 0; l < prefix.size(); ++l) {
      offset += pow;
      pow *= static_cast<std::uint64_t>(V_);
    }
    std::uint64_t value = 0;
    for (int t : prefix) {
      check_token(t);
      value = value * static_cast<std::uint64_t>(V_) + static_cast<std::uint64_t>(t);
    }
    return offset + value;
  }

  // inverse of prefix_index, used by the checkpoint reader and flattening tests
  std::vector<int> prefix_tokens(std::uint64_t index) const {
    std::uint64_t offset = 0, pow = 1;
    int len = 0;
    while (index >= offset + pow) {
      offset += pow;
      pow *= static_cast<std::uint64_t>(V_);
      ++len;
      if (len >= T_) throw std::out_of_range("SoftmaxPolicy: prefix index out of range");
    }
    std::uint64_t value = index - offset;
    std::vector<int> tokens(static_cast<std::size_t>(len));
    for (int i = len - 1; i >= 0; --i) {
      tokens[static_cast<std::size_t>(i)] = static_cast<int>(value % V_);
      value /= static_cast<std::uint64_t>(V_);
    }
    return tokens;
  }

  // logits at tau=1 for the next token given (features, prefix)
  std::vector<double> logits(std::span<const double> x, std::span<const int> prefix) const {
    check_features(x);
    std::vector<double> z(static_cast<std::size_t>(V_), 0.0);
    const double* block = nullptr;
    if (kind_ == PolicyKind::bandit) {
      if (!prefix.empty())
        throw std::domain_error("SoftmaxPolicy: bandit policies have no prefix states");
      block = theta_.data();
    } else {
      auto it = blocks_.find(prefix_index(prefix));
      if (it == blocks_.end()) return z;
      block = it->second.data();
    }
    for (int f = 0; f < d_; ++f) {
      const double xf = x[static_cast<std::size_t>(f)];
      if (xf == 0.0) continue;
      const double* row = block + static_cast<std::size_t>(f) * V_;
      for (int v = 0; v < V_; ++v) z[static_cast<std::size_t>(v)] += xf * row[v];
    }
    return z;
  }

  double param(std::uint64_t index) const {
    const auto [state, offset] = split_index(index);
    if (kind_ == PolicyKind::bandit) return theta_[offset];
    auto it = blocks_.find(state);
    return it == blocks_.end() ? 0.0 : it->second[offset];
  }

  void set_param(std::uint64_t index, double value) {
    const auto [state, offset] = split_index(index);
    if (kind_ == PolicyKind::bandit) {
      theta_[offset] = value;
    } else {
      block_for(state)[offset] = value;
    }
  }

  void add_param(std::uint64_t index, double delta) {
    const auto [state, offset] = split_index(index);
    if (kind_ == PolicyKind::bandit) {
      theta_[offset] += delta;
    } else {
      block_for(state)[offset] += delta;
    }
  }

  void apply_gradient(const GradientVector& grad, double step_size) {
    if (grad.dim() != param_count())
      throw std::invalid_argument("SoftmaxPolicy::apply_gradient: dimension mismatch");
    for (const auto& [idx, v] : grad.entries()) add_param(idx, step_size * v);
  }

  // materialized sequence blocks, keyed by prefix index (ordered for
  // deterministic serialization and flattening)
  const std::map<std::uint64_t, std::vector<double>>& blocks() const { return blocks_; }
  const std::vector<double>& bandit_params() const { return theta_; }

  std::vector<double>& mutable_block(std::uint64_t prefix_idx) { return block_for(prefix_idx); }
  std::vector<double>& mutable_bandit_params() { return theta_; }

  bool operator==(const SoftmaxPolicy& o) const {
    if (kind_ != o.kind_ || d_ != o.d_ || V_ != o.V_ || T_ != o.T_ ||
        temperature_ != o.temperature_ || theta_ != o.theta_)
      return false;
    // blocks compare modulo materialization of all-zero blocks
    auto nonzero = [](const std::map<std::uint64_t, std::vector<double>>& m) {
      std::map<std::uint64_t, std::vector<double>> out;
      for (const auto& [k, v] : m)
        if (std::any_of(v.begin(), v.end(), [](double x) { return x != 0.0; })) out[k] = v;
      return out;
    };
    return nonzero(blocks_) == nonzero(o.blocks_);
  }

  void check_token(int t) const {
    if (t < 0 || t >= V_)
      throw std::domain_error("SoftmaxPolicy: token " + std::to_string(t) +
                              " out of range [0, " + std::to_string(V_) + ")");
  }

  void check_features(std::span<const double> x) const {
    if (static_cast<int>(x.size()) != d_)
      throw std::invalid_argument("SoftmaxPolicy: feature vector has size " +
                                  std::to_string(x.size()) + ", expected " + std::to_string(d_));
  }

  void check_sequence(std::span<const int> y) const {
    if (kind_ == PolicyKind::bandit) {
      if (y.size() != 1)
        throw std::domain_error("SoftmaxPolicy: bandit actions are single tokens");
    } else if (static_cast<int>(y.size()) > T_) {
      throw std::domain_error("SoftmaxPolicy: sequence longer than max_len");
    }
    for (int t : y) check_token(t);
  }

 private:
  void init(int feature_dim, int vocab_size, int max_len) {
    if (feature_dim <= 0 || vocab_size <= 0 || max_len <= 0)
      throw std::invalid_argument("SoftmaxPolicy: dimensions must be positive");
    d_ = feature_dim;
    V_ = vocab_size;
    T_ = max_len;
  }

  std::pair<std::uint64_t, std::size_t> split_index(std::uint64_t index) const {
    if (index >= param_count())
      throw std::out_of_range("SoftmaxPolicy: parameter index out of range");
    const std::uint64_t block_size = static_cast<std::uint64_t>(d_) * V_;
    return {index / block_size, static_cast<std::size_t>(index % block_size)};
  }

  std::vector<double>& block_for(std::uint64_t prefix_idx) {
    auto it = blocks_.find(prefix_idx);
    if (it == blocks_.end())
      it = blocks_.emplace(prefix_idx, std::vector<double>(static_cast<std::size_t>(d_) * V_, 0.0))
               .first;
    return it->second;
  }

  PolicyKind kind_ = PolicyKind::bandit;
  int d_ = 0;
  int V_ = 0;
  int T_ = 1;
  double temperature_ = 1.0;
  std::vector<double> theta_;                            // bandit storage, d x V row-major
  std::map<std::uint64_t, std::vector<double>> blocks_;  // sequence storage
};

// ---------------------------------------------------------------------------
// likelihood, sampling, decoding

inline std::vector<double> per_token_log_probs(const SoftmaxPolicy& policy,
                                               std::span<const double> x,
                                               std::span<const int> y) {
  policy.check_sequence(y);
  std::vector<double> out;
  out.reserve(y.size());
  for (std::size_t t = 0; t < y.size(); ++t) {
    const auto z = policy.logits(x, y.subspan(0, t));
    out.push_back(z[static_cast<std::size_t>(y[t])] - detail::log_sum_exp(z));
  }
  return out;
}

// log pi(y | x) = sum_t log pi(y_t | x, y_<t), always at tau=1
inline double log_prob(const SoftmaxPolicy& policy, std::span<const double> x,
                       std::span<const int> y) {
  double s = 0.0;
  for (double v : per_token_log_probs(policy, x, y)) s += v;
  return s;
}

// Ancestral sampling at the given temperature; stops after emitting the
// terminator token or at max_len. Per-token log-probs are recorded at tau=1.
// Bandit policies emit exactly one token and ignore the terminator.
inline Rollout sample(const SoftmaxPolicy& policy, std::span<const double> x, Rng& rng,
                      double temperature, int terminator, int problem_id = -1) {
  if (temperature <= 0.0)
    throw std::invalid_argument("sample: temperature must be positive");
  Rollout r;
  r.problem_id = problem_id;
  const int steps = policy.kind() == PolicyKind::bandit ? 1 : policy.max_len();
  for (int t = 0; t < steps; ++t) {
    const auto z = policy.logits(x, std::span<const int>(r.tokens));
    const auto probs = detail::softmax(z, temperature);
    const int tok = rng.categorical(probs);
    r.tokens.push_back(tok);
    r.logp_behavior.push_back(z[static_cast<std::size_t>(tok)] - detail::log_sum_exp(z));
    if (policy.kind() == PolicyKind::sequence && tok == terminator) break;
  }
  return r;
}

// Deterministic argmax decode; ties break toward the lowest token index.
inline std::vector<int> greedy_decode(const SoftmaxPolicy& policy, std::span<const double> x,
                                      int terminator) {
  std::vector<int> y;
  const int steps = policy.kind() == PolicyKind::bandit ? 1 : policy.max_len();
  for (int t = 0; t < steps; ++t) {
    const auto z = policy.logits(x, std::span<const int>(y));
    int best = 0;
    for (int v = 1; v < policy.vocab_size(); ++v)
      if (z[static_cast<std::size_t>(v)] > z[static_cast<std::size_t>(best)]) best = v;
    y.push_back(best);
    if (policy.kind() == PolicyKind::sequence && best == terminator) break;
  }
  return y;
}

// ---------------------------------------------------------------------------
// exact gradients

namespace detail {

// accumulate c * grad log pi(y | x) into a flat-index accumulator
inline void accumulate_grad_log_prob(const SoftmaxPolicy& policy, std::span<const double> x,
                                     std::span<const int> y, double c,
                                     std::map<std::uint64_t, double>& acc) {
  policy.check_sequence(y);
  policy.check_features(x);
  const std::uint64_t block_size =
      static_cast<std::uint64_t>(policy.feature_dim()) * policy.vocab_size();
  for (std::size_t t = 0; t < y.size(); ++t) {
    const auto prefix = y.subspan(0, t);
    const auto probs = softmax(policy.logits(x, prefix), 1.0);
    const std::uint64_t base = policy.prefix_index(prefix) * block_size;
    for (int f = 0; f < policy.feature_dim(); ++f) {
      const double xf = x[static_cast<std::size_t>(f)];
      if (xf == 0.0) continue;
      const std::uint64_t row = base + static_cast<std::uint64_t>(f) * policy.vocab_size();
      for (int v = 0; v < policy.vocab_size(); ++v) {
        const double e = (v == y[t]) ? 1.0 : 0.0;
        acc[row + static_cast<std::uint64_t>(v)] += c * xf * (e - probs[static_cast<std::size_t>(v)]);
      }
    }
  }
}

}  // namespace detail

// Exact gradient of log pi(y | x) with respect to the flattened parameters;
// per-state contribution is x ⊗ (e(y_t) − pi(.|s)). Ascending it increases
// log_prob.
inline GradientVector grad_log_prob(const SoftmaxPolicy& policy, std::span<const double> x,
                                    std::span<const int> y) {
  std::map<std::uint64_t, double> acc;
  detail::accumulate_grad_log_prob(policy, x, y, 1.0, acc);
  return GradientVector::from_map(policy.param_count(), acc);
}

// K((x,y),(x',y')) = <grad log pi(y|x), grad log pi(y'|x')>
inline double kernel(const SoftmaxPolicy& policy, std::span<const double> xa,
                     std::span<const int> ya, std::span<const double> xb,
                     std::span<const int> yb) {
  return grad_log_prob(policy, xa, ya).dot(grad_log_prob(policy, xb, yb));
}

// Shannon entropy (nats) of the next-token distribution at tau=1
inline double token_entropy(const SoftmaxPolicy& policy, std::span<const double> x,
                            std::span<const int> prefix) {
  const auto probs = detail::softmax(policy.logits(x, prefix), 1.0);
  double h = 0.0;
  for (double p : probs)
    if (p > 0.0) h -= p * std::log(p);
  return h;
}

}  // namespace rldyn
