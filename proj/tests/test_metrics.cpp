#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <bit>
#include <cmath>

#include "rldyn/metrics.hpp"
#include "rldyn/objectives.hpp"
#include "rldyn/pretrain.hpp"
#include "rldyn/probe.hpp"

using namespace rldyn;

namespace {

struct SmallWorld {
  ProblemSuite suite;
  SoftmaxPolicy base;
};

SmallWorld make_world(std::uint64_t seed, int n_problems = 12) {
  SuiteConfig c;
  c.num_problems = n_problems;
  c.vocab_size = 8;
  c.max_len = 3;
  c.f_high = 0.25;
  SmallWorld w{make_suite(c, seed), {}};
  w.base = SoftmaxPolicy::sequence(w.suite.feature_dim(), w.suite.vocab_size(),
                                   w.suite.max_len());
  PretrainConfig pc;
  pc.exposure_steps = 6000;
  pretrain_base(w.base, w.suite, pc, seed);
  return w;
}

SoftmaxPolicy one_grpo_step(const SmallWorld& w, const SoftmaxPolicy& policy, double lr,
                            std::uint64_t seed) {
  Rng rng(seed);
  std::vector<GroupRollouts> groups;
  const RewardSpec binary;
  for (int pid : w.suite.train_ids())
    groups.push_back(sample_group(policy, w.suite, pid, 4, 1.0, binary, rng));
  return grpo_step(policy, policy, w.suite, groups, 0.2, lr).first;
}

// subset-enumeration oracle for pass@k
double pass_at_k_enumerated(int n, int c, int k) {
  int hit = 0, total = 0;
  for (unsigned mask = 0; mask < (1u << n); ++mask) {
    if (std::popcount(mask) != k) continue;
    ++total;
    // samples 0..c-1 are the correct ones
    if ((mask & ((1u << c) - 1u)) != 0) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(total);
}

}  // namespace

TEST_CASE("per-step influence: zero for identical policies, positive after own-pair MLE") {
  const auto w = make_world(101);
  const auto& p = w.suite.problem(0);
  const auto& y = p.correct.front().tokens;
  CHECK(per_step_influence(w.base, w.base, p.features, y) == 0.0);

  SoftmaxPolicy stepped = w.base;
  stepped.apply_gradient(mle_grad(w.base, w.suite, {{0, y}}), 0.01);
  CHECK(per_step_influence(w.base, stepped, p.features, y) > 0.0);
}

TEST_CASE("first-order prediction: zero gradient and orthogonal problems") {
  const auto w = make_world(103);
  const auto& p0 = w.suite.problem(0);
  const GradientVector zero(w.base.param_count());
  CHECK(first_order_prediction(w.base, zero, 0.1, p0.features, p0.correct[0].tokens) == 0.0);

  // disjoint one-hot features without coupling: updates on one problem cannot
  // move the other
  SuiteConfig c;
  c.num_problems = 4;
  c.vocab_size = 6;
  c.max_len = 3;
  c.coupling = 0.0;
  const auto flat = make_suite(c, 5);
  SoftmaxPolicy policy = SoftmaxPolicy::sequence(flat.feature_dim(), flat.vocab_size(),
                                                 flat.max_len());
  const auto g = grad_log_prob(policy, flat.problem(0).features, flat.problem(0).correct[0].tokens);
  CHECK(first_order_prediction(policy, g, 0.1, flat.problem(1).features,
                               flat.problem(1).correct[0].tokens) == 0.0);
  SoftmaxPolicy moved = policy;
  moved.apply_gradient(g, 0.1);
  CHECK(per_step_influence(policy, moved, flat.problem(1).features,
                           flat.problem(1).correct[0].tokens) == 0.0);

  GradientVector wrong_dim(3);
  CHECK_THROWS_AS(
      first_order_prediction(w.base, wrong_dim, 0.1, p0.features, p0.correct[0].tokens),
      std::invalid_argument);
}

TEST_CASE("first-order residual shrinks quadratically as eta halves") {
  int within = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto w = make_world(200 + static_cast<std::uint64_t>(trial), 6);
    Rng rng(300 + static_cast<std::uint64_t>(trial));
    const int pid = rng.uniform_int(static_cast<int>(w.suite.problems.size()));
    const auto& p = w.suite.problem(pid);
    Rollout r = sample(w.base, p.features, rng, 1.0, w.suite.terminator(), pid);
    const double advantage = (trial % 2 == 0) ? 1.0 : -1.0;  // single-rollout REINFORCE
    GradientVector g = grad_log_prob(w.base, p.features, r.tokens);
    g.scale(advantage);

    // evaluate on another pair of the same problem to guarantee overlap
    const auto& y_prime = p.correct.front().tokens;
    std::vector<double> residuals;
    for (double eta : {1e-2, 5e-3, 2.5e-3}) {
      SoftmaxPolicy stepped = w.base;
      stepped.apply_gradient(g, eta);
      const double actual = per_step_influence(w.base, stepped, p.features, y_prime);
      const double predicted = first_order_prediction(w.base, g, eta, p.features, y_prime);
      residuals.push_back(std::abs(actual - predicted));
    }
    const double r1 = residuals[0] / residuals[1];
    const double r2 = residuals[1] / residuals[2];
    if (r1 >= 2.5 && r1 <= 6.0 && r2 >= 2.5 && r2 <= 6.0) ++within;
  }
  // quadratic residual: the halving ratio concentrates near 4
  CHECK(within >= 18);
}

TEST_CASE("delta-plus: identical policies, single pair, and direct-summation oracle") {
  const auto w = make_world(107);
  const ProbeSet probe = build_probe(w.base, w.suite, w.suite.ids(), 3, 0.9, 17);
  REQUIRE(probe.correct_count() > 0);
  CHECK(*interference_delta_plus(w.base, w.base, w.suite, probe) == 0.0);

  const SoftmaxPolicy stepped = one_grpo_step(w, w.base, 0.1, 3);
  const auto dp = interference_delta_plus(w.base, stepped, w.suite, probe);
  REQUIRE(dp.has_value());

  double manual = 0.0;
  int n = 0;
  for (const auto& e : probe.entries) {
    if (e.reward != 1.0) continue;
    manual += log_prob(stepped, w.suite.problem(e.problem_id).features, e.tokens) -
              log_prob(w.base, w.suite.problem(e.problem_id).features, e.tokens);
    ++n;
  }
  CHECK(*dp == doctest::Approx(manual / n).epsilon(1e-10));

  // a single correct pair reduces to per_step_influence
  ProbeSet single;
  single.samples_per_problem = 1;
  for (const auto& e : probe.entries)
    if (e.reward == 1.0) {
      single.entries.push_back(e);
      break;
    }
  CHECK(*interference_delta_plus(w.base, stepped, w.suite, single) ==
        doctest::Approx(per_step_influence(w.base, stepped,
                                           w.suite.problem(single.entries[0].problem_id).features,
                                           single.entries[0].tokens))
            .epsilon(1e-12));

  // no correct pairs -> distinguished empty result
  ProbeSet wrong_only;
  for (const auto& e : probe.entries)
    if (e.reward == 0.0) wrong_only.entries.push_back(e);
  CHECK(!interference_delta_plus(w.base, stepped, w.suite, wrong_only).has_value());
}

TEST_CASE("influence magnitude: zero at rest and equal to the direct sum") {
  const auto w = make_world(109);
  const ProbeSet probe = build_probe(w.base, w.suite, w.suite.ids(), 3, 0.9, 19);
  CHECK(influence_magnitude(w.base, w.base, w.suite, probe) == 0.0);

  const SoftmaxPolicy stepped = one_grpo_step(w, w.base, 0.1, 5);
  double manual = 0.0;
  for (const auto& e : probe.entries) {
    const double d = log_prob(stepped, w.suite.problem(e.problem_id).features, e.tokens) -
                     log_prob(w.base, w.suite.problem(e.problem_id).features, e.tokens);
    manual += d * d;
  }
  manual /= static_cast<double>(probe.entries.size());
  CHECK(influence_magnitude(w.base, stepped, w.suite, probe) ==
        doctest::Approx(manual).epsilon(1e-10));
  CHECK(influence_magnitude(w.base, stepped, w.suite, probe) >= 0.0);
}

TEST_CASE("perplexity: uniform policy scores exactly V") {
  SuiteConfig c;
  c.num_problems = 4;
  c.vocab_size = 16;
  c.max_len = 4;
  const auto suite = make_suite(c, 7);
  SoftmaxPolicy uniform = SoftmaxPolicy::sequence(suite.feature_dim(), suite.vocab_size(),
                                                  suite.max_len());
  std::vector<std::pair<int, std::vector<int>>> pairs;
  for (const auto& p : suite.problems) pairs.emplace_back(p.id, p.correct.front().tokens);
  CHECK(perplexity(uniform, suite, pairs) == doctest::Approx(16.0).epsilon(1e-12));
  CHECK_THROWS_AS(perplexity(uniform, suite, {}), std::invalid_argument);
}

TEST_CASE("perplexity: hand-computed micro-set and the e case") {
  const auto w = make_world(113, 6);
  std::vector<std::pair<int, std::vector<int>>> pairs;
  for (int pid : {0, 1, 2}) pairs.emplace_back(pid, w.suite.problem(pid).correct.front().tokens);
  double manual = 0.0;
  for (const auto& [pid, y] : pairs) {
    double lp = 0.0;
    for (std::size_t t = 0; t < y.size(); ++t) {
      const auto z = w.base.logits(w.suite.problem(pid).features,
                                   std::span<const int>(y).subspan(0, t));
      const auto probs = detail::softmax(z, 1.0);
      lp += std::log(probs[static_cast<std::size_t>(y[t])]);
    }
    manual += std::exp(-lp / static_cast<double>(y.size()));
  }
  manual /= 3.0;
  const double got = perplexity(w.base, w.suite, pairs);
  CHECK(got == doctest::Approx(manual).epsilon(1e-10));
  CHECK(got >= 1.0);

  // total log-prob of -|y| means perplexity e
  SoftmaxPolicy two = SoftmaxPolicy::bandit(1, 2);
  // logits (0, c) with pi(0) = e^-1: c = log(e - 1)
  two.set_param(1, std::log(std::exp(1.0) - 1.0));
  ProblemSuite tiny;
  tiny.config.vocab_size = 2;
  tiny.config.max_len = 1;
  Problem p;
  p.id = 0;
  p.features = {1.0};
  p.correct.push_back({{1}, StrategyLabel::B, 1.0});
  tiny.problems.push_back(p);
  CHECK(perplexity(two, tiny, {{0, {0}}}) == doctest::Approx(std::exp(1.0)).epsilon(1e-12));
}

TEST_CASE("delta_r: zero at the base, exact matches Monte Carlo, signs partition") {
  const auto w = make_world(127);
  for (const auto& p : w.suite.problems)
    CHECK(delta_r_exact(p, w.base, w.base) == 0.0);

  SoftmaxPolicy trained = w.base;
  for (int i = 0; i < 5; ++i)
    trained = one_grpo_step(w, trained, 0.3, 40 + static_cast<std::uint64_t>(i));

  int n_up = 0, n_down = 0;
  for (const auto& p : w.suite.problems) {
    const double exact = delta_r_exact(p, trained, w.base);
    CHECK(exact >= -1.0);
    CHECK(exact <= 1.0);
    const int n = 4000;
    const double mc = delta_r_sampled(p, trained, w.base, w.suite.terminator(), n, 1.0, 77);
    // two-sample binomial 3-sigma bound
    const double sigma = std::sqrt(0.5 / n);
    CHECK(std::abs(exact - mc) <= 3.0 * sigma);
    if (exact > 0.0) ++n_up;
    if (exact < 0.0) ++n_down;
  }
  CHECK(n_up + n_down <= static_cast<int>(w.suite.problems.size()));
}

TEST_CASE("pass@k estimator equals subset enumeration for every n <= 8") {
  for (int n = 1; n <= 8; ++n)
    for (int c = 0; c <= n; ++c)
      for (int k = 1; k <= n; ++k)
        CHECK(pass_at_k(n, c, k) ==
              doctest::Approx(pass_at_k_enumerated(n, c, k)).epsilon(1e-12));

  CHECK(pass_at_k(4, 4, 2) == 1.0);
  CHECK(pass_at_k(4, 0, 2) == 0.0);
  CHECK(pass_at_k(4, 2, 2) == doctest::Approx(5.0 / 6.0).epsilon(1e-15));
  CHECK_THROWS_AS(pass_at_k(4, 2, 5), std::invalid_argument);
  CHECK_THROWS_AS(pass_at_k(4, 5, 2), std::invalid_argument);
}

TEST_CASE("pass@k monotonicity and the k = n boundary") {
  for (int n : {3, 6, 8})
    for (int c = 0; c <= n; ++c) {
      double prev = 0.0;
      for (int k = 1; k <= n; ++k) {
        const double v = pass_at_k(n, c, k);
        CHECK(v >= prev - 1e-15);
        prev = v;
      }
      const bool hits_one = pass_at_k(n, c, n) == 1.0;
      const bool has_correct = c >= 1;
      CHECK(hits_one == has_correct);
    }
}

TEST_CASE("exact pass@k from correct mass agrees with the estimator in the limit") {
  CHECK(pass_at_k_from_mass(0.0, 8) == 0.0);
  CHECK(pass_at_k_from_mass(1.0, 3) == 1.0);
  CHECK(pass_at_k_from_mass(0.25, 1) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(pass_at_k_from_mass(0.25, 2) == doctest::Approx(1.0 - 0.75 * 0.75).epsilon(1e-12));
}

TEST_CASE("clip violation rate: zero at rest, manual count on a micro-set") {
  const auto w = make_world(131);
  std::vector<std::pair<int, std::vector<int>>> pairs;
  for (int pid : {0, 1, 2}) pairs.emplace_back(pid, w.suite.problem(pid).correct.front().tokens);
  CHECK(clip_violation_rate(w.base, w.base, w.suite, pairs, 0.2) == 0.0);

  const SoftmaxPolicy stepped = one_grpo_step(w, w.base, 0.5, 9);
  const double eps = 0.2;
  int total = 0, violated = 0;
  for (const auto& [pid, y] : pairs) {
    const auto lp_new = per_token_log_probs(stepped, w.suite.problem(pid).features, y);
    const auto lp_old = per_token_log_probs(w.base, w.suite.problem(pid).features, y);
    for (std::size_t t = 0; t < y.size(); ++t) {
      ++total;
      const double rho = std::exp(lp_new[t] - lp_old[t]);
      if (rho < 1.0 - eps || rho > 1.0 + eps) ++violated;
    }
  }
  CHECK(clip_violation_rate(stepped, w.base, w.suite, pairs, eps) ==
        doctest::Approx(static_cast<double>(violated) / total).epsilon(1e-12));

  // widening the interval only removes violations
  double prev = 1.0;
  for (double e : {0.05, 0.2, 0.5, 0.9}) {
    const double rate = clip_violation_rate(stepped, w.base, w.suite, pairs, e);
    CHECK(rate <= prev + 1e-15);
    prev = rate;
  }
  CHECK_THROWS_AS(clip_violation_rate(w.base, w.base, w.suite, pairs, 0.0),
                  std::invalid_argument);
}

TEST_CASE("strategy frequency: a pure-A policy reports frequency one") {
  ProblemSuite suite;
  suite.config.vocab_size = 8;
  suite.config.max_len = 3;
  Problem p;
  p.id = 0;
  p.features = {1.0};
  p.correct.push_back({{2, 7}, StrategyLabel::A, 1.0});
  suite.problems.push_back(p);

  SoftmaxPolicy policy = SoftmaxPolicy::sequence(1, 8, 3);
  // drive the policy hard onto the correct completion
  for (int rep = 0; rep < 200; ++rep)
    policy.apply_gradient(mle_grad(policy, suite, {{0, {2, 7}}}), 0.5);

  const auto stats = strategy_frequency(policy, suite, {0}, 64, 0.5, 3);
  CHECK(stats.freq_a == 1.0);
  CHECK(stats.freq_b == 0.0);
  REQUIRE(stats.acc_a.has_value());
  CHECK(*stats.acc_a == 1.0);
  CHECK(!stats.acc_b.has_value());
}

TEST_CASE("strategy frequency: symmetric suite lands near one half per strategy") {
  // hand-built symmetric world: every problem has one A and one B correct
  // completion with equal exposure, no distractor
  ProblemSuite suite;
  suite.config.vocab_size = 8;
  suite.config.max_len = 3;
  suite.config.num_problems = 16;
  Rng rng(55);
  for (int i = 0; i < 16; ++i) {
    Problem p;
    p.id = i;
    p.features.assign(17, 0.0);
    p.features[static_cast<std::size_t>(i)] = 1.0;
    p.base_frequency = 0.9;
    const int a_first = 2 * rng.uniform_int(4);          // even
    const int b_first = 2 * rng.uniform_int(3) + 1;      // odd, below terminator
    p.correct.push_back({{a_first, rng.uniform_int(7), 7}, StrategyLabel::A, 1.0});
    p.correct.push_back({{b_first, rng.uniform_int(7), 7}, StrategyLabel::B, 1.0});
    suite.problems.push_back(std::move(p));
  }
  SoftmaxPolicy base = SoftmaxPolicy::sequence(17, 8, 3);
  PretrainConfig pc;
  pc.exposure_steps = 8000;
  pc.required_margin = 0.0;
  pretrain_base(base, suite, pc, 20);

  const auto stats = strategy_frequency(base, suite, suite.ids(), 64, 1.0, 4);
  CHECK(stats.freq_a + stats.freq_b + stats.freq_unlabeled ==
        doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::abs(stats.freq_a - 0.5) < 0.08);
  CHECK(std::abs(stats.freq_b - 0.5) < 0.08);
}

TEST_CASE("probe construction is deterministic and caches exact base log-probs") {
  const auto w = make_world(137);
  const ProbeSet a = build_probe(w.base, w.suite, w.suite.train_ids(), 4, 0.9, 21);
  const ProbeSet b = build_probe(w.base, w.suite, w.suite.train_ids(), 4, 0.9, 21);
  CHECK(save_probe_text(a) == save_probe_text(b));
  for (const auto& e : a.entries)
    CHECK(e.logp_base ==
          doctest::Approx(log_prob(w.base, w.suite.problem(e.problem_id).features, e.tokens))
              .epsilon(1e-12));
  CHECK(a.entries.size() == w.suite.train_ids().size() * 4);

  // probe text round trip
  const ProbeSet loaded = load_probe_text(save_probe_text(a));
  CHECK(save_probe_text(loaded) == save_probe_text(a));

  // training-style operations leave the probe untouched
  const std::string before = save_probe_text(a);
  (void)one_grpo_step(w, w.base, 0.2, 31);
  CHECK(save_probe_text(a) == before);
}

TEST_CASE("checkpoint pair stats vanish for identical checkpoints") {
  const auto w = make_world(139);
  const auto stats = checkpoint_pair_stats(w.base, w.base, 10, 10, w.suite, w.suite.test_ids(),
                                           4, 0.6, {1, 4}, 77);
  const bool consistent = stats.delta_plus.has_value() || stats.correct_pairs == 0;
  REQUIRE(consistent);
  if (stats.delta_plus) CHECK(*stats.delta_plus == 0.0);
  for (double d : stats.delta_pass_at_k) CHECK(d == 0.0);
  CHECK_THROWS_AS(checkpoint_pair_stats(w.base, w.base, 10, 5, w.suite, w.suite.test_ids(), 4,
                                        0.6, {1}, 77),
                  std::invalid_argument);
}

TEST_CASE("pearson matches the direct covariance formula") {
  const std::vector<double> xs = {1.0, 2.0, 3.5, 0.5, -1.0, 4.0};
  const std::vector<double> ys = {0.8, 2.2, 2.9, 1.1, -0.4, 3.6};
  const auto r = pearson(xs, ys);
  REQUIRE(r.has_value());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= 6.0;
  my /= 6.0;
  double num = 0.0, dx = 0.0, dy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    num += (xs[i] - mx) * (ys[i] - my);
    dx += (xs[i] - mx) * (xs[i] - mx);
    dy += (ys[i] - my) * (ys[i] - my);
  }
  CHECK(*r == doctest::Approx(num / std::sqrt(dx * dy)).epsilon(1e-12));
  CHECK(!pearson({1.0, 1.0, 1.0}, ys.size() ? std::vector<double>{1.0, 2.0, 3.0} : ys).has_value());
  CHECK_THROWS_AS(pearson({1.0}, {1.0, 2.0}), std::invalid_argument);
}
