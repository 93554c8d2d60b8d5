#pragma once

// Synthetic verifiable-reward problem suites. Each problem is its own task:
// a feature vector, a small set of correct completions (all ending in the
// designated terminator token, the last vocab index), strategy labels derived
// from the first token's parity, and a pretraining exposure weight. A
// distractor completion per problem gives the base model a high-confidence
// incorrect mode on low-exposure problems, so correct solutions there sit in
// low-likelihood regions.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rldyn/policy.hpp"
#include "rldyn/rng.hpp"

namespace rldyn {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class StrategyLabel { A, B };
enum class SplitTag { train, test };
enum class RewardMode { binary, shaped };

struct RewardSpec {
  RewardMode mode = RewardMode::binary;
  double formatted_correct = 1.0;
  double formatted_incorrect = -0.5;
  double unformatted = -1.0;
};

struct CorrectEntry {
  std::vector<int> tokens;
  StrategyLabel label = StrategyLabel::A;
  double exposure_weight = 1.0;  // relative sampling weight during pretraining
};

struct DistractorEntry {
  std::vector<int> tokens;
  double exposure_weight = 1.0;
};

struct Problem {
  int id = 0;
  std::vector<double> features;
  std::vector<CorrectEntry> correct;
  std::vector<DistractorEntry> distractors;
  double base_frequency = 0.0;  // pretraining exposure weight, [0,1]
  SplitTag split = SplitTag::train;

  bool is_high() const { return base_frequency >= 0.5; }

  bool is_correct(std::span<const int> y) const {
    for (const auto& c : correct)
      if (c.tokens.size() == y.size() && std::equal(y.begin(), y.end(), c.tokens.begin()))
        return true;
    return false;
  }
};

struct SuiteConfig {
  int num_problems = 64;
  double f_high = 0.25;  // fraction of problems with high pretraining exposure
  int vocab_size = 16;
  int max_len = 4;
  int m_min = 1;  // correct completions per problem
  int m_max = 2;
  double test_fraction = 0.25;  // applied per exposure class (stratified)
  // shared feature coordinate; 0 makes problems parameter-disjoint (tabular)
  double coupling = 0.7;
  // probability that the primary correct completion belongs to strategy
  // class A; additional corrects use the opposite bias, giving two-mode
  // problems (a dominant strategy plus a minority one)
  double strat_bias_high = 0.85;
  double strat_bias_low = 0.15;
  // same for the distractor completion; distractors lean toward class B on
  // both problem kinds, making B the dominant-but-inaccurate base mode
  double distractor_bias_high = 0.15;
  double distractor_bias_low = 0.15;
  // test problems reuse the completion sets of a same-class train partner,
  // so train-time updates reach the test split through shared structure
  bool test_mirror_train = true;
  // relative exposure of successive correct entries (w_j = skew^j)
  double exposure_skew = 0.5;
  // exposure mass on the correct set vs the distractor during pretraining
  double correct_share_high = 0.9;
  double correct_share_low = 0.015;
  // low-exposure problems hide their correct completions at full depth;
  // high-exposure problems keep shallow ones (marker + tail + terminator)
  bool low_corrects_full_length = true;
  bool high_corrects_short = true;
};

class ProblemSuite {
 public:
  SuiteConfig config;
  std::uint64_t seed = 0;
  std::vector<Problem> problems;

  int vocab_size() const { return config.vocab_size; }
  int max_len() const { return config.max_len; }
  int terminator() const { return config.vocab_size - 1; }
  int feature_dim() const {
    return problems.empty() ? 0 : static_cast<int>(problems.front().features.size());
  }

  const Problem& problem(int id) const {
    if (id < 0 || id >= static_cast<int>(problems.size()))
      throw std::out_of_range("ProblemSuite: unknown problem id " + std::to_string(id));
    return problems[static_cast<std::size_t>(id)];
  }

  std::vector<int> ids(std::optional<SplitTag> split = std::nullopt) const {
    std::vector<int> out;
    for (const auto& p : problems)
      if (!split || p.split == *split) out.push_back(p.id);
    return out;
  }

  std::vector<int> train_ids() const { return ids(SplitTag::train); }
  std::vector<int> test_ids() const { return ids(SplitTag::test); }

  // strategy label by first-token parity; terminator-first completions are unlabeled
  std::optional<StrategyLabel> strategy_of(std::span<const int> y) const {
    if (y.empty() || y.front() == terminator()) return std::nullopt;
    return (y.front() % 2 == 0) ? StrategyLabel::A : StrategyLabel::B;
  }
};

// r(x, y): binary membership in C(x), or the shaped three-way rule where
// "formatted" means the completion ends with the terminator token.
inline double verify(const Problem& problem, std::span<const int> y, const RewardSpec& spec,
                     int terminator) {
  const bool correct = problem.is_correct(y);
  if (spec.mode == RewardMode::binary) return correct ? 1.0 : 0.0;
  if (correct) return spec.formatted_correct;
  const bool formatted = !y.empty() && y.back() == terminator;
  return formatted ? spec.formatted_incorrect : spec.unformatted;
}

inline double mean_correct_log_prob(const SoftmaxPolicy& policy, const Problem& p) {
  double s = 0.0;
  for (const auto& c : p.correct) s += log_prob(policy, p.features, c.tokens);
  return s / static_cast<double>(p.correct.size());
}

// total probability mass of the correct set; equals E_pi[r] under binary
// reward since every correct completion is terminator-anchored and reachable
inline double correct_mass(const SoftmaxPolicy& policy, const Problem& p) {
  double s = 0.0;
  for (const auto& c : p.correct) s += std::exp(log_prob(policy, p.features, c.tokens));
  return s;
}

namespace detail {

// The completion space reachable by ancestral sampling: token strings that
// either end with the terminator (not containing it earlier) with length <= T,
// or terminator-free strings of exactly length T.
inline void enumerate_completions(int vocab, int max_len, int terminator,
                                  std::vector<int>& stack,
                                  std::vector<std::vector<int>>& out) {
  for (int v = 0; v < vocab; ++v) {
    stack.push_back(v);
    if (v == terminator) {
      out.push_back(stack);
    } else if (static_cast<int>(stack.size()) == max_len) {
      out.push_back(stack);
    } else {
      enumerate_completions(vocab, max_len, terminator, stack, out);
    }
    stack.pop_back();
  }
}

}  // namespace detail

inline std::vector<std::vector<int>> enumerate_completions(int vocab, int max_len,
                                                           int terminator) {
  double count = 0.0, pow = 1.0;
  for (int l = 0; l < max_len; ++l) {
    count += pow;
    pow *= vocab;
  }
  if (count + pow > static_cast<double>(1 << 21))
    throw std::invalid_argument("enumerate_completions: space too large");
  std::vector<std::vector<int>> out;
  std::vector<int> stack;
  detail::enumerate_completions(vocab, max_len, terminator, stack, out);
  return out;
}

// count of terminator-anchored completions with first token != terminator
inline std::uint64_t anchored_completion_count(int vocab, int max_len) {
  // lengths 2..T: first + middles from the V-1 non-terminator tokens + terminator
  std::uint64_t total = 0, pow = 1;
  for (int len = 2; len <= max_len; ++len) {
    total += pow * static_cast<std::uint64_t>(vocab - 1);
    pow *= static_cast<std::uint64_t>(vocab - 1);
    if (total > (1ULL << 40)) break;  // plenty; avoid overflow on absurd configs
  }
  return total;
}

inline ProblemSuite make_suite(const SuiteConfig& config, std::uint64_t seed) {
  if (config.num_problems <= 0) throw ConfigError("make_suite: num_problems must be positive");
  if (config.vocab_size < 5)
    throw ConfigError("make_suite: vocab_size must be at least 5 (markers, pools, terminator)");
  if (config.max_len < 3)
    throw ConfigError("make_suite: max_len must be at least 3 (marker + tail + terminator)");
  if (config.m_min < 1 || config.m_max < config.m_min)
    throw ConfigError("make_suite: correct-set size range invalid");
  if (config.f_high < 0.0 || config.f_high > 1.0) throw ConfigError("make_suite: f_high out of [0,1]");
  // completions are class-structured (marker first token, parity-pooled
  // tails), so feasibility is per class; +1 covers the distinct distractor
  const int pool_a = (config.vocab_size - 1 + 1) / 2;  // even tokens below the terminator
  const int pool_b = (config.vocab_size - 1) / 2;      // odd tokens below the terminator
  auto class_space = [&](int pool) {
    std::uint64_t total = 0, pow = static_cast<std::uint64_t>(pool);
    for (int len = 3; len <= config.max_len; ++len) {
      total += pow;
      pow *= static_cast<std::uint64_t>(pool);
      if (total > (1ULL << 40)) break;
    }
    return total;
  };
  const std::uint64_t space = std::min(class_space(pool_a), class_space(pool_b));
  if (static_cast<std::uint64_t>(config.m_max) + 1 > space)
    throw ConfigError("make_suite: correct-set size exceeds the per-class completion space");

  const int N = config.num_problems;
  const int terminator = config.vocab_size - 1;
  ProblemSuite suite;
  suite.config = config;
  suite.seed = seed;
  suite.problems.resize(static_cast<std::size_t>(N));

  // exposure classes: round(N * f_high) high problems, chosen without replacement
  const int n_high = static_cast<int>(std::lround(config.f_high * N));
  std::vector<int> order(static_cast<std::size_t>(N));
  for (int i = 0; i < N; ++i) order[static_cast<std::size_t>(i)] = i;
  {
    Rng rng = derive_rng(seed, {stream::suite, 0});
    for (int i = N - 1; i > 0; --i)
      std::swap(order[static_cast<std::size_t>(i)],
                order[static_cast<std::size_t>(rng.uniform_int(i + 1))]);
  }
  std::vector<bool> high(static_cast<std::size_t>(N), false);
  for (int i = 0; i < n_high; ++i) high[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = true;

  // stratified test split
  std::vector<bool> test(static_cast<std::size_t>(N), false);
  {
    Rng rng = derive_rng(seed, {stream::suite, 1});
    for (bool cls : {true, false}) {
      std::vector<int> members;
      for (int i = 0; i < N; ++i)
        if (high[static_cast<std::size_t>(i)] == cls) members.push_back(i);
      for (int i = static_cast<int>(members.size()) - 1; i > 0; --i)
        std::swap(members[static_cast<std::size_t>(i)],
                  members[static_cast<std::size_t>(rng.uniform_int(i + 1))]);
      const int n_test = static_cast<int>(std::lround(config.test_fraction *
                                                      static_cast<double>(members.size())));
      for (int i = 0; i < n_test; ++i) test[static_cast<std::size_t>(members[static_cast<std::size_t>(i)])] = true;
    }
  }

  const int d = N + 1;  // one-hot + shared coupling coordinate
  for (int i = 0; i < N; ++i) {
    Problem& p = suite.problems[static_cast<std::size_t>(i)];
    p.id = i;
    p.split = test[static_cast<std::size_t>(i)] ? SplitTag::test : SplitTag::train;
    Rng rng = derive_rng(seed, {stream::suite, 2, static_cast<std::uint64_t>(i)});

    const bool is_high = high[static_cast<std::size_t>(i)];
    p.base_frequency = is_high ? rng.uniform(0.5, 1.0) : rng.uniform(0.01, 0.05);

    p.features.assign(static_cast<std::size_t>(d), 0.0);
    p.features[static_cast<std::size_t>(i)] = 1.0;
    p.features[static_cast<std::size_t>(N)] = config.coupling;

    auto draw_completion = [&](double bias_a, int fixed_len, bool formatted, bool marker_root) {
      // strategy A completions start at the marker token 0 and keep even
      // tokens in the tail; strategy B uses token 1 and odd tokens. The
      // marker mirrors a detectable reasoning-mode string, and the pooled
      // tails keep class-level structure shared across problems. Length runs
      // from 3 (marker + tail token + terminator) up to max_len; unformatted
      // completions replace the terminator with one more pool token, and
      // distractors start on a non-marker pool token so pushing them down
      // does not move the class marker itself.
      const int len = fixed_len > 0 ? fixed_len : 3 + rng.uniform_int(config.max_len - 2);
      const bool use_a = rng.uniform01() < bias_a;
      std::vector<int> y;
      auto pool_token = [&](bool allow_marker) {
        int tok;
        do {
          tok = rng.uniform_int(config.vocab_size - 1);
        } while ((tok % 2 == 0) != use_a || (!allow_marker && tok < 2));
        return tok;
      };
      y.push_back(marker_root ? (use_a ? 0 : 1) : pool_token(false));
      const int tail = formatted ? len - 1 : len;
      for (int t = 1; t < tail; ++t) y.push_back(pool_token(true));
      if (formatted) y.push_back(terminator);
      return y;
    };

    std::set<std::vector<int>> used;
    auto draw_distinct = [&](double bias_a, int fixed_len, bool formatted, bool marker_root) {
      for (int attempt = 0; attempt < 512; ++attempt) {
        std::vector<int> y = draw_completion(bias_a, fixed_len, formatted, marker_root);
        if (used.insert(y).second) return y;
      }
      throw ConfigError("make_suite: cannot draw distinct completions; enlarge vocab or max_len");
    };

    const int m = config.m_min + rng.uniform_int(config.m_max - config.m_min + 1);
    const double bias = is_high ? config.strat_bias_high : config.strat_bias_low;
    const int correct_len = is_high ? (config.high_corrects_short ? 3 : 0)
                                    : (config.low_corrects_full_length ? config.max_len : 0);
    for (int j = 0; j < m; ++j) {
      CorrectEntry e;
      e.tokens = draw_distinct(j == 0 ? bias : 1.0 - bias, correct_len, true, true);
      e.label = (e.tokens.front() % 2 == 0) ? StrategyLabel::A : StrategyLabel::B;
      e.exposure_weight = std::pow(config.exposure_skew, j);
      p.correct.push_back(std::move(e));
    }
    {
      // a formatted-but-wrong mode rooted away from the class markers: the
      // confident garbage the hidden corrects sit behind
      const double dbias = is_high ? config.distractor_bias_high : config.distractor_bias_low;
      p.distractors.push_back({draw_distinct(dbias, 0, true, false), 1.0});
    }
  }

  // mirror completion sets onto the test split: each test problem adopts the
  // corrects and distractor of a same-class train partner (fresh features and
  // base frequency), which is how training-time movement reaches held-out
  // problems at this scale
  if (config.test_mirror_train) {
    std::vector<int> train_high, train_low;
    for (const auto& p : suite.problems)
      if (p.split == SplitTag::train) (p.is_high() ? train_high : train_low).push_back(p.id);
    int next_high = 0, next_low = 0;
    for (auto& p : suite.problems) {
      if (p.split != SplitTag::test) continue;
      auto& pool = p.is_high() ? train_high : train_low;
      int& cursor = p.is_high() ? next_high : next_low;
      if (pool.empty()) continue;
      const Problem& partner = suite.problems[static_cast<std::size_t>(pool[cursor % static_cast<int>(pool.size())])];
      ++cursor;
      p.correct = partner.correct;
      p.distractors = partner.distractors;
    }
  }
  return suite;
}

// ---------------------------------------------------------------------------
// suite file format (structured text, versioned)

namespace detail {

inline std::string hex_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%a", v);
  return buf;
}

inline double parse_hex_double(const std::string& s) {
  return std::strtod(s.c_str(), nullptr);
}

}  // namespace detail

inline std::string save_suite_text(const ProblemSuite& suite) {
  std::ostringstream os;
  os << "rldyn-suite v1\n";
  os << "vocab_size " << suite.config.vocab_size << "\n";
  os << "max_len " << suite.config.max_len << "\n";
  os << "feature_dim " << suite.feature_dim() << "\n";
  os << "num_problems " << suite.problems.size() << "\n";
  for (const auto& p : suite.problems) {
    os << "problem " << p.id << " " << (p.split == SplitTag::train ? "train" : "test") << " "
       << detail::hex_double(p.base_frequency) << "\n";
    os << "features";
    for (double f : p.features) os << " " << detail::hex_double(f);
    os << "\n";
    for (const auto& c : p.correct) {
      os << "correct " << (c.label == StrategyLabel::A ? "A" : "B") << " "
         << detail::hex_double(c.exposure_weight) << " " << c.tokens.size();
      for (int t : c.tokens) os << " " << t;
      os << "\n";
    }
    for (const auto& dtr : p.distractors) {
      os << "distractor " << detail::hex_double(dtr.exposure_weight) << " " << dtr.tokens.size();
      for (int t : dtr.tokens) os << " " << t;
      os << "\n";
    }
    os << "end\n";
  }
  return os.str();
}

inline ProblemSuite load_suite_text(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  auto next_line = [&]() {
    if (!std::getline(is, line)) throw std::runtime_error("suite file: unexpected end of file");
    return line;
  };
  if (next_line() != "rldyn-suite v1")
    throw std::runtime_error("suite file: unsupported format or version");

  ProblemSuite suite;
  std::size_t n_problems = 0;
  std::string key;
  for (int i = 0; i < 4; ++i) {
    std::istringstream ls(next_line());
    ls >> key;
    if (key == "vocab_size")
      ls >> suite.config.vocab_size;
    else if (key == "max_len")
      ls >> suite.config.max_len;
    else if (key == "feature_dim") {
      int unused;
      ls >> unused;
    } else if (key == "num_problems")
      ls >> n_problems;
    else
      throw std::runtime_error("suite file: unexpected header field '" + key + "'");
  }
  for (std::size_t i = 0; i < n_problems; ++i) {
    Problem p;
    {
      std::istringstream ls(next_line());
      std::string split, freq;
      ls >> key >> p.id >> split >> freq;
      if (key != "problem") throw std::runtime_error("suite file: expected problem record");
      p.split = (split == "train") ? SplitTag::train : SplitTag::test;
      p.base_frequency = detail::parse_hex_double(freq);
    }
    {
      std::istringstream ls(next_line());
      ls >> key;
      if (key != "features") throw std::runtime_error("suite file: expected features record");
      std::string tok;
      while (ls >> tok) p.features.push_back(detail::parse_hex_double(tok));
    }
    while (true) {
      std::istringstream ls(next_line());
      ls >> key;
      if (key == "end") break;
      if (key == "correct") {
        CorrectEntry e;
        std::string label, weight;
        std::size_t len;
        ls >> label >> weight >> len;
        e.label = (label == "A") ? StrategyLabel::A : StrategyLabel::B;
        e.exposure_weight = detail::parse_hex_double(weight);
        e.tokens.resize(len);
        for (auto& t : e.tokens) ls >> t;
        p.correct.push_back(std::move(e));
      } else if (key == "distractor") {
        DistractorEntry e;
        std::string weight;
        std::size_t len;
        ls >> weight >> len;
        e.exposure_weight = detail::parse_hex_double(weight);
        e.tokens.resize(len);
        for (auto& t : e.tokens) ls >> t;
        p.distractors.push_back(std::move(e));
      } else {
        throw std::runtime_error("suite file: unexpected record '" + key + "'");
      }
    }
    suite.problems.push_back(std::move(p));
  }
  return suite;
}

}  // namespace rldyn
