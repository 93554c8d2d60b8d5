#pragma once

// Probe sets: frozen samples from a reference policy (normally the base
// model), one bundle of k completions per problem, with binary rewards and
// the reference log-probs cached at construction. All interference and
// perplexity metrics evaluate against these frozen pairs.

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rldyn/policy.hpp"
#include "rldyn/suite.hpp"

namespace rldyn {

struct ProbeEntry {
  int problem_id = -1;
  std::vector<int> tokens;
  double reward = 0.0;   // binary verify against the problem's correct set
  double logp_base = 0.0;  // log-prob under the policy the probe was built from
};

struct ProbeSet {
  int samples_per_problem = 0;
  double temperature = 1.0;
  std::vector<ProbeEntry> entries;

  std::size_t correct_count() const {
    std::size_t n = 0;
    for (const auto& e : entries)
      if (e.reward == 1.0) ++n;
    return n;
  }
};

// k rollouts per problem from base_policy at the given temperature, frozen.
// Streams are derived per (seed, problem, sample), so the probe is a pure
// function of its arguments.
inline ProbeSet build_probe(const SoftmaxPolicy& base_policy, const ProblemSuite& suite,
                            const std::vector<int>& problem_ids, int k, double temperature,
                            std::uint64_t seed) {
  if (k < 1) throw std::invalid_argument("build_probe: k must be >= 1");
  ProbeSet probe;
  probe.samples_per_problem = k;
  probe.temperature = temperature;
  const RewardSpec binary;
  for (int pid : problem_ids) {
    const Problem& p = suite.problem(pid);
    for (int j = 0; j < k; ++j) {
      Rng rng = derive_rng(seed, {stream::probe, static_cast<std::uint64_t>(pid),
                                  static_cast<std::uint64_t>(j)});
      Rollout r = sample(base_policy, p.features, rng, temperature, suite.terminator(), pid);
      ProbeEntry e;
      e.problem_id = pid;
      e.tokens = std::move(r.tokens);
      e.reward = verify(p, e.tokens, binary, suite.terminator());
      e.logp_base = r.logp_behavior_total();
      probe.entries.push_back(std::move(e));
    }
  }
  return probe;
}

// ---------------------------------------------------------------------------
// probe file format (versioned text; hex floats round-trip bit-exactly)

inline std::string save_probe_text(const ProbeSet& probe) {
  std::ostringstream os;
  os << "rldyn-probe v1\n";
  os << "samples_per_problem " << probe.samples_per_problem << "\n";
  os << "temperature " << detail::hex_double(probe.temperature) << "\n";
  os << "entries " << probe.entries.size() << "\n";
  for (const auto& e : probe.entries) {
    os << e.problem_id << " " << detail::hex_double(e.reward) << " "
       << detail::hex_double(e.logp_base) << " " << e.tokens.size();
    for (int t : e.tokens) os << " " << t;
    os << "\n";
  }
  return os.str();
}

inline ProbeSet load_probe_text(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  auto next_line = [&]() {
    if (!std::getline(is, line)) throw std::runtime_error("probe file: unexpected end of file");
    return line;
  };
  if (next_line() != "rldyn-probe v1")
    throw std::runtime_error("probe file: unsupported format or version");
  ProbeSet probe;
  std::string key, value;
  {
    std::istringstream ls(next_line());
    ls >> key >> probe.samples_per_problem;
  }
  {
    std::istringstream ls(next_line());
    ls >> key >> value;
    probe.temperature = detail::parse_hex_double(value);
  }
  std::size_t n = 0;
  {
    std::istringstream ls(next_line());
    ls >> key >> n;
  }
  for (std::size_t i = 0; i < n; ++i) {
    std::istringstream ls(next_line());
    ProbeEntry e;
    std::string reward, logp;
    std::size_t len;
    ls >> e.problem_id >> reward >> logp >> len;
    e.reward = detail::parse_hex_double(reward);
    e.logp_base = detail::parse_hex_double(logp);
    e.tokens.resize(len);
    for (auto& t : e.tokens) ls >> t;
    probe.entries.push_back(std::move(e));
  }
  return probe;
}

}  // namespace rldyn
