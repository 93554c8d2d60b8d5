#pragma once

// Policy checkpoint format: versioned text with hex-float parameters, so save
// followed by load reproduces the policy bit for bit. Sequence blocks are
// written in canonical prefix order; all-zero blocks are skipped.

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "rldyn/policy.hpp"
#include "rldyn/suite.hpp"

namespace rldyn {

inline std::string save_policy_text(const SoftmaxPolicy& policy) {
  std::ostringstream os;
  os << "rldyn-policy v1\n";
  os << "kind " << (policy.kind() == PolicyKind::bandit ? "bandit" : "sequence") << "\n";
  os << "feature_dim " << policy.feature_dim() << "\n";
  os << "vocab_size " << policy.vocab_size() << "\n";
  os << "max_len " << policy.max_len() << "\n";
  os << "temperature " << detail::hex_double(policy.temperature()) << "\n";
  if (policy.kind() == PolicyKind::bandit) {
    os << "params " << policy.bandit_params().size() << "\n";
    for (double v : policy.bandit_params()) os << detail::hex_double(v) << "\n";
  } else {
    std::size_t nonzero_blocks = 0;
    for (const auto& [idx, block] : policy.blocks())
      if (std::any_of(block.begin(), block.end(), [](double v) { return v != 0.0; }))
        ++nonzero_blocks;
    os << "blocks " << nonzero_blocks << "\n";
    for (const auto& [idx, block] : policy.blocks()) {
      if (!std::any_of(block.begin(), block.end(), [](double v) { return v != 0.0; })) continue;
      os << "block " << idx;
      for (double v : block) os << " " << detail::hex_double(v);
      os << "\n";
    }
  }
  return os.str();
}

inline SoftmaxPolicy load_policy_text(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  auto next_line = [&]() {
    if (!std::getline(is, line))
      throw std::runtime_error("policy checkpoint: unexpected end of file");
    return line;
  };
  if (next_line() != "rldyn-policy v1")
    throw std::runtime_error("policy checkpoint: unsupported format or version");

  std::string key, kind;
  int d = 0, v = 0, t = 0;
  double temperature = 1.0;
  {
    std::istringstream ls(next_line());
    ls >> key >> kind;
  }
  {
    std::istringstream ls(next_line());
    ls >> key >> d;
  }
  {
    std::istringstream ls(next_line());
    ls >> key >> v;
  }
  {
    std::istringstream ls(next_line());
    ls >> key >> t;
  }
  {
    std::istringstream ls(next_line());
    std::string tok;
    ls >> key >> tok;
    temperature = detail::parse_hex_double(tok);
  }

  SoftmaxPolicy policy = (kind == "bandit") ? SoftmaxPolicy::bandit(d, v)
                                            : SoftmaxPolicy::sequence(d, v, t);
  policy.set_temperature(temperature);
  if (kind == "bandit") {
    std::size_t n = 0;
    {
      std::istringstream ls(next_line());
      ls >> key >> n;
    }
    auto& theta = policy.mutable_bandit_params();
    if (n != theta.size()) throw std::runtime_error("policy checkpoint: parameter count mismatch");
    for (auto& value : theta) value = detail::parse_hex_double(next_line());
  } else {
    std::size_t n_blocks = 0;
    {
      std::istringstream ls(next_line());
      ls >> key >> n_blocks;
    }
    const std::size_t block_size = static_cast<std::size_t>(d) * static_cast<std::size_t>(v);
    for (std::size_t b = 0; b < n_blocks; ++b) {
      std::istringstream ls(next_line());
      std::uint64_t idx = 0;
      ls >> key >> idx;
      if (key != "block") throw std::runtime_error("policy checkpoint: expected block record");
      auto& block = policy.mutable_block(idx);
      std::string tok;
      for (std::size_t i = 0; i < block_size; ++i) {
        if (!(ls >> tok)) throw std::runtime_error("policy checkpoint: truncated block");
        block[i] = detail::parse_hex_double(tok);
      }
    }
  }
  return policy;
}

inline void save_policy_file(const SoftmaxPolicy& policy, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write policy checkpoint: " + path);
  os << save_policy_text(policy);
}

inline SoftmaxPolicy load_policy_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read policy checkpoint: " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return load_policy_text(ss.str());
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write file: " + path);
  os << content;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read file: " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace rldyn
