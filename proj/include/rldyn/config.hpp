#pragma once

// Experiment configuration with a versioned JSON schema. Every field has a
// documented default; the desk defaults are sized so a full GRPO-vs-SELF
// comparison runs in minutes. paper_reference_config() captures the original
// large-scale training constants for provenance; it is not meant to produce
// interesting dynamics at this scale.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "rldyn/pretrain.hpp"
#include "rldyn/suite.hpp"

namespace rldyn {

using json = nlohmann::json;

struct TrainConfig {
  std::string objective = "grpo";  // grpo | self | reinforce
  int steps = 400;
  double learning_rate = 0.05;
  int group_size = 8;
  // problems drawn per step (0 = the whole train split). SELF draws from the
  // greedy-fail set, which is how it concentrates its sampling budget.
  int batch_size = 8;
  double epsilon = 0.2;
  double kl_beta = 1e-4;  // SELF forward-KL weight (grpo runs with no KL term)
  double neg_weight = 1.0;  // REINFORCE negative-advantage upweighting
  std::string baseline = "mean";  // none | mean (REINFORCE only)
  bool filter = true;             // SELF greedy-fail filter
  std::string kl_mode = "exact";  // exact | probe | probe_correct
  std::string reward_mode = "shaped";  // shaped | binary (shaped is the three-way formatted rule)
  int checkpoint_every = 20;
  double sample_temperature = 1.0;
};

struct ProbeConfig {
  int samples_per_problem = 4;
  double temperature = 0.9;
};

struct EvalConfig {
  int every = 20;
  std::vector<int> k_list = {1, 8, 64};
  bool exact = true;
  int n_samples = 256;  // sampled pass@k / delta_r when exact == false
  double temperature = 0.6;
  int strategy_samples = 32;  // per problem
  int ppl_samples = 4;        // per problem, for the base-perplexity panel
};

struct ExperimentConfig {
  int schema_version = 1;
  std::uint64_t seed = 1;
  std::string out_dir = "runs/run";
  SuiteConfig suite;
  PretrainConfig pretrain;
  TrainConfig train;
  ProbeConfig probe;
  EvalConfig eval;

  void validate() const {
    if (train.steps < 0) throw ConfigError("config: train.steps must be >= 0");
    if (train.group_size < 2) throw ConfigError("config: train.group_size must be >= 2");
    if (train.batch_size < 0) throw ConfigError("config: train.batch_size must be >= 0");
    if (train.epsilon <= 0.0 || train.epsilon >= 1.0)
      throw ConfigError("config: train.epsilon must lie in (0,1)");
    if (train.learning_rate <= 0.0) throw ConfigError("config: train.learning_rate must be > 0");
    if (train.checkpoint_every < 1) throw ConfigError("config: train.checkpoint_every must be >= 1");
    if (eval.every < 1) throw ConfigError("config: eval.every must be >= 1");
    if (probe.samples_per_problem < 1)
      throw ConfigError("config: probe.samples_per_problem must be >= 1");
    if (eval.k_list.empty()) throw ConfigError("config: eval.k_list must be non-empty");
    for (std::size_t i = 1; i < eval.k_list.size(); ++i)
      if (eval.k_list[i] <= eval.k_list[i - 1])
        throw ConfigError("config: eval.k_list must be strictly ascending");
    if (train.objective != "grpo" && train.objective != "self" && train.objective != "reinforce")
      throw ConfigError("config: unknown objective '" + train.objective + "'");
    if (train.reward_mode != "binary" && train.reward_mode != "shaped")
      throw ConfigError("config: unknown reward_mode '" + train.reward_mode + "'");
    if (train.baseline != "none" && train.baseline != "mean")
      throw ConfigError("config: unknown baseline '" + train.baseline + "'");
    if (train.kl_mode != "exact" && train.kl_mode != "probe" && train.kl_mode != "probe_correct")
      throw ConfigError("config: unknown kl_mode '" + train.kl_mode + "'");
  }

  RewardSpec reward_spec() const {
    RewardSpec spec;
    spec.mode = train.reward_mode == "shaped" ? RewardMode::shaped : RewardMode::binary;
    return spec;
  }
};

inline json to_json(const SuiteConfig& c) {
  return json{{"num_problems", c.num_problems},
              {"f_high", c.f_high},
              {"vocab_size", c.vocab_size},
              {"max_len", c.max_len},
              {"m_min", c.m_min},
              {"m_max", c.m_max},
              {"test_fraction", c.test_fraction},
              {"coupling", c.coupling},
              {"strat_bias_high", c.strat_bias_high},
              {"strat_bias_low", c.strat_bias_low},
              {"distractor_bias_high", c.distractor_bias_high},
              {"distractor_bias_low", c.distractor_bias_low},
              {"exposure_skew", c.exposure_skew},
              {"correct_share_high", c.correct_share_high},
              {"correct_share_low", c.correct_share_low}};
}

inline void from_json_into(const json& j, SuiteConfig& c) {
  j.at("num_problems").get_to(c.num_problems);
  j.at("f_high").get_to(c.f_high);
  j.at("vocab_size").get_to(c.vocab_size);
  j.at("max_len").get_to(c.max_len);
  j.at("m_min").get_to(c.m_min);
  j.at("m_max").get_to(c.m_max);
  j.at("test_fraction").get_to(c.test_fraction);
  j.at("coupling").get_to(c.coupling);
  j.at("strat_bias_high").get_to(c.strat_bias_high);
  j.at("strat_bias_low").get_to(c.strat_bias_low);
  j.at("distractor_bias_high").get_to(c.distractor_bias_high);
  j.at("distractor_bias_low").get_to(c.distractor_bias_low);
  j.at("exposure_skew").get_to(c.exposure_skew);
  j.at("correct_share_high").get_to(c.correct_share_high);
  j.at("correct_share_low").get_to(c.correct_share_low);
}

inline json to_json(const ExperimentConfig& c) {
  return json{
      {"schema_version", c.schema_version},
      {"seed", c.seed},
      {"out_dir", c.out_dir},
      {"suite", to_json(c.suite)},
      {"pretrain",
       {{"exposure_steps", c.pretrain.exposure_steps},
        {"learning_rate", c.pretrain.learning_rate},
        {"required_margin", c.pretrain.required_margin}}},
      {"train",
       {{"objective", c.train.objective},
        {"steps", c.train.steps},
        {"learning_rate", c.train.learning_rate},
        {"group_size", c.train.group_size},
        {"batch_size", c.train.batch_size},
        {"epsilon", c.train.epsilon},
        {"kl_beta", c.train.kl_beta},
        {"neg_weight", c.train.neg_weight},
        {"baseline", c.train.baseline},
        {"filter", c.train.filter},
        {"kl_mode", c.train.kl_mode},
        {"reward_mode", c.train.reward_mode},
        {"checkpoint_every", c.train.checkpoint_every},
        {"sample_temperature", c.train.sample_temperature}}},
      {"probe",
       {{"samples_per_problem", c.probe.samples_per_problem},
        {"temperature", c.probe.temperature}}},
      {"eval",
       {{"every", c.eval.every},
        {"k_list", c.eval.k_list},
        {"exact", c.eval.exact},
        {"n_samples", c.eval.n_samples},
        {"temperature", c.eval.temperature},
        {"strategy_samples", c.eval.strategy_samples},
        {"ppl_samples", c.eval.ppl_samples}}}};
}

inline ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  if (!j.contains("schema_version"))
    throw ConfigError("config: missing schema_version");
  j.at("schema_version").get_to(c.schema_version);
  if (c.schema_version != 1)
    throw ConfigError("config: unsupported schema_version " + std::to_string(c.schema_version));
  if (j.contains("seed")) j.at("seed").get_to(c.seed);
  if (j.contains("out_dir")) j.at("out_dir").get_to(c.out_dir);
  if (j.contains("suite")) from_json_into(j.at("suite"), c.suite);
  if (j.contains("pretrain")) {
    const auto& p = j.at("pretrain");
    if (p.contains("exposure_steps")) p.at("exposure_steps").get_to(c.pretrain.exposure_steps);
    if (p.contains("learning_rate")) p.at("learning_rate").get_to(c.pretrain.learning_rate);
    if (p.contains("required_margin")) p.at("required_margin").get_to(c.pretrain.required_margin);
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    if (t.contains("objective")) t.at("objective").get_to(c.train.objective);
    if (t.contains("steps")) t.at("steps").get_to(c.train.steps);
    if (t.contains("learning_rate")) t.at("learning_rate").get_to(c.train.learning_rate);
    if (t.contains("group_size")) t.at("group_size").get_to(c.train.group_size);
    if (t.contains("batch_size")) t.at("batch_size").get_to(c.train.batch_size);
    if (t.contains("epsilon")) t.at("epsilon").get_to(c.train.epsilon);
    if (t.contains("kl_beta")) t.at("kl_beta").get_to(c.train.kl_beta);
    if (t.contains("neg_weight")) t.at("neg_weight").get_to(c.train.neg_weight);
    if (t.contains("baseline")) t.at("baseline").get_to(c.train.baseline);
    if (t.contains("filter")) t.at("filter").get_to(c.train.filter);
    if (t.contains("kl_mode")) t.at("kl_mode").get_to(c.train.kl_mode);
    if (t.contains("reward_mode")) t.at("reward_mode").get_to(c.train.reward_mode);
    if (t.contains("checkpoint_every")) t.at("checkpoint_every").get_to(c.train.checkpoint_every);
    if (t.contains("sample_temperature"))
      t.at("sample_temperature").get_to(c.train.sample_temperature);
  }
  if (j.contains("probe")) {
    const auto& p = j.at("probe");
    if (p.contains("samples_per_problem"))
      p.at("samples_per_problem").get_to(c.probe.samples_per_problem);
    if (p.contains("temperature")) p.at("temperature").get_to(c.probe.temperature);
  }
  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    if (e.contains("every")) e.at("every").get_to(c.eval.every);
    if (e.contains("k_list")) e.at("k_list").get_to(c.eval.k_list);
    if (e.contains("exact")) e.at("exact").get_to(c.eval.exact);
    if (e.contains("n_samples")) e.at("n_samples").get_to(c.eval.n_samples);
    if (e.contains("temperature")) e.at("temperature").get_to(c.eval.temperature);
    if (e.contains("strategy_samples")) e.at("strategy_samples").get_to(c.eval.strategy_samples);
    if (e.contains("ppl_samples")) e.at("ppl_samples").get_to(c.eval.ppl_samples);
  }
  c.validate();
  return c;
}

// Original large-scale training constants, kept for provenance: lr 1e-6,
// group size 8, batch 64, sampling temperature 1, 500 steps, forward-KL
// weight 1e-4, eval temperature 0.6, probe k=4 at temperature 0.9.
inline ExperimentConfig paper_reference_config() {
  ExperimentConfig c;
  c.train.learning_rate = 1e-6;
  c.train.steps = 500;
  c.train.group_size = 8;
  c.train.kl_beta = 1e-4;
  c.train.sample_temperature = 1.0;
  c.probe.samples_per_problem = 4;
  c.probe.temperature = 0.9;
  c.eval.temperature = 0.6;
  c.eval.k_list = {1, 8, 64, 128};
  return c;
}

}  // namespace rldyn
