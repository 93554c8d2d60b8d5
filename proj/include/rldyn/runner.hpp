#pragma once

// Experiment orchestration: pretraining, the training loop with its metric
// schedule, checkpointing and resume, and checkpoint evaluation. Every
// random draw comes from a stream derived from (master seed, purpose, step,
// problem, index), so identical configs give byte-identical metric streams
// and checkpoints, and a resumed run continues exactly where the original
// would have gone.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "rldyn/checkpoint.hpp"
#include "rldyn/config.hpp"
#include "rldyn/metrics.hpp"
#include "rldyn/objectives.hpp"
#include "rldyn/pretrain.hpp"
#include "rldyn/probe.hpp"
#include "rldyn/suite.hpp"

namespace rldyn {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// metric stream

struct MetricRecord {
  int step = 0;
  std::string metric;
  double value = 0.0;
  json meta;  // object; may be empty
};

class MetricWriter {
 public:
  void add(int step, const std::string& metric, double value, json meta = json::object()) {
    if (!std::isfinite(value)) return;  // skipped records surface as missing panels
    records_.push_back({step, metric, value, std::move(meta)});
  }

  const std::vector<MetricRecord>& records() const { return records_; }

  std::string to_jsonl() const {
    std::string out;
    for (const auto& r : records_) {
      json j{{"step", r.step}, {"metric", r.metric}, {"value", r.value}};
      if (!r.meta.empty()) j["meta"] = r.meta;
      out += j.dump();
      out += '\n';
    }
    return out;
  }

  // wide CSV: one row per step, one column per (metric, meta) combination
  std::string to_csv() const {
    auto column_of = [](const MetricRecord& r) {
      std::string col = r.metric;
      for (const auto& [k, v] : r.meta.items()) {
        col += ";";
        col += k;
        col += "=";
        col += v.is_string() ? v.get<std::string>() : v.dump();
      }
      return col;
    };
    std::set<std::string> columns;
    std::set<int> steps;
    std::map<std::pair<int, std::string>, double> cells;
    for (const auto& r : records_) {
      const std::string col = column_of(r);
      columns.insert(col);
      steps.insert(r.step);
      cells[{r.step, col}] = r.value;
    }
    std::string out = "step";
    for (const auto& c : columns) {
      out += ",";
      out += c;
    }
    out += "\n";
    char buf[64];
    for (int s : steps) {
      out += std::to_string(s);
      for (const auto& c : columns) {
        out += ",";
        const auto it = cells.find({s, c});
        if (it != cells.end()) {
          std::snprintf(buf, sizeof(buf), "%.17g", it->second);
          out += buf;
        }
      }
      out += "\n";
    }
    return out;
  }

 private:
  std::vector<MetricRecord> records_;
};

inline std::vector<MetricRecord> parse_metrics_jsonl(const std::string& text) {
  std::vector<MetricRecord> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    const std::string line = text.substr(pos, end - pos);
    pos = end + 1;
    if (line.empty()) continue;
    const json j = json::parse(line);
    MetricRecord r;
    r.step = j.at("step").get<int>();
    r.metric = j.at("metric").get<std::string>();
    r.value = j.at("value").get<double>();
    if (j.contains("meta")) r.meta = j.at("meta");
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// run directory layout

inline std::string checkpoint_name(int step) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "step_%05d.ckpt", step);
  return buf;
}

struct RunPaths {
  fs::path root;
  fs::path config() const { return root / "config.json"; }
  fs::path manifest() const { return root / "manifest.json"; }
  fs::path suite() const { return root / "suite.txt"; }
  fs::path probe() const { return root / "probe.txt"; }
  fs::path base() const { return root / "base.ckpt"; }
  fs::path metrics_jsonl() const { return root / "metrics.jsonl"; }
  fs::path metrics_csv() const { return root / "metrics.csv"; }
  fs::path ckpt_dir() const { return root / "ckpt"; }
  fs::path ckpt(int step) const { return ckpt_dir() / checkpoint_name(step); }
};

inline void write_manifest(const RunPaths& paths, const ExperimentConfig& cfg,
                           const std::string& status, const std::vector<int>& checkpoint_steps) {
  json ckpts = json::array();
  for (int s : checkpoint_steps)
    ckpts.push_back({{"step", s}, {"path", std::string("ckpt/") + checkpoint_name(s)}});
  const json manifest{{"artifact_version", "1.0"},
                      {"status", status},
                      {"config", to_json(cfg)},
                      {"checkpoints", ckpts},
                      {"metrics", "metrics.jsonl"}};
  write_text_file(paths.manifest().string(), manifest.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// pretraining entry point

struct PretrainOutcome {
  ProblemSuite suite;
  SoftmaxPolicy base;
  PretrainReport report;
};

inline PretrainOutcome run_pretrain(const ExperimentConfig& cfg) {
  cfg.validate();
  PretrainOutcome out;
  out.suite = make_suite(cfg.suite, cfg.seed);
  out.base = SoftmaxPolicy::sequence(out.suite.feature_dim(), out.suite.vocab_size(),
                                     out.suite.max_len());
  out.report = pretrain_base(out.base, out.suite, cfg.pretrain, cfg.seed);
  return out;
}

inline void save_pretrain(const PretrainOutcome& out, const ExperimentConfig& cfg,
                          const fs::path& dir) {
  fs::create_directories(dir);
  write_text_file((dir / "config.json").string(), to_json(cfg).dump(2) + "\n");
  write_text_file((dir / "suite.txt").string(), save_suite_text(out.suite));
  save_policy_file(out.base, (dir / "base.ckpt").string());
  const json rep{{"margin", out.report.margin},
                 {"high_greedy_solve_rate", out.report.high_greedy_solve_rate},
                 {"low_greedy_solve_rate", out.report.low_greedy_solve_rate},
                 {"mean_correct_mass_high", out.report.mean_correct_mass_high},
                 {"mean_correct_mass_low", out.report.mean_correct_mass_low}};
  write_text_file((dir / "pretrain_report.json").string(), rep.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// training loop

struct TrainOutcome {
  std::string metrics_jsonl;
  SoftmaxPolicy final_policy;
  std::vector<int> checkpoint_steps;
  bool aborted = false;
};

namespace detail {

inline void emit_eval_metrics(MetricWriter& writer, int step, const SoftmaxPolicy& policy,
                              const SoftmaxPolicy& base, const ProblemSuite& suite,
                              const ProbeSet& probe, const ExperimentConfig& cfg) {
  const auto train_ids = suite.train_ids();
  const auto test_ids = suite.test_ids();

  for (const auto& [split, ids] : {std::pair{std::string("train"), train_ids},
                                   std::pair{std::string("test"), test_ids}}) {
    if (ids.empty()) continue;
    for (int k : cfg.eval.k_list) {
      double value;
      if (cfg.eval.exact) {
        value = pass_at_k_exact_mean(policy, suite, ids, k);
      } else {
        if (cfg.eval.n_samples < k) continue;
        std::vector<std::pair<int, int>> outcomes;
        const RewardSpec binary;
        for (int pid : ids) {
          int c = 0;
          for (int j = 0; j < cfg.eval.n_samples; ++j) {
            Rng rng = derive_rng(cfg.seed, {stream::eval_samples, static_cast<std::uint64_t>(step),
                                            static_cast<std::uint64_t>(pid),
                                            static_cast<std::uint64_t>(j)});
            const auto r = sample(policy, suite.problem(pid).features, rng,
                                  cfg.eval.temperature, suite.terminator(), pid);
            if (verify(suite.problem(pid), r.tokens, binary, suite.terminator()) == 1.0) ++c;
          }
          outcomes.emplace_back(cfg.eval.n_samples, c);
        }
        value = pass_at_k_mean(outcomes, k);
      }
      writer.add(step, "pass_at_k", value, json{{"split", split}, {"k", k}});
    }
    double dr = 0.0;
    for (int pid : ids) dr += delta_r_exact(suite.problem(pid), policy, base);
    writer.add(step, "delta_r_mean", dr / static_cast<double>(ids.size()),
               json{{"split", split}});
  }

  // perplexity panels
  {
    // base perplexity of fresh samples from the current policy
    std::vector<std::pair<int, std::vector<int>>> fresh;
    for (int pid : train_ids)
      for (int j = 0; j < cfg.eval.ppl_samples; ++j) {
        Rng rng = derive_rng(cfg.seed, {stream::ppl_samples, static_cast<std::uint64_t>(step),
                                        static_cast<std::uint64_t>(pid),
                                        static_cast<std::uint64_t>(j)});
        fresh.emplace_back(pid, sample(policy, suite.problem(pid).features, rng,
                                       cfg.probe.temperature, suite.terminator(), pid)
                                    .tokens);
      }
    if (!fresh.empty())
      writer.add(step, "ppl_base_on_policy_samples", perplexity(base, suite, fresh));

    writer.add(step, "ppl_policy_on_probe", perplexity_on_probe(policy, suite, probe, false));
    if (probe.correct_count() > 0)
      writer.add(step, "ppl_policy_on_probe_correct",
                 perplexity_on_probe(policy, suite, probe, true));

    // accuracy-split panels: problems partitioned by the sign of the exact
    // accuracy change, perplexity over their correct probe pairs
    std::set<int> up, down;
    for (int pid : train_ids) {
      const double dr = delta_r_exact(suite.problem(pid), policy, base);
      if (dr > 0.0) up.insert(pid);
      if (dr < 0.0) down.insert(pid);
    }
    writer.add(step, "d_up_count", static_cast<double>(up.size()));
    writer.add(step, "d_down_count", static_cast<double>(down.size()));
    for (const auto& [name, group] : {std::pair{std::string("ppl_policy_on_d_up"), up},
                                      std::pair{std::string("ppl_policy_on_d_down"), down}}) {
      std::vector<std::pair<int, std::vector<int>>> pairs;
      for (const auto& e : probe.entries)
        if (e.reward == 1.0 && group.count(e.problem_id)) pairs.emplace_back(e.problem_id, e.tokens);
      if (!pairs.empty()) writer.add(step, name, perplexity(policy, suite, pairs));
    }
  }

  // strategy mixture over the train split
  {
    const auto stats = strategy_frequency(
        policy, suite, train_ids, cfg.eval.strategy_samples, cfg.train.sample_temperature,
        derive_seed(cfg.seed, {stream::strategy, static_cast<std::uint64_t>(step)}));
    writer.add(step, "strategy_freq", stats.freq_a, json{{"label", "A"}});
    writer.add(step, "strategy_freq", stats.freq_b, json{{"label", "B"}});
    writer.add(step, "strategy_freq", stats.freq_unlabeled, json{{"label", "none"}});
    if (stats.acc_a) writer.add(step, "strategy_acc", *stats.acc_a, json{{"label", "A"}});
    if (stats.acc_b) writer.add(step, "strategy_acc", *stats.acc_b, json{{"label", "B"}});
  }
}

}  // namespace detail

inline TrainOutcome run_train(const ExperimentConfig& cfg, const ProblemSuite& suite,
                              const SoftmaxPolicy& base, const fs::path& out_dir,
                              int resume_from = -1) {
  cfg.validate();
  RunPaths paths{out_dir};
  fs::create_directories(paths.ckpt_dir());

  const auto train_ids = suite.train_ids();
  if (train_ids.empty()) throw ConfigError("run_train: suite has no train problems");
  const ProbeSet probe =
      build_probe(base, suite, train_ids, cfg.probe.samples_per_problem, cfg.probe.temperature,
                  derive_seed(cfg.seed, {stream::probe}));

  TrainOutcome out;
  SoftmaxPolicy policy = base;
  int start_step = 0;
  if (resume_from >= 0) {
    policy = load_policy_file(paths.ckpt(resume_from).string());
    start_step = resume_from;
    for (int s = 0; s <= resume_from; s += 1)
      if (fs::exists(paths.ckpt(s))) out.checkpoint_steps.push_back(s);
  } else {
    write_text_file(paths.config().string(), to_json(cfg).dump(2) + "\n");
    write_text_file(paths.suite().string(), save_suite_text(suite));
    write_text_file(paths.probe().string(), save_probe_text(probe));
    save_policy_file(base, paths.base().string());
  }
  write_manifest(paths, cfg, "running", out.checkpoint_steps);

  MetricWriter writer;
  const RewardSpec reward_spec = cfg.reward_spec();

  if (resume_from < 0) {
    detail::emit_eval_metrics(writer, 0, policy, base, suite, probe, cfg);
    save_policy_file(policy, paths.ckpt(0).string());
    out.checkpoint_steps.push_back(0);
  }

  for (int step = start_step + 1; step <= cfg.train.steps; ++step) {
    const SoftmaxPolicy policy_old = policy;

    // batch selection: a per-step draw from the train split. SELF filters the
    // sampled batch inside self_step, so its gradient only sees problems the
    // greedy decode still fails.
    std::vector<int> batch_ids;
    const int batch_size = cfg.train.batch_size;
    if (batch_size <= 0 || batch_size >= static_cast<int>(train_ids.size())) {
      batch_ids = train_ids;
    } else {
      Rng rng = derive_rng(cfg.seed, {stream::batch, static_cast<std::uint64_t>(step)});
      std::vector<int> pool = train_ids;
      for (int i = 0; i < batch_size; ++i) {
        const int j = i + rng.uniform_int(static_cast<int>(pool.size()) - i);
        std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
        batch_ids.push_back(pool[static_cast<std::size_t>(i)]);
      }
      std::sort(batch_ids.begin(), batch_ids.end());
    }

    std::vector<GroupRollouts> groups;
    groups.reserve(batch_ids.size());
    for (int pid : batch_ids) {
      Rng rng = derive_rng(cfg.seed, {stream::rollout, static_cast<std::uint64_t>(step),
                                      static_cast<std::uint64_t>(pid)});
      groups.push_back(sample_group(policy, suite, pid, cfg.train.group_size,
                                    cfg.train.sample_temperature, reward_spec, rng));
    }

    UpdateReport report;
    if (cfg.train.objective == "grpo") {
      auto [next, rep] = grpo_step(policy, policy_old, suite, groups, cfg.train.epsilon,
                                   cfg.train.learning_rate);
      policy = std::move(next);
      report = std::move(rep);
    } else if (cfg.train.objective == "self") {
      SelfStepOptions opts;
      opts.filter = cfg.train.filter;
      opts.epsilon = cfg.train.epsilon;
      opts.step_size = cfg.train.learning_rate;
      opts.kl_beta = cfg.train.kl_beta;
      opts.kl_mode = cfg.train.kl_mode == "probe"
                         ? ForwardKlMode::probe_pairs
                         : (cfg.train.kl_mode == "probe_correct" ? ForwardKlMode::probe_correct
                                                                 : ForwardKlMode::exact);
      auto [next, rep] = self_step(policy, policy_old, suite, groups, probe, &base, opts);
      policy = std::move(next);
      report = std::move(rep);
    } else {  // reinforce
      std::vector<Rollout> batch;
      for (auto& g : groups)
        for (auto& r : g.rollouts) batch.push_back(r);
      const auto grad = reinforce_grad(
          policy, suite, batch,
          cfg.train.baseline == "mean" ? BaselineMode::mean : BaselineMode::none,
          cfg.train.neg_weight);
      report.objective = "reinforce";
      report.step_size = cfg.train.learning_rate;
      report.grad_norm = grad.norm();
      report.reward_mean = detail::mean_group_reward(groups);
      policy.apply_gradient(grad, cfg.train.learning_rate);
    }

    // a non-finite gradient or an update that overflows the parameters aborts
    // the run; the last written checkpoint stays usable
    if (!std::isfinite(report.grad_norm) ||
        !std::isfinite(report.grad_norm * report.step_size)) {
      out.aborted = true;
      break;
    }

    // per-step dynamics metrics
    writer.add(step, "reward_mean", report.reward_mean);
    writer.add(step, "grad_norm", report.grad_norm);
    writer.add(step, "clip_fraction_train", report.clip_fraction);
    writer.add(step, "kl_estimate", report.kl_estimate);
    if (cfg.train.objective == "self")
      writer.add(step, "problems_filtered", static_cast<double>(report.problems_filtered));

    const auto dp = interference_delta_plus(policy_old, policy, suite, probe);
    if (dp) writer.add(step, "delta_plus_step", *dp);
    writer.add(step, "influence_magnitude_step",
               influence_magnitude(policy_old, policy, suite, probe));
    writer.add(step, "probe_clip_rate",
               clip_violation_rate_probe(policy, policy_old, suite, probe, cfg.train.epsilon));
    {
      double lp = 0.0;
      int n = 0;
      for (const auto& e : probe.entries) {
        if (e.reward != 1.0) continue;
        lp += log_prob(policy, suite.problem(e.problem_id).features, e.tokens);
        ++n;
      }
      if (n > 0) writer.add(step, "probe_logp_correct_mean", lp / n);
    }
    {
      // behavior-policy token entropy over the states visited this step
      double h = 0.0;
      int n = 0;
      for (const auto& g : groups)
        for (const auto& r : g.rollouts)
          for (std::size_t t = 0; t < r.tokens.size(); ++t) {
            h += token_entropy(policy_old, suite.problem(g.problem_id).features,
                               std::span<const int>(r.tokens).subspan(0, t));
            ++n;
          }
      if (n > 0) writer.add(step, "entropy_train", h / n);
    }

    const bool eval_now = (step % cfg.eval.every == 0) || step == cfg.train.steps;
    if (eval_now) detail::emit_eval_metrics(writer, step, policy, base, suite, probe, cfg);

    if (step % cfg.train.checkpoint_every == 0 || step == cfg.train.steps) {
      bool finite = true;
      for (const auto& [idx, block] : policy.blocks())
        for (double v : block)
          if (!std::isfinite(v)) {
            finite = false;
            break;
          }
      if (!finite) {
        out.aborted = true;
        break;
      }
      save_policy_file(policy, paths.ckpt(step).string());
      out.checkpoint_steps.push_back(step);
    }
  }

  if (out.aborted && !out.checkpoint_steps.empty())
    policy = load_policy_file(paths.ckpt(out.checkpoint_steps.back()).string());

  out.metrics_jsonl = writer.to_jsonl();
  write_text_file(paths.metrics_jsonl().string(), out.metrics_jsonl);
  write_text_file(paths.metrics_csv().string(), writer.to_csv());
  write_manifest(paths, cfg, out.aborted ? "aborted" : "complete", out.checkpoint_steps);
  out.final_policy = std::move(policy);
  return out;
}

// ---------------------------------------------------------------------------
// evaluation

struct EvalOutcome {
  json report;
};

inline EvalOutcome run_eval(const SoftmaxPolicy& policy, const SoftmaxPolicy* base,
                            const ProblemSuite& suite, const std::vector<int>& k_list,
                            bool exact, int n_samples, double temperature, std::uint64_t seed) {
  for (std::size_t i = 1; i < k_list.size(); ++i)
    if (k_list[i] <= k_list[i - 1])
      throw std::invalid_argument("run_eval: k list must be strictly ascending");
  if (!exact && !k_list.empty() && n_samples < k_list.back())
    throw std::invalid_argument("run_eval: n_samples must cover the largest k");

  EvalOutcome out;
  json splits = json::object();
  const RewardSpec binary;
  for (const auto& [split, ids] :
       {std::pair{std::string("train"), suite.train_ids()},
        std::pair{std::string("test"), suite.test_ids()}}) {
    if (ids.empty()) continue;
    json pass = json::object();
    std::map<int, int> sampled_correct;
    if (!exact) {
      for (int pid : ids) {
        int c = 0;
        for (int j = 0; j < n_samples; ++j) {
          Rng rng = derive_rng(seed, {stream::eval_samples, static_cast<std::uint64_t>(pid),
                                      static_cast<std::uint64_t>(j)});
          const auto r = sample(policy, suite.problem(pid).features, rng, temperature,
                                suite.terminator(), pid);
          if (verify(suite.problem(pid), r.tokens, binary, suite.terminator()) == 1.0) ++c;
        }
        sampled_correct[pid] = c;
      }
    }
    for (int k : k_list) {
      double value;
      if (exact) {
        value = pass_at_k_exact_mean(policy, suite, ids, k);
      } else {
        std::vector<std::pair<int, int>> outcomes;
        for (int pid : ids) outcomes.emplace_back(n_samples, sampled_correct[pid]);
        value = pass_at_k_mean(outcomes, k);
      }
      pass[std::to_string(k)] = value;
    }
    splits[split] = {{"pass_at_k", pass}, {"problems", ids.size()}};
  }
  out.report["splits"] = splits;
  out.report["mode"] = exact ? "exact" : "sampled";

  if (base) {
    json per_problem = json::array();
    json d_up = json::array(), d_down = json::array();
    for (const auto& p : suite.problems) {
      const double dr = delta_r_exact(p, policy, *base);
      per_problem.push_back({{"id", p.id},
                             {"delta_r", dr},
                             {"split", p.split == SplitTag::train ? "train" : "test"}});
      if (dr > 0.0) d_up.push_back(p.id);
      if (dr < 0.0) d_down.push_back(p.id);
    }
    out.report["delta_r"] = per_problem;
    out.report["d_up"] = d_up;
    out.report["d_down"] = d_down;
  }
  return out;
}

}  // namespace rldyn
