#pragma once

// Report rendering: wide CSV exports, SVG line panels for the dynamics
// metrics, and the checkpoint-pair scatter (interference vs pass@k change)
// with its Pearson correlation. Output is plain deterministic text, so two
// identical runs produce byte-identical reports.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rldyn/checkpoint.hpp"
#include "rldyn/config.hpp"
#include "rldyn/metrics.hpp"
#include "rldyn/runner.hpp"

namespace rldyn {

namespace svg {

inline std::string num(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

inline std::string value_label(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

constexpr const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                   "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

struct Series {
  std::string name;
  std::vector<std::pair<double, double>> points;  // (x, y), x ascending
};

// centered moving average; window <= 1 is a no-op
inline std::vector<std::pair<double, double>> smooth(
    const std::vector<std::pair<double, double>>& pts, int window) {
  if (window <= 1 || pts.size() < 2) return pts;
  const int half = window / 2;
  std::vector<std::pair<double, double>> out;
  out.reserve(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    double acc = 0.0;
    int n = 0;
    for (int j = -half; j <= half; ++j) {
      const std::ptrdiff_t idx = static_cast<std::ptrdiff_t>(i) + j;
      if (idx < 0 || idx >= static_cast<std::ptrdiff_t>(pts.size())) continue;
      acc += pts[static_cast<std::size_t>(idx)].second;
      ++n;
    }
    out.emplace_back(pts[i].first, acc / n);
  }
  return out;
}

// one framed line panel; series may be empty, which renders a "no data" note
inline std::string line_chart(const std::string& title, const std::vector<Series>& series,
                              int width = 760, int height = 300) {
  const double ml = 64, mr = 16, mt = 34, mb = 36;
  const double pw = width - ml - mr, ph = height - mt - mb;
  std::string out;
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) +
         "\" height=\"" + std::to_string(height) + "\">\n";
  out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out += "<text x=\"" + num(width / 2.0) +
         "\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">" +
         title + "</text>\n";

  bool any = false;
  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  for (const auto& s : series)
    for (const auto& [x, y] : s.points) {
      if (!any) {
        xmin = xmax = x;
        ymin = ymax = y;
        any = true;
      }
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  if (!any) {
    out += "<text x=\"" + num(width / 2.0) + "\" y=\"" + num(height / 2.0) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" "
           "fill=\"#888\">no data</text>\n</svg>\n";
    return out;
  }
  if (xmax == xmin) xmax = xmin + 1.0;
  if (ymax == ymin) {
    ymax += 0.5;
    ymin -= 0.5;
  }
  const double ypad = 0.05 * (ymax - ymin);
  ymin -= ypad;
  ymax += ypad;

  auto px = [&](double x) { return ml + pw * (x - xmin) / (xmax - xmin); };
  auto py = [&](double y) { return mt + ph * (1.0 - (y - ymin) / (ymax - ymin)); };

  out += "<rect x=\"" + num(ml) + "\" y=\"" + num(mt) + "\" width=\"" + num(pw) +
         "\" height=\"" + num(ph) + "\" fill=\"none\" stroke=\"#333\"/>\n";
  // axis labels: min/max on both axes, zero line when visible
  out += "<text x=\"" + num(ml) + "\" y=\"" + num(height - 12.0) +
         "\" font-family=\"sans-serif\" font-size=\"11\">" + value_label(xmin) + "</text>\n";
  out += "<text x=\"" + num(ml + pw) + "\" y=\"" + num(height - 12.0) +
         "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" +
         value_label(xmax) + "</text>\n";
  out += "<text x=\"" + num(ml - 6) + "\" y=\"" + num(py(ymin)) +
         "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" +
         value_label(ymin) + "</text>\n";
  out += "<text x=\"" + num(ml - 6) + "\" y=\"" + num(py(ymax) + 8) +
         "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" +
         value_label(ymax) + "</text>\n";
  if (ymin < 0.0 && ymax > 0.0)
    out += "<line x1=\"" + num(ml) + "\" y1=\"" + num(py(0.0)) + "\" x2=\"" + num(ml + pw) +
           "\" y2=\"" + num(py(0.0)) + "\" stroke=\"#bbb\" stroke-dasharray=\"4 3\"/>\n";

  int color = 0;
  double legend_y = mt + 14;
  for (const auto& s : series) {
    const char* c = palette[color % 8];
    ++color;
    if (!s.points.empty()) {
      std::string pts;
      for (const auto& [x, y] : s.points) {
        pts += num(px(x));
        pts += ",";
        pts += num(py(y));
        pts += " ";
      }
      out += "<polyline fill=\"none\" stroke=\"" + std::string(c) +
             "\" stroke-width=\"1.5\" points=\"" + pts + "\"/>\n";
    }
    out += "<text x=\"" + num(ml + pw - 6) + "\" y=\"" + num(legend_y) +
           "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\" fill=\"" + c +
           "\">" + s.name + "</text>\n";
    legend_y += 14;
  }
  out += "</svg>\n";
  return out;
}

inline std::string scatter_chart(const std::string& title, const std::vector<Series>& series,
                                 const std::string& subtitle, int width = 560,
                                 int height = 420) {
  const double ml = 64, mr = 16, mt = 50, mb = 40;
  const double pw = width - ml - mr, ph = height - mt - mb;
  std::string out;
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) +
         "\" height=\"" + std::to_string(height) + "\">\n";
  out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out += "<text x=\"" + num(width / 2.0) +
         "\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">" +
         title + "</text>\n";
  out += "<text x=\"" + num(width / 2.0) +
         "\" y=\"38\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" "
         "fill=\"#555\">" +
         subtitle + "</text>\n";

  bool any = false;
  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  for (const auto& s : series)
    for (const auto& [x, y] : s.points) {
      if (!any) {
        xmin = xmax = x;
        ymin = ymax = y;
        any = true;
      }
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  if (!any) {
    out += "<text x=\"" + num(width / 2.0) + "\" y=\"" + num(height / 2.0) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" "
           "fill=\"#888\">no data</text>\n</svg>\n";
    return out;
  }
  const double xpad = 0.05 * std::max(1e-12, xmax - xmin);
  const double ypad = 0.05 * std::max(1e-12, ymax - ymin);
  xmin -= xpad;
  xmax += xpad;
  ymin -= ypad;
  ymax += ypad;
  auto px = [&](double x) { return ml + pw * (x - xmin) / (xmax - xmin); };
  auto py = [&](double y) { return mt + ph * (1.0 - (y - ymin) / (ymax - ymin)); };
  out += "<rect x=\"" + num(ml) + "\" y=\"" + num(mt) + "\" width=\"" + num(pw) +
         "\" height=\"" + num(ph) + "\" fill=\"none\" stroke=\"#333\"/>\n";
  if (ymin < 0.0 && ymax > 0.0)
    out += "<line x1=\"" + num(ml) + "\" y1=\"" + num(py(0.0)) + "\" x2=\"" + num(ml + pw) +
           "\" y2=\"" + num(py(0.0)) + "\" stroke=\"#bbb\" stroke-dasharray=\"4 3\"/>\n";
  if (xmin < 0.0 && xmax > 0.0)
    out += "<line x1=\"" + num(px(0.0)) + "\" y1=\"" + num(mt) + "\" x2=\"" + num(px(0.0)) +
           "\" y2=\"" + num(mt + ph) + "\" stroke=\"#bbb\" stroke-dasharray=\"4 3\"/>\n";

  int color = 0;
  double legend_y = mt + 14;
  for (const auto& s : series) {
    const char* c = palette[color % 8];
    ++color;
    for (const auto& [x, y] : s.points)
      out += "<circle cx=\"" + num(px(x)) + "\" cy=\"" + num(py(y)) +
             "\" r=\"3\" fill=\"" + c + "\" fill-opacity=\"0.8\"/>\n";
    out += "<text x=\"" + num(ml + pw - 6) + "\" y=\"" + num(legend_y) +
           "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\" fill=\"" + c +
           "\">" + s.name + "</text>\n";
    legend_y += 14;
  }
  out += "</svg>\n";
  return out;
}

}  // namespace svg

// ---------------------------------------------------------------------------
// loaded run bundle

struct LoadedRun {
  std::string name;
  fs::path dir;
  ExperimentConfig config;
  ProblemSuite suite;
  std::vector<MetricRecord> metrics;
  std::vector<int> checkpoint_steps;
};

inline LoadedRun load_run(const fs::path& dir) {
  LoadedRun run;
  run.dir = dir;
  run.name = dir.filename().string().empty() ? dir.parent_path().filename().string()
                                             : dir.filename().string();
  run.config = config_from_json(json::parse(read_text_file((dir / "config.json").string())));
  run.suite = load_suite_text(read_text_file((dir / "suite.txt").string()));
  if (fs::exists(dir / "metrics.jsonl"))
    run.metrics = parse_metrics_jsonl(read_text_file((dir / "metrics.jsonl").string()));
  const json manifest = json::parse(read_text_file((dir / "manifest.json").string()));
  for (const auto& c : manifest.at("checkpoints")) run.checkpoint_steps.push_back(c.at("step"));
  std::sort(run.checkpoint_steps.begin(), run.checkpoint_steps.end());
  return run;
}

inline std::vector<std::pair<double, double>> series_for(
    const std::vector<MetricRecord>& records, const std::string& metric,
    const json& meta = json::object()) {
  std::vector<std::pair<double, double>> out;
  for (const auto& r : records) {
    if (r.metric != metric) continue;
    bool match = true;
    for (const auto& [k, v] : meta.items())
      if (!r.meta.contains(k) || r.meta.at(k) != v) {
        match = false;
        break;
      }
    if (match) out.emplace_back(static_cast<double>(r.step), r.value);
  }
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// checkpoint-pair scatter data

struct PairScatter {
  std::vector<CheckpointPairStats> pairs;
  std::optional<double> pearson_r;  // delta_plus vs delta pass@scatter_k
};

inline PairScatter compute_pair_scatter(const LoadedRun& run, int num_pairs, int pair_probe_k,
                                        int scatter_k, double temperature) {
  PairScatter out;
  const auto& steps = run.checkpoint_steps;
  if (steps.size() < 2) return out;
  const auto eval_ids = run.suite.test_ids().empty() ? run.suite.train_ids()
                                                     : run.suite.test_ids();
  Rng rng = derive_rng(run.config.seed, {stream::pair_probe, 9999});
  std::map<int, SoftmaxPolicy> cache;
  auto policy_at = [&](int step) -> const SoftmaxPolicy& {
    auto it = cache.find(step);
    if (it == cache.end())
      it = cache.emplace(step, load_policy_file((run.dir / "ckpt" / checkpoint_name(step)).string()))
               .first;
    return it->second;
  };
  std::vector<double> xs, ys;
  for (int i = 0; i < num_pairs; ++i) {
    const int a = steps[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(steps.size())))];
    const int b = steps[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(steps.size())))];
    if (a == b) continue;
    const int t = std::min(a, b), tp = std::max(a, b);
    auto stats = checkpoint_pair_stats(policy_at(t), policy_at(tp), t, tp, run.suite, eval_ids,
                                       pair_probe_k, temperature, {scatter_k},
                                       derive_seed(run.config.seed, {stream::pair_probe,
                                                                     static_cast<std::uint64_t>(i)}));
    if (!stats.delta_plus) continue;
    xs.push_back(*stats.delta_plus);
    ys.push_back(stats.delta_pass_at_k.front());
    out.pairs.push_back(std::move(stats));
  }
  out.pearson_r = pearson(xs, ys);
  return out;
}

// ---------------------------------------------------------------------------
// report generation

struct ReportOptions {
  int smooth_window = 1;   // centered moving average for charts; raw CSV untouched
  int num_pairs = 30;      // checkpoint pairs sampled for the scatter
  int pair_probe_k = 4;    // samples per problem when probing a pair
  int scatter_k = 64;      // pass@k used on the scatter's y axis
  double pair_temperature = 0.6;
};

inline json run_report(const std::vector<fs::path>& run_dirs, const fs::path& out_dir,
                       const ReportOptions& opts = {}) {
  fs::create_directories(out_dir);
  std::vector<LoadedRun> runs;
  for (const auto& d : run_dirs) runs.push_back(load_run(d));

  // merged long-format CSV
  {
    std::string csv = "run,step,metric,meta,value\n";
    char buf[64];
    for (const auto& run : runs)
      for (const auto& r : run.metrics) {
        std::snprintf(buf, sizeof(buf), "%.17g", r.value);
        std::string meta = r.meta.empty() ? "" : r.meta.dump();
        for (auto& ch : meta)
          if (ch == ',') ch = ';';
        csv += run.name + "," + std::to_string(r.step) + "," + r.metric + "," + meta + "," +
               buf + "\n";
      }
    write_text_file((out_dir / "metrics_long.csv").string(), csv);
  }

  auto panel = [&](const std::string& file, const std::string& title,
                   const std::string& metric, const json& meta = json::object(),
                   bool smoothed = false) {
    std::vector<svg::Series> series;
    for (const auto& run : runs) {
      auto pts = series_for(run.metrics, metric, meta);
      if (smoothed) pts = svg::smooth(pts, opts.smooth_window);
      series.push_back({run.name, std::move(pts)});
    }
    write_text_file((out_dir / file).string(), svg::line_chart(title, series));
  };

  // pass@k panels per split for every k present in any run
  std::set<int> k_values;
  for (const auto& run : runs)
    for (int k : run.config.eval.k_list) k_values.insert(k);
  for (int k : k_values) {
    panel("pass_at_" + std::to_string(k) + "_test.svg",
          "pass@" + std::to_string(k) + " (test split)", "pass_at_k",
          json{{"split", "test"}, {"k", k}}, true);
    panel("pass_at_" + std::to_string(k) + "_train.svg",
          "pass@" + std::to_string(k) + " (train split)", "pass_at_k",
          json{{"split", "train"}, {"k", k}}, true);
  }

  panel("delta_plus.svg", "per-step interference on probe (correct pairs)", "delta_plus_step",
        json::object(), true);
  panel("influence_magnitude.svg", "per-step influence magnitude on probe",
        "influence_magnitude_step", json::object(), true);
  panel("probe_logp.svg", "mean log-likelihood of correct probe pairs",
        "probe_logp_correct_mean");
  panel("ppl_base_on_policy.svg", "base perplexity of current-policy samples",
        "ppl_base_on_policy_samples");
  panel("ppl_policy_on_probe.svg", "policy perplexity on probe samples", "ppl_policy_on_probe");
  panel("ppl_policy_on_probe_correct.svg", "policy perplexity on correct probe samples",
        "ppl_policy_on_probe_correct");
  panel("ppl_d_up.svg", "policy perplexity on improved problems", "ppl_policy_on_d_up");
  panel("ppl_d_down.svg", "policy perplexity on regressed problems", "ppl_policy_on_d_down");
  panel("clip_train.svg", "train-batch clip violation fraction", "clip_fraction_train");
  panel("clip_probe.svg", "probe clip violation rate", "probe_clip_rate");
  panel("entropy.svg", "behavior token entropy", "entropy_train");
  panel("reward.svg", "mean train reward", "reward_mean");
  panel("strategy_freq_a.svg", "strategy A frequency", "strategy_freq", json{{"label", "A"}});
  panel("strategy_freq_b.svg", "strategy B frequency", "strategy_freq", json{{"label", "B"}});

  // interference vs pass@k-change scatter with Pearson r
  json summary;
  summary["runs"] = json::array();
  {
    std::vector<svg::Series> scatter_series;
    std::string pairs_csv = "run,step_t,step_t_prime,delta_plus,delta_pass_at_k,correct_pairs\n";
    std::string subtitle;
    for (const auto& run : runs) {
      const auto scatter = compute_pair_scatter(run, opts.num_pairs, opts.pair_probe_k,
                                                opts.scatter_k, opts.pair_temperature);
      svg::Series s;
      s.name = run.name;
      char buf[64];
      for (const auto& p : scatter.pairs) {
        s.points.emplace_back(*p.delta_plus, p.delta_pass_at_k.front());
        std::snprintf(buf, sizeof(buf), "%.17g", *p.delta_plus);
        pairs_csv += run.name + "," + std::to_string(p.step_t) + "," +
                     std::to_string(p.step_t_prime) + "," + buf + ",";
        std::snprintf(buf, sizeof(buf), "%.17g", p.delta_pass_at_k.front());
        pairs_csv += std::string(buf) + "," + std::to_string(p.correct_pairs) + "\n";
      }
      scatter_series.push_back(std::move(s));
      json run_summary{{"name", run.name}, {"pairs", scatter.pairs.size()}};
      if (scatter.pearson_r) {
        run_summary["pearson_r"] = *scatter.pearson_r;
        std::snprintf(buf, sizeof(buf), "%.3f", *scatter.pearson_r);
        if (!subtitle.empty()) subtitle += "  ";
        subtitle += run.name + ": r=" + buf;
      }
      summary["runs"].push_back(run_summary);
    }
    if (subtitle.empty()) subtitle = "no pairs available";
    write_text_file((out_dir / "scatter_interference_vs_pass.svg").string(),
                    svg::scatter_chart("interference vs pass@" + std::to_string(opts.scatter_k) +
                                           " change over checkpoint pairs",
                                       scatter_series, subtitle));
    write_text_file((out_dir / "pairs.csv").string(), pairs_csv);
  }

  write_text_file((out_dir / "summary.json").string(), summary.dump(2) + "\n");
  return summary;
}

}  // namespace rldyn
