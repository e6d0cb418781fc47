#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "tbn/data.hpp"
#include "tbn/expr.hpp"
#include "tbn/network.hpp"
#include "tbn/vsr.hpp"

namespace tbn {

// ---------------------------------------------------------------------------
// Aggregation: mean and sample (n-1) standard deviation
// ---------------------------------------------------------------------------

struct Aggregate {
  double mean = 0.0;
  double stddev = 0.0;
  bool degenerate = false;  // single repeat: std reported as 0
};

inline Aggregate aggregate(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("aggregate: no values");
  Aggregate a;
  for (double v : values) a.mean += v;
  a.mean /= static_cast<double>(values.size());
  if (values.size() == 1) {
    a.degenerate = true;
    return a;
  }
  double acc = 0.0;
  for (double v : values) acc += (v - a.mean) * (v - a.mean);
  a.stddev = std::sqrt(acc / static_cast<double>(values.size() - 1));
  return a;
}

// ---------------------------------------------------------------------------
// Random-polynomial baseline
// ---------------------------------------------------------------------------

struct RandomPolyResult {
  PolyTemplate tpl;       // coefficients fixed to 1
  bool collision = false; // degree set equals the reference's
};

// Draws a template with the same maximum degree as the reference but a
// different degree set. Max degree 2 always yields the bare square term,
// flagged as a collision when the reference is exactly that term.
inline RandomPolyResult random_polynomial_arm(const PolyTemplate& reference,
                                              Rng& rng) {
  int kmax = reference.highest_degree();
  if (kmax < 1)
    throw std::invalid_argument(
        "random_polynomial_arm: reference needs a positive degree");
  std::vector<int> ref_set = reference.degree_set();
  if (kmax == 2) {
    RandomPolyResult out;
    out.tpl.terms[2] = 1.0;
    out.collision = ref_set == std::vector<int>{2};
    return out;
  }
  for (int attempt = 0; attempt < 64; ++attempt) {
    PolyTemplate tpl;
    tpl.terms[kmax] = 1.0;
    for (int k = 0; k < kmax; ++k)
      if (bernoulli(rng, 0.5)) tpl.terms[k] = 1.0;
    if (tpl.degree_set() != ref_set) return {tpl, false};
  }
  RandomPolyResult out;
  out.tpl.terms[kmax] = 1.0;
  out.collision = out.tpl.degree_set() == ref_set;
  return out;
}

// ---------------------------------------------------------------------------
// Experiment configuration
// ---------------------------------------------------------------------------

struct ArmSpec {
  std::string name;
  NeuronKind kind = NeuronKind::Linear;
  bool random_poly = false;  // task_poly neuron over a random template
  std::vector<int> structure;
  Activation activation = Activation::Relu;
  std::string paired_ln;  // TN arms: name of the LN arm to compare against
};

struct ExperimentConfig {
  std::string name = "experiment";
  // dataset: exactly one source
  std::optional<SyntheticSpec> synthetic;
  std::optional<std::string> csv_path;
  std::string csv_target;
  Task task = Task::Regression;

  std::vector<double> split_ratios = {0.8, 0.2};
  std::uint64_t split_seed = 1;
  GpConfig gp;
  bool run_vsr = true;
  bool normalize_before_vsr = false;
  bool normalize_targets = true;
  int repeats = 10;
  std::uint64_t base_seed = 1000;
  TrainConfig train;
  std::vector<ArmSpec> arms;

  void validate() const {
    if (repeats < 1) throw std::invalid_argument("experiment: repeats < 1");
    if (!synthetic && !csv_path)
      throw std::invalid_argument("experiment: no dataset source");
    if (synthetic && csv_path)
      throw std::invalid_argument("experiment: two dataset sources");
    if (arms.empty()) throw std::invalid_argument("experiment: no arms");
  }
};

inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["name"] = c.name;
  if (c.synthetic) {
    j["dataset"]["synthetic"] = {
        {"template", to_json(c.synthetic->poly)},
        {"d", c.synthetic->d},
        {"n_points", c.synthetic->n_points},
        {"range", {c.synthetic->sample_lo, c.synthetic->sample_hi}},
        {"noise", c.synthetic->noise_level},
        {"seed", c.synthetic->seed}};
  } else {
    j["dataset"]["csv"] = {{"path", *c.csv_path},
                           {"target", c.csv_target},
                           {"task", to_string(c.task)}};
  }
  j["split"] = c.split_ratios;
  j["split_seed"] = c.split_seed;
  j["gp"] = to_json(c.gp);
  j["run_vsr"] = c.run_vsr;
  j["normalize_before_vsr"] = c.normalize_before_vsr;
  j["normalize_targets"] = c.normalize_targets;
  j["repeats"] = c.repeats;
  j["base_seed"] = c.base_seed;
  j["train"] = to_json(c.train);
  nlohmann::json arms = nlohmann::json::array();
  for (const auto& a : c.arms) {
    nlohmann::json ja = {{"name", a.name},
                         {"kind", a.random_poly ? "random_poly" : to_string(a.kind)},
                         {"structure", structure_string(a.structure)},
                         {"activation", to_string(a.activation)}};
    if (!a.paired_ln.empty()) ja["pair"] = a.paired_ln;
    arms.push_back(ja);
  }
  j["arms"] = arms;
  return j;
}

inline ExperimentConfig experiment_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  c.name = j.value("name", "experiment");
  const auto& ds = j.at("dataset");
  if (ds.contains("synthetic")) {
    const auto& s = ds["synthetic"];
    SyntheticSpec spec;
    if (s.contains("poly")) {
      std::string p = s["poly"].get<std::string>();
      if (p.size() < 2 || p[0] != 'p')
        throw std::invalid_argument("synthetic poly must be p1..p10");
      spec.poly = synthetic_poly(std::stoi(p.substr(1)));
    } else if (s.contains("template")) {
      spec.poly = s["template"].is_string()
                      ? parse_template(s["template"].get<std::string>())
                      : template_from_json(s["template"]);
    } else {
      throw std::invalid_argument("synthetic dataset needs poly or template");
    }
    spec.d = s.value("d", 10);
    spec.n_points = s.value("n_points", std::size_t{600});
    if (s.contains("range")) {
      spec.sample_lo = s["range"].at(0).get<double>();
      spec.sample_hi = s["range"].at(1).get<double>();
    }
    spec.noise_level = s.value("noise", 0.0);
    spec.seed = s.value("seed", std::uint64_t{0});
    c.synthetic = spec;
    c.task = Task::Regression;
  } else if (ds.contains("csv")) {
    c.csv_path = ds["csv"].at("path").get<std::string>();
    c.csv_target = ds["csv"].at("target").get<std::string>();
    c.task = task_from_string(ds["csv"].value("task", "regression"));
  } else {
    throw std::invalid_argument("dataset must be synthetic or csv");
  }
  if (j.contains("split")) c.split_ratios = j["split"].get<std::vector<double>>();
  c.split_seed = j.value("split_seed", std::uint64_t{1});
  c.gp = j.contains("gp") ? gp_config_from_json(j["gp"]) : gp_preset("supplementary");
  c.run_vsr = j.value("run_vsr", true);
  c.normalize_before_vsr = j.value("normalize_before_vsr", !c.synthetic.has_value());
  c.normalize_targets = j.value("normalize_targets", true);
  c.repeats = j.value("repeats", 10);
  c.base_seed = j.value("base_seed", std::uint64_t{1000});
  // Paper defaults: MSE+RMSProp for regression, CrossEntropy+Adam for
  // classification; explicit keys win.
  nlohmann::json tj = j.value("train", nlohmann::json::object());
  if (c.task == Task::Classification) {
    if (!tj.contains("loss")) tj["loss"] = "cross_entropy";
    if (!tj.contains("optimizer")) tj["optimizer"] = "adam";
  }
  c.train = train_config_from_json(tj);
  for (const auto& ja : j.at("arms")) {
    ArmSpec a;
    a.name = ja.at("name").get<std::string>();
    std::string kind = ja.at("kind").get<std::string>();
    if (kind == "random_poly") {
      a.random_poly = true;
      a.kind = NeuronKind::TaskPoly;
    } else {
      a.kind = neuron_kind_from_string(kind);
    }
    a.structure = parse_structure(ja.at("structure").get<std::string>());
    if (ja.contains("activation"))
      a.activation = activation_from_string(ja["activation"].get<std::string>());
    else
      a.activation = (a.kind == NeuronKind::TaskPoly ||
                      a.kind == NeuronKind::TaskTrig)
                         ? Activation::Sigmoid
                         : Activation::Relu;
    a.paired_ln = ja.value("pair", "");
    c.arms.push_back(a);
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct ArmResult {
  ArmSpec arm;
  PolyTemplate tpl;  // template backing task/random arms
  std::size_t param_count = 0;
  bool rp_collision = false;
  std::vector<double> metrics;  // per repeat
  std::vector<std::vector<EpochStats>> histories;
  Aggregate agg;
  bool failed = false;
  std::string error;
  double seconds = 0.0;  // wall clock; kept out of the archive
};

struct ExperimentReport {
  std::string name;
  nlohmann::json config_echo;
  std::string formula;      // learned by VSR (empty if VSR skipped)
  double vsr_fitness = 0.0;
  double vsr_error_rate = 0.0;
  PolyTemplate learned;     // polynomial mode only
  std::vector<ArmResult> arms;
  double vsr_seconds = 0.0;
};

// ---------------------------------------------------------------------------
// Running
// ---------------------------------------------------------------------------

namespace detail {

inline Dataset build_experiment_dataset(const ExperimentConfig& c) {
  Dataset ds;
  if (c.synthetic) {
    ds = make_synthetic(*c.synthetic);
  } else {
    ds = load_csv(*c.csv_path, c.csv_target, c.task);
  }
  split_dataset(ds, c.split_ratios, c.split_seed);
  return ds;
}

inline double now_seconds() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

}  // namespace detail

// Full pipeline: dataset -> (VSR once) -> per-arm repeated build/train/eval.
// The learned template is shared by every repeat; repeat i derives its seed as
// base_seed + i. A diverging arm is marked failed without touching the others.
inline ExperimentReport run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  ExperimentReport report;
  report.name = cfg.name;
  report.config_echo = to_json(cfg);

  Dataset raw = detail::build_experiment_dataset(cfg);

  // The VSR view: raw for synthetic benchmarks, normalized for tabular data.
  Dataset vsr_view = raw;
  if (cfg.normalize_before_vsr) {
    normalize_minmax(vsr_view);
    if (cfg.task == Task::Regression && cfg.normalize_targets)
      normalize_target_minmax(vsr_view);
  }

  bool needs_template = false;
  for (const auto& a : cfg.arms)
    if (a.kind == NeuronKind::TaskPoly || a.kind == NeuronKind::TaskTrig)
      needs_template = true;

  PolyTemplate learned;
  std::optional<TrigTemplate> learned_trig;
  if (cfg.run_vsr && needs_template) {
    double t0 = detail::now_seconds();
    RegressionResult res = evolve(vsr_view, cfg.gp, vsr_view.split.train);
    report.vsr_seconds = detail::now_seconds() - t0;
    report.formula = res.formula;
    report.vsr_fitness = res.best.fitness;
    report.vsr_error_rate = res.train_error_rate;
    learned = res.poly;
    learned_trig = res.trig;
    report.learned = learned;
  }

  // Training view: normalized features (and targets for regression).
  Dataset train_view = std::move(vsr_view);
  if (!cfg.normalize_before_vsr) {
    normalize_minmax(train_view);
    if (cfg.task == Task::Regression && cfg.normalize_targets)
      normalize_target_minmax(train_view);
  }

  Rng rp_rng = make_rng(cfg.base_seed + 7777);
  for (const auto& arm : cfg.arms) {
    ArmResult res;
    res.arm = arm;
    double t0 = detail::now_seconds();
    try {
      PolyTemplate tpl = learned;
      if (arm.random_poly) {
        RandomPolyResult rp = random_polynomial_arm(learned, rp_rng);
        tpl = rp.tpl;
        res.rp_collision = rp.collision;
      }
      if (arm.kind == NeuronKind::TaskPoly) res.tpl = tpl;

      NetworkSpec spec;
      spec.layer_widths = arm.structure;
      spec.neuron_kind = arm.kind;
      spec.activation = arm.activation;
      spec.task = cfg.task;
      res.param_count = analytic_param_count(
          spec, train_view.n_features, tpl,
          learned_trig ? &*learned_trig : nullptr);

      for (int i = 0; i < cfg.repeats; ++i) {
        std::uint64_t seed = cfg.base_seed + static_cast<std::uint64_t>(i);
        Rng rng = make_rng(seed);
        Model model =
            build_network(spec, train_view.n_features, rng, tpl,
                          learned_trig ? &*learned_trig : nullptr);
        TrainConfig tc = cfg.train;
        tc.seed = seed;
        TrainReport tr = train(model, train_view, tc);
        res.metrics.push_back(tr.final_test_metric);
        res.histories.push_back(tr.history);
      }
      res.agg = aggregate(res.metrics);
    } catch (const std::exception& e) {
      res.failed = true;
      res.error = e.what();
    }
    res.seconds = detail::now_seconds() - t0;
    report.arms.push_back(std::move(res));
  }

  // The efficiency constraint: a task arm must not out-parameter its paired
  // linear arm.
  for (const auto& a : report.arms) {
    if (a.arm.paired_ln.empty() || a.failed) continue;
    for (const auto& b : report.arms) {
      if (b.arm.name != a.arm.paired_ln || b.failed) continue;
      if (a.param_count > b.param_count)
        throw std::invalid_argument(
            "experiment: arm '" + a.arm.name + "' has " +
            std::to_string(a.param_count) + " parameters, more than its pair '" +
            b.arm.name + "' (" + std::to_string(b.param_count) + ")");
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Emission: report.md, report.csv, archive.json, per-run history CSVs.
// Wall-clock times go to timings.json so the rest of the output is
// byte-reproducible under fixed seeds.
// ---------------------------------------------------------------------------

namespace detail {

inline std::string fmt4(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

}  // namespace detail

inline nlohmann::json archive_json(const ExperimentReport& r) {
  nlohmann::json j;
  j["name"] = r.name;
  j["config"] = r.config_echo;
  j["formula"] = r.formula;
  j["vsr_fitness"] = r.vsr_fitness;
  j["vsr_error_rate"] = r.vsr_error_rate;
  j["learned_template"] = to_json(r.learned);
  nlohmann::json arms = nlohmann::json::array();
  for (const auto& a : r.arms) {
    nlohmann::json ja;
    ja["name"] = a.arm.name;
    ja["kind"] = a.arm.random_poly ? "random_poly" : to_string(a.arm.kind);
    ja["structure"] = structure_string(a.arm.structure);
    if (!a.arm.paired_ln.empty()) ja["pair"] = a.arm.paired_ln;
    ja["activation"] = to_string(a.arm.activation);
    ja["param_count"] = a.param_count;
    ja["template"] = to_json(a.tpl);
    ja["rp_collision"] = a.rp_collision;
    ja["metrics"] = a.metrics;
    ja["mean"] = a.agg.mean;
    ja["std"] = a.agg.stddev;
    ja["degenerate_std"] = a.agg.degenerate;
    ja["failed"] = a.failed;
    if (a.failed) ja["error"] = a.error;
    arms.push_back(ja);
  }
  j["arms"] = arms;
  return j;
}

inline ExperimentReport report_from_archive(const nlohmann::json& j) {
  ExperimentReport r;
  r.name = j.at("name").get<std::string>();
  r.config_echo = j.at("config");
  r.formula = j.value("formula", "");
  r.vsr_fitness = j.value("vsr_fitness", 0.0);
  r.vsr_error_rate = j.value("vsr_error_rate", 0.0);
  r.learned = template_from_json(j.at("learned_template"));
  for (const auto& ja : j.at("arms")) {
    ArmResult a;
    a.arm.name = ja.at("name").get<std::string>();
    std::string kind = ja.at("kind").get<std::string>();
    if (kind == "random_poly") {
      a.arm.random_poly = true;
      a.arm.kind = NeuronKind::TaskPoly;
    } else {
      a.arm.kind = neuron_kind_from_string(kind);
    }
    a.arm.structure = parse_structure(ja.at("structure").get<std::string>());
    a.arm.paired_ln = ja.value("pair", "");
    a.arm.activation =
        activation_from_string(ja.at("activation").get<std::string>());
    a.param_count = ja.at("param_count").get<std::size_t>();
    a.tpl = template_from_json(ja.at("template"));
    a.rp_collision = ja.value("rp_collision", false);
    a.metrics = ja.at("metrics").get<std::vector<double>>();
    a.agg.mean = ja.at("mean").get<double>();
    a.agg.stddev = ja.at("std").get<double>();
    a.agg.degenerate = ja.value("degenerate_std", false);
    a.failed = ja.value("failed", false);
    if (ja.contains("error")) a.error = ja["error"].get<std::string>();
    r.arms.push_back(std::move(a));
  }
  return r;
}

inline std::string report_markdown(const ExperimentReport& r) {
  std::string md = "# " + r.name + "\n\n";
  if (!r.formula.empty()) {
    md += "Learned formula: `" + r.formula + "`\n\n";
    md += "Regression fitness (MSE): " + detail::format_number(r.vsr_fitness) +
          ", train error rate: " +
          detail::fmt4(100.0 * r.vsr_error_rate) + "%\n\n";
  }
  md += "| arm | structure | parameters | mean (std) |\n";
  md += "|-----|-----------|------------|------------|\n";
  for (const auto& a : r.arms) {
    std::string row = "| " + a.arm.name + " | " +
                      structure_string(a.arm.structure) + " (" +
                      std::to_string(a.param_count) + ") | " +
                      std::to_string(a.param_count) + " | ";
    if (a.failed) {
      row += "failed: " + a.error;
    } else {
      row += detail::fmt4(a.agg.mean) + " (" + detail::fmt4(a.agg.stddev) + ")";
      if (a.agg.degenerate) row += " [single repeat]";
      if (a.rp_collision) row += " [rp degree-set collision]";
    }
    md += row + " |\n";
  }
  return md;
}

inline std::string report_csv(const ExperimentReport& r) {
  std::string csv = "arm,kind,structure,parameters,mean,std\n";
  for (const auto& a : r.arms) {
    csv += a.arm.name + "," +
           (a.arm.random_poly ? "random_poly" : to_string(a.arm.kind)) + "," +
           structure_string(a.arm.structure) + "," +
           std::to_string(a.param_count) + ",";
    if (a.failed) {
      csv += "failed,failed\n";
    } else {
      csv += detail::format_number(a.agg.mean) + "," +
             detail::format_number(a.agg.stddev) + "\n";
    }
  }
  return csv;
}

inline void emit_report(const ExperimentReport& r,
                        const std::filesystem::path& dir) {
  if (r.arms.empty()) throw std::invalid_argument("emit_report: empty report");
  std::filesystem::create_directories(dir);
  {
    std::ofstream f(dir / "report.md");
    f << report_markdown(r);
  }
  {
    std::ofstream f(dir / "report.csv");
    f << report_csv(r);
  }
  {
    std::ofstream f(dir / "archive.json");
    f << archive_json(r).dump(2) << "\n";
  }
  {
    nlohmann::json t;
    t["vsr_seconds"] = r.vsr_seconds;
    for (const auto& a : r.arms) t["arm_seconds"][a.arm.name] = a.seconds;
    std::ofstream f(dir / "timings.json");
    f << t.dump(2) << "\n";
  }
  for (const auto& a : r.arms) {
    for (std::size_t i = 0; i < a.histories.size(); ++i) {
      std::string name = a.arm.name + "_run" + std::to_string(i) + ".csv";
      write_history_csv((dir / name).string(), a.histories[i]);
    }
  }
}

}  // namespace tbn
