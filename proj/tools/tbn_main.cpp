// tbn: vectorized symbolic regression, task-based neurons, and the
// benchmarking pipeline around them.
//
// Subcommands:
//   synth    generate a synthetic dataset directory
//   regress  run vectorized symbolic regression on a dataset
//   train    parameterize a template (or fixed neuron kind) and train it
//   bench    run a full multi-arm experiment from a config file
//   report   regenerate report files from an experiment archive
//
// Exit codes: 0 success, 1 usage/config error, 2 runtime/numeric failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "tbn/bench.hpp"
#include "tbn/data.hpp"
#include "tbn/expr.hpp"
#include "tbn/network.hpp"
#include "tbn/vsr.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw std::invalid_argument(path + ": " + e.what());
  }
}

// key.path=value overrides; every referenced key must already exist.
void apply_overrides(json& config, const std::vector<std::string>& sets) {
  for (const std::string& kv : sets) {
    auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
    std::string path = kv.substr(0, eq);
    std::string value = kv.substr(eq + 1);
    json* node = &config;
    std::size_t start = 0;
    std::vector<std::string> keys;
    while (true) {
      auto dot = path.find('.', start);
      keys.push_back(path.substr(start, dot - start));
      if (dot == std::string::npos) break;
      start = dot + 1;
    }
    for (std::size_t i = 0; i + 1 < keys.size(); ++i) {
      if (!node->contains(keys[i]))
        throw std::invalid_argument("--set: unknown config key '" + path + "'");
      node = &(*node)[keys[i]];
    }
    if (!node->contains(keys.back()))
      throw std::invalid_argument("--set: unknown config key '" + path + "'");
    json parsed;
    try {
      parsed = json::parse(value);
    } catch (const json::exception&) {
      parsed = value;  // plain string
    }
    (*node)[keys.back()] = parsed;
  }
}

std::vector<double> parse_ratio_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) out.push_back(std::stod(part));
  return out;
}

tbn::PolyTemplate template_from_arg(const std::string& arg) {
  // Either a path to a JSON file carrying {"terms": ...} (possibly nested in a
  // regression result) or formula text.
  if (fs::exists(arg)) {
    json j = load_json_file(arg);
    if (j.contains("template")) return tbn::template_from_json(j["template"]);
    if (j.contains("terms")) return tbn::template_from_json(j);
    if (j.contains("formula"))
      return tbn::parse_template(j["formula"].get<std::string>());
    throw std::invalid_argument(arg + ": no template found");
  }
  return tbn::parse_template(arg);
}

struct SynthArgs {
  std::string poly;
  std::string template_text;
  int d = 4;
  std::size_t n = 600;
  std::vector<double> range = {-50.0, 50.0};
  double noise = 0.0;
  std::uint64_t seed = 0;
  std::string split;
  std::uint64_t split_seed = 1;
  std::string out;
};

int cmd_synth(const SynthArgs& a) {
  tbn::SyntheticSpec spec;
  if (!a.poly.empty()) {
    if (a.poly.size() < 2 || a.poly[0] != 'p')
      throw std::invalid_argument("--poly expects p1..p10");
    spec.poly = tbn::synthetic_poly(std::stoi(a.poly.substr(1)));
  } else if (!a.template_text.empty()) {
    spec.poly = template_from_arg(a.template_text);
  } else {
    throw std::invalid_argument("synth: need --poly or --template");
  }
  spec.d = a.d;
  spec.n_points = a.n;
  spec.sample_lo = a.range.at(0);
  spec.sample_hi = a.range.at(1);
  spec.noise_level = a.noise;
  spec.seed = a.seed;
  tbn::Dataset ds = tbn::make_synthetic(spec);
  if (!a.split.empty())
    tbn::split_dataset(ds, parse_ratio_list(a.split), a.split_seed);
  tbn::save_dataset(ds, a.out);
  std::cout << "wrote " << ds.n_rows << "x" << ds.n_features << " dataset ("
            << tbn::template_to_string(spec.poly) << ", noise " << a.noise
            << ") to " << a.out << "\n";
  return 0;
}

struct RegressArgs {
  std::string data;
  std::string preset = "supplementary";
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string out;
};

int cmd_regress(const RegressArgs& a) {
  tbn::Dataset ds = tbn::load_dataset(a.data);
  if (ds.n_rows == 0) throw std::invalid_argument("regress: dataset has no rows");
  json jcfg = a.config.empty() ? json{{"preset", a.preset}}
                               : load_json_file(a.config);
  apply_overrides(jcfg, a.sets);
  tbn::GpConfig cfg = tbn::gp_config_from_json(jcfg);
  if (a.seed) cfg.seed = *a.seed;

  std::span<const std::size_t> rows;
  if (ds.split.defined()) rows = ds.split.train;
  tbn::RegressionResult res = tbn::evolve(ds, cfg, rows);

  json out = tbn::to_json(res);
  out["gp_config"] = tbn::to_json(cfg);
  fs::create_directories(a.out);
  std::ofstream f(fs::path(a.out) / "formula.json");
  f << out.dump(2) << "\n";
  std::cout << res.formula << "\n";
  return 0;
}

struct TrainArgs {
  std::string data;
  std::string template_arg;
  std::string kind;
  std::string net = "1";
  std::string activation;
  std::string train_config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string resume;
  bool no_normalize = false;
  std::string out;
};

int cmd_train(const TrainArgs& a) {
  tbn::Dataset ds = tbn::load_dataset(a.data);
  if (!a.no_normalize) {
    tbn::normalize_minmax(ds);
    if (ds.task == tbn::Task::Regression) tbn::normalize_target_minmax(ds);
  }

  json jcfg = a.train_config.empty() ? json::object()
                                     : load_json_file(a.train_config);
  apply_overrides(jcfg, a.sets);
  if (ds.task == tbn::Task::Classification) {
    if (!jcfg.contains("loss")) jcfg["loss"] = "cross_entropy";
    if (!jcfg.contains("optimizer")) jcfg["optimizer"] = "adam";
  }
  tbn::TrainConfig tc = tbn::train_config_from_json(jcfg);
  if (a.seed) tc.seed = *a.seed;

  tbn::Model model;
  tbn::TrainState state;
  if (!a.resume.empty()) {
    tbn::load_checkpoint(a.resume, model, state);
  } else {
    tbn::NetworkSpec spec;
    spec.layer_widths = tbn::parse_structure(a.net);
    spec.task = ds.task;
    tbn::PolyTemplate tpl;
    if (!a.template_arg.empty()) {
      spec.neuron_kind = tbn::NeuronKind::TaskPoly;
      spec.activation = tbn::Activation::Sigmoid;
      tpl = template_from_arg(a.template_arg);
    } else if (!a.kind.empty()) {
      spec.neuron_kind = tbn::neuron_kind_from_string(a.kind);
      spec.activation = tbn::Activation::Relu;
    } else {
      throw std::invalid_argument("train: need --template or --kind");
    }
    if (!a.activation.empty())
      spec.activation = tbn::activation_from_string(a.activation);
    tbn::Rng rng = tbn::make_rng(a.seed ? *a.seed : tc.seed);
    model = tbn::build_network(spec, ds.n_features, rng, tpl);
  }

  tbn::TrainReport rep = tbn::train(model, ds, tc, &state);

  fs::create_directories(a.out);
  tbn::save_checkpoint((fs::path(a.out) / "checkpoint.json").string(), model,
                       &state, &rep.history);
  tbn::write_history_csv((fs::path(a.out) / "history.csv").string(),
                         rep.history);
  std::cout << "params " << model.param_count << ", final train loss "
            << rep.final_train_loss << ", test "
            << (ds.task == tbn::Task::Regression ? "mse " : "accuracy ")
            << rep.final_test_metric << "\n";
  return 0;
}

struct BenchArgs {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string out;
};

int cmd_bench(const BenchArgs& a) {
  json jcfg = load_json_file(a.config);
  apply_overrides(jcfg, a.sets);
  if (a.seed) jcfg["base_seed"] = *a.seed;
  tbn::ExperimentConfig cfg = tbn::experiment_from_json(jcfg);
  tbn::ExperimentReport report = tbn::run_experiment(cfg);
  tbn::emit_report(report, a.out);
  std::cout << tbn::report_markdown(report);
  return 0;
}

struct ReportArgs {
  std::string archive;
  std::string out;
};

int cmd_report(const ReportArgs& a) {
  json archive = load_json_file(a.archive);
  tbn::ExperimentReport report;
  try {
    report = tbn::report_from_archive(archive);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("corrupt archive: ") + e.what());
  }
  fs::create_directories(a.out);
  {
    std::ofstream f(fs::path(a.out) / "report.md");
    f << tbn::report_markdown(report);
  }
  {
    std::ofstream f(fs::path(a.out) / "report.csv");
    f << tbn::report_csv(report);
  }
  std::cout << tbn::report_markdown(report);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"task-based neurons via vectorized symbolic regression"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "generate a synthetic dataset");
  s->add_option("--poly", synth.poly, "built-in polynomial p1..p10");
  s->add_option("--template", synth.template_text, "formula text or JSON path");
  s->add_option("--d", synth.d, "feature count");
  s->add_option("--n", synth.n, "number of samples");
  s->add_option("--range", synth.range, "sampling interval lo hi")->expected(2);
  s->add_option("--noise", synth.noise, "noise level epsilon");
  s->add_option("--seed", synth.seed, "rng seed");
  s->add_option("--split", synth.split, "split ratios, e.g. 0.8,0.2");
  s->add_option("--split-seed", synth.split_seed, "split rng seed");
  s->add_option("--out", synth.out, "output directory")->required();

  RegressArgs regress;
  auto* r = app.add_subcommand("regress", "vectorized symbolic regression");
  r->add_option("--data", regress.data, "dataset directory")->required();
  r->add_option("--preset", regress.preset,
                "gp preset: main-paper | supplementary | desk");
  r->add_option("--config", regress.config, "gp config JSON file");
  r->add_option("--set", regress.sets, "config override key=value");
  std::uint64_t rseed = 0;
  auto* ropt = r->add_option("--seed", rseed, "gp seed override");
  r->add_option("--out", regress.out, "output directory")->required();

  TrainArgs train;
  auto* t = app.add_subcommand("train", "parameterize and train a network");
  t->add_option("--data", train.data, "dataset directory")->required();
  t->add_option("--template", train.template_arg,
                "template text or formula.json path");
  t->add_option("--kind", train.kind,
                "fixed neuron kind: linear | quad_fan | quad_xu | quad_bu | "
                "quad_goyal");
  t->add_option("--net", train.net, "structure string, e.g. 2-1");
  t->add_option("--activation", train.activation, "relu | sigmoid");
  t->add_option("--train-config", train.train_config, "train config JSON file");
  t->add_option("--set", train.sets, "config override key=value");
  std::uint64_t tseed = 0;
  auto* topt = t->add_option("--seed", tseed, "seed override");
  t->add_option("--resume", train.resume, "checkpoint to resume from");
  t->add_flag("--no-normalize", train.no_normalize,
              "skip min-max normalization");
  t->add_option("--out", train.out, "output directory")->required();

  BenchArgs bench;
  auto* b = app.add_subcommand("bench", "run a multi-arm experiment");
  b->add_option("--config", bench.config, "experiment config JSON")->required();
  b->add_option("--set", bench.sets, "config override key=value");
  std::uint64_t bseed = 0;
  auto* bopt = b->add_option("--seed", bseed, "base seed override");
  b->add_option("--out", bench.out, "output directory")->required();

  ReportArgs report;
  auto* p = app.add_subcommand("report", "regenerate reports from an archive");
  p->add_option("--archive", report.archive, "archive.json path")->required();
  p->add_option("--out", report.out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*s) return cmd_synth(synth);
    if (*r) {
      if (*ropt) regress.seed = rseed;
      return cmd_regress(regress);
    }
    if (*t) {
      if (*topt) train.seed = tseed;
      return cmd_train(train);
    }
    if (*b) {
      if (*bopt) bench.seed = bseed;
      return cmd_bench(bench);
    }
    if (*p) return cmd_report(report);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const tbn::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
