#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "tbn/data.hpp"
#include "tbn/expr.hpp"
#include "tbn/parallel.hpp"
#include "tbn/rng.hpp"

namespace tbn {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

enum class OperatorSet { Polynomial, Trigonometric };

struct GpConfig {
  int population_size = 500;
  int max_generations = 80;
  double crossover_prob = 0.30;
  double mutation_prob = 0.60;
  double reproduction_prob = 0.10;
  double tournament_fraction = 0.03;
  double elite_fraction = 0.05;
  int max_depth = 6;  // edges; a single leaf has depth 0
  double const_lo = -20.0;
  double const_hi = 20.0;
  OperatorSet operator_set = OperatorSet::Polynomial;
  std::uint64_t seed = 0;
  double parsimony_penalty = 1e-6;

  // Template extraction and stopping policy.
  int max_template_degree = 10;
  double prune_epsilon = 1e-8;
  bool clamp_high_degrees = false;
  std::optional<double> stop_threshold;  // off by default
  bool trig_linear_tail = true;

  int tournament_size() const {
    return static_cast<int>(std::lround(tournament_fraction * population_size));
  }
  int elite_count() const {
    return static_cast<int>(std::lround(elite_fraction * population_size));
  }

  void validate() const {
    if (population_size < 1)
      throw std::invalid_argument("gp: population_size < 1");
    if (max_generations < 1)
      throw std::invalid_argument("gp: max_generations < 1");
    double s = crossover_prob + mutation_prob + reproduction_prob;
    if (std::abs(s - 1.0) > 1e-9)
      throw std::invalid_argument(
          "gp: crossover/mutation/reproduction probabilities must sum to 1");
    if (tournament_size() < 2)
      throw std::invalid_argument("gp: tournament size must be >= 2");
    if (elite_fraction < 0.0 || elite_fraction > 1.0)
      throw std::invalid_argument("gp: elite_fraction out of range");
    if (max_depth < 1) throw std::invalid_argument("gp: max_depth < 1");
    if (!(const_lo < const_hi))
      throw std::invalid_argument("gp: constant range must satisfy lo < hi");
    if (max_template_degree < 1)
      throw std::invalid_argument("gp: max_template_degree < 1");
  }
};

// Named presets; the CLI and experiment configs refer to these.
inline GpConfig gp_preset(const std::string& name) {
  GpConfig c;
  if (name == "supplementary") {
    c.population_size = 500;
    c.max_generations = 80;
    c.const_lo = -20.0;
    c.const_hi = 20.0;
    c.seed = 0;
  } else if (name == "main-paper") {
    c.population_size = 5000;
    c.max_generations = 30;
    c.const_lo = -1.0;
    c.const_hi = 1.0;
    c.seed = 100;
  } else if (name == "desk") {
    c.population_size = 500;
    c.max_generations = 40;
    c.const_lo = -20.0;
    c.const_hi = 20.0;
    c.seed = 0;
  } else {
    throw std::invalid_argument("unknown gp preset: " + name);
  }
  return c;
}

inline nlohmann::json to_json(const GpConfig& c) {
  nlohmann::json j;
  j["population_size"] = c.population_size;
  j["max_generations"] = c.max_generations;
  j["crossover_prob"] = c.crossover_prob;
  j["mutation_prob"] = c.mutation_prob;
  j["reproduction_prob"] = c.reproduction_prob;
  j["tournament_fraction"] = c.tournament_fraction;
  j["elite_fraction"] = c.elite_fraction;
  j["max_depth"] = c.max_depth;
  j["const_range"] = {c.const_lo, c.const_hi};
  j["operator_set"] =
      c.operator_set == OperatorSet::Polynomial ? "polynomial" : "trigonometric";
  j["seed"] = c.seed;
  j["parsimony_penalty"] = c.parsimony_penalty;
  j["max_template_degree"] = c.max_template_degree;
  j["prune_epsilon"] = c.prune_epsilon;
  j["clamp_high_degrees"] = c.clamp_high_degrees;
  if (c.stop_threshold) j["stop_threshold"] = *c.stop_threshold;
  j["trig_linear_tail"] = c.trig_linear_tail;
  return j;
}

inline GpConfig gp_config_from_json(const nlohmann::json& j) {
  GpConfig c;
  if (j.contains("preset")) c = gp_preset(j["preset"].get<std::string>());
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j[key].get<std::decay_t<decltype(field)>>();
  };
  get("population_size", c.population_size);
  get("max_generations", c.max_generations);
  get("crossover_prob", c.crossover_prob);
  get("mutation_prob", c.mutation_prob);
  get("reproduction_prob", c.reproduction_prob);
  get("tournament_fraction", c.tournament_fraction);
  get("elite_fraction", c.elite_fraction);
  get("max_depth", c.max_depth);
  if (j.contains("const_range")) {
    c.const_lo = j["const_range"].at(0).get<double>();
    c.const_hi = j["const_range"].at(1).get<double>();
  }
  if (j.contains("operator_set")) {
    std::string s = j["operator_set"].get<std::string>();
    if (s == "polynomial")
      c.operator_set = OperatorSet::Polynomial;
    else if (s == "trigonometric")
      c.operator_set = OperatorSet::Trigonometric;
    else
      throw std::invalid_argument("unknown operator_set: " + s);
  }
  get("seed", c.seed);
  get("parsimony_penalty", c.parsimony_penalty);
  get("max_template_degree", c.max_template_degree);
  get("prune_epsilon", c.prune_epsilon);
  get("clamp_high_degrees", c.clamp_high_degrees);
  if (j.contains("stop_threshold"))
    c.stop_threshold = j["stop_threshold"].get<double>();
  get("trig_linear_tail", c.trig_linear_tail);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Individuals and random tree generation
// ---------------------------------------------------------------------------

struct Individual {
  ExpressionTree tree;
  double fitness = std::numeric_limits<double>::infinity();
  bool evaluated = false;

  std::size_t node_count() const { return tree.size(); }
};

// Strict ordering used everywhere a "best" individual is chosen: lower
// fitness, then fewer nodes, then earlier population index.
inline bool better(const Individual& a, std::size_t ia, const Individual& b,
                   std::size_t ib) {
  if (a.fitness != b.fitness) return a.fitness < b.fitness;
  if (a.node_count() != b.node_count()) return a.node_count() < b.node_count();
  return ia < ib;
}

namespace detail {

enum class GenMethod { Grow, Full };

inline NodeKind random_function(Rng& rng, OperatorSet set) {
  if (set == OperatorSet::Polynomial) {
    static const NodeKind ops[] = {NodeKind::Add, NodeKind::Sub, NodeKind::Mul};
    return ops[uniform_index(rng, 3)];
  }
  static const NodeKind ops[] = {NodeKind::Add, NodeKind::Sub, NodeKind::Mul,
                                 NodeKind::Sin, NodeKind::Cos};
  return ops[uniform_index(rng, 5)];
}

// Variable-rich leaves: structural (constant-free) building blocks carry the
// exact coefficients, so constants stay the minority terminal.
inline Node random_leaf(Rng& rng, const GpConfig& cfg) {
  if (bernoulli(rng, 0.9)) return {NodeKind::Var, 0.0};
  return {NodeKind::Const, uniform_real(rng, cfg.const_lo, cfg.const_hi)};
}

inline void gen_nodes(std::vector<Node>& out, Rng& rng, const GpConfig& cfg,
                      GenMethod method, int depth, int target, int min_depth) {
  bool make_function;
  if (depth >= target) {
    make_function = false;
  } else if (method == GenMethod::Full || depth < min_depth) {
    make_function = true;
  } else {
    make_function = bernoulli(rng, 0.65);
  }
  if (!make_function) {
    out.push_back(random_leaf(rng, cfg));
    return;
  }
  NodeKind op = random_function(rng, cfg.operator_set);
  out.push_back({op, 0.0});
  for (int i = 0; i < arity(op); ++i)
    gen_nodes(out, rng, cfg, method, depth + 1, target, min_depth);
}

inline ExpressionTree gen_tree(Rng& rng, const GpConfig& cfg, GenMethod method,
                               int target_depth, int min_depth) {
  ExpressionTree t;
  gen_nodes(t.nodes, rng, cfg, method, 0, target_depth, min_depth);
  return t;
}

inline ExpressionTree splice(const ExpressionTree& host, std::size_t at,
                             const ExpressionTree& donor, std::size_t from) {
  std::size_t host_end = host.subtree_end(at);
  std::size_t donor_end = donor.subtree_end(from);
  ExpressionTree child;
  child.nodes.reserve(host.nodes.size() - (host_end - at) + (donor_end - from));
  child.nodes.insert(child.nodes.end(), host.nodes.begin(),
                     host.nodes.begin() + static_cast<std::ptrdiff_t>(at));
  child.nodes.insert(child.nodes.end(),
                     donor.nodes.begin() + static_cast<std::ptrdiff_t>(from),
                     donor.nodes.begin() + static_cast<std::ptrdiff_t>(donor_end));
  child.nodes.insert(child.nodes.end(),
                     host.nodes.begin() + static_cast<std::ptrdiff_t>(host_end),
                     host.nodes.end());
  return child;
}

}  // namespace detail

// Ramped half-and-half between depth 2 and max_depth.
inline std::vector<Individual> init_population(const GpConfig& cfg, Rng& rng) {
  cfg.validate();
  std::vector<Individual> pop;
  pop.reserve(static_cast<std::size_t>(cfg.population_size));
  int min_init = std::min(2, cfg.max_depth);
  for (int i = 0; i < cfg.population_size; ++i) {
    int target = uniform_int(rng, min_init, cfg.max_depth);
    auto method = i % 2 == 0 ? detail::GenMethod::Grow : detail::GenMethod::Full;
    pop.push_back({detail::gen_tree(rng, cfg, method, target, min_init),
                   std::numeric_limits<double>::infinity(), false});
  }
  return pop;
}

// Fittest of a uniformly sampled (with replacement) tournament.
inline std::size_t tournament_select(const std::vector<Individual>& pop,
                                     const GpConfig& cfg, Rng& rng) {
  if (pop.empty()) throw std::invalid_argument("tournament_select: empty population");
  int t = cfg.tournament_size();
  std::size_t best = uniform_index(rng, pop.size());
  for (int i = 1; i < t; ++i) {
    std::size_t c = uniform_index(rng, pop.size());
    if (better(pop[c], c, pop[best], best)) best = c;
  }
  return best;
}

// Subtree crossover: replace a uniformly chosen subtree of a with a uniformly
// chosen subtree of b. Children deeper than max_depth are retried a few times,
// after which a is reproduced unchanged.
inline Individual crossover(const Individual& a, const Individual& b,
                            const GpConfig& cfg, Rng& rng) {
  constexpr int kRetries = 5;
  for (int attempt = 0; attempt < kRetries; ++attempt) {
    std::size_t ia = uniform_index(rng, a.tree.size());
    std::size_t ib = uniform_index(rng, b.tree.size());
    ExpressionTree child = detail::splice(a.tree, ia, b.tree, ib);
    if (child.depth() <= cfg.max_depth)
      return {std::move(child), std::numeric_limits<double>::infinity(), false};
  }
  return a;  // keeps the cached fitness
}

// Point mutation: operator -> other operator of the same arity, leaf -> fresh
// leaf. Subtree mutation: replace the subtree with a fresh grown one within
// the remaining depth budget. The two forms are chosen with equal probability.
inline Individual mutate(const Individual& parent, const GpConfig& cfg,
                         Rng& rng) {
  if (bernoulli(rng, 0.5)) {
    ExpressionTree t = parent.tree;
    std::size_t i = uniform_index(rng, t.size());
    Node& n = t.nodes[i];
    switch (arity(n.kind)) {
      case 2: {
        NodeKind ops[2];
        int m = 0;
        for (NodeKind k : {NodeKind::Add, NodeKind::Sub, NodeKind::Mul})
          if (k != n.kind) ops[m++] = k;
        n.kind = ops[uniform_index(rng, 2)];
        break;
      }
      case 1:
        n.kind = n.kind == NodeKind::Sin ? NodeKind::Cos : NodeKind::Sin;
        break;
      default:
        n = detail::random_leaf(rng, cfg);
        break;
    }
    return {std::move(t), std::numeric_limits<double>::infinity(), false};
  }
  std::size_t i = uniform_index(rng, parent.tree.size());
  int allowed = std::max(0, cfg.max_depth - parent.tree.depth_of(i));
  // Fresh subtrees get the full remaining depth budget: large random inserts
  // keep feeding structural material into a converging population.
  ExpressionTree fresh =
      detail::gen_tree(rng, cfg, detail::GenMethod::Grow, allowed, 0);
  ExpressionTree child = detail::splice(parent.tree, i, fresh, 0);
  return {std::move(child), std::numeric_limits<double>::infinity(), false};
}

// ---------------------------------------------------------------------------
// Fitness
// ---------------------------------------------------------------------------

// MSE of the elementwise-sum evaluation over a fixed set of rows, plus the
// parsimony surcharge. Rows are flattened once so a candidate is evaluated
// with a single batched pass.
class FitnessEvaluator {
 public:
  FitnessEvaluator(const Dataset& ds, std::span<const std::size_t> rows,
                   double parsimony)
      : d_(ds.n_features), parsimony_(parsimony) {
    if (ds.n_rows == 0) throw std::invalid_argument("fitness: empty dataset");
    std::vector<std::size_t> all;
    if (rows.empty()) {
      all.resize(ds.n_rows);
      std::iota(all.begin(), all.end(), 0);
      rows = all;
    }
    flat_.reserve(rows.size() * d_);
    targets_.reserve(rows.size());
    for (std::size_t r : rows) {
      auto row = ds.row(r);
      flat_.insert(flat_.end(), row.begin(), row.end());
      targets_.push_back(ds.y[r]);
    }
  }

  std::size_t n_rows() const { return targets_.size(); }
  std::span<const double> targets() const { return targets_; }

  // Per-row predictions sum_i f(x_i); out must have n_rows() slots.
  void predict(const ExpressionTree& t, std::span<double> out,
               EvalWorkspace& ws, std::vector<double>& scratch) const {
    scratch.resize(flat_.size());
    eval_many(t, flat_, scratch, ws);
    for (std::size_t r = 0; r < targets_.size(); ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < d_; ++j) s += scratch[r * d_ + j];
      out[r] = s;
    }
  }

  double operator()(const Individual& ind, EvalWorkspace& ws,
                    std::vector<double>& scratch) const {
    scratch.resize(flat_.size());
    eval_many(ind.tree, flat_, scratch, ws);
    double acc = 0.0;
    for (std::size_t r = 0; r < targets_.size(); ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < d_; ++j) s += scratch[r * d_ + j];
      double e = s - targets_[r];
      acc += e * e;
    }
    if (!std::isfinite(acc)) return std::numeric_limits<double>::infinity();
    return acc / static_cast<double>(targets_.size()) +
           parsimony_ * static_cast<double>(ind.node_count());
  }

 private:
  std::vector<double> flat_;
  std::vector<double> targets_;
  std::size_t d_;
  double parsimony_;
};

inline double fitness(const ExpressionTree& tree, const Dataset& ds,
                      double parsimony_penalty = 0.0) {
  FitnessEvaluator eval(ds, {}, parsimony_penalty);
  EvalWorkspace ws;
  std::vector<double> scratch;
  Individual ind{tree, 0.0, false};
  return eval(ind, ws, scratch);
}

// ---------------------------------------------------------------------------
// Error rate
// ---------------------------------------------------------------------------

struct ErrorRate {
  double delta = 0.0;
  std::size_t skipped_zero_targets = 0;  // terms with y == 0 are skipped
};

inline ErrorRate error_rate(std::span<const double> predictions,
                            std::span<const double> targets) {
  if (predictions.size() != targets.size())
    throw std::invalid_argument("error_rate: length mismatch");
  if (targets.empty()) throw std::invalid_argument("error_rate: empty input");
  ErrorRate out;
  double acc = 0.0;
  std::size_t used = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] == 0.0) {
      ++out.skipped_zero_targets;
      continue;
    }
    acc += std::abs(targets[i] - predictions[i]) / std::abs(targets[i]);
    ++used;
  }
  out.delta = used == 0 ? 0.0 : acc / static_cast<double>(used);
  return out;
}

// ---------------------------------------------------------------------------
// The evolutionary loop
// ---------------------------------------------------------------------------

struct GenStats {
  double best;  // best-ever fitness after this generation (non-increasing)
  double mean;  // mean over finite fitnesses of the generation
};

struct RegressionResult {
  Individual best;
  PolyTemplate poly;                 // polynomial mode
  std::optional<TrigTemplate> trig;  // trigonometric mode
  std::vector<GenStats> history;
  double train_error_rate = 0.0;
  std::size_t error_rate_skipped = 0;
  std::string formula;
};

namespace detail {

// Evaluates all unevaluated individuals. Fitness is pure, so chunks can run
// on any number of threads without affecting results.
inline void evaluate_population(std::vector<Individual>& pop,
                                const FitnessEvaluator& eval) {
  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < pop.size(); ++i)
    if (!pop[i].evaluated) todo.push_back(i);
  parallel_for(todo.size(), [&](std::size_t begin, std::size_t end) {
    EvalWorkspace ws;
    std::vector<double> scratch;
    for (std::size_t k = begin; k < end; ++k) {
      Individual& ind = pop[todo[k]];
      ind.fitness = eval(ind, ws, scratch);
      ind.evaluated = true;
    }
  });
}

inline std::vector<std::size_t> rank_population(
    const std::vector<Individual>& pop) {
  std::vector<std::size_t> idx(pop.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return better(pop[a], a, pop[b], b);
  });
  return idx;
}

inline double finite_mean(const std::vector<Individual>& pop) {
  double acc = 0.0;
  std::size_t n = 0;
  for (const auto& ind : pop) {
    if (std::isfinite(ind.fitness)) {
      acc += ind.fitness;
      ++n;
    }
  }
  return n == 0 ? std::numeric_limits<double>::infinity()
                : acc / static_cast<double>(n);
}

}  // namespace detail

// Runs the full GP loop on the given rows (all rows when empty) and returns
// the best individual ever seen together with its canonical template, the
// fitness history, and the train-set error rate.
inline RegressionResult evolve(const Dataset& ds, const GpConfig& cfg,
                               std::span<const std::size_t> rows = {}) {
  cfg.validate();
  FitnessEvaluator eval(ds, rows, cfg.parsimony_penalty);
  Rng rng = make_rng(cfg.seed);

  std::vector<Individual> pop = init_population(cfg, rng);
  detail::evaluate_population(pop, eval);

  Individual best_ever = pop[detail::rank_population(pop).front()];
  RegressionResult result;
  result.history.push_back({best_ever.fitness, detail::finite_mean(pop)});

  auto stop = [&] {
    return cfg.stop_threshold && best_ever.fitness < *cfg.stop_threshold;
  };

  for (int gen = 1; gen < cfg.max_generations && !stop(); ++gen) {
    std::vector<std::size_t> ranked = detail::rank_population(pop);
    std::vector<Individual> next;
    next.reserve(pop.size());
    // Elites are the best structurally distinct individuals; copying clones
    // of one champion would only burn diversity.
    int elites = std::min<int>(cfg.elite_count(), static_cast<int>(pop.size()));
    for (std::size_t r = 0; r < ranked.size() &&
                            next.size() < static_cast<std::size_t>(elites);
         ++r) {
      const Individual& cand = pop[ranked[r]];
      bool dup = false;
      for (const Individual& kept : next)
        if (kept.tree == cand.tree) {
          dup = true;
          break;
        }
      if (!dup) next.push_back(cand);
    }
    while (next.size() < pop.size()) {
      double u = uniform_real(rng, 0.0, 1.0);
      if (u < cfg.crossover_prob) {
        const Individual& a = pop[tournament_select(pop, cfg, rng)];
        const Individual& b = pop[tournament_select(pop, cfg, rng)];
        next.push_back(crossover(a, b, cfg, rng));
      } else if (u < cfg.crossover_prob + cfg.mutation_prob) {
        next.push_back(mutate(pop[tournament_select(pop, cfg, rng)], cfg, rng));
      } else {
        next.push_back(pop[tournament_select(pop, cfg, rng)]);
      }
    }
    pop = std::move(next);
    detail::evaluate_population(pop, eval);
    std::size_t gen_best = detail::rank_population(pop).front();
    if (better(pop[gen_best], 1, best_ever, 0)) best_ever = pop[gen_best];
    result.history.push_back({best_ever.fitness, detail::finite_mean(pop)});
  }

  result.best = best_ever;
  if (cfg.operator_set == OperatorSet::Polynomial) {
    result.poly = canonicalize(best_ever.tree, cfg.max_template_degree,
                               cfg.prune_epsilon, cfg.clamp_high_degrees);
    result.formula = template_to_string(result.poly);
  } else {
    result.trig = make_trig_template(best_ever.tree, cfg.trig_linear_tail);
    result.formula = template_to_string(*result.trig);
  }

  std::vector<double> preds(eval.n_rows());
  EvalWorkspace ws;
  std::vector<double> scratch;
  eval.predict(best_ever.tree, preds, ws, scratch);
  ErrorRate er = error_rate(preds, eval.targets());
  result.train_error_rate = er.delta;
  result.error_rate_skipped = er.skipped_zero_targets;
  return result;
}

inline nlohmann::json to_json(const RegressionResult& r) {
  nlohmann::json j;
  j["formula"] = r.formula;
  if (r.trig)
    j["trig_template"] = to_json(*r.trig);
  else
    j["template"] = to_json(r.poly);
  j["best_fitness"] = r.best.fitness;
  j["node_count"] = r.best.node_count();
  j["tree"] = to_json(r.best.tree);
  j["train_error_rate"] = r.train_error_rate;
  j["error_rate_skipped"] = r.error_rate_skipped;
  nlohmann::json hist = nlohmann::json::array();
  for (const auto& g : r.history) hist.push_back({g.best, g.mean});
  j["history"] = hist;
  return j;
}

}  // namespace tbn
