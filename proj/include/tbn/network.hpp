#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "tbn/data.hpp"
#include "tbn/neuron.hpp"
#include "tbn/rng.hpp"

namespace tbn {

// ---------------------------------------------------------------------------
// Specs
// ---------------------------------------------------------------------------

enum class Activation { Relu, Sigmoid };

inline std::string to_string(Activation a) {
  return a == Activation::Relu ? "relu" : "sigmoid";
}
inline Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::Relu;
  if (s == "sigmoid") return Activation::Sigmoid;
  throw std::invalid_argument("unknown activation: " + s);
}

struct NetworkSpec {
  std::vector<int> layer_widths;  // hidden widths then output width, e.g. {2,1}
  NeuronKind neuron_kind = NeuronKind::Linear;
  Activation activation = Activation::Relu;
  Task task = Task::Regression;
  bool activate_output = false;  // hidden-style activation on the last layer

  int output_dim() const { return layer_widths.back(); }

  void validate() const {
    if (layer_widths.empty())
      throw std::invalid_argument("network: empty layer_widths");
    for (int w : layer_widths)
      if (w < 1) throw std::invalid_argument("network: layer width < 1");
    if (task == Task::Regression && layer_widths.back() != 1)
      throw std::invalid_argument("network: regression output width must be 1");
    if (task == Task::Classification && layer_widths.back() < 2)
      throw std::invalid_argument(
          "network: classification output width must be >= 2");
  }
};

// "5-3-1" <-> {5, 3, 1}
inline std::vector<int> parse_structure(const std::string& s) {
  std::vector<int> widths;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, '-')) {
    try {
      widths.push_back(std::stoi(part));
    } catch (const std::exception&) {
      throw std::invalid_argument("bad structure string: " + s);
    }
  }
  if (widths.empty()) throw std::invalid_argument("bad structure string: " + s);
  return widths;
}

inline std::string structure_string(const std::vector<int>& widths) {
  std::string out;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    if (i) out += "-";
    out += std::to_string(widths[i]);
  }
  return out;
}

struct TrainConfig {
  enum class Optimizer { RmsProp, Adam, Sgd } optimizer = Optimizer::RmsProp;
  double learning_rate = 1e-3;
  int batch_size = 64;
  int epochs = 500;
  enum class Loss { Mse, CrossEntropy } loss = Loss::Mse;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(learning_rate > 0)) throw std::invalid_argument("train: lr <= 0");
    if (batch_size < 1) throw std::invalid_argument("train: batch_size < 1");
    if (epochs < 0) throw std::invalid_argument("train: epochs < 0");
  }
};

inline std::string to_string(TrainConfig::Optimizer o) {
  switch (o) {
    case TrainConfig::Optimizer::RmsProp: return "rmsprop";
    case TrainConfig::Optimizer::Adam: return "adam";
    default: return "sgd";
  }
}

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"optimizer", to_string(c.optimizer)},
          {"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"loss", c.loss == TrainConfig::Loss::Mse ? "mse" : "cross_entropy"},
          {"seed", c.seed}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  if (j.contains("optimizer")) {
    std::string o = j["optimizer"].get<std::string>();
    if (o == "rmsprop")
      c.optimizer = TrainConfig::Optimizer::RmsProp;
    else if (o == "adam")
      c.optimizer = TrainConfig::Optimizer::Adam;
    else if (o == "sgd")
      c.optimizer = TrainConfig::Optimizer::Sgd;
    else
      throw std::invalid_argument("unknown optimizer: " + o);
  }
  if (j.contains("learning_rate")) c.learning_rate = j["learning_rate"];
  if (j.contains("batch_size")) c.batch_size = j["batch_size"];
  if (j.contains("epochs")) c.epochs = j["epochs"];
  if (j.contains("loss")) {
    std::string l = j["loss"].get<std::string>();
    if (l == "mse")
      c.loss = TrainConfig::Loss::Mse;
    else if (l == "cross_entropy")
      c.loss = TrainConfig::Loss::CrossEntropy;
    else
      throw std::invalid_argument("unknown loss: " + l);
  }
  if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

struct Model {
  NetworkSpec spec;
  std::size_t d_input = 0;
  PolyTemplate poly_template;               // task_poly layers
  std::optional<TrigTemplate> trig_template;  // task_trig layers
  std::vector<std::vector<NeuronParams>> layers;
  std::size_t param_count = 0;
};

// Per-neuron parameter count by kind; m is the layer's input width.
inline std::size_t neuron_param_count(NeuronKind kind, std::size_t m,
                                      const PolyTemplate& tpl,
                                      const TrigTemplate* trig = nullptr) {
  switch (kind) {
    case NeuronKind::TaskPoly:
      return m * tpl.positive_degrees().size() + 1;
    case NeuronKind::Linear:
    case NeuronKind::QuadGoyal:
      return m + 1;
    case NeuronKind::QuadBu:
      return 2 * m + 1;
    case NeuronKind::QuadXu:
    case NeuronKind::QuadFan:
      return 3 * m + 1;
    case NeuronKind::TaskTrig: {
      if (!trig) throw std::invalid_argument("param count: missing trig template");
      std::size_t n = trig->slot_count() + m + 1;
      if (trig->linear_tail) n += m;
      return n;
    }
  }
  return 0;
}

inline std::size_t analytic_param_count(const NetworkSpec& spec,
                                        std::size_t d_input,
                                        const PolyTemplate& tpl,
                                        const TrigTemplate* trig = nullptr) {
  std::size_t total = 0;
  std::size_t m = d_input;
  for (int w : spec.layer_widths) {
    total += static_cast<std::size_t>(w) *
             neuron_param_count(spec.neuron_kind, m, tpl, trig);
    m = static_cast<std::size_t>(w);
  }
  return total;
}

inline Model build_network(const NetworkSpec& spec, std::size_t d_input,
                           Rng& rng, const PolyTemplate& tpl = {},
                           const TrigTemplate* trig = nullptr,
                           InitRule init = InitRule::glorot()) {
  spec.validate();
  if (d_input < 1) throw std::invalid_argument("build_network: d_input < 1");
  if (spec.neuron_kind == NeuronKind::TaskPoly && tpl.positive_degrees().empty())
    throw std::invalid_argument(
        "build_network: task_poly network needs a template with positive degrees");
  if (spec.neuron_kind == NeuronKind::TaskTrig && !trig)
    throw std::invalid_argument("build_network: task_trig network needs a template");
  Model m;
  m.spec = spec;
  m.d_input = d_input;
  m.poly_template = tpl;
  if (trig) m.trig_template = *trig;
  std::size_t in_dim = d_input;
  for (int w : spec.layer_widths) {
    std::vector<NeuronParams> layer;
    layer.reserve(static_cast<std::size_t>(w));
    for (int j = 0; j < w; ++j) {
      switch (spec.neuron_kind) {
        case NeuronKind::TaskPoly:
          layer.push_back(build_neuron(tpl, in_dim, init, rng));
          break;
        case NeuronKind::TaskTrig:
          layer.push_back(build_trig_neuron(*trig, in_dim, init, rng));
          break;
        default:
          layer.push_back(build_neuron_kind(spec.neuron_kind, in_dim, init, rng));
          break;
      }
      m.param_count += layer.back().param_count();
    }
    m.layers.push_back(std::move(layer));
    in_dim = static_cast<std::size_t>(w);
  }
  std::size_t expected = analytic_param_count(spec, d_input, tpl, trig);
  if (m.param_count != expected)
    throw std::logic_error("build_network: parameter count mismatch (" +
                           std::to_string(m.param_count) + " vs analytic " +
                           std::to_string(expected) + ")");
  return m;
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

namespace detail {

inline double activate(Activation a, double z) {
  if (a == Activation::Relu) return z > 0.0 ? z : 0.0;
  return 1.0 / (1.0 + std::exp(-z));
}

// Derivative expressed through pre-activation z and activation value v.
inline double activate_grad(Activation a, double z, double v) {
  if (a == Activation::Relu) return z > 0.0 ? 1.0 : 0.0;
  return v * (1.0 - v);
}

}  // namespace detail

struct ForwardCache {
  // acts[0] is the input sample; acts[l+1] the activations leaving layer l.
  std::vector<std::vector<double>> acts;
  std::vector<std::vector<double>> preacts;  // per layer
};

// Single-sample forward pass. The final layer stays at its pre-activation
// (linear readout for regression, logits for classification) unless
// activate_output is set.
inline std::span<const double> forward_sample(const Model& m,
                                              std::span<const double> x,
                                              ForwardCache& cache) {
  if (x.size() != m.d_input)
    throw std::invalid_argument("forward: input width mismatch");
  cache.acts.assign(m.layers.size() + 1, {});
  cache.preacts.assign(m.layers.size(), {});
  cache.acts[0].assign(x.begin(), x.end());
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const auto& layer = m.layers[l];
    auto& pre = cache.preacts[l];
    auto& act = cache.acts[l + 1];
    pre.resize(layer.size());
    act.resize(layer.size());
    bool is_output = l + 1 == m.layers.size();
    for (std::size_t j = 0; j < layer.size(); ++j) {
      pre[j] = neuron_forward(layer[j], cache.acts[l]);
      act[j] = (is_output && !m.spec.activate_output)
                   ? pre[j]
                   : detail::activate(m.spec.activation, pre[j]);
    }
  }
  return cache.acts.back();
}

// Batch forward into a row-major n x output matrix.
inline std::vector<double> forward(const Model& m, const Dataset& ds,
                                   std::span<const std::size_t> rows) {
  std::size_t out_dim = static_cast<std::size_t>(m.spec.output_dim());
  std::vector<double> out(rows.size() * out_dim);
  ForwardCache cache;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto o = forward_sample(m, ds.row(rows[i]), cache);
    std::copy(o.begin(), o.end(), out.begin() + static_cast<std::ptrdiff_t>(i * out_dim));
  }
  return out;
}

struct ModelGrads {
  std::vector<std::vector<NeuronGrad>> layers;
};

inline ModelGrads make_grads_shape(const Model& m) {
  ModelGrads g;
  g.layers.resize(m.layers.size());
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    g.layers[l].reserve(m.layers[l].size());
    for (const auto& n : m.layers[l]) g.layers[l].push_back(make_grad_shape(n));
  }
  return g;
}

// Backprop for one sample given dL/d(output activations); accumulates
// parameter gradients into g.
inline void backward_sample(const Model& m, const ForwardCache& cache,
                            std::span<const double> dout, ModelGrads& g) {
  std::vector<double> delta(dout.begin(), dout.end());  // dL/d(act of layer l)
  for (std::size_t l = m.layers.size(); l-- > 0;) {
    const auto& layer = m.layers[l];
    bool is_output = l + 1 == m.layers.size();
    std::vector<double> prev(cache.acts[l].size(), 0.0);
    for (std::size_t j = 0; j < layer.size(); ++j) {
      double dpre = delta[j];
      if (!is_output || m.spec.activate_output)
        dpre *= detail::activate_grad(m.spec.activation, cache.preacts[l][j],
                                      cache.acts[l + 1][j]);
      neuron_backward_acc(layer[j], cache.acts[l], dpre, g.layers[l][j], prev);
    }
    delta = std::move(prev);
  }
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

// Returns the loss and writes dL/d(output) for one sample; the 1/batch factor
// is applied by the caller.
inline double loss_and_grad(TrainConfig::Loss loss, std::span<const double> out,
                            double target, std::span<double> dout) {
  if (loss == TrainConfig::Loss::Mse) {
    double e = out[0] - target;
    dout[0] = 2.0 * e;
    return e * e;
  }
  // Cross-entropy over logits; dL/dlogit = softmax - one_hot.
  double mx = *std::max_element(out.begin(), out.end());
  double z = 0.0;
  for (double v : out) z += std::exp(v - mx);
  int cls = static_cast<int>(std::llround(target));
  for (std::size_t c = 0; c < out.size(); ++c) {
    double p = std::exp(out[c] - mx) / z;
    dout[c] = p - (static_cast<int>(c) == cls ? 1.0 : 0.0);
  }
  return -(out[static_cast<std::size_t>(cls)] - mx - std::log(z));
}

// Mean loss + gradients over a batch of rows.
inline double batch_backward(const Model& m, const Dataset& ds,
                             std::span<const std::size_t> rows,
                             TrainConfig::Loss loss, ModelGrads& grads) {
  double total = 0.0;
  std::size_t out_dim = static_cast<std::size_t>(m.spec.output_dim());
  std::vector<double> dout(out_dim);
  ForwardCache cache;
  double inv_n = 1.0 / static_cast<double>(rows.size());
  for (std::size_t r : rows) {
    auto out = forward_sample(m, ds.row(r), cache);
    total += loss_and_grad(loss, out, ds.y[r], dout);
    for (double& v : dout) v *= inv_n;
    backward_sample(m, cache, dout, grads);
  }
  return total * inv_n;
}

// ---------------------------------------------------------------------------
// Flat parameter views and optimizers
// ---------------------------------------------------------------------------

inline std::vector<double> flatten_params(const Model& m) {
  std::vector<double> flat;
  flat.reserve(m.param_count);
  for (const auto& layer : m.layers)
    for (const auto& n : layer)
      for_each_param(const_cast<NeuronParams&>(n),
                     [&](double& v) { flat.push_back(v); });
  return flat;
}

inline void unflatten_params(Model& m, std::span<const double> flat) {
  std::size_t i = 0;
  for (auto& layer : m.layers)
    for (auto& n : layer)
      for_each_param(n, [&](double& v) { v = flat[i++]; });
  if (i != flat.size())
    throw std::invalid_argument("unflatten_params: size mismatch");
}

inline std::vector<double> flatten_grads(const Model& m, ModelGrads& g) {
  std::vector<double> flat;
  flat.reserve(m.param_count);
  for (auto& layer : g.layers)
    for (auto& n : layer)
      for_each_param(n, [&](double& v) { flat.push_back(v); });
  return flat;
}

struct OptimizerState {
  TrainConfig::Optimizer kind = TrainConfig::Optimizer::RmsProp;
  std::vector<double> v;  // rmsprop/adam second moment
  std::vector<double> m;  // adam first moment
  long step = 0;

  void reset(TrainConfig::Optimizer k, std::size_t n) {
    kind = k;
    v.assign(n, 0.0);
    m.assign(n, 0.0);
    step = 0;
  }
};

// Standard RMSProp: decay 0.9, eps 1e-8.
inline void rmsprop_step(std::span<double> params, std::span<const double> grads,
                         OptimizerState& state, double lr) {
  constexpr double kDecay = 0.9, kEps = 1e-8;
  if (state.v.size() != params.size()) state.reset(state.kind, params.size());
  ++state.step;
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.v[i] = kDecay * state.v[i] + (1.0 - kDecay) * grads[i] * grads[i];
    params[i] -= lr * grads[i] / (std::sqrt(state.v[i]) + kEps);
  }
}

// Standard Adam: beta1 0.9, beta2 0.999, eps 1e-8, bias-corrected.
inline void adam_step(std::span<double> params, std::span<const double> grads,
                      OptimizerState& state, double lr) {
  constexpr double kB1 = 0.9, kB2 = 0.999, kEps = 1e-8;
  if (state.v.size() != params.size()) state.reset(state.kind, params.size());
  ++state.step;
  double c1 = 1.0 - std::pow(kB1, static_cast<double>(state.step));
  double c2 = 1.0 - std::pow(kB2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = kB1 * state.m[i] + (1.0 - kB1) * grads[i];
    state.v[i] = kB2 * state.v[i] + (1.0 - kB2) * grads[i] * grads[i];
    params[i] -= lr * (state.m[i] / c1) / (std::sqrt(state.v[i] / c2) + kEps);
  }
}

inline void sgd_step(std::span<double> params, std::span<const double> grads,
                     OptimizerState& state, double lr) {
  ++state.step;
  for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * grads[i];
}

inline void optimizer_step(std::span<double> params,
                           std::span<const double> grads, OptimizerState& state,
                           double lr) {
  switch (state.kind) {
    case TrainConfig::Optimizer::RmsProp: rmsprop_step(params, grads, state, lr); break;
    case TrainConfig::Optimizer::Adam: adam_step(params, grads, state, lr); break;
    case TrainConfig::Optimizer::Sgd: sgd_step(params, grads, state, lr); break;
  }
}

// ---------------------------------------------------------------------------
// Evaluation and training
// ---------------------------------------------------------------------------

// Test MSE for regression, accuracy for classification (argmax over logits,
// ties to the lowest class index).
inline double evaluate(const Model& m, const Dataset& ds,
                       std::span<const std::size_t> rows) {
  ForwardCache cache;
  if (ds.task == Task::Regression) {
    double acc = 0.0;
    for (std::size_t r : rows) {
      auto out = forward_sample(m, ds.row(r), cache);
      double e = out[0] - ds.y[r];
      acc += e * e;
    }
    return acc / static_cast<double>(rows.size());
  }
  std::size_t correct = 0;
  for (std::size_t r : rows) {
    auto out = forward_sample(m, ds.row(r), cache);
    std::size_t best = 0;
    for (std::size_t c = 1; c < out.size(); ++c)
      if (out[c] > out[best]) best = c;
    if (best == static_cast<std::size_t>(std::llround(ds.y[r]))) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(rows.size());
}

struct EpochStats {
  int epoch;
  double train_loss;
  double test_metric;
};

struct TrainDivergence : std::runtime_error {
  std::vector<EpochStats> history;
  TrainDivergence(const std::string& msg, std::vector<EpochStats> h)
      : std::runtime_error(msg), history(std::move(h)) {}
};

// Serializable mid-training state; lets a checkpoint resume exactly.
struct TrainState {
  OptimizerState opt;
  int epoch = 0;
  std::string rng_state;  // mt19937_64 stream state
};

struct TrainReport {
  std::vector<EpochStats> history;
  double final_train_loss = 0.0;
  double final_test_metric = 0.0;
};

// Mini-batch training on the dataset's train split (all rows if no split is
// defined; test metrics then use the same rows). Deterministic for a fixed
// seed. Pass a TrainState to make the run resumable.
inline TrainReport train(Model& model, const Dataset& ds, const TrainConfig& cfg,
                         TrainState* state = nullptr) {
  cfg.validate();
  std::vector<std::size_t> all;
  std::span<const std::size_t> train_rows;
  std::span<const std::size_t> test_rows;
  if (ds.split.defined()) {
    train_rows = ds.split.train;
    test_rows = ds.split.test;
  } else {
    all.resize(ds.n_rows);
    std::iota(all.begin(), all.end(), 0);
    train_rows = all;
    test_rows = all;
  }
  if (ds.task == Task::Classification &&
      static_cast<std::size_t>(model.spec.output_dim()) < ds.n_classes())
    throw std::invalid_argument("train: output width below class count");

  TrainState local;
  TrainState& st = state ? *state : local;
  Rng rng = make_rng(cfg.seed);
  if (!st.rng_state.empty()) {
    std::istringstream in(st.rng_state);
    in >> rng;
  }
  std::vector<double> params = flatten_params(model);
  if (st.opt.v.size() != params.size()) st.opt.reset(cfg.optimizer, params.size());

  TrainReport report;
  std::vector<std::size_t> order(train_rows.size());
  for (int epoch = st.epoch; epoch < cfg.epochs; ++epoch) {
    // Reshuffle from the canonical order so a resumed run sees the same
    // batches as an uninterrupted one.
    std::copy(train_rows.begin(), train_rows.end(), order.begin());
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    std::size_t seen = 0;
    for (std::size_t b = 0; b < order.size();
         b += static_cast<std::size_t>(cfg.batch_size)) {
      std::size_t e = std::min(order.size(),
                               b + static_cast<std::size_t>(cfg.batch_size));
      std::span<const std::size_t> batch(order.data() + b, e - b);
      ModelGrads grads = make_grads_shape(model);
      double loss = batch_backward(model, ds, batch, cfg.loss, grads);
      if (!std::isfinite(loss))
        throw TrainDivergence("training diverged at epoch " +
                                  std::to_string(epoch),
                              report.history);
      epoch_loss += loss * static_cast<double>(batch.size());
      seen += batch.size();
      std::vector<double> flat_grads = flatten_grads(model, grads);
      optimizer_step(params, flat_grads, st.opt, cfg.learning_rate);
      unflatten_params(model, params);
    }
    double metric = evaluate(model, ds, test_rows);
    report.history.push_back(
        {epoch + 1, epoch_loss / static_cast<double>(seen), metric});
    st.epoch = epoch + 1;
  }
  std::ostringstream out;
  out << rng;
  st.rng_state = out.str();

  if (!report.history.empty()) {
    report.final_train_loss = report.history.back().train_loss;
    report.final_test_metric = report.history.back().test_metric;
  } else {
    report.final_test_metric = evaluate(model, ds, test_rows);
  }
  return report;
}

inline void write_history_csv(const std::string& path,
                              const std::vector<EpochStats>& history) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "epoch,train_loss,test_metric\n";
  for (const auto& e : history)
    out << e.epoch << "," << e.train_loss << "," << e.test_metric << "\n";
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const NetworkSpec& s) {
  return {{"layer_widths", s.layer_widths},
          {"neuron_kind", to_string(s.neuron_kind)},
          {"activation", to_string(s.activation)},
          {"task", to_string(s.task)},
          {"activate_output", s.activate_output}};
}

inline NetworkSpec network_spec_from_json(const nlohmann::json& j) {
  NetworkSpec s;
  s.layer_widths = j.at("layer_widths").get<std::vector<int>>();
  s.neuron_kind = neuron_kind_from_string(j.at("neuron_kind").get<std::string>());
  s.activation = activation_from_string(j.at("activation").get<std::string>());
  s.task = task_from_string(j.at("task").get<std::string>());
  s.activate_output = j.value("activate_output", false);
  s.validate();
  return s;
}

inline nlohmann::json to_json(const Model& m) {
  nlohmann::json j;
  j["spec"] = to_json(m.spec);
  j["d_input"] = m.d_input;
  j["param_count"] = m.param_count;
  if (m.spec.neuron_kind == NeuronKind::TaskPoly)
    j["template"] = to_json(m.poly_template);
  if (m.trig_template) j["trig_template"] = to_json(*m.trig_template);
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& layer : m.layers) {
    nlohmann::json jl = nlohmann::json::array();
    for (const auto& n : layer) jl.push_back(to_json(n));
    layers.push_back(jl);
  }
  j["layers"] = layers;
  return j;
}

inline Model model_from_json(const nlohmann::json& j) {
  Model m;
  m.spec = network_spec_from_json(j.at("spec"));
  m.d_input = j.at("d_input").get<std::size_t>();
  m.param_count = j.at("param_count").get<std::size_t>();
  if (j.contains("template")) m.poly_template = template_from_json(j["template"]);
  if (j.contains("trig_template"))
    m.trig_template = trig_template_from_json(j["trig_template"]);
  for (const auto& jl : j.at("layers")) {
    std::vector<NeuronParams> layer;
    for (const auto& jn : jl) layer.push_back(neuron_from_json(jn));
    m.layers.push_back(std::move(layer));
  }
  return m;
}

inline nlohmann::json to_json(const TrainState& st) {
  return {{"epoch", st.epoch},
          {"optimizer", to_string(st.opt.kind)},
          {"opt_m", st.opt.m},
          {"opt_v", st.opt.v},
          {"opt_step", st.opt.step},
          {"rng_state", st.rng_state}};
}

inline TrainState train_state_from_json(const nlohmann::json& j) {
  TrainState st;
  st.epoch = j.at("epoch").get<int>();
  std::string o = j.at("optimizer").get<std::string>();
  st.opt.kind = o == "rmsprop" ? TrainConfig::Optimizer::RmsProp
                : o == "adam"  ? TrainConfig::Optimizer::Adam
                               : TrainConfig::Optimizer::Sgd;
  st.opt.m = j.at("opt_m").get<std::vector<double>>();
  st.opt.v = j.at("opt_v").get<std::vector<double>>();
  st.opt.step = j.at("opt_step").get<long>();
  st.rng_state = j.at("rng_state").get<std::string>();
  return st;
}

inline void save_checkpoint(const std::string& path, const Model& m,
                            const TrainState* st = nullptr,
                            const std::vector<EpochStats>* history = nullptr) {
  nlohmann::json j;
  j["model"] = to_json(m);
  if (st) j["train_state"] = to_json(*st);
  if (history) {
    nlohmann::json h = nlohmann::json::array();
    for (const auto& e : *history)
      h.push_back({{"epoch", e.epoch},
                   {"train_loss", e.train_loss},
                   {"test_metric", e.test_metric}});
    j["history"] = h;
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << "\n";
}

inline void load_checkpoint(const std::string& path, Model& m, TrainState& st) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot read checkpoint " + path);
  nlohmann::json j = nlohmann::json::parse(in);
  m = model_from_json(j.at("model"));
  if (j.contains("train_state")) st = train_state_from_json(j["train_state"]);
}

}  // namespace tbn
