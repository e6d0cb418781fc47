#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "tbn/expr.hpp"
#include "tbn/rng.hpp"

namespace tbn {

// ---------------------------------------------------------------------------
// Neuron kinds
//
// task_poly generalizes the published quadratic families: a learned template
// with positive degrees K yields the aggregation sum_{k in K} w_k^T (x odot^k x) + b,
// one weight vector per degree, so the parameter count stays O(d). The fixed
// quadratic variants are provided for comparison. Activation functions are
// applied by the network layer, never here.
// ---------------------------------------------------------------------------

enum class NeuronKind {
  TaskPoly,
  TaskTrig,
  Linear,
  QuadFan,   // (w1^T x)(w2^T x) + w3^T (x odot x) + b
  QuadXu,    // (w1^T x)(w2^T x) + w3^T x + b
  QuadBu,    // (w1^T x)(w2^T x) + b
  QuadGoyal  // w^T (x odot x) + b
};

inline std::string to_string(NeuronKind k) {
  switch (k) {
    case NeuronKind::TaskPoly: return "task_poly";
    case NeuronKind::TaskTrig: return "task_trig";
    case NeuronKind::Linear: return "linear";
    case NeuronKind::QuadFan: return "quad_fan";
    case NeuronKind::QuadXu: return "quad_xu";
    case NeuronKind::QuadBu: return "quad_bu";
    default: return "quad_goyal";
  }
}

inline NeuronKind neuron_kind_from_string(const std::string& s) {
  if (s == "task_poly") return NeuronKind::TaskPoly;
  if (s == "task_trig") return NeuronKind::TaskTrig;
  if (s == "linear") return NeuronKind::Linear;
  if (s == "quad_fan") return NeuronKind::QuadFan;
  if (s == "quad_xu") return NeuronKind::QuadXu;
  if (s == "quad_bu") return NeuronKind::QuadBu;
  if (s == "quad_goyal") return NeuronKind::QuadGoyal;
  throw std::invalid_argument("unknown neuron kind: " + s);
}

struct InitRule {
  enum class Kind { Glorot, Uniform, Zeros } kind = Kind::Glorot;
  double scale = 1.0;  // half-width for Uniform

  static InitRule glorot() { return {Kind::Glorot, 1.0}; }
  static InitRule uniform(double half_width) { return {Kind::Uniform, half_width}; }
  static InitRule zeros() { return {Kind::Zeros, 0.0}; }

  double half_width(std::size_t fan_in) const {
    switch (kind) {
      case Kind::Glorot:
        return std::sqrt(6.0 / (static_cast<double>(fan_in) + 1.0));
      case Kind::Uniform:
        return scale;
      default:
        return 0.0;
    }
  }
};

struct NeuronParams {
  NeuronKind kind = NeuronKind::Linear;
  std::size_t input_dim = 0;

  // task_poly: one weight vector per entry of `degrees` (ascending, k >= 1).
  // linear: weights[0]. quads: weights[0..] = w1, w2(, w3).
  std::vector<int> degrees;
  std::vector<std::vector<double>> weights;
  double bias = 0.0;

  // task_trig
  TrigTemplate trig;
  std::vector<double> trig_consts;      // one per constant slot
  std::vector<double> leaf_weights;     // per-feature weight at Var leaves
  std::vector<double> affine_weights;   // tail w (present iff trig.linear_tail)

  std::size_t param_count() const {
    std::size_t n = 1;  // bias
    for (const auto& w : weights) n += w.size();
    n += trig_consts.size() + leaf_weights.size() + affine_weights.size();
    return n;
  }
};

// Same shape as the owning params, plus the input gradient.
struct NeuronGrad {
  std::vector<std::vector<double>> weights;
  double bias = 0.0;
  std::vector<double> trig_consts;
  std::vector<double> leaf_weights;
  std::vector<double> affine_weights;
  std::vector<double> input;  // d(out)/dx
};

// ---------------------------------------------------------------------------
// Construction
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<double> random_vector(std::size_t n, double a, Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = a == 0.0 ? 0.0 : uniform_real(rng, -a, a);
  return v;
}

}  // namespace detail

// Parameterizes a learned polynomial template: the learned coefficients are
// discarded and each positive degree gets a trainable weight vector; the
// constant term, if any, becomes the trainable bias.
inline NeuronParams build_neuron(const PolyTemplate& tpl, std::size_t d,
                                 InitRule init, Rng& rng) {
  if (d < 1) throw std::invalid_argument("build_neuron: d < 1");
  std::vector<int> ks = tpl.positive_degrees();
  if (ks.empty())
    throw std::invalid_argument("build_neuron: template has no positive degrees");
  NeuronParams p;
  p.kind = NeuronKind::TaskPoly;
  p.input_dim = d;
  p.degrees = ks;
  double a = init.half_width(d);
  for (std::size_t i = 0; i < ks.size(); ++i)
    p.weights.push_back(detail::random_vector(d, a, rng));
  p.bias = 0.0;
  return p;
}

inline NeuronParams build_neuron_kind(NeuronKind kind, std::size_t d,
                                      InitRule init, Rng& rng) {
  if (d < 1) throw std::invalid_argument("build_neuron_kind: d < 1");
  NeuronParams p;
  p.kind = kind;
  p.input_dim = d;
  double a = init.half_width(d);
  auto vecs = [&](int n) {
    for (int i = 0; i < n; ++i)
      p.weights.push_back(detail::random_vector(d, a, rng));
  };
  switch (kind) {
    case NeuronKind::Linear:
    case NeuronKind::QuadGoyal:
      vecs(1);
      break;
    case NeuronKind::QuadBu:
      vecs(2);
      break;
    case NeuronKind::QuadXu:
    case NeuronKind::QuadFan:
      vecs(3);
      break;
    default:
      throw std::invalid_argument(
          "build_neuron_kind: task neurons need a template");
  }
  p.bias = 0.0;
  return p;
}

// Trigonometric parameterization: constant slots become trainable scalars,
// all Var leaves share a per-feature weight vector applied at the leaf, and
// an affine tail w^T x + b is appended when the template requests one.
inline NeuronParams build_trig_neuron(const TrigTemplate& tpl, std::size_t d,
                                      InitRule init, Rng& rng) {
  if (d < 1) throw std::invalid_argument("build_trig_neuron: d < 1");
  NeuronParams p;
  p.kind = NeuronKind::TaskTrig;
  p.input_dim = d;
  p.trig = tpl;
  double a = init.half_width(d);
  p.trig_consts.resize(tpl.slot_count());
  for (std::size_t s = 0; s < p.trig_consts.size(); ++s)
    p.trig_consts[s] = init.kind == InitRule::Kind::Zeros
                           ? 0.0
                           : uniform_real(rng, -1.0, 1.0);
  p.leaf_weights = detail::random_vector(d, a, rng);
  if (tpl.linear_tail) p.affine_weights = detail::random_vector(d, a, rng);
  p.bias = 0.0;
  return p;
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

namespace detail {

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// sum_i w_i x_i^k
inline double power_dot(std::span<const double> w, std::span<const double> x,
                        int k) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double p = x[i];
    for (int j = 1; j < k; ++j) p *= x[i];
    s += w[i] * p;
  }
  return s;
}

// Scalar tree evaluation with externally supplied constants; stores the value
// of every node for the reverse pass.
struct TrigTreeEval {
  const ExpressionTree& t;
  std::span<const std::size_t> slots;
  std::span<const double> consts;
  double u;
  std::vector<double>& vals;

  double run(std::size_t i, std::size_t& end) {
    const Node& n = t.nodes[i];
    double v;
    switch (n.kind) {
      case NodeKind::Var:
        v = u;
        end = i + 1;
        break;
      case NodeKind::Const: {
        auto it = std::lower_bound(slots.begin(), slots.end(), i);
        v = consts[static_cast<std::size_t>(it - slots.begin())];
        end = i + 1;
        break;
      }
      case NodeKind::Sin:
        v = std::sin(run(i + 1, end));
        break;
      case NodeKind::Cos:
        v = std::cos(run(i + 1, end));
        break;
      default: {
        std::size_t mid;
        double a = run(i + 1, mid);
        double b = run(mid, end);
        v = n.kind == NodeKind::Add ? a + b
            : n.kind == NodeKind::Sub ? a - b
                                      : a * b;
        break;
      }
    }
    vals[i] = v;
    return v;
  }

  // Reverse sweep; accumulates d/du into du and d/dc_s into dconsts.
  void back(std::size_t i, double adj, double& du,
            std::span<double> dconsts) const {
    const Node& n = t.nodes[i];
    switch (n.kind) {
      case NodeKind::Var:
        du += adj;
        break;
      case NodeKind::Const: {
        auto it = std::lower_bound(slots.begin(), slots.end(), i);
        dconsts[static_cast<std::size_t>(it - slots.begin())] += adj;
        break;
      }
      case NodeKind::Sin:
        back(i + 1, adj * std::cos(vals[i + 1]), du, dconsts);
        break;
      case NodeKind::Cos:
        back(i + 1, -adj * std::sin(vals[i + 1]), du, dconsts);
        break;
      default: {
        std::size_t left = i + 1;
        std::size_t right = t.subtree_end(left);
        if (n.kind == NodeKind::Add) {
          back(left, adj, du, dconsts);
          back(right, adj, du, dconsts);
        } else if (n.kind == NodeKind::Sub) {
          back(left, adj, du, dconsts);
          back(right, -adj, du, dconsts);
        } else {
          back(left, adj * vals[right], du, dconsts);
          back(right, adj * vals[left], du, dconsts);
        }
        break;
      }
    }
  }
};

}  // namespace detail

// Pre-activation output of a single neuron.
inline double neuron_forward(const NeuronParams& p, std::span<const double> x) {
  if (x.size() != p.input_dim)
    throw std::invalid_argument("neuron_forward: input length mismatch");
  switch (p.kind) {
    case NeuronKind::TaskPoly: {
      double s = p.bias;
      for (std::size_t i = 0; i < p.degrees.size(); ++i)
        s += detail::power_dot(p.weights[i], x, p.degrees[i]);
      return s;
    }
    case NeuronKind::Linear:
      return detail::dot(p.weights[0], x) + p.bias;
    case NeuronKind::QuadGoyal:
      return detail::power_dot(p.weights[0], x, 2) + p.bias;
    case NeuronKind::QuadBu:
      return detail::dot(p.weights[0], x) * detail::dot(p.weights[1], x) + p.bias;
    case NeuronKind::QuadXu:
      return detail::dot(p.weights[0], x) * detail::dot(p.weights[1], x) +
             detail::dot(p.weights[2], x) + p.bias;
    case NeuronKind::QuadFan:
      return detail::dot(p.weights[0], x) * detail::dot(p.weights[1], x) +
             detail::power_dot(p.weights[2], x, 2) + p.bias;
    case NeuronKind::TaskTrig: {
      double s = 0.0;
      std::vector<double> vals(p.trig.tree.size());
      for (std::size_t i = 0; i < x.size(); ++i) {
        detail::TrigTreeEval ev{p.trig.tree, p.trig.const_slots, p.trig_consts,
                                p.leaf_weights[i] * x[i], vals};
        std::size_t end;
        s += ev.run(0, end);
      }
      if (p.trig.linear_tail) s += detail::dot(p.affine_weights, x);
      return s + p.bias;
    }
  }
  throw std::logic_error("neuron_forward: unreachable");
}

inline NeuronGrad make_grad_shape(const NeuronParams& p) {
  NeuronGrad g;
  g.weights.resize(p.weights.size());
  for (std::size_t i = 0; i < p.weights.size(); ++i)
    g.weights[i].assign(p.weights[i].size(), 0.0);
  g.trig_consts.assign(p.trig_consts.size(), 0.0);
  g.leaf_weights.assign(p.leaf_weights.size(), 0.0);
  g.affine_weights.assign(p.affine_weights.size(), 0.0);
  g.input.assign(p.input_dim, 0.0);
  return g;
}

// Accumulating form used by batched backprop: parameter gradients add into g,
// input gradients add into input_grad (the per-sample accumulator).
inline void neuron_backward_acc(const NeuronParams& p, std::span<const double> x,
                                double upstream, NeuronGrad& g,
                                std::span<double> input_grad) {
  if (x.size() != p.input_dim)
    throw std::invalid_argument("neuron_backward: input length mismatch");
  g.bias += upstream;
  switch (p.kind) {
    case NeuronKind::TaskPoly: {
      for (std::size_t i = 0; i < p.degrees.size(); ++i) {
        int k = p.degrees[i];
        auto& gw = g.weights[i];
        for (std::size_t j = 0; j < p.input_dim; ++j) {
          double pk1 = 1.0;  // x_j^{k-1}
          for (int m = 1; m < k; ++m) pk1 *= x[j];
          gw[j] += upstream * pk1 * x[j];  // x_j^k
          input_grad[j] +=
              upstream * static_cast<double>(k) * p.weights[i][j] * pk1;
        }
      }
      return;
    }
    case NeuronKind::Linear: {
      for (std::size_t j = 0; j < p.input_dim; ++j) {
        g.weights[0][j] += upstream * x[j];
        input_grad[j] += upstream * p.weights[0][j];
      }
      return;
    }
    case NeuronKind::QuadGoyal: {
      for (std::size_t j = 0; j < p.input_dim; ++j) {
        g.weights[0][j] += upstream * x[j] * x[j];
        input_grad[j] += upstream * 2.0 * p.weights[0][j] * x[j];
      }
      return;
    }
    case NeuronKind::QuadBu:
    case NeuronKind::QuadXu:
    case NeuronKind::QuadFan: {
      double a = detail::dot(p.weights[0], x);
      double b = detail::dot(p.weights[1], x);
      for (std::size_t j = 0; j < p.input_dim; ++j) {
        g.weights[0][j] += upstream * b * x[j];
        g.weights[1][j] += upstream * a * x[j];
        input_grad[j] += upstream * (b * p.weights[0][j] + a * p.weights[1][j]);
      }
      if (p.kind == NeuronKind::QuadXu) {
        for (std::size_t j = 0; j < p.input_dim; ++j) {
          g.weights[2][j] += upstream * x[j];
          input_grad[j] += upstream * p.weights[2][j];
        }
      } else if (p.kind == NeuronKind::QuadFan) {
        for (std::size_t j = 0; j < p.input_dim; ++j) {
          g.weights[2][j] += upstream * x[j] * x[j];
          input_grad[j] += upstream * 2.0 * p.weights[2][j] * x[j];
        }
      }
      return;
    }
    case NeuronKind::TaskTrig: {
      std::vector<double> vals(p.trig.tree.size());
      std::vector<double> dconsts(p.trig_consts.size());
      for (std::size_t j = 0; j < p.input_dim; ++j) {
        detail::TrigTreeEval ev{p.trig.tree, p.trig.const_slots, p.trig_consts,
                                p.leaf_weights[j] * x[j], vals};
        std::size_t end;
        ev.run(0, end);
        double du = 0.0;
        std::fill(dconsts.begin(), dconsts.end(), 0.0);
        ev.back(0, 1.0, du, dconsts);
        g.leaf_weights[j] += upstream * du * x[j];
        input_grad[j] += upstream * du * p.leaf_weights[j];
        for (std::size_t s = 0; s < dconsts.size(); ++s)
          g.trig_consts[s] += upstream * dconsts[s];
      }
      if (p.trig.linear_tail) {
        for (std::size_t j = 0; j < p.input_dim; ++j) {
          g.affine_weights[j] += upstream * x[j];
          input_grad[j] += upstream * p.affine_weights[j];
        }
      }
      return;
    }
  }
  throw std::logic_error("neuron_backward: unreachable");
}

// Analytic gradients of the pre-activation, scaled by `upstream`.
inline NeuronGrad neuron_backward(const NeuronParams& p,
                                  std::span<const double> x, double upstream) {
  NeuronGrad g = make_grad_shape(p);
  neuron_backward_acc(p, x, upstream, g, g.input);
  return g;
}

// ---------------------------------------------------------------------------
// Flat parameter access (optimizers, checkpoints, gradient checks)
// ---------------------------------------------------------------------------

// Visits every trainable value in a fixed order, identical for NeuronParams
// and the matching NeuronGrad.
template <typename ParamsT, typename Fn>
void for_each_param(ParamsT& p, Fn&& fn) {
  for (auto& w : p.weights)
    for (auto& v : w) fn(v);
  for (auto& v : p.trig_consts) fn(v);
  for (auto& v : p.leaf_weights) fn(v);
  for (auto& v : p.affine_weights) fn(v);
  fn(p.bias);
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const NeuronParams& p) {
  nlohmann::json j;
  j["kind"] = to_string(p.kind);
  j["input_dim"] = p.input_dim;
  j["bias"] = p.bias;
  if (p.kind == NeuronKind::TaskPoly) j["degrees"] = p.degrees;
  if (!p.weights.empty()) j["weights"] = p.weights;
  if (p.kind == NeuronKind::TaskTrig) {
    j["trig_template"] = to_json(p.trig);
    j["trig_consts"] = p.trig_consts;
    j["leaf_weights"] = p.leaf_weights;
    if (p.trig.linear_tail) j["affine_weights"] = p.affine_weights;
  }
  return j;
}

inline NeuronParams neuron_from_json(const nlohmann::json& j) {
  NeuronParams p;
  p.kind = neuron_kind_from_string(j.at("kind").get<std::string>());
  p.input_dim = j.at("input_dim").get<std::size_t>();
  p.bias = j.at("bias").get<double>();
  if (j.contains("degrees")) p.degrees = j["degrees"].get<std::vector<int>>();
  if (j.contains("weights"))
    p.weights = j["weights"].get<std::vector<std::vector<double>>>();
  if (p.kind == NeuronKind::TaskTrig) {
    p.trig = trig_template_from_json(j.at("trig_template"));
    p.trig_consts = j.at("trig_consts").get<std::vector<double>>();
    p.leaf_weights = j.at("leaf_weights").get<std::vector<double>>();
    if (p.trig.linear_tail)
      p.affine_weights = j.at("affine_weights").get<std::vector<double>>();
  }
  return p;
}

}  // namespace tbn
