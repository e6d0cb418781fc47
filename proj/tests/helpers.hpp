#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "tbn/expr.hpp"
#include "tbn/rng.hpp"

namespace tbn::test {

// Independent recursive evaluator used as the oracle against the batched
// stack evaluator. Deliberately a different code path from eval_many.
inline double oracle_eval_at(const ExpressionTree& t, std::size_t i,
                             std::size_t& end, double z) {
  const Node& n = t.nodes[i];
  switch (n.kind) {
    case NodeKind::Var:
      end = i + 1;
      return z;
    case NodeKind::Const:
      end = i + 1;
      return n.value;
    case NodeKind::Sin:
      return std::sin(oracle_eval_at(t, i + 1, end, z));
    case NodeKind::Cos:
      return std::cos(oracle_eval_at(t, i + 1, end, z));
    default: {
      std::size_t mid;
      double a = oracle_eval_at(t, i + 1, mid, z);
      double b = oracle_eval_at(t, mid, end, z);
      switch (n.kind) {
        case NodeKind::Add: return a + b;
        case NodeKind::Sub: return a - b;
        default: return a * b;
      }
    }
  }
}

inline double oracle_scalar(const ExpressionTree& t, double z) {
  std::size_t end;
  return oracle_eval_at(t, 0, end, z);
}

// Per-component loop: f applied to each component, then summed.
inline double oracle_elementwise(const ExpressionTree& t,
                                 std::span<const double> x) {
  double s = 0.0;
  for (double xi : x) s += oracle_scalar(t, xi);
  return s;
}

// Small independent random-tree source for property tests.
inline ExpressionTree random_tree(Rng& rng, int max_depth, bool trig = false,
                                  double const_lo = -3.0, double const_hi = 3.0) {
  auto leaf = [&]() -> Node {
    if (bernoulli(rng, 0.6)) return {NodeKind::Var, 0.0};
    return {NodeKind::Const, uniform_real(rng, const_lo, const_hi)};
  };
  ExpressionTree t;
  struct Gen {
    Rng& rng;
    bool trig;
    decltype(leaf)& mk_leaf;
    void build(std::vector<Node>& out, int depth, int max_depth) {
      if (depth >= max_depth || bernoulli(rng, 0.3)) {
        out.push_back(mk_leaf());
        return;
      }
      int n_ops = trig ? 5 : 3;
      static const NodeKind ops[] = {NodeKind::Add, NodeKind::Sub, NodeKind::Mul,
                                     NodeKind::Sin, NodeKind::Cos};
      NodeKind op = ops[uniform_index(rng, static_cast<std::size_t>(n_ops))];
      out.push_back({op, 0.0});
      for (int c = 0; c < arity(op); ++c) build(out, depth + 1, max_depth);
    }
  } gen{rng, trig, leaf};
  gen.build(t.nodes, 0, max_depth);
  return t;
}

inline bool close_rel(double a, double b, double tol) {
  double scale = std::max({1.0, std::abs(a), std::abs(b)});
  return std::abs(a - b) <= tol * scale;
}

}  // namespace tbn::test
