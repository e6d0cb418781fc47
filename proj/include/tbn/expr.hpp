#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace tbn {

// ---------------------------------------------------------------------------
// Expression trees
//
// A tree encodes a scalar formula f(z) over a single shared symbol z. Applied
// to a feature vector it is evaluated elementwise and summed over features,
// so a learned formula has the same shape regardless of input dimension.
// Trees are stored as flat preorder arrays; a subtree is a contiguous slice,
// which makes subtree splicing (crossover, mutation) cheap copies. Trees are
// value types and never mutated in place once built.
// ---------------------------------------------------------------------------

enum class NodeKind : std::uint8_t { Add, Sub, Mul, Sin, Cos, Var, Const };

inline int arity(NodeKind k) {
  switch (k) {
    case NodeKind::Add:
    case NodeKind::Sub:
    case NodeKind::Mul:
      return 2;
    case NodeKind::Sin:
    case NodeKind::Cos:
      return 1;
    default:
      return 0;
  }
}

struct Node {
  NodeKind kind;
  double value = 0.0;  // meaningful for Const only
};

struct ExpressionTree {
  std::vector<Node> nodes;  // preorder

  std::size_t size() const { return nodes.size(); }
  bool empty() const { return nodes.empty(); }

  // Exclusive end of the subtree rooted at node i.
  std::size_t subtree_end(std::size_t i) const {
    int pending = 1;
    std::size_t j = i;
    while (pending > 0) {
      pending += arity(nodes[j].kind) - 1;
      ++j;
    }
    return j;
  }

  // Depth in edges: a single leaf has depth 0.
  int depth() const {
    int max_d = 0;
    int d = 0;
    std::vector<int> remaining;  // children still expected per open function
    for (const Node& n : nodes) {
      max_d = std::max(max_d, d);
      int a = arity(n.kind);
      if (a > 0) {
        remaining.push_back(a);
        ++d;
      } else {
        while (!remaining.empty() && --remaining.back() == 0) {
          remaining.pop_back();
          --d;
        }
      }
    }
    return max_d;
  }

  // Depth (in edges) of node i below the root.
  int depth_of(std::size_t i) const {
    int d = 0;
    std::vector<int> remaining;
    for (std::size_t j = 0; j < nodes.size(); ++j) {
      if (j == i) return d;
      int a = arity(nodes[j].kind);
      if (a > 0) {
        remaining.push_back(a);
        ++d;
      } else {
        while (!remaining.empty() && --remaining.back() == 0) {
          remaining.pop_back();
          --d;
        }
      }
    }
    throw std::out_of_range("depth_of: node index out of range");
  }

  bool has_trig() const {
    for (const Node& n : nodes)
      if (n.kind == NodeKind::Sin || n.kind == NodeKind::Cos) return true;
    return false;
  }

  bool operator==(const ExpressionTree& o) const {
    if (nodes.size() != o.nodes.size()) return false;
    for (std::size_t i = 0; i < nodes.size(); ++i)
      if (nodes[i].kind != o.nodes[i].kind || nodes[i].value != o.nodes[i].value)
        return false;
    return true;
  }
};

// Convenience builders (used heavily in tests and the synthetic generator).
inline ExpressionTree leaf_var() { return {{{NodeKind::Var, 0.0}}}; }
inline ExpressionTree leaf_const(double c) { return {{{NodeKind::Const, c}}}; }
inline ExpressionTree combine(NodeKind op, const ExpressionTree& a,
                              const ExpressionTree& b) {
  ExpressionTree t;
  t.nodes.reserve(1 + a.nodes.size() + b.nodes.size());
  t.nodes.push_back({op, 0.0});
  t.nodes.insert(t.nodes.end(), a.nodes.begin(), a.nodes.end());
  t.nodes.insert(t.nodes.end(), b.nodes.begin(), b.nodes.end());
  return t;
}
inline ExpressionTree combine(NodeKind op, const ExpressionTree& a) {
  ExpressionTree t;
  t.nodes.reserve(1 + a.nodes.size());
  t.nodes.push_back({op, 0.0});
  t.nodes.insert(t.nodes.end(), a.nodes.begin(), a.nodes.end());
  return t;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

// Scratch buffers for batch evaluation, reusable across calls.
struct EvalWorkspace {
  std::vector<std::vector<double>> stack;
};

// Evaluates the scalar function on a batch of inputs: out[i] = f(in[i]).
// Walks the preorder array in reverse, which visits operands before their
// operator; for non-commutative ops the left operand is on top of the stack.
inline void eval_many(const ExpressionTree& t, std::span<const double> in,
                      std::span<double> out, EvalWorkspace& ws) {
  const std::size_t w = in.size();
  std::size_t top = 0;  // stack height
  auto buf = [&](std::size_t level) -> std::vector<double>& {
    while (ws.stack.size() <= level) ws.stack.emplace_back();
    auto& b = ws.stack[level];
    if (b.size() != w) b.assign(w, 0.0);
    return b;
  };
  for (std::size_t idx = t.nodes.size(); idx-- > 0;) {
    const Node& n = t.nodes[idx];
    switch (n.kind) {
      case NodeKind::Var: {
        auto& b = buf(top++);
        std::copy(in.begin(), in.end(), b.begin());
        break;
      }
      case NodeKind::Const: {
        auto& b = buf(top++);
        std::fill(b.begin(), b.end(), n.value);
        break;
      }
      case NodeKind::Sin: {
        auto& a = buf(top - 1);
        for (std::size_t i = 0; i < w; ++i) a[i] = std::sin(a[i]);
        break;
      }
      case NodeKind::Cos: {
        auto& a = buf(top - 1);
        for (std::size_t i = 0; i < w; ++i) a[i] = std::cos(a[i]);
        break;
      }
      case NodeKind::Add: {
        auto& l = buf(top - 1);
        auto& r = buf(top - 2);
        for (std::size_t i = 0; i < w; ++i) r[i] = l[i] + r[i];
        --top;
        break;
      }
      case NodeKind::Sub: {
        auto& l = buf(top - 1);
        auto& r = buf(top - 2);
        for (std::size_t i = 0; i < w; ++i) r[i] = l[i] - r[i];
        --top;
        break;
      }
      case NodeKind::Mul: {
        auto& l = buf(top - 1);
        auto& r = buf(top - 2);
        for (std::size_t i = 0; i < w; ++i) r[i] = l[i] * r[i];
        --top;
        break;
      }
    }
  }
  auto& res = buf(0);
  std::copy(res.begin(), res.end(), out.begin());
}

inline double eval_scalar(const ExpressionTree& t, double z) {
  EvalWorkspace ws;
  double out;
  eval_many(t, std::span<const double>(&z, 1), std::span<double>(&out, 1), ws);
  return out;
}

// Elementwise application followed by the sum reduction: returns sum_i f(x_i).
// A bare constant c broadcasts and reduces to d*c. May return a non-finite
// value on overflow; callers treat that as an invalid evaluation.
inline double eval_elementwise(const ExpressionTree& t,
                               std::span<const double> x) {
  if (x.empty()) throw std::invalid_argument("eval_elementwise: empty input");
  EvalWorkspace ws;
  std::vector<double> out(x.size());
  eval_many(t, x, out, ws);
  double s = 0.0;
  for (double v : out) s += v;
  return s;
}

// ---------------------------------------------------------------------------
// Polynomial templates
// ---------------------------------------------------------------------------

// Canonical degree -> coefficient map for a formula sum_k c_k z^k. The
// degree-0 entry is the per-element constant: templates are independent of
// the input dimension, and the d-fold broadcast of the constant happens at
// evaluation time, not here.
struct PolyTemplate {
  std::map<int, double> terms;
  int max_degree = 10;

  bool empty() const { return terms.empty(); }

  int highest_degree() const {
    return terms.empty() ? 0 : terms.rbegin()->first;
  }

  std::vector<int> positive_degrees() const {
    std::vector<int> ks;
    for (const auto& [k, c] : terms)
      if (k >= 1) ks.push_back(k);
    return ks;
  }

  std::vector<int> degree_set() const {
    std::vector<int> ks;
    for (const auto& [k, c] : terms) ks.push_back(k);
    return ks;
  }

  double coeff(int k) const {
    auto it = terms.find(k);
    return it == terms.end() ? 0.0 : it->second;
  }

  bool operator==(const PolyTemplate& o) const { return terms == o.terms; }

  // sum_{k>=1} c_k * sum_i x_i^k + d * c_0 (matches the tree reduction).
  double eval(std::span<const double> x) const {
    double s = 0.0;
    for (const auto& [k, c] : terms) {
      if (k == 0) {
        s += c * static_cast<double>(x.size());
        continue;
      }
      double acc = 0.0;
      for (double xi : x) {
        double p = 1.0;
        for (int j = 0; j < k; ++j) p *= xi;
        acc += p;
      }
      s += c * acc;
    }
    return s;
  }
};

struct DegreeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

// Dense coefficient expansion of the subtree rooted at i; returns the
// exclusive end of that subtree through `end`.
inline std::vector<double> poly_expand(const ExpressionTree& t, std::size_t i,
                                       std::size_t& end) {
  const Node& n = t.nodes[i];
  switch (n.kind) {
    case NodeKind::Var:
      end = i + 1;
      return {0.0, 1.0};
    case NodeKind::Const:
      end = i + 1;
      return {n.value};
    case NodeKind::Sin:
    case NodeKind::Cos:
      throw std::invalid_argument(
          "canonicalize: tree contains trigonometric nodes");
    default: {
      std::size_t mid;
      std::vector<double> a = poly_expand(t, i + 1, mid);
      std::vector<double> b = poly_expand(t, mid, end);
      if (n.kind == NodeKind::Mul) {
        std::vector<double> p(a.size() + b.size() - 1, 0.0);
        for (std::size_t ia = 0; ia < a.size(); ++ia)
          for (std::size_t ib = 0; ib < b.size(); ++ib)
            p[ia + ib] += a[ia] * b[ib];
        return p;
      }
      double sign = n.kind == NodeKind::Sub ? -1.0 : 1.0;
      if (b.size() > a.size()) a.resize(b.size(), 0.0);
      for (std::size_t ib = 0; ib < b.size(); ++ib) a[ib] += sign * b[ib];
      return a;
    }
  }
}

}  // namespace detail

// Expands a polynomial-mode tree into its canonical sum-of-powers form.
// Coefficients with |c| <= prune_epsilon are dropped. Degrees above
// max_degree carrying a non-negligible coefficient either raise DegreeError
// or are dropped when clamp is set.
inline PolyTemplate canonicalize(const ExpressionTree& t, int max_degree = 10,
                                 double prune_epsilon = 1e-8,
                                 bool clamp = false) {
  if (max_degree < 1) throw std::invalid_argument("canonicalize: max_degree < 1");
  if (t.empty()) throw std::invalid_argument("canonicalize: empty tree");
  std::size_t end;
  std::vector<double> coeffs = detail::poly_expand(t, 0, end);
  PolyTemplate out;
  out.max_degree = max_degree;
  for (std::size_t k = 0; k < coeffs.size(); ++k) {
    if (std::abs(coeffs[k]) <= prune_epsilon) continue;
    if (static_cast<int>(k) > max_degree) {
      if (clamp) continue;
      throw DegreeError("canonicalize: expanded degree " + std::to_string(k) +
                        " exceeds max_degree " + std::to_string(max_degree));
    }
    out.terms[static_cast<int>(k)] = coeffs[k];
  }
  return out;
}

// Canonical tree for a template: sum of coeff * z^k terms. Used by the
// synthetic generator and tests; depth is unconstrained.
inline ExpressionTree template_to_tree(const PolyTemplate& tpl) {
  ExpressionTree acc;
  for (const auto& [k, c] : tpl.terms) {
    ExpressionTree term;
    if (k == 0) {
      term = leaf_const(c);
    } else {
      term = leaf_var();
      for (int j = 1; j < k; ++j) term = combine(NodeKind::Mul, term, leaf_var());
      if (c != 1.0) term = combine(NodeKind::Mul, leaf_const(c), term);
    }
    acc = acc.empty() ? term : combine(NodeKind::Add, acc, term);
  }
  if (acc.empty()) acc = leaf_const(0.0);
  return acc;
}

// ---------------------------------------------------------------------------
// Trigonometric templates
// ---------------------------------------------------------------------------

// A formula from the trigonometric search space keeps its tree; constant
// leaves become indexed slots so the parameterizer can make them trainable.
// linear_tail records whether an affine term w^T x + b is appended on top of
// the tree when the template is turned into a neuron.
struct TrigTemplate {
  ExpressionTree tree;
  std::vector<std::size_t> const_slots;  // node indices of Const leaves
  bool linear_tail = true;

  std::size_t slot_count() const { return const_slots.size(); }
};

inline TrigTemplate make_trig_template(ExpressionTree tree,
                                       bool linear_tail = true) {
  TrigTemplate tpl;
  tpl.const_slots.reserve(4);
  for (std::size_t i = 0; i < tree.nodes.size(); ++i)
    if (tree.nodes[i].kind == NodeKind::Const) tpl.const_slots.push_back(i);
  tpl.tree = std::move(tree);
  tpl.linear_tail = linear_tail;
  return tpl;
}

// ---------------------------------------------------------------------------
// Text format
//
// Formulas print in Hadamard-power notation, highest degree first:
//   {2: 6}                -> "6(x⊙x)^T"
//   {4: 2, 1: 6}          -> "2(x⊙⁴x)^T + 6x^T"
//   {3: .068, 1: .15, 0: .76} -> "0.068(x⊙³x)^T + 0.15x^T + 0.76"
// Coefficients of magnitude 1 on powers are omitted. parse_template accepts
// exactly this notation (plus optional whitespace) and is the inverse of
// template_to_string up to coefficient formatting.
// ---------------------------------------------------------------------------

struct ParseError : std::runtime_error {
  std::size_t position;
  ParseError(const std::string& msg, std::size_t pos)
      : std::runtime_error(msg + " at position " + std::to_string(pos)),
        position(pos) {}
};

namespace detail {

inline std::string format_number(double v) {
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline const char* superscript_digit(int d) {
  static const char* sup[10] = {"⁰", "¹", "²", "³",
                                "⁴", "⁵", "⁶", "⁷",
                                "⁸", "⁹"};
  return sup[d];
}

inline std::string superscript(int k) {
  std::string digits = std::to_string(k);
  std::string out;
  for (char c : digits) out += superscript_digit(c - '0');
  return out;
}

inline std::string power_factor(int k) {
  if (k == 1) return "x^T";
  if (k == 2) return "(x⊙x)^T";
  return "(x⊙" + superscript(k) + "x)^T";
}

}  // namespace detail

inline std::string template_to_string(const PolyTemplate& tpl) {
  if (tpl.terms.empty()) return "0";
  std::string out;
  bool first = true;
  for (auto it = tpl.terms.rbegin(); it != tpl.terms.rend(); ++it) {
    const auto [k, c] = *it;
    double mag = std::abs(c);
    if (first) {
      if (c < 0) out += "-";
      first = false;
    } else {
      out += c < 0 ? " - " : " + ";
    }
    if (k == 0) {
      out += detail::format_number(mag);
    } else {
      if (mag != 1.0) out += detail::format_number(mag);
      out += detail::power_factor(k);
    }
  }
  return out;
}

// Tree rendering for trig-mode formulas (infix, minimal parentheses).
inline std::string tree_to_string(const ExpressionTree& t) {
  struct Impl {
    const ExpressionTree& t;
    std::string render(std::size_t i, std::size_t& end) const {
      const Node& n = t.nodes[i];
      switch (n.kind) {
        case NodeKind::Var:
          end = i + 1;
          return "x";
        case NodeKind::Const:
          end = i + 1;
          return detail::format_number(n.value);
        case NodeKind::Sin:
        case NodeKind::Cos: {
          std::string inner = render(i + 1, end);
          return (n.kind == NodeKind::Sin ? "sin(" : "cos(") + inner + ")";
        }
        default: {
          std::size_t mid;
          std::string a = render(i + 1, mid);
          std::string b = render(mid, end);
          const char* op = n.kind == NodeKind::Add ? " + "
                           : n.kind == NodeKind::Sub ? " - "
                                                     : "*";
          if (n.kind == NodeKind::Mul) return "(" + a + ")*(" + b + ")";
          return "(" + a + op + b + ")";
        }
      }
    }
  };
  if (t.empty()) return "0";
  std::size_t end;
  return Impl{t}.render(0, end);
}

inline std::string template_to_string(const TrigTemplate& tpl) {
  std::string out = tree_to_string(tpl.tree);
  out += "·1^T";
  if (tpl.linear_tail) out += " + w^T x + b";
  return out;
}

namespace detail {

struct TemplateParser {
  const std::string& s;
  std::size_t pos = 0;

  void skip_ws() {
    while (pos < s.size() && (s[pos] == ' ' || s[pos] == '\t')) ++pos;
  }

  bool literal(const char* lit) {
    std::size_t n = std::char_traits<char>::length(lit);
    if (s.compare(pos, n, lit) == 0) {
      pos += n;
      return true;
    }
    return false;
  }

  // Superscript digit at pos, or -1.
  int sup_digit() {
    static const std::pair<const char*, int> sups[] = {
        {"⁰", 0}, {"¹", 1}, {"²", 2}, {"³", 3},
        {"⁴", 4}, {"⁵", 5}, {"⁶", 6}, {"⁷", 7},
        {"⁸", 8}, {"⁹", 9}};
    for (const auto& [lit, d] : sups) {
      if (literal(lit)) return d;
    }
    return -1;
  }

  double number() {
    double v;
    auto res = std::from_chars(s.data() + pos, s.data() + s.size(), v);
    if (res.ec != std::errc{}) throw ParseError("expected number", pos);
    pos = static_cast<std::size_t>(res.ptr - s.data());
    return v;
  }

  bool peek_digit() const {
    return pos < s.size() && (std::isdigit(static_cast<unsigned char>(s[pos])) ||
                              s[pos] == '.');
  }

  // One term: optional coefficient followed by an optional power factor.
  std::pair<int, double> term() {
    skip_ws();
    double coeff = 1.0;
    bool has_coeff = false;
    if (peek_digit()) {
      coeff = number();
      has_coeff = true;
    }
    skip_ws();
    if (literal("x^T")) return {1, coeff};
    if (literal("(x⊙")) {
      int k;
      if (literal("x)^T")) {
        k = 2;
      } else {
        int d = sup_digit();
        if (d < 0) throw ParseError("expected superscript degree", pos);
        k = d;
        while ((d = sup_digit()) >= 0) k = k * 10 + d;
        if (!literal("x)^T")) throw ParseError("expected 'x)^T'", pos);
      }
      return {k, coeff};
    }
    if (!has_coeff) throw ParseError("expected term", pos);
    return {0, coeff};
  }

  PolyTemplate parse() {
    PolyTemplate out;
    skip_ws();
    if (literal("0") && (skip_ws(), pos == s.size())) return out;
    pos = 0;
    skip_ws();
    double sign = 1.0;
    if (literal("-")) sign = -1.0;
    for (;;) {
      auto [k, c] = term();
      out.terms[k] += sign * c;
      skip_ws();
      if (pos == s.size()) break;
      if (literal("+")) {
        sign = 1.0;
      } else if (literal("-")) {
        sign = -1.0;
      } else {
        throw ParseError("expected '+' or '-'", pos);
      }
    }
    // Drop exact zeros produced by cancelling duplicates.
    for (auto it = out.terms.begin(); it != out.terms.end();)
      it = it->second == 0.0 ? out.terms.erase(it) : std::next(it);
    return out;
  }
};

}  // namespace detail

inline PolyTemplate parse_template(const std::string& text) {
  detail::TemplateParser p{text};
  return p.parse();
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const PolyTemplate& tpl) {
  nlohmann::json terms = nlohmann::json::object();
  for (const auto& [k, c] : tpl.terms) terms[std::to_string(k)] = c;
  return {{"terms", terms}};
}

inline PolyTemplate template_from_json(const nlohmann::json& j) {
  PolyTemplate tpl;
  if (!j.contains("terms") || !j["terms"].is_object())
    throw std::invalid_argument("template JSON must contain a terms object");
  for (const auto& [key, val] : j["terms"].items())
    tpl.terms[std::stoi(key)] = val.get<double>();
  return tpl;
}

inline nlohmann::json to_json(const ExpressionTree& t) {
  nlohmann::json nodes = nlohmann::json::array();
  static const char* names[] = {"add", "sub", "mul", "sin", "cos", "var", "const"};
  for (const Node& n : t.nodes) {
    nlohmann::json jn = {{"op", names[static_cast<int>(n.kind)]}};
    if (n.kind == NodeKind::Const) jn["value"] = n.value;
    nodes.push_back(jn);
  }
  return nodes;
}

inline ExpressionTree tree_from_json(const nlohmann::json& j) {
  static const std::map<std::string, NodeKind> kinds = {
      {"add", NodeKind::Add}, {"sub", NodeKind::Sub}, {"mul", NodeKind::Mul},
      {"sin", NodeKind::Sin}, {"cos", NodeKind::Cos}, {"var", NodeKind::Var},
      {"const", NodeKind::Const}};
  ExpressionTree t;
  for (const auto& jn : j) {
    NodeKind k = kinds.at(jn.at("op").get<std::string>());
    double v = k == NodeKind::Const ? jn.at("value").get<double>() : 0.0;
    t.nodes.push_back({k, v});
  }
  return t;
}

inline nlohmann::json to_json(const TrigTemplate& tpl) {
  return {{"tree", to_json(tpl.tree)},
          {"linear_tail", tpl.linear_tail}};
}

inline TrigTemplate trig_template_from_json(const nlohmann::json& j) {
  return make_trig_template(tree_from_json(j.at("tree")),
                            j.at("linear_tail").get<bool>());
}

}  // namespace tbn
