#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <numbers>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "ensi/he/backend.hpp"
#include "ensi/linalg.hpp"
#include "ensi/runtime/stage.hpp"

namespace ensi {

struct Interval {
  double lo = -1.0;
  double hi = 1.0;
};

/// Chebyshev series on [a, b]: P(x) = c0/2 + sum_{i>=1} c_i T_i(t), t = (2x - a - b)/(b - a).
struct ChebyshevApprox {
  double a = -1.0, b = 1.0;
  int degree = 0;
  std::vector<double> coeffs;  // c_0..c_n, c_0 at full weight
  int depth = 0;               // ceil(log2(n+1)) + 1
  double max_fit_error = 0.0;

  double to_unit(double x) const { return (2.0 * x - a - b) / (b - a); }

  /// Clenshaw evaluation of the series.
  double operator()(double x) const {
    const double t = to_unit(x);
    double b1 = 0, b2 = 0;
    for (int i = degree; i >= 1; --i) {
      double b0 = 2 * t * b1 - b2 + coeffs[i];
      b2 = b1;
      b1 = b0;
    }
    return t * b1 - b2 + 0.5 * coeffs[0];
  }
};

inline int ps_depth(int n) { return ceil_log2(static_cast<std::size_t>(n) + 1) + 1; }

inline constexpr int kFitGridPoints = 10000;

/// Fits f on [a,b] with n+1 Chebyshev nodes and measures the sup error on a
/// 10^4-point uniform grid.
inline ChebyshevApprox cheb_fit(const std::function<double(double)>& f, double a, double b, int n) {
  if (!(a < b)) throw InvalidParams("cheb_fit: need a < b");
  if (n < 1) throw InvalidParams("cheb_fit: degree must be >= 1");
  const int K = n + 1;
  std::vector<double> fx(K);
  for (int j = 0; j < K; ++j) {
    const double x = std::cos(std::numbers::pi * (j + 0.5) / K);
    fx[j] = f(0.5 * (b - a) * x + 0.5 * (a + b));
    if (!std::isfinite(fx[j])) throw InvalidParams("cheb_fit: f is not finite at a node");
  }
  ChebyshevApprox c;
  c.a = a;
  c.b = b;
  c.degree = n;
  c.depth = ps_depth(n);
  c.coeffs.resize(K);
  for (int i = 0; i < K; ++i) {
    double s = 0;
    for (int j = 0; j < K; ++j) s += fx[j] * std::cos(i * std::numbers::pi * (j + 0.5) / K);
    c.coeffs[i] = 2.0 / K * s;
  }
  double err = 0;
  for (int g = 0; g < kFitGridPoints; ++g) {
    const double x = a + (b - a) * g / (kFitGridPoints - 1);
    err = std::max(err, std::abs(c(x) - f(x)));
  }
  c.max_fit_error = err;
  return c;
}

// ---------------------------------------------------------------------------
// Paterson-Stockmeyer style evaluation with a depth budget.

namespace ps {

/// Level at which T_i is available when T_1 sits at depth 1.
inline int depth_T(int i) { return i == 0 ? 0 : 1 + ceil_log2(static_cast<std::size_t>(i)); }

struct Node {
  int G = 0;                   // split point; 0 for a leaf
  std::vector<double> leaf;    // coefficients a_0..a_deg in the T basis (a_0 already halved)
  std::unique_ptr<Node> q, r;  // p = q * T_G + r
  int degree() const { return G == 0 ? static_cast<int>(leaf.size()) - 1 : -1; }
};

struct Plan {
  int k = 0;                 // baby-step bound
  std::vector<int> giants;   // 2k, 4k, ...
  std::unique_ptr<Node> root;
  int mults = 0;             // nonscalar multiplications, T construction included
  int depth = 0;             // achieved depth, affine map included
};

/// Chebyshev division: p = q * T_G + r with T_{G+j} = 2 T_G T_j - T_{|G-j|}.
inline void divide(const std::vector<double>& p, int G, std::vector<double>& q, std::vector<double>& r) {
  const int n = static_cast<int>(p.size()) - 1;
  q.assign(n - G + 1, 0.0);
  r.assign(p.begin(), p.begin() + G);
  if (r.empty()) r.push_back(0.0);
  for (int j = 0; j <= n - G; ++j) {
    const double c = p[G + j];
    if (j == 0) {
      q[0] += c;
      continue;
    }
    q[j] += 2 * c;
    const int idx = std::abs(G - j);
    if (idx >= static_cast<int>(r.size())) r.resize(idx + 1, 0.0);
    r[idx] -= c;
  }
}

struct Builder {
  int k;
  std::vector<int> splits;  // admissible split points, ascending
  std::set<int> needed;     // T indices the evaluation touches
  int split_mults = 0;

  std::unique_ptr<Node> build(const std::vector<double>& p, int budget) {
    const int deg = static_cast<int>(p.size()) - 1;
    auto node = std::make_unique<Node>();
    if (deg < k) {
      int ld = 0;
      for (int i = 1; i <= deg; ++i) ld = std::max(ld, depth_T(i) + 1);
      if (ld <= budget) {
        node->leaf = p;
        for (int i = 1; i <= deg; ++i) needed.insert(i);
        return node;
      }
    }
    int G = 0;
    for (int s : splits)
      if (s <= deg && depth_T(s) <= budget - 1) G = std::max(G, s);
    if (G == 0) throw DepthExceeded("ps_eval", budget + 1, budget);
    std::vector<double> q, r;
    divide(p, G, q, r);
    node->G = G;
    needed.insert(G);
    node->q = build(q, budget - 1);
    node->r = build(r, budget);
    if (node->q->G != 0 || node->q->degree() > 0) ++split_mults;  // constant q uses a scalar product
    return node;
  }
};

/// Number of products needed to materialise the T_i in `needed`.
inline int t_cost(const std::set<int>& needed) {
  std::set<int> have{1};
  std::function<void(int)> make = [&](int i) {
    if (have.count(i)) return;
    if (i % 2 == 0) make(i / 2);
    else {
      make(i / 2);
      make(i / 2 + 1);
    }
    have.insert(i);
  };
  for (int i : needed) make(i);
  return static_cast<int>(have.size()) - 1;
}

inline std::optional<Plan> try_plan(const std::vector<double>& a, int k, int budget) {
  Plan plan;
  plan.k = k;
  const int n = static_cast<int>(a.size()) - 1;
  Builder bld{k, {}, {}, 0};
  for (int s = 1; s <= k; s <<= 1) bld.splits.push_back(s);
  bld.splits.push_back(k);
  for (int g = 2 * k; g <= n; g *= 2) {
    plan.giants.push_back(g);
    bld.splits.push_back(g);
  }
  try {
    plan.root = bld.build(a, budget);
  } catch (const DepthExceeded&) {
    return std::nullopt;
  }
  plan.mults = t_cost(bld.needed) + bld.split_mults;
  plan.depth = budget;
  return plan;
}

/// Picks the baby-step size that needs the fewest products at depth ceil(log2(n+1))+1.
inline Plan make_plan(const ChebyshevApprox& c) {
  std::vector<double> a = c.coeffs;
  a[0] *= 0.5;
  const int budget = c.depth;
  std::optional<Plan> best;
  for (int k = 2; k <= 64; k *= 2) {
    auto p = try_plan(a, k, budget);
    if (p && (!best || p->mults < best->mults)) best = std::move(p);
  }
  if (!best) throw DepthExceeded("ps_eval", budget + 1, budget);
  return std::move(*best);
}

template <he::Backend B>
class Evaluator {
 public:
  using Ct = typename B::Ciphertext;
  using Value = std::variant<Ct, double>;

  Evaluator(const B& b, Ct t1) : b_(b) { T_.emplace(1, std::move(t1)); }

  const Ct& T(int i) {
    if (auto it = T_.find(i); it != T_.end()) return it->second;
    Ct v = [&] {
      if (i % 2 == 0) {
        const Ct& h = T(i / 2);
        Ct sq = b_.mult(h, h);
        return b_.add_scalar(b_.add(sq, sq), -1.0);  // 2 T_h^2 - 1
      }
      const Ct& lo = T(i / 2);
      const Ct& hi = T(i / 2 + 1);
      Ct pr = b_.mult(lo, hi);
      return b_.sub(b_.add(pr, pr), T(1));  // 2 T_j T_{j+1} - T_1
    }();
    return T_.emplace(i, std::move(v)).first->second;
  }

  Value eval(const Node& node) {
    if (node.G == 0) {
      const auto& c = node.leaf;
      if (c.size() == 1) return c[0];
      std::optional<Ct> acc;
      for (std::size_t i = 1; i < c.size(); ++i) {
        Ct term = b_.mult_scalar(T(static_cast<int>(i)), c[i]);
        acc = acc ? b_.add(*acc, term) : std::move(term);
      }
      return b_.add_scalar(*acc, c[0]);
    }
    Value q = eval(*node.q);
    Value r = eval(*node.r);
    const Ct& tg = T(node.G);
    Ct prod = std::holds_alternative<double>(q) ? b_.mult_scalar(tg, std::get<double>(q))
                                                : b_.mult(std::get<Ct>(q), tg);
    if (std::holds_alternative<double>(r)) return b_.add_scalar(prod, std::get<double>(r));
    return b_.add(prod, std::get<Ct>(r));
  }

 private:
  const B& b_;
  std::map<int, Ct> T_;
};

}  // namespace ps

/// Slotwise P(x) for a fitted series. Consumes exactly approx.depth levels.
template <he::Backend B>
typename B::Ciphertext ps_eval(const B& b, const typename B::Ciphertext& ct, const ChebyshevApprox& approx,
                               LevelTracker* tracker = nullptr) {
  if (ct.level() < approx.depth) throw DepthExceeded(ct.info.tag, approx.depth, ct.level());
  return run_stage(
      tracker, "ps_eval",
      [&] {
        auto plan = ps::make_plan(approx);
        const double alpha = 2.0 / (approx.b - approx.a);
        const double beta = -(approx.a + approx.b) / (approx.b - approx.a);
        auto t = b.add_scalar(b.mult_scalar(ct, alpha), beta);
        ps::Evaluator<B> ev(b, std::move(t));
        auto v = ev.eval(*plan.root);
        typename B::Ciphertext out = std::holds_alternative<double>(v)
                                         ? b.add_scalar(b.mult_scalar(ev.T(1), 0.0), std::get<double>(v))
                                         : std::get<typename B::Ciphertext>(std::move(v));
        const int want = ct.level() - approx.depth;
        if (out.level() > want) out = b.drop_to(out, want);
        return out;
      },
      ct);
}

// ---------------------------------------------------------------------------
// Scalar protocols.

struct ApproxProfile {
  Interval domain;
  int degree = 59;
};

inline constexpr Interval kSigmoidDomain{-16.0, 16.0};
inline constexpr Interval kSiluDomain{-16.0, 16.0};
inline constexpr Interval kSqrtDomain{0.01, 10.0};
inline constexpr Interval kInverseDomain{0.01, 10.0};
inline constexpr int kDefaultDegree = 59;

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// sigma(x + bias) on the domain of x.
inline ChebyshevApprox sigmoid_approx(double bias, Interval dom = kSigmoidDomain, int degree = kDefaultDegree) {
  return cheb_fit([bias](double x) { return sigmoid(x + bias); }, dom.lo, dom.hi, degree);
}

inline ChebyshevApprox sqrt_approx(Interval dom = kSqrtDomain, int degree = kDefaultDegree) {
  if (dom.lo <= 0) throw InvalidParams("sqrt domain must have lo > 0");
  return cheb_fit([](double x) { return std::sqrt(x); }, dom.lo, dom.hi, degree);
}

inline ChebyshevApprox inverse_approx(Interval dom = kInverseDomain, int degree = kDefaultDegree) {
  if (dom.lo <= 0) throw InvalidParams("inverse domain must have lo > 0");
  return cheb_fit([](double x) { return 1.0 / x; }, dom.lo, dom.hi, degree);
}

template <he::Backend B>
typename B::Ciphertext sigmoid_ct(const B& b, const typename B::Ciphertext& ct, const ChebyshevApprox& fitted,
                                  LevelTracker* tracker = nullptr) {
  return run_stage(tracker, "sigmoid", [&] { return ps_eval(b, ct, fitted); }, ct);
}

template <he::Backend B>
typename B::Ciphertext sigmoid_ct(const B& b, const typename B::Ciphertext& ct, double bias,
                                  Interval dom = kSigmoidDomain, int degree = kDefaultDegree,
                                  LevelTracker* tracker = nullptr) {
  return sigmoid_ct(b, ct, sigmoid_approx(bias, dom, degree), tracker);
}

/// x * sigma(x); one level beyond the sigmoid.
template <he::Backend B>
typename B::Ciphertext silu_ct(const B& b, const typename B::Ciphertext& ct, const ChebyshevApprox& sig,
                               LevelTracker* tracker = nullptr) {
  if (ct.level() < sig.depth + 1) throw DepthExceeded(ct.info.tag, sig.depth + 1, ct.level());
  return run_stage(tracker, "silu", [&] { return b.mult(ct, ps_eval(b, ct, sig)); }, ct);
}

template <he::Backend B>
typename B::Ciphertext silu_ct(const B& b, const typename B::Ciphertext& ct, Interval dom = kSiluDomain,
                               int degree = kDefaultDegree, LevelTracker* tracker = nullptr) {
  return silu_ct(b, ct, sigmoid_approx(0.0, dom, degree), tracker);
}

template <he::Backend B>
typename B::Ciphertext sqrt_ct(const B& b, const typename B::Ciphertext& ct, const ChebyshevApprox& fitted,
                               LevelTracker* tracker = nullptr) {
  return run_stage(tracker, "sqrt", [&] { return ps_eval(b, ct, fitted); }, ct);
}

template <he::Backend B>
typename B::Ciphertext sqrt_ct(const B& b, const typename B::Ciphertext& ct, Interval dom = kSqrtDomain,
                               int degree = kDefaultDegree, LevelTracker* tracker = nullptr) {
  return sqrt_ct(b, ct, sqrt_approx(dom, degree), tracker);
}

template <he::Backend B>
typename B::Ciphertext inverse_ct(const B& b, const typename B::Ciphertext& ct, const ChebyshevApprox& fitted,
                                  LevelTracker* tracker = nullptr) {
  return run_stage(tracker, "inverse", [&] { return ps_eval(b, ct, fitted); }, ct);
}

template <he::Backend B>
typename B::Ciphertext inverse_ct(const B& b, const typename B::Ciphertext& ct, Interval dom = kInverseDomain,
                                  int degree = kDefaultDegree, LevelTracker* tracker = nullptr) {
  return inverse_ct(b, ct, inverse_approx(dom, degree), tracker);
}

}  // namespace ensi
