#pragma once

// Plaintext oracle for the encrypted kernels. Pure double arithmetic, no
// backend involved. The scalar nonlinearities are pluggable so the same code
// serves as the exact model and as the "same polynomials" oracle.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "ensi/blocks.hpp"
#include "ensi/core/matrix.hpp"

namespace ensi::ref {

inline Matrix matmul(const Matrix& A, const Matrix& B) {
  if (A.cols() != B.rows()) throw DimensionMismatch("ref matmul: shapes");
  Matrix C(A.rows(), B.cols());
  for (std::size_t i = 0; i < A.rows(); ++i)
    for (std::size_t k = 0; k < A.cols(); ++k)
      for (std::size_t j = 0; j < B.cols(); ++j) C(i, j) += A(i, k) * B(k, j);
  return C;
}

inline Matrix to_real(const TernaryMatrix& W) {
  Matrix M(W.rows(), W.cols());
  for (std::size_t i = 0; i < W.rows(); ++i)
    for (std::size_t j = 0; j < W.cols(); ++j) M(i, j) = W(i, j);
  return M;
}

inline Matrix matmul(const Matrix& X, const TernaryMatrix& W) { return matmul(X, to_real(W)); }

inline Matrix transpose(const Matrix& A) {
  Matrix T(A.cols(), A.rows());
  for (std::size_t i = 0; i < A.rows(); ++i)
    for (std::size_t j = 0; j < A.cols(); ++j) T(j, i) = A(i, j);
  return T;
}

inline Matrix add(const Matrix& A, const Matrix& B) {
  Matrix C = A;
  for (std::size_t i = 0; i < A.rows(); ++i)
    for (std::size_t j = 0; j < A.cols(); ++j) C(i, j) += B(i, j);
  return C;
}

inline Matrix hadamard(const Matrix& A, const Matrix& B) {
  Matrix C = A;
  for (std::size_t i = 0; i < A.rows(); ++i)
    for (std::size_t j = 0; j < A.cols(); ++j) C(i, j) *= B(i, j);
  return C;
}

inline Matrix columns(const Matrix& A, std::size_t first, std::size_t count) {
  Matrix C(A.rows(), count);
  for (std::size_t i = 0; i < A.rows(); ++i)
    for (std::size_t j = 0; j < count; ++j) C(i, j) = A(i, first + j);
  return C;
}

inline double max_abs_diff(const Matrix& A, const Matrix& B) {
  if (A.rows() != B.rows() || A.cols() != B.cols()) return std::numeric_limits<double>::infinity();
  double m = 0;
  for (std::size_t i = 0; i < A.rows(); ++i)
    for (std::size_t j = 0; j < A.cols(); ++j) m = std::max(m, std::abs(A(i, j) - B(i, j)));
  return m;
}

inline double mean_abs_diff(const Matrix& A, const Matrix& B) {
  double s = 0;
  for (std::size_t i = 0; i < A.rows(); ++i)
    for (std::size_t j = 0; j < A.cols(); ++j) s += std::abs(A(i, j) - B(i, j));
  return s / static_cast<double>(A.rows() * A.cols());
}

/// Scalar nonlinearities used by the oracle.
struct Scalars {
  std::function<double(double)> sigmoid;  // already includes the attention bias
  std::function<double(double)> silu;
  std::function<double(double)> sqrt;
  std::function<double(double)> inverse;

  /// Closed forms.
  static Scalars exact(double bias) {
    return {[bias](double x) { return ensi::sigmoid(x + bias); }, [](double x) { return x * ensi::sigmoid(x); },
            [](double x) { return std::sqrt(x); }, [](double x) { return 1.0 / x; }};
  }

  /// The fitted polynomials, evaluated in plaintext.
  static Scalars fitted(const ChebyshevApprox& sig, const ChebyshevApprox& silu_sig, const NormApprox& na) {
    return {sig, [silu_sig](double x) { return x * silu_sig(x); }, na.sqrt, na.inverse};
  }
};

/// Value ranges seen at each nonlinearity; used to check domain coverage.
struct Trace {
  Interval sigmoid_in{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  Interval silu_in = sigmoid_in;
  Interval variance = sigmoid_in;

  static void widen(Interval& r, double x) {
    r.lo = std::min(r.lo, x);
    r.hi = std::max(r.hi, x);
  }
  static bool inside(const Interval& seen, const Interval& dom) { return seen.lo >= dom.lo && seen.hi <= dom.hi; }
};

inline Matrix rope(const Matrix& X, double base = 10000.0) {
  const auto t = make_rope_tables(X.rows(), X.cols(), base);
  Matrix Y(X.rows(), X.cols());
  for (std::size_t nu = 0; nu < X.rows(); ++nu)
    for (std::size_t k = 0; k < X.cols() / 2; ++k) {
      const double c = t.cos[k][nu], s = t.sin[k][nu];
      const double x0 = X(nu, 2 * k), x1 = X(nu, 2 * k + 1);
      Y(nu, 2 * k) = x0 * c - x1 * s;
      Y(nu, 2 * k + 1) = x1 * c + x0 * s;
    }
  return Y;
}

inline Matrix rope_heads(const Matrix& X, std::size_t heads, double base = 10000.0) {
  const std::size_t dh = X.cols() / heads;
  Matrix Y(X.rows(), X.cols());
  for (std::size_t h = 0; h < heads; ++h) {
    auto part = rope(columns(X, h * dh, dh), base);
    for (std::size_t i = 0; i < X.rows(); ++i)
      for (std::size_t j = 0; j < dh; ++j) Y(i, h * dh + j) = part(i, j);
  }
  return Y;
}

inline Matrix sigmoid_attention(const Matrix& Q, const Matrix& K, const Matrix& V, std::size_t heads, double scale,
                                const Scalars& f, Trace* trace = nullptr) {
  const std::size_t s = Q.rows(), d = Q.cols(), dh = d / heads;
  Matrix out(s, d);
  for (std::size_t h = 0; h < heads; ++h) {
    auto Qh = columns(Q, h * dh, dh), Kh = columns(K, h * dh, dh), Vh = columns(V, h * dh, dh);
    auto S = matmul(Qh, transpose(Kh));
    for (std::size_t i = 0; i < s; ++i)
      for (std::size_t j = 0; j < s; ++j) {
        S(i, j) *= scale;
        if (trace) Trace::widen(trace->sigmoid_in, S(i, j));
        S(i, j) = f.sigmoid(S(i, j));
      }
    auto O = matmul(S, Vh);
    for (std::size_t i = 0; i < s; ++i)
      for (std::size_t j = 0; j < dh; ++j) out(i, h * dh + j) = O(i, j);
  }
  return out;
}

/// y = x * gamma / (sqrt(mean x^2) + eps), row by row.
inline Matrix rmsnorm(const Matrix& X, std::span<const double> gamma, double eps, const Scalars& f,
                      Trace* trace = nullptr) {
  Matrix Y(X.rows(), X.cols());
  for (std::size_t i = 0; i < X.rows(); ++i) {
    double ss = 0;
    for (std::size_t j = 0; j < X.cols(); ++j) ss += X(i, j) * X(i, j);
    const double var = ss / static_cast<double>(X.cols());
    if (trace) Trace::widen(trace->variance, var);
    const double inv = f.inverse(f.sqrt(var) + eps);
    for (std::size_t j = 0; j < X.cols(); ++j) Y(i, j) = X(i, j) * inv * gamma[j];
  }
  return Y;
}

inline Matrix swiglu(const Matrix& X, const TernaryMatrix& W1, const TernaryMatrix& W2, const TernaryMatrix& W3,
                     const Scalars& f, Trace* trace = nullptr) {
  auto gate = matmul(X, W1);
  auto up = matmul(X, W2);
  for (std::size_t i = 0; i < up.rows(); ++i)
    for (std::size_t j = 0; j < up.cols(); ++j) {
      if (trace) Trace::widen(trace->silu_in, up(i, j));
      up(i, j) = f.silu(up(i, j));
    }
  return matmul(hadamard(gate, up), W3);
}

inline Matrix layer(const Matrix& X, const LayerWeights& w, const LayerConfig& cfg, const Scalars& f,
                    Trace* trace = nullptr) {
  const std::size_t H = cfg.attention.heads;
  const double eps = cfg.norm.eps;
  auto h = rmsnorm(X, w.gamma_attn, eps, f, trace);
  auto q = matmul(h, w.Wq), k = matmul(h, w.Wk), v = matmul(h, w.Wv);
  q = rope_heads(q, H, w.rope_base);
  k = rope_heads(k, H, w.rope_base);
  auto att = sigmoid_attention(q, k, v, H, cfg.attention.resolved_scale(X.cols()), f, trace);
  auto r1 = add(X, matmul(att, w.Wo));
  auto h2 = rmsnorm(r1, w.gamma_ffn, eps, f, trace);
  auto r2 = add(r1, swiglu(h2, w.W1, w.W2, w.W3, f, trace));
  if (cfg.final_norm && !w.gamma_final.empty()) return rmsnorm(r2, w.gamma_final, eps, f, trace);
  return r2;
}

/// Scalars matching what transformer_layer evaluates for this config and s.
inline Scalars layer_scalars(const LayerConfig& cfg, std::size_t seq_len, bool exact) {
  auto a = cfg.attention;
  a.seq_len = seq_len;
  if (exact) return Scalars::exact(a.resolved_bias());
  return Scalars::fitted(sigmoid_approx(a.resolved_bias(), a.sigmoid.domain, a.sigmoid.degree),
                         sigmoid_approx(0.0, cfg.silu.domain, cfg.silu.degree), fit_norm(cfg.norm));
}

}  // namespace ensi::ref
