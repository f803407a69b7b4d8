#pragma once

#include <cmath>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ensi/approx.hpp"
#include "ensi/core/matrix.hpp"
#include "ensi/linalg.hpp"
#include "ensi/packing.hpp"
#include "ensi/runtime/stage.hpp"

namespace ensi {

// ---------------------------------------------------------------------------
// RoPE

enum class RopeMode { paired, faithful };

/// cos/sin of nu * theta_k for positions nu < s and pair index k < d'/2,
/// theta_k = base^(-2k/d').
struct RopeTables {
  std::size_t seq_len = 0;
  std::size_t head_dim = 0;
  std::vector<std::vector<double>> cos, sin;  // [k][nu]

  /// Per-slot tables along positions, used with column packing.
  const std::vector<double>& cos_k(std::size_t k) const { return cos.at(k); }
  const std::vector<double>& sin_k(std::size_t k) const { return sin.at(k); }

  /// Row layout: one ciphertext per token, slot j is embedding coordinate j.
  /// Slot j carries the angle of pair j/2.
  std::vector<double> row_cos(std::size_t nu) const {
    std::vector<double> v(head_dim);
    for (std::size_t j = 0; j < head_dim; ++j) v[j] = cos[j / 2][nu];
    return v;
  }
  std::vector<double> row_sin(std::size_t nu) const {
    std::vector<double> v(head_dim);
    for (std::size_t j = 0; j < head_dim; ++j) v[j] = sin[j / 2][nu];
    return v;
  }
};

inline RopeTables make_rope_tables(std::size_t seq_len, std::size_t head_dim, double base = 10000.0) {
  if (head_dim == 0 || head_dim % 2) throw InvalidParams("rope: head dimension must be even");
  RopeTables t;
  t.seq_len = seq_len;
  t.head_dim = head_dim;
  t.cos.assign(head_dim / 2, std::vector<double>(seq_len));
  t.sin = t.cos;
  for (std::size_t k = 0; k < head_dim / 2; ++k) {
    const double theta = std::pow(base, -2.0 * static_cast<double>(k) / static_cast<double>(head_dim));
    for (std::size_t nu = 0; nu < seq_len; ++nu) {
      t.cos[k][nu] = std::cos(static_cast<double>(nu) * theta);
      t.sin[k][nu] = std::sin(static_cast<double>(nu) * theta);
    }
  }
  return t;
}

/// Column-packed RoPE: pairs columns (2k, 2k+1) with position tables along the
/// slots. No rotations, one level.
template <he::Backend B>
PackedMatrix<B> rope(const B& b, const PackedMatrix<B>& pm, const RopeTables& t, LevelTracker* tracker = nullptr) {
  if (pm.ncols() % 2) throw InvalidParams("rope: odd number of columns");
  if (pm.ncols() != t.head_dim || pm.rows > t.seq_len) throw DimensionMismatch("rope: tables do not match input");
  return run_stage(
      tracker, "rope",
      [&] {
        PackedMatrix<B> out;
        out.rows = pm.rows;
        out.cols.resize(pm.ncols());
        for (std::size_t k = 0; k < pm.ncols() / 2; ++k) {
          const auto& x0 = pm.cols[2 * k];
          const auto& x1 = pm.cols[2 * k + 1];
          const auto& c = t.cos_k(k);
          const auto& s = t.sin_k(k);
          out.cols[2 * k] = b.sub(b.mult_plain(x0, c), b.mult_plain(x1, s));
          out.cols[2 * k + 1] = b.add(b.mult_plain(x1, c), b.mult_plain(x0, s));
        }
        return level_align(b, std::move(out));
      },
      pm);
}

/// The rotate-and-mask form, applied to each ciphertext in turn:
///   t = Rot(q, 1) * neg + Rot(q, -1) * pos,  y = q * cos + t * sin
/// with neg = (-1, 0, -1, 0, ...) and pos = (0, 1, 0, 1, ...). Two rotations and
/// two levels per ciphertext. It pairs adjacent *slots*, so it realises RoPE only
/// when each ciphertext holds one token's embedding (row layout, cos/sin from
/// RopeTables::row_cos). Under column packing it mixes neighbouring tokens.
template <he::Backend B>
PackedMatrix<B> rope_faithful(const B& b, const PackedMatrix<B>& pm, const std::vector<std::vector<double>>& cos_per_ct,
                              const std::vector<std::vector<double>>& sin_per_ct, LevelTracker* tracker = nullptr) {
  if (cos_per_ct.size() != pm.ncols() || sin_per_ct.size() != pm.ncols())
    throw DimensionMismatch("rope_faithful: one cos/sin table per ciphertext");
  const std::size_t n = std::max<std::size_t>(pm.rows, 2);
  std::vector<double> neg(n, 0.0), pos(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    if (j % 2 == 0) neg[j] = -1.0;
    else pos[j] = 1.0;
  }
  return run_stage(
      tracker, "rope",
      [&] {
        PackedMatrix<B> out;
        out.rows = pm.rows;
        for (std::size_t i = 0; i < pm.ncols(); ++i) {
          const auto& q = pm.cols[i];
          auto r = b.mult_plain(b.rotate(q, 1), neg);
          auto l = b.mult_plain(b.rotate(q, -1), pos);
          auto tt = b.add(r, l);
          out.cols.push_back(b.add(b.mult_plain(q, cos_per_ct[i]), b.mult_plain(tt, sin_per_ct[i])));
        }
        return level_align(b, std::move(out));
      },
      pm);
}

/// Faithful mode on a column-packed head: ciphertext 2k and 2k+1 both use the
/// position tables of pair k.
template <he::Backend B>
PackedMatrix<B> rope_faithful(const B& b, const PackedMatrix<B>& pm, const RopeTables& t,
                              LevelTracker* tracker = nullptr) {
  std::vector<std::vector<double>> c, s;
  for (std::size_t i = 0; i < pm.ncols(); ++i) {
    c.push_back(t.cos_k(i / 2));
    s.push_back(t.sin_k(i / 2));
  }
  return rope_faithful(b, pm, c, s, tracker);
}

// ---------------------------------------------------------------------------
// Sigmoid attention

enum class BiasMode { standard, faithful };

/// -log s (standard) or +log s (the sign as printed for the faithful mode).
inline double default_bias(std::size_t seq_len, BiasMode m) {
  const double l = std::log(static_cast<double>(seq_len));
  return m == BiasMode::standard ? -l : l;
}

struct AttentionConfig {
  std::size_t heads = 1;
  std::size_t seq_len = 0;
  BiasMode bias_mode = BiasMode::standard;
  std::optional<double> bias;   // overrides bias_mode
  std::optional<double> scale;  // default 1/sqrt(d')
  ApproxProfile sigmoid{kSigmoidDomain, kDefaultDegree};

  double resolved_bias() const { return bias ? *bias : default_bias(seq_len, bias_mode); }
  double resolved_scale(std::size_t d) const {
    return scale ? *scale : 1.0 / std::sqrt(static_cast<double>(d / heads));
  }
  void validate(std::size_t d) const {
    if (heads == 0 || d % heads) throw InvalidParams("attention: heads must divide d");
    if (!std::isfinite(resolved_bias())) throw InvalidParams("attention: bias must be finite");
  }
};

/// Mask that cancels P(0) on the padded slots [s, N).
template <he::Backend B>
std::vector<double> padded_fill(const B& b, std::size_t s, double value) {
  std::vector<double> v(b.slot_count(), 0.0);
  for (std::size_t i = s; i < v.size(); ++i) v[i] = value;
  return v;
}

/// Per head: S = Q_h K_h^T * scale, A = sigma(S + b) slotwise, out_h = A V_h.
template <he::Backend B>
PackedMatrix<B> sigmoid_attention(const B& b, const PackedMatrix<B>& Q, const PackedMatrix<B>& K,
                                  const PackedMatrix<B>& V, const AttentionConfig& cfg,
                                  LevelTracker* tracker = nullptr) {
  const std::size_t d = Q.ncols();
  if (K.ncols() != d || V.ncols() != d || K.rows != Q.rows || V.rows != Q.rows)
    throw DimensionMismatch("attention: Q, K, V shapes differ");
  cfg.validate(d);
  const std::size_t dh = d / cfg.heads;
  const std::size_t s = Q.rows;
  const auto sig = sigmoid_approx(cfg.resolved_bias(), cfg.sigmoid.domain, cfg.sigmoid.degree);
  const auto fill = padded_fill(b, s, -sig(0.0));
  return run_stage(
      tracker, "attention",
      [&] {
        std::vector<PackedMatrix<B>> heads;
        for (std::size_t h = 0; h < cfg.heads; ++h) {
          auto Qh = column_slice(Q, h * dh, dh);
          auto Kh = column_slice(K, h * dh, dh);
          auto Vh = column_slice(V, h * dh, dh);
          auto S = ccmm(b, Qh, transposed(Kh), cfg.resolved_scale(d), tracker);
          auto A = run_stage(
              tracker, "sigmoid",
              [&] {
                PackedMatrix<B> a;
                a.rows = s;
                for (const auto& c : S.cols) {
                  auto y = ps_eval(b, c, sig);
                  if (s < b.slot_count()) y = b.add_plain(y, fill);
                  a.cols.push_back(std::move(y));
                }
                return a;
              },
              S);
          heads.push_back(ccmm(b, A, direct(Vh), 1.0, tracker));
        }
        return level_align(b, concat_columns(std::move(heads)));
      },
      Q, K, V);
}

// ---------------------------------------------------------------------------
// RMSNorm

struct NormProfile {
  ApproxProfile sqrt{kSqrtDomain, kDefaultDegree};
  ApproxProfile inverse{kInverseDomain, kDefaultDegree};
  double eps = 1e-5;

  /// The inverse runs on sqrt(var) + eps.
  Interval inverse_domain() const {
    return {std::sqrt(sqrt.domain.lo) + eps, std::sqrt(sqrt.domain.hi) + eps};
  }
};

/// Degrees that split the level budget 9 before refresh and 10 after.
inline NormProfile norm_profile_19() {
  NormProfile p;
  p.sqrt.degree = 59;     // depth 7
  p.inverse.degree = 64;  // depth 8
  return p;
}

struct NormApprox {
  ChebyshevApprox sqrt, inverse;
  double eps = 1e-5;
};

inline NormApprox fit_norm(const NormProfile& p) {
  return {sqrt_approx(p.sqrt.domain, p.sqrt.degree), inverse_approx(p.inverse_domain(), p.inverse.degree), p.eps};
}

/// y_j = x_j * gamma_j / (sqrt(mean_j x_j^2) + eps), with one refresh on the
/// reduced denominator ciphertext.
template <he::Backend B>
PackedMatrix<B> rmsnorm(const B& b, const PackedMatrix<B>& x, std::span<const double> gamma, const NormApprox& na,
                        LevelTracker* tracker = nullptr) {
  const std::size_t d = x.ncols();
  if (gamma.size() != d) throw DimensionMismatch("rmsnorm: gamma length != d");
  if (d == 0) throw DimensionMismatch("rmsnorm: empty input");
  return run_stage(
      tracker, "rmsnorm",
      [&] {
        auto den = run_stage(
            tracker, "rmsnorm.pre",
            [&] {
              std::optional<typename B::Ciphertext> acc;
              for (const auto& c : x.cols) {
                auto sq = b.mult(c, c);
                acc = acc ? b.add(*acc, sq) : std::move(sq);
              }
              auto var = b.mult_scalar(*acc, 1.0 / static_cast<double>(d));
              // keep padded slots inside the domain
              if (x.rows < b.slot_count()) var = b.add_plain(var, padded_fill(b, x.rows, 1.0));
              return b.add_scalar(sqrt_ct(b, var, na.sqrt), na.eps);
            },
            x);
        {
          he::RefreshPermit permit(b);
          den = b.refresh(den);
        }
        return run_stage(
            tracker, "rmsnorm.post",
            [&] {
              auto inv = inverse_ct(b, den, na.inverse);
              PackedMatrix<B> y;
              y.rows = x.rows;
              for (std::size_t j = 0; j < d; ++j) y.cols.push_back(b.mult_scalar(b.mult(x.cols[j], inv), gamma[j]));
              return level_align(b, std::move(y));
            },
            x, den);
      },
      x);
}

template <he::Backend B>
PackedMatrix<B> rmsnorm(const B& b, const PackedMatrix<B>& x, std::span<const double> gamma,
                        const NormProfile& profile = {}, LevelTracker* tracker = nullptr) {
  return rmsnorm(b, x, gamma, fit_norm(profile), tracker);
}

// ---------------------------------------------------------------------------
// SwiGLU

template <he::Backend B>
PackedMatrix<B> swiglu_ffn(const B& b, const PackedMatrix<B>& x, const TernaryMatrix& W1, const TernaryMatrix& W2,
                           const TernaryMatrix& W3, const ChebyshevApprox& silu_sig, LevelTracker* tracker = nullptr) {
  if (W1.cols() != W2.cols() || W1.rows() != W2.rows() || W3.rows() != W1.cols())
    throw DimensionMismatch("swiglu: weight shapes do not chain");
  return run_stage(
      tracker, "ffn",
      [&] {
        auto gate = pcmm(b, x, W1, tracker);
        auto up = pcmm(b, x, W2, tracker);
        auto act = run_stage(
            tracker, "silu",
            [&] {
              PackedMatrix<B> a;
              a.rows = up.rows;
              for (const auto& c : up.cols) a.cols.push_back(silu_ct(b, c, silu_sig));
              return a;
            },
            up);
        auto h = hadamard_cc(b, gate, act, tracker);
        return pcmm(b, h, W3, tracker);
      },
      x);
}

template <he::Backend B>
PackedMatrix<B> swiglu_ffn(const B& b, const PackedMatrix<B>& x, const TernaryMatrix& W1, const TernaryMatrix& W2,
                           const TernaryMatrix& W3, ApproxProfile silu = {kSiluDomain, kDefaultDegree},
                           LevelTracker* tracker = nullptr) {
  return swiglu_ffn(b, x, W1, W2, W3, sigmoid_approx(0.0, silu.domain, silu.degree), tracker);
}

// ---------------------------------------------------------------------------
// Layer

struct LayerWeights {
  TernaryMatrix Wq, Wk, Wv, Wo;  // d x d
  TernaryMatrix W1, W2;          // d x f (gate, up)
  TernaryMatrix W3;              // f x d
  std::vector<double> gamma_attn, gamma_ffn, gamma_final;
  double rope_base = 10000.0;

  std::size_t dim() const { return Wq.rows(); }
  std::size_t ffn_dim() const { return W1.cols(); }

  void validate() const {
    const std::size_t d = dim(), f = ffn_dim();
    auto sq = [&](const TernaryMatrix& w, std::size_t r, std::size_t c, const char* n) {
      if (w.rows() != r || w.cols() != c) throw DimensionMismatch(std::string("layer weights: bad shape for ") + n);
    };
    sq(Wq, d, d, "Wq");
    sq(Wk, d, d, "Wk");
    sq(Wv, d, d, "Wv");
    sq(Wo, d, d, "Wo");
    sq(W1, d, f, "W1");
    sq(W2, d, f, "W2");
    sq(W3, f, d, "W3");
    if (gamma_attn.size() != d || gamma_ffn.size() != d) throw DimensionMismatch("layer weights: gamma length");
    if (!gamma_final.empty() && gamma_final.size() != d) throw DimensionMismatch("layer weights: gamma_final length");
    for (const auto* g : {&gamma_attn, &gamma_ffn, &gamma_final})
      for (double v : *g)
        if (!std::isfinite(v)) throw InvalidParams("layer weights: gamma not finite");
  }

  /// Random ternary matrices. The two block gammas are kept small so that
  /// attention scores, SiLU inputs and residual variances stay inside the
  /// default approximation domains at desk scale.
  template <class Rng>
  static LayerWeights random(Rng& rng, std::size_t d, std::size_t f, bool final_norm = true,
                             Interval block_gamma = {0.1, 0.2}, Interval final_gamma = {0.5, 1.5}) {
    LayerWeights w;
    w.Wq = TernaryMatrix::random(d, d, rng);
    w.Wk = TernaryMatrix::random(d, d, rng);
    w.Wv = TernaryMatrix::random(d, d, rng);
    w.Wo = TernaryMatrix::random(d, d, rng);
    w.W1 = TernaryMatrix::random(d, f, rng);
    w.W2 = TernaryMatrix::random(d, f, rng);
    w.W3 = TernaryMatrix::random(f, d, rng);
    std::uniform_real_distribution<double> g(block_gamma.lo, block_gamma.hi), gf(final_gamma.lo, final_gamma.hi);
    for (std::size_t i = 0; i < d; ++i) {
      w.gamma_attn.push_back(static_cast<float>(g(rng)));  // float-exact, as stored on disk
      w.gamma_ffn.push_back(static_cast<float>(g(rng)));
      if (final_norm) w.gamma_final.push_back(static_cast<float>(gf(rng)));
    }
    return w;
  }

  /// All-zero weights, unit gammas.
  static LayerWeights zeros(std::size_t d, std::size_t f, bool final_norm = true) {
    LayerWeights w;
    w.Wq = w.Wk = w.Wv = w.Wo = TernaryMatrix(d, d);
    w.W1 = w.W2 = TernaryMatrix(d, f);
    w.W3 = TernaryMatrix(f, d);
    w.gamma_attn.assign(d, 1.0);
    w.gamma_ffn.assign(d, 1.0);
    if (final_norm) w.gamma_final.assign(d, 1.0);
    return w;
  }
};

struct LayerConfig {
  AttentionConfig attention;
  RopeMode rope_mode = RopeMode::paired;
  NormProfile norm;
  ApproxProfile silu{kSiluDomain, kDefaultDegree};
  bool final_norm = true;  // used when gamma_final is present
};

/// Fitted approximations shared across calls.
struct LayerApprox {
  NormApprox norm;
  ChebyshevApprox silu_sig;

  static LayerApprox fit(const LayerConfig& cfg) {
    return {fit_norm(cfg.norm), sigmoid_approx(0.0, cfg.silu.domain, cfg.silu.degree)};
  }
};

/// norm -> QKV -> RoPE -> attention -> Wo -> residual -> norm -> SwiGLU -> residual [-> norm].
template <he::Backend B>
PackedMatrix<B> transformer_layer(const B& b, const PackedMatrix<B>& x, const LayerWeights& w, const LayerConfig& cfg,
                                  LevelTracker* tracker = nullptr) {
  w.validate();
  const std::size_t d = w.dim();
  if (x.ncols() != d) throw DimensionMismatch("layer: input width != d");
  auto acfg = cfg.attention;
  acfg.seq_len = x.rows;
  acfg.validate(d);
  const auto ap = LayerApprox::fit(cfg);
  const std::size_t dh = d / acfg.heads;
  const auto tables = make_rope_tables(x.rows, dh, w.rope_base);

  auto rope_heads = [&](const PackedMatrix<B>& m) {
    std::vector<PackedMatrix<B>> parts;
    for (std::size_t h = 0; h < acfg.heads; ++h) {
      auto part = column_slice(m, h * dh, dh);
      parts.push_back(cfg.rope_mode == RopeMode::paired ? rope(b, part, tables, tracker)
                                                        : rope_faithful(b, part, tables, tracker));
    }
    return level_align(b, concat_columns(std::move(parts)));
  };

  return run_stage(
      tracker, "layer",
      [&] {
        auto h = rmsnorm(b, x, w.gamma_attn, ap.norm, tracker);
        auto q = rope_heads(pcmm(b, h, w.Wq, tracker));
        auto k = rope_heads(pcmm(b, h, w.Wk, tracker));
        auto v = pcmm(b, h, w.Wv, tracker);
        auto att = sigmoid_attention(b, q, k, v, acfg, tracker);
        auto r1 = add(b, x, pcmm(b, att, w.Wo, tracker));
        auto h2 = rmsnorm(b, r1, w.gamma_ffn, ap.norm, tracker);
        auto r2 = add(b, r1, swiglu_ffn(b, h2, w.W1, w.W2, w.W3, ap.silu_sig, tracker));
        if (cfg.final_norm && !w.gamma_final.empty()) return rmsnorm(b, r2, w.gamma_final, ap.norm, tracker);
        return r2;
      },
      x);
}

}  // namespace ensi
