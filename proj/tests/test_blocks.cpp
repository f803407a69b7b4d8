#include <catch_amalgamated.hpp>

#include "support/fixtures.hpp"

using namespace ensi;

namespace {

/// Entries with |x| in [0.3, 2] and random sign, so row variances sit inside
/// the default sqrt domain.
Matrix norm_input(Xoshiro256& rng, std::size_t s, std::size_t d) {
  std::uniform_real_distribution<double> mag(0.3, 2.0);
  Matrix X(s, d);
  for (auto& v : X.data()) v = (rng() & 1 ? 1.0 : -1.0) * mag(rng);
  return X;
}

std::vector<double> gammas(Xoshiro256& rng, std::size_t d) { return fx::random_vec(rng, d, 0.5, 1.5); }

}  // namespace

// ---------------------------------------------------------------------------
// RoPE

TEST_CASE("rope at position zero is the identity", "[blocks][rope]") {
  const auto& b = fx::clear();
  Xoshiro256 rng(1);
  auto X = Matrix::random(1, 4, rng);
  auto Y = unpack(b, rope(b, pack_columns(b, X), make_rope_tables(1, 4)));
  CHECK(Y == X);
}

TEST_CASE("rope quarter turn maps (1,0) to (0,1)", "[blocks][rope]") {
  const auto& b = fx::clear();
  RopeTables t;
  t.seq_len = 1;
  t.head_dim = 2;
  t.cos = {{std::cos(std::numbers::pi / 2)}};
  t.sin = {{1.0}};
  Matrix X(1, 2);
  X(0, 0) = 1.0;
  auto Y = unpack(b, rope(b, pack_columns(b, X), t));
  CHECK(std::abs(Y(0, 0)) < 1e-15);
  CHECK(Y(0, 1) == 1.0);
}

TEST_CASE("paired rope matches the plaintext oracle with zero rotations", "[blocks][rope]") {
  for (std::size_t s : {4u, 8u, 16u})
    for (std::size_t d : {4u, 8u, 16u})
      for (int seed = 0; seed < 20; ++seed) {
        Xoshiro256 rng(seed + 100 * s + d);
        auto X = Matrix::random(s, d, rng);
        auto b = fx::isolated(fx::clear());
        LevelTracker t(b.counters());
        auto Y = unpack(b, rope(b, pack_columns(b, X), make_rope_tables(s, d), &t));
        CHECK(ref::max_abs_diff(Y, ref::rope(X)) < 1e-9);
        CHECK(b.counters().snapshot().rot == 0);
        CHECK(t.assert_budget("rope", 1).pass);
      }
  Xoshiro256 rng(2);
  auto X = Matrix::random(4, 4, rng);
  const auto& c = fx::ckks();
  CHECK(ref::max_abs_diff(unpack(c, rope(c, pack_columns(c, X), make_rope_tables(4, 4))), ref::rope(X)) < 1e-3);
  CHECK_THROWS_AS(make_rope_tables(4, 3), InvalidParams);
}

TEST_CASE("faithful rope: two rotations per ciphertext, correct in row layout", "[blocks][rope]") {
  const std::size_t s = 4, d = 8;
  Xoshiro256 rng(3);
  auto X = Matrix::random(s, d, rng);
  auto tables = make_rope_tables(s, d);
  auto b = fx::isolated(fx::clear());

  // Row layout: ciphertext nu holds token nu's embedding.
  auto rows = pack_columns(b, ref::transpose(X));
  std::vector<std::vector<double>> c, sn;
  for (std::size_t nu = 0; nu < s; ++nu) {
    c.push_back(tables.row_cos(nu));
    sn.push_back(tables.row_sin(nu));
  }
  LevelTracker t(b.counters());
  auto Y = unpack(b, rope_faithful(b, rows, c, sn, &t));
  CHECK(ref::max_abs_diff(ref::transpose(Y), ref::rope(X)) < 1e-12);
  CHECK(b.counters().snapshot().rot == 2 * s);
  CHECK(t.assert_budget("rope", 2).pass);

  // Under column packing the same steps pair neighbouring tokens instead.
  auto Yc = unpack(b, rope_faithful(b, pack_columns(b, X), tables));
  CHECK(ref::max_abs_diff(Yc, ref::rope(X)) > 1e-3);
}

// ---------------------------------------------------------------------------
// Attention

TEST_CASE("attention with zero inputs is zero", "[blocks][attention]") {
  const auto& b = fx::clear_deep();
  auto Z = pack_columns(b, Matrix(4, 4));
  AttentionConfig cfg;
  cfg.heads = 2;
  cfg.seq_len = 4;
  CHECK(unpack(b, sigmoid_attention(b, Z, Z, Z, cfg)) == Matrix(4, 4));
}

TEST_CASE("single token attention has a closed form", "[blocks][attention]") {
  const auto& b = fx::ckks_deep();
  Xoshiro256 rng(4);
  auto q = Matrix::random(1, 4, rng), k = Matrix::random(1, 4, rng), v = Matrix::random(1, 4, rng);
  AttentionConfig cfg;
  cfg.heads = 1;
  cfg.seq_len = 1;
  auto out = unpack(b, sigmoid_attention(b, pack_columns(b, q), pack_columns(b, k), pack_columns(b, v), cfg));
  double dot = 0;
  for (int j = 0; j < 4; ++j) dot += q(0, j) * k(0, j);
  const double w = sigmoid(dot / 2.0 + 0.0);  // 1/sqrt(4), bias -log 1 = 0
  for (int j = 0; j < 4; ++j) CHECK(std::abs(out(0, j) - w * v(0, j)) < 1e-3);
}

TEST_CASE("attention matches the oracle on the clear backend", "[blocks][attention]") {
  for (std::size_t s : {4u, 8u, 16u})
    for (std::size_t d : {4u, 8u, 16u})
      for (int seed = 0; seed < 20; ++seed) {
        Xoshiro256 rng(seed * 31 + s * 7 + d);
        auto Q = Matrix::random(s, d, rng), K = Matrix::random(s, d, rng), V = Matrix::random(s, d, rng);
        AttentionConfig cfg;
        cfg.heads = 2;
        cfg.seq_len = s;
        const auto& b = fx::clear_deep();
        auto out =
            unpack(b, sigmoid_attention(b, pack_columns(b, Q), pack_columns(b, K), pack_columns(b, V), cfg));
        auto f = ref::Scalars::exact(0.0);
        f.sigmoid = sigmoid_approx(cfg.resolved_bias());
        CHECK(ref::max_abs_diff(out, ref::sigmoid_attention(Q, K, V, 2, cfg.resolved_scale(d), f)) < 1e-9);
      }
}

TEST_CASE("attention on CKKS within 1e-2, rotations only in extraction", "[blocks][attention]") {
  const std::size_t s = 4, d = 4;
  Xoshiro256 rng(5);
  auto Q = Matrix::random(s, d, rng), K = Matrix::random(s, d, rng), V = Matrix::random(s, d, rng);
  AttentionConfig cfg;
  cfg.heads = 2;
  cfg.seq_len = s;
  auto b = fx::isolated(fx::ckks_deep());
  LevelTracker t(b.counters());
  auto out = unpack(
      b, sigmoid_attention(b, pack_columns(b, Q), pack_columns(b, K), pack_columns(b, V), cfg, &t));
  auto want = ref::sigmoid_attention(Q, K, V, 2, cfg.resolved_scale(d), ref::Scalars::exact(cfg.resolved_bias()));
  CHECK(ref::max_abs_diff(out, want) < 1e-2);
  // Two ccmm per head, each d' * s extractions of log2(s) rotations.
  const std::size_t dh = d / 2;
  CHECK(b.counters().snapshot().rot == 2 * 2 * dh * s * ceil_log2(s));
  CHECK(t.assert_budget("attention", 2 + sigmoid_approx(0).depth + 1).pass);
  CHECK(t.assert_budget("sigmoid", sigmoid_approx(0).depth).pass);
}

TEST_CASE("attention bias modes", "[blocks][attention]") {
  AttentionConfig cfg;
  cfg.seq_len = 8;
  CHECK(cfg.resolved_bias() == -std::log(8.0));
  cfg.bias_mode = BiasMode::faithful;
  CHECK(cfg.resolved_bias() == std::log(8.0));
  cfg.bias = 0.25;
  CHECK(cfg.resolved_bias() == 0.25);
  cfg.heads = 3;
  CHECK_THROWS_AS(cfg.validate(8), InvalidParams);
  cfg.heads = 2;
  CHECK(cfg.resolved_scale(8) == 0.5);
}

// ---------------------------------------------------------------------------
// RMSNorm

TEST_CASE("rmsnorm of a constant matrix is gamma", "[blocks][rmsnorm]") {
  const auto& b = fx::ckks_deep();
  NormProfile p;
  p.eps = 0.0;
  std::vector<double> g{0.5, 1.0, 1.5, 2.0};
  auto Y = unpack(b, rmsnorm(b, pack_columns(b, Matrix(4, 4, 1.7)), g, p));
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) CHECK(std::abs(Y(i, j) - g[j]) < 1e-3);
}

TEST_CASE("rmsnorm with row RMS 2 halves the input", "[blocks][rmsnorm]") {
  const auto& b = fx::ckks_deep();
  NormProfile p;
  p.eps = 0.0;
  Matrix X(4, 4);
  const double rows[4][4] = {{2, 2, 2, 2}, {-2, 2, -2, 2}, {1, 1, 1, std::sqrt(13.0)}, {0, 0, 0, 4}};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) X(i, j) = rows[i][j];
  std::vector<double> g(4, 1.0);
  auto Y = unpack(b, rmsnorm(b, pack_columns(b, X), g, p));
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) CHECK(std::abs(Y(i, j) - X(i, j) / 2) < 1e-3);
}

TEST_CASE("rmsnorm refreshes exactly once for any width", "[blocks][rmsnorm]") {
  for (std::size_t d : {4u, 8u, 16u, 32u}) {
    Xoshiro256 rng(d);
    auto X = norm_input(rng, 8, d);
    auto g = gammas(rng, d);
    auto b = fx::isolated(fx::clear_deep());
    b.set_strict_refresh(true);
    auto na = fit_norm(NormProfile{});
    auto Y = unpack(b, rmsnorm(b, pack_columns(b, X), g, na));
    CHECK(b.counters().snapshot().refresh == 1);
    CHECK(ref::max_abs_diff(Y, ref::rmsnorm(X, g, na.eps, ref::Scalars::fitted(sigmoid_approx(0), sigmoid_approx(0), na))) <
          1e-9);
  }
}

TEST_CASE("rmsnorm level split", "[blocks][rmsnorm]") {
  Xoshiro256 rng(6);
  auto X = norm_input(rng, 4, 4);
  auto g = gammas(rng, 4);
  for (auto [profile, pre, post] : {std::tuple{NormProfile{}, 9, 9}, std::tuple{norm_profile_19(), 9, 10}}) {
    auto b = fx::isolated(fx::clear_deep());
    LevelTracker t(b.counters());
    (void)rmsnorm(b, pack_columns(b, X), g, profile, &t);
    CHECK(t.assert_budget("rmsnorm.pre", pre).pass);
    CHECK(t.assert_budget("rmsnorm.post", post).pass);
    CHECK(t.assert_budget("rmsnorm", pre + post).pass);
  }
}

TEST_CASE("rmsnorm on CKKS within 1e-3 of the exact oracle", "[blocks][rmsnorm]") {
  Xoshiro256 rng(7);
  auto X = norm_input(rng, 8, 8);
  auto g = gammas(rng, 8);
  const auto& b = fx::ckks_deep();
  auto Y = unpack(b, rmsnorm(b, pack_columns(b, X), g));
  CHECK(ref::max_abs_diff(Y, ref::rmsnorm(X, g, 1e-5, ref::Scalars::exact(0))) < 1e-3);
}

TEST_CASE("rmsnorm fails before the refresh when levels run out", "[blocks][rmsnorm]") {
  const auto& b = fx::clear_deep();
  std::vector<double> g(2, 1.0);
  CHECK_THROWS_AS(rmsnorm(b, pack_columns(b, Matrix(2, 2, 1.0), 5), g), DepthExceeded);
  CHECK_THROWS_AS(rmsnorm(b, pack_columns(b, Matrix(2, 2, 1.0)), std::vector<double>(3, 1.0)), DimensionMismatch);
}

// ---------------------------------------------------------------------------
// FFN

TEST_CASE("swiglu with zero weights is zero", "[blocks][ffn]") {
  const auto& b = fx::clear_deep();
  Xoshiro256 rng(8);
  auto X = Matrix::random(4, 4, rng);
  auto Y = unpack(b, swiglu_ffn(b, pack_columns(b, X), TernaryMatrix(4, 8), TernaryMatrix(4, 8), TernaryMatrix(8, 4)));
  CHECK(Y == Matrix(4, 4));
}

TEST_CASE("swiglu tiny hand case matches the oracle", "[blocks][ffn]") {
  Matrix X(3, 2);
  X(0, 0) = 1.0, X(0, 1) = -0.5;
  X(1, 0) = 0.0, X(1, 1) = 0.0;  // SiLU(0) row contributes nothing
  X(2, 0) = 2.0, X(2, 1) = 1.5;
  TernaryMatrix W1(2, 2, {1, 0, 0, 1}), W2(2, 2, {1, 1, -1, 0}), W3(2, 2, {0, 1, 1, -1});
  auto sig = sigmoid_approx(0.0);
  auto f = ref::Scalars::exact(0);
  f.silu = [sig](double v) { return v * sig(v); };
  auto want = ref::swiglu(X, W1, W2, W3, f);

  const auto& c = fx::clear_deep();
  auto b = fx::isolated(c);
  LevelTracker t(b.counters());
  auto Y = unpack(b, swiglu_ffn(b, pack_columns(b, X), W1, W2, W3, sig, &t));
  CHECK(ref::max_abs_diff(Y, want) < 1e-12);
  CHECK(Y(1, 0) == 0.0);
  CHECK(Y(1, 1) == 0.0);
  CHECK(t.assert_budget("pcmm", 0).pass);
  CHECK(t.assert_budget("ffn", sig.depth + 2).pass);

  const auto& k = fx::ckks_deep();
  auto Yk = unpack(k, swiglu_ffn(k, pack_columns(k, X), W1, W2, W3, sig));
  CHECK(ref::max_abs_diff(Yk, ref::swiglu(X, W1, W2, W3, ref::Scalars::exact(0))) < 1e-3);
}

// ---------------------------------------------------------------------------
// Layer

TEST_CASE("zero layer on zero input is zero", "[blocks][layer]") {
  auto b = fx::isolated(fx::clear_deep());
  LayerConfig cfg;
  cfg.attention.heads = 2;
  auto Y = unpack(b, transformer_layer(b, pack_columns(b, Matrix(4, 8)), LayerWeights::zeros(8, 16), cfg));
  CHECK(Y == Matrix(4, 8));
  CHECK(b.counters().snapshot().refresh == 3);
}

TEST_CASE("layer matches the fitted-polynomial oracle on the clear backend", "[blocks][layer]") {
  for (bool final_norm : {false, true})
    for (int seed = 0; seed < 5; ++seed) {
      Xoshiro256 rng(seed + 40);
      const std::size_t s = 8, d = 16, f = 32;
      auto w = LayerWeights::random(rng, d, f, final_norm);
      auto X = norm_input(rng, s, d);
      LayerConfig cfg;
      cfg.attention.heads = 2;
      cfg.final_norm = final_norm;
      auto b = fx::isolated(fx::clear_deep());
      b.set_strict_refresh(true);
      LevelTracker t(b.counters());
      auto Y = unpack(b, transformer_layer(b, pack_columns(b, X), w, cfg, &t));
      ref::Trace tr;
      auto want = ref::layer(X, w, cfg, ref::layer_scalars(cfg, s, false), &tr);
      CHECK(ref::max_abs_diff(Y, want) < 1e-9);
      CHECK(ref::Trace::inside(tr.sigmoid_in, cfg.attention.sigmoid.domain));
      CHECK(ref::Trace::inside(tr.silu_in, cfg.silu.domain));
      CHECK(ref::Trace::inside(tr.variance, cfg.norm.sqrt.domain));
      CHECK(b.counters().snapshot().refresh == (final_norm ? 3u : 2u));
      CHECK(t.assert_budget("rope", 1).pass);
      CHECK(t.assert_budget("pcmm", 0).pass);
      CHECK(t.assert_budget("rmsnorm", 18).pass);
    }
}

TEST_CASE("faithful rope mode runs inside the layer", "[blocks][layer]") {
  Xoshiro256 rng(9);
  auto w = LayerWeights::random(rng, 8, 16);
  auto X = norm_input(rng, 4, 8);
  LayerConfig cfg;
  cfg.attention.heads = 2;
  cfg.rope_mode = RopeMode::faithful;
  auto b = fx::isolated(fx::clear_deep());
  LevelTracker t(b.counters());
  (void)transformer_layer(b, pack_columns(b, X), w, cfg, &t);
  CHECK(t.assert_budget("rope", 2).pass);
}

TEST_CASE("layer weight validation", "[blocks][layer]") {
  Xoshiro256 rng(10);
  auto w = LayerWeights::random(rng, 8, 16);
  CHECK_NOTHROW(w.validate());
  w.gamma_ffn.pop_back();
  CHECK_THROWS_AS(w.validate(), DimensionMismatch);
  w = LayerWeights::random(rng, 8, 16);
  w.gamma_attn[0] = std::nan("");
  CHECK_THROWS_AS(w.validate(), InvalidParams);
  w = LayerWeights::random(rng, 8, 16);
  w.W3 = TernaryMatrix(8, 8);
  CHECK_THROWS_AS(w.validate(), DimensionMismatch);
}
