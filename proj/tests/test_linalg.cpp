#include <catch_amalgamated.hpp>

#include "support/fixtures.hpp"

using namespace ensi;

namespace {

Matrix toy_x() {
  // Column j of X is the vector x_j; distinct entries so sign errors show.
  Matrix X(3, 4);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) X(i, j) = double(10 * j + i + 1);
  return X;
}

TernaryMatrix toy_w() { return TernaryMatrix(4, 2, {1, -1, 0, 1, -1, 0, 0, 1}); }

}  // namespace

TEST_CASE("pcmm worked example: (x0 - x2, x1 - x0 + x3)", "[linalg][pcmm]") {
  auto X = toy_x();
  auto b = fx::isolated(fx::clear());
  auto Y = unpack(b, pcmm(b, pack_columns(b, X), toy_w()));
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(Y(i, 0) == X(i, 0) - X(i, 2));
    CHECK(Y(i, 1) == X(i, 1) - X(i, 0) + X(i, 3));
  }
  auto c = fx::isolated(fx::ckks());
  auto Yc = unpack(c, pcmm(c, pack_columns(c, X), toy_w()));
  CHECK(ref::max_abs_diff(Yc, ref::matmul(X, toy_w())) < 1e-4);
}

TEST_CASE("pcmm with zero weights gives zero columns at the input level", "[linalg][pcmm]") {
  const auto& b = fx::clear();
  auto pm = pack_columns(b, toy_x());
  auto Y = pcmm(b, pm, TernaryMatrix(4, 3));
  CHECK(Y.ncols() == 3);
  CHECK(Y.level() == pm.level());
  CHECK(unpack(b, Y) == Matrix(3, 3));
}

TEST_CASE("pcmm is multiplication free and matches X*W", "[linalg][pcmm]") {
  for (std::size_t s : {2u, 4u, 8u, 16u})
    for (std::size_t d : {2u, 4u, 8u, 16u})
      for (std::size_t m : {2u, 4u, 8u, 16u}) {
        Xoshiro256 rng(s * 1000 + d * 100 + m);
        auto X = Matrix::random(s, d, rng);
        auto W = TernaryMatrix::random(d, m, rng);
        auto b = fx::isolated(fx::clear());
        LevelTracker t(b.counters());
        auto Y = pcmm(b, pack_columns(b, X), W, &t);
        auto ops = t.records("pcmm").front().ops;
        CHECK(ops.mult == 0);
        CHECK(ops.pmult == 0);
        CHECK(ops.add + ops.sub <= d * m);
        CHECK(ref::max_abs_diff(unpack(b, Y), ref::matmul(X, W)) <= s * d * 1e-12);
        CHECK(t.assert_budget("pcmm", 0).pass);
      }
}

TEST_CASE("pcmm on CKKS stays within a few backend epsilons", "[linalg][pcmm]") {
  Xoshiro256 rng(8);
  auto X = Matrix::random(8, 8, rng);
  auto W = TernaryMatrix::random(8, 4, rng);
  const auto& b = fx::ckks();
  auto Y = unpack(b, pcmm(b, pack_columns(b, X), W));
  CHECK(ref::max_abs_diff(Y, ref::matmul(X, W)) < 8 * 1e-5);
  CHECK_THROWS_AS(pcmm(b, pack_columns(b, X), TernaryMatrix(4, 4)), DimensionMismatch);
}

TEST_CASE("extract_broadcast fills the span", "[linalg][extract]") {
  for (auto mode : {ExtractMode::doubling, ExtractMode::naive}) {
    auto b = fx::isolated(fx::ckks());
    std::vector<double> v{7, 0, 0, 0};
    auto r = b.decrypt(extract_broadcast(b, b.encrypt(v), 0, 4, 1.0, mode));
    for (int i = 0; i < 4; ++i) CHECK(std::abs(r[i] - 7) < 1e-5);

    std::vector<double> abcd{0.1, 0.2, 0.3, 0.4};
    auto c = b.decrypt(extract_broadcast(b, b.encrypt(abcd), 2, 4, 1.0, mode));
    for (int i = 0; i < 4; ++i) CHECK(std::abs(c[i] - 0.3) < 1e-6);
  }
}

TEST_CASE("extract_broadcast costs one pmult and log2(s) rotations", "[linalg][extract]") {
  auto b = fx::isolated(fx::clear());
  std::vector<double> v(8);
  for (int i = 0; i < 8; ++i) v[i] = i + 1;
  auto ct = b.encrypt(v);
  for (std::size_t slot = 0; slot < 8; ++slot) {
    auto before = b.counters().snapshot();
    auto x = extract_broadcast(b, ct, slot, 8);
    auto d = diff(before, b.counters().snapshot());
    CHECK(d.rot == 3);
    CHECK(d.add == 3);
    CHECK(d.pmult == 1);
    CHECK(x.level() == ct.level() - 1);
    auto r = b.decrypt(x);
    for (int i = 0; i < 8; ++i) CHECK(r[i] == v[slot]);
  }
  auto before = b.counters().snapshot();
  (void)extract_broadcast(b, ct, 5, 8, 1.0, ExtractMode::naive);
  CHECK(diff(before, b.counters().snapshot()).rot == 7);
  CHECK_THROWS_AS(extract_broadcast(b, ct, 8, 8), DimensionMismatch);
  CHECK_THROWS_AS(extract_broadcast(b, b.encrypt(v, 0), 0, 8), DepthExceeded);
}

TEST_CASE("ccmm of identities is the identity", "[linalg][ccmm]") {
  const auto& b = fx::ckks();
  auto I = pack_columns(b, Matrix::identity(2));
  auto C = ccmm(b, I, direct(I));
  CHECK(C.level() == b.max_level() - 2);
  CHECK(ref::max_abs_diff(unpack(b, C), Matrix::identity(2)) < 1e-5);
}

TEST_CASE("ccmm Q*K^T through the transposed accessor", "[linalg][ccmm]") {
  Xoshiro256 rng(9);
  auto Q = Matrix::random(4, 2, rng), K = Matrix::random(4, 2, rng);
  const auto& b = fx::ckks();
  auto pq = pack_columns(b, Q), pk = pack_columns(b, K);
  auto S = unpack(b, ccmm(b, pq, transposed(pk)));
  REQUIRE(S.rows() == 4);
  REQUIRE(S.cols() == 4);
  CHECK(ref::max_abs_diff(S, ref::matmul(Q, ref::transpose(K))) < 1e-5);

  auto half = unpack(b, ccmm(b, pq, transposed(pk), 1.0 / std::sqrt(4.0)));
  Matrix want = ref::matmul(Q, ref::transpose(K));
  for (auto& x : want.data()) x *= 0.5;
  CHECK(ref::max_abs_diff(half, want) < 1e-5);
}

TEST_CASE("ccmm matches plaintext matmul in both orientations", "[linalg][ccmm]") {
  for (std::size_t s : {4u, 8u})
    for (std::size_t d : {4u, 8u})
      for (std::size_t m : {4u, 8u})
        for (int seed = 0; seed < 3; ++seed) {
          Xoshiro256 rng(seed * 7 + s + d * 3 + m * 5);
          auto A = Matrix::random(s, d, rng), B = Matrix::random(d, m, rng), K = Matrix::random(m, d, rng);
          const auto& b = fx::clear();
          auto pa = pack_columns(b, A);
          auto pb = pack_columns(b, B), pkm = pack_columns(b, K);
          CHECK(ref::max_abs_diff(unpack(b, ccmm(b, pa, direct(pb))), ref::matmul(A, B)) < 1e-12);
          CHECK(ref::max_abs_diff(unpack(b, ccmm(b, pa, transposed(pkm))), ref::matmul(A, ref::transpose(K))) <
                1e-12);
        }
}

TEST_CASE("ccmm rotation count is d*m*ceil(log2 s); naive is d*m*(s-1)", "[linalg][ccmm]") {
  for (std::size_t s : {4u, 8u, 16u}) {
    const std::size_t d = 4, m = 3;
    Xoshiro256 rng(s);
    auto b = fx::isolated(fx::clear());
    auto pa = pack_columns(b, Matrix::random(s, d, rng));
    auto pk = pack_columns(b, Matrix::random(m, d, rng));  // K is m x d, Kᵀ is d x m
    LevelTracker t(b.counters());
    auto before = b.counters().snapshot();
    (void)ccmm(b, pa, transposed(pk), 1.0, &t);
    CHECK(diff(before, b.counters().snapshot()).rot == d * m * ceil_log2(s));
    CHECK(t.assert_budget("ccmm", 2).pass);
    before = b.counters().snapshot();
    auto naive = ccmm(b, pa, transposed(pk), 1.0, nullptr, ExtractMode::naive);
    CHECK(diff(before, b.counters().snapshot()).rot == d * m * (s - 1));
    CHECK(ref::max_abs_diff(unpack(b, naive), unpack(b, ccmm(b, pa, transposed(pk)))) < 1e-12);
  }
}

TEST_CASE("ccmm reports the failing column on depth exhaustion", "[linalg][ccmm]") {
  const auto& b = fx::clear();
  auto pa = pack_columns(b, Matrix(2, 2, 1.0), 1);
  try {
    (void)ccmm(b, pa, direct(pa));
    FAIL("expected DepthExceeded");
  } catch (const DepthExceeded& e) {
    CHECK(e.tag().rfind("ccmm/", 0) == 0);
  }
}

TEST_CASE("hadamard products", "[linalg][hadamard]") {
  Xoshiro256 rng(10);
  auto X = Matrix::random(4, 4, rng), Y = Matrix::random(4, 4, rng);
  auto b = fx::isolated(fx::ckks());
  LevelTracker t(b.counters());
  auto px = pack_columns(b, X);
  std::vector<double> ones(4, 1.0);
  auto same = hadamard_pc(b, px, std::span<const double>(ones), &t);
  CHECK(same.level() == px.level() - 1);
  CHECK(ref::max_abs_diff(unpack(b, same), X) < 1e-6);

  auto before = b.counters().snapshot();
  auto z = hadamard_cc(b, px, pack_columns(b, Matrix(4, 4)), &t);
  CHECK(diff(before, b.counters().snapshot()).mult == 4);
  CHECK(ref::max_abs_diff(unpack(b, z), Matrix(4, 4)) < 1e-6);

  auto h = hadamard_cc(b, px, pack_columns(b, Y), &t);
  CHECK(ref::max_abs_diff(unpack(b, h), ref::hadamard(X, Y)) < 1e-5);
  auto hp = hadamard_pc(b, px, Y, &t);
  CHECK(ref::max_abs_diff(unpack(b, hp), ref::hadamard(X, Y)) < 1e-5);
  CHECK(t.assert_budget("hadamard_cc", 1).pass);
  CHECK(t.assert_budget("hadamard_pc", 1).pass);
  CHECK_THROWS_AS(hadamard_cc(b, px, pack_columns(b, Matrix(4, 3))), DimensionMismatch);
}
