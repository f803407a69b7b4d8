#include <catch_amalgamated.hpp>

#include "support/fixtures.hpp"

using namespace ensi;
using namespace ensi::he;

namespace {
constexpr double kTol = 1e-6;  // fresh-ish ciphertexts at 2^40 scale
}

TEST_CASE("encrypt/decrypt round trip on every level", "[ckks]") {
  const auto& b = fx::ckks();
  Xoshiro256 rng(1);
  auto v = fx::random_vec(rng, b.slot_count());
  for (int l : {b.max_level(), 5, 0}) {
    auto ct = b.encrypt(v, l);
    REQUIRE(ct.level() == l);
    REQUIRE(fx::max_err(b.decrypt(ct), v, v.size()) < kTol);
  }
}

TEST_CASE("homomorphic arithmetic matches slotwise arithmetic", "[ckks]") {
  const auto& b = fx::ckks();
  Xoshiro256 rng(2);
  const std::size_t n = b.slot_count();
  auto x = fx::random_vec(rng, n), y = fx::random_vec(rng, n), p = fx::random_vec(rng, n);
  auto cx = b.encrypt(x), cy = b.encrypt(y);
  std::vector<double> want(n);

  for (std::size_t i = 0; i < n; ++i) want[i] = x[i] + y[i];
  CHECK(fx::max_err(b.decrypt(b.add(cx, cy)), want, n) < kTol);
  for (std::size_t i = 0; i < n; ++i) want[i] = x[i] - y[i];
  CHECK(fx::max_err(b.decrypt(b.sub(cx, cy)), want, n) < kTol);
  for (std::size_t i = 0; i < n; ++i) want[i] = -x[i];
  CHECK(fx::max_err(b.decrypt(b.negate(cx)), want, n) < kTol);
  for (std::size_t i = 0; i < n; ++i) want[i] = x[i] + p[i];
  CHECK(fx::max_err(b.decrypt(b.add_plain(cx, p)), want, n) < kTol);
  for (std::size_t i = 0; i < n; ++i) want[i] = x[i] + 0.25;
  CHECK(fx::max_err(b.decrypt(b.add_scalar(cx, 0.25)), want, n) < kTol);

  auto m = b.mult(cx, cy);
  REQUIRE(m.level() == b.max_level() - 1);
  for (std::size_t i = 0; i < n; ++i) want[i] = x[i] * y[i];
  CHECK(fx::max_err(b.decrypt(m), want, n) < kTol);

  auto mp = b.mult_plain(cx, p);
  REQUIRE(mp.level() == b.max_level() - 1);
  for (std::size_t i = 0; i < n; ++i) want[i] = x[i] * p[i];
  CHECK(fx::max_err(b.decrypt(mp), want, n) < kTol);

  for (std::size_t i = 0; i < n; ++i) want[i] = x[i] * -1.75;
  CHECK(fx::max_err(b.decrypt(b.mult_scalar(cx, -1.75)), want, n) < kTol);

  // Operands on different levels are aligned first.
  auto low = b.drop_to(cy, 4);
  for (std::size_t i = 0; i < n; ++i) want[i] = x[i] * y[i];
  auto ml = b.mult(cx, low);
  REQUIRE(ml.level() == 3);
  CHECK(fx::max_err(b.decrypt(ml), want, n) < kTol);
}

TEST_CASE("dot uses one rescale for a sum of products", "[ckks]") {
  const auto& b = fx::ckks();
  Xoshiro256 rng(3);
  const std::size_t n = b.slot_count();
  std::vector<CkksBackend::Ciphertext> xs, ys;
  std::vector<double> want(n, 0.0);
  for (int t = 0; t < 4; ++t) {
    auto x = fx::random_vec(rng, n), y = fx::random_vec(rng, n);
    for (std::size_t i = 0; i < n; ++i) want[i] += x[i] * y[i];
    xs.push_back(b.encrypt(x));
    ys.push_back(b.encrypt(y));
  }
  std::vector<const CkksBackend::Ciphertext*> pa, pb;
  for (int t = 0; t < 4; ++t) {
    pa.push_back(&xs[t]);
    pb.push_back(&ys[t]);
  }
  auto bb = fx::isolated(b);
  auto d = bb.dot(pa, pb);
  REQUIRE(d.level() == b.max_level() - 1);
  CHECK(bb.counters().snapshot().mult == 4);
  CHECK(fx::max_err(b.decrypt(d), want, n) < 1e-5);
}

TEST_CASE("rotation by arbitrary amounts via power-of-two keys", "[ckks]") {
  auto b = fx::isolated(fx::ckks());
  Xoshiro256 rng(4);
  const std::size_t n = b.slot_count();
  auto x = fx::random_vec(rng, n);
  auto cx = b.encrypt(x);
  for (long k : {1L, -1L, 3L, 7L, -5L, 100L, long(n) - 1}) {
    auto before = b.counters().snapshot().rot;
    auto r = b.decrypt(b.rotate(cx, k));
    std::vector<double> want(n);
    for (std::size_t i = 0; i < n; ++i) want[i] = x[(i + ((k % long(n)) + n)) % n];
    CHECK(fx::max_err(r, want, n) < kTol);
    CHECK(b.counters().snapshot().rot - before == rotation_steps(k, n).size());
  }
  CHECK(rotation_steps(7, 2048) == std::vector<int>{-1, 8});
  CHECK(rotation_steps(0, 2048).empty());
}

TEST_CASE("depth exhaustion raises DepthExceeded with the tag", "[ckks]") {
  const auto& b = fx::ckks();
  std::vector<double> v(b.slot_count(), 0.5);
  auto ct = b.encrypt(v, 0);
  ct.info.tag = "probe";
  try {
    (void)b.mult(ct, ct);
    FAIL("expected DepthExceeded");
  } catch (const DepthExceeded& e) {
    CHECK(e.tag() == "probe");
    CHECK(e.required() == 1);
    CHECK(e.available() == 0);
  }
  CHECK_THROWS_AS(b.drop_to(b.encrypt(v, 3), 5), InvalidParams);
}

TEST_CASE("refresh restores L-K and keeps the values", "[ckks]") {
  auto b = fx::isolated(fx::ckks());
  Xoshiro256 rng(5);
  auto x = fx::random_vec(rng, b.slot_count());
  auto ct = b.encrypt(x, 1);
  auto r = b.refresh(ct);
  CHECK(r.level() == b.max_level() - b.params().refresh_cost);
  CHECK(fx::max_err(b.decrypt(r), x, x.size()) < 1e-5);
  CHECK(b.counters().snapshot().refresh == 1);
  // Same input, same output: the re-encryption is seeded from the ciphertext.
  CHECK(b.refresh(ct).data == r.data);

  b.set_strict_refresh(true);
  CHECK_THROWS_AS(b.refresh(ct), RefreshDisabled);
  {
    RefreshPermit permit(b);
    CHECK_NOTHROW(b.refresh(ct));
  }
  CHECK_THROWS_AS(b.refresh(ct), RefreshDisabled);
}

TEST_CASE("exact level scales follow the squaring recurrence", "[ckks]") {
  const auto& c = fx::ckks().context();
  for (int l = c.max_level(); l >= 1; --l) {
    const long double want = c.scale(l) * c.scale(l) / static_cast<long double>(c.mod(l).value());
    CHECK(std::abs(double(c.scale(l - 1) / want) - 1.0) < 1e-15);
    CHECK(std::abs(std::log2(double(c.scale(l - 1))) - 40.0) < 0.01);
  }
}

TEST_CASE("keygen is deterministic and evaluation-only copies cannot decrypt", "[ckks]") {
  auto p = HeParams::make(1u << 10, 4, 1, 30, 99);
  p.base_bits = 45;
  auto a = CkksBackend::keygen(p), b = CkksBackend::keygen(p);
  CHECK(a.key_id() == b.key_id());
  auto p2 = p;
  p2.seed = 100;
  CHECK(CkksBackend::keygen(p2).key_id() != a.key_id());

  std::vector<double> v(a.slot_count(), 0.125);
  auto ct = a.encrypt(v);
  auto server = a.evaluation_only();
  CHECK_FALSE(server.has_secret_key());
  CHECK(server.can_refresh());
  CHECK_THROWS_AS(server.decrypt(ct), MissingKey);
  auto y = server.mult(ct, ct);
  CHECK(std::abs(a.decrypt(y)[3] - 0.015625) < 1e-4);
  CHECK_THROWS_AS(a.evaluation_only(false).refresh(ct), MissingKey);
}

TEST_CASE("missing rotation key is reported", "[ckks]") {
  auto p = HeParams::make(1u << 10, 3, 1, 30, 5);
  p.base_bits = 45;
  auto b = CkksBackend::keygen(p, std::vector<int>{1});
  std::vector<double> v(b.slot_count(), 1.0);
  auto ct = b.encrypt(v);
  CHECK_NOTHROW(b.rotate(ct, 1));
  CHECK_THROWS_AS(b.rotate(ct, 2), MissingKey);
}

TEST_CASE("invalid parameters are rejected", "[ckks]") {
  CHECK_THROWS_AS(HeParams::make(1000, 4, 1), InvalidParams);
  CHECK_THROWS_AS(HeParams::make(1024, 4, 4), InvalidParams);
  CHECK_THROWS_AS(HeParams::make(1024, 4, 0), InvalidParams);
  CHECK_THROWS_AS(HeParams::make(1024, 0, 1), InvalidParams);
  auto p = HeParams::make(1024, 4, 1);
  p.generate_chain();
  CHECK_NOTHROW(p.validate(true));
  p.modulus_chain[2] = p.modulus_chain[1];
  CHECK_THROWS_AS(p.validate(true), InvalidParams);
}

TEST_CASE("ciphertext serialization is bit exact", "[ckks][serialize]") {
  const auto& b = fx::ckks();
  Xoshiro256 rng(6);
  auto x = fx::random_vec(rng, b.slot_count());
  auto ct = b.mult(b.encrypt(x), b.encrypt(x));
  auto bytes = ciphertext_bytes(b, ct);
  auto back = ciphertext_from_bytes(b, bytes);
  CHECK(back.data == ct.data);
  CHECK(back.level() == ct.level());
  CHECK(ciphertext_bytes(b, back) == bytes);

  auto bad = bytes;
  bad[4] = 9;  // version
  CHECK_THROWS_AS(ciphertext_from_bytes(b, bad), FormatError);
  bad = bytes;
  bad.pop_back();
  CHECK_THROWS_AS(ciphertext_from_bytes(b, bad), FormatError);
  bad = bytes;
  bad.push_back(0);
  CHECK_THROWS_AS(ciphertext_from_bytes(b, bad), FormatError);
}
