#include <catch_amalgamated.hpp>

#include <complex>

#include "support/fixtures.hpp"

using namespace ensi;
using namespace ensi::he;

TEST_CASE("Barrett and Shoup products agree with 128-bit arithmetic", "[modarith]") {
  Xoshiro256 rng(1);
  for (u64 q : {u64{65537}, u64{1152921504606584833ull}, u64{1099511922689ull}}) {
    Modulus m(q);
    for (int t = 0; t < 2000; ++t) {
      u64 a = rng() % q, b = rng() % q;
      REQUIRE(m.mul(a, b) == mulmod_slow(a, b, q));
      REQUIRE(m.mul_shoup(a, b, m.shoup(b)) == mulmod_slow(a, b, q));
      REQUIRE(m.add(a, b) == (a + b) % q);
      REQUIRE(m.sub(a, b) == (a + q - b) % q);
    }
    REQUIRE(m.mul(m.inv(12345), 12345) == 1);
    REQUIRE(m.from_signed(-1) == q - 1);
  }
}

TEST_CASE("Miller-Rabin and NTT prime search", "[modarith]") {
  REQUIRE(is_prime(2));
  REQUIRE(is_prime(1152921504606584833ull));
  REQUIRE_FALSE(is_prime(3215031751ull));  // strong pseudoprime to bases 2,3,5,7
  REQUIRE_FALSE(is_prime(561));                         // Carmichael
  const u64 m = 2 * 4096;
  auto p = ntt_prime_below(40, m, {});
  REQUIRE(is_prime(p));
  REQUIRE(p % m == 1);
  REQUIRE(p < (u64{1} << 40));
  auto p2 = ntt_prime_below(40, m, {p});
  REQUIRE(p2 != p);
}

TEST_CASE("negacyclic NTT product equals schoolbook product", "[ntt]") {
  for (std::size_t n : {4u, 16u, 64u}) {
    const u64 q = ntt_prime_below(50, 2 * n, {});
    Modulus m(q);
    NttTables t(n, m);
    Xoshiro256 rng(n);
    std::vector<u64> a(n), b(n);
    for (auto& x : a) x = rng() % q;
    for (auto& x : b) x = rng() % q;
    std::vector<u64> want(n, 0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        u64 p = m.mul(a[i], b[j]);
        if (i + j < n) want[i + j] = m.add(want[i + j], p);
        else want[i + j - n] = m.sub(want[i + j - n], p);  // X^n = -1
      }
    auto fa = a, fb = b;
    t.forward(fa.data());
    t.forward(fb.data());
    for (std::size_t i = 0; i < n; ++i) fa[i] = m.mul(fa[i], fb[i]);
    t.inverse(fa.data());
    REQUIRE(fa == want);
    auto rt = b;
    t.forward(rt.data());
    t.inverse(rt.data());
    REQUIRE(rt == b);
  }
}

TEST_CASE("forward NTT evaluates at odd powers of psi in bit-reversed order", "[ntt]") {
  const std::size_t n = 16;
  const u64 q = ntt_prime_below(40, 2 * n, {});
  Modulus m(q);
  NttTables t(n, m);
  Xoshiro256 rng(3);
  std::vector<u64> a(n);
  for (auto& x : a) x = rng() % q;
  auto f = a;
  t.forward(f.data());
  for (std::size_t i = 0; i < n; ++i) {
    const u64 root = m.pow(t.psi(), 2 * bit_reverse(static_cast<std::uint32_t>(i), 4) + 1);
    u64 v = 0, p = 1;
    for (std::size_t k = 0; k < n; ++k) {
      v = m.add(v, m.mul(a[k], p));
      p = m.mul(p, root);
    }
    REQUIRE(f[i] == v);
  }
}

TEST_CASE("slot encoder round trip", "[encoder]") {
  SlotEncoder e(64);
  Xoshiro256 rng(5);
  std::vector<std::complex<double>> z(32);
  for (auto& v : z) v = {fx::random_vec(rng, 1)[0], fx::random_vec(rng, 1)[0]};
  auto back = e.embed(e.embed_inverse(z));
  for (std::size_t i = 0; i < z.size(); ++i) REQUIRE(std::abs(back[i] - z[i]) < 1e-12);
}
