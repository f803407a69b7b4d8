#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace ensi::he {

using u64 = std::uint64_t;
using u128 = unsigned __int128;

/// Word-size prime modulus (< 2^61) with Barrett constants.
class Modulus {
 public:
  Modulus() = default;
  explicit Modulus(u64 q) : q_(q) {
    if (q < 2 || q >= (u64{1} << 61)) throw std::invalid_argument("modulus out of range");
    // floor(2^128 / q), split into two words
    u128 hi = (~u128{0}) / q;  // floor((2^128 - 1)/q) == floor(2^128/q) since q is not a power of 2
    ratio_lo_ = static_cast<u64>(hi);
    ratio_hi_ = static_cast<u64>(hi >> 64);
  }

  u64 value() const noexcept { return q_; }

  u64 reduce128(u128 x) const noexcept {
    const u64 in0 = static_cast<u64>(x);
    const u64 in1 = static_cast<u64>(x >> 64);
    u64 carry = static_cast<u64>((u128{in0} * ratio_lo_) >> 64);
    u128 t = u128{in0} * ratio_hi_;
    u128 s = u128{static_cast<u64>(t)} + carry;
    u64 tmp1 = static_cast<u64>(s);
    u64 tmp3 = static_cast<u64>(t >> 64) + static_cast<u64>(s >> 64);
    t = u128{in1} * ratio_lo_;
    s = u128{tmp1} + static_cast<u64>(t);
    carry = static_cast<u64>(t >> 64) + static_cast<u64>(s >> 64);
    u64 quot = in1 * ratio_hi_ + tmp3 + carry;
    u64 r = in0 - quot * q_;
    return r >= q_ ? r - q_ : r;
  }

  u64 reduce(u64 x) const noexcept { return reduce128(x); }

  u64 mul(u64 a, u64 b) const noexcept { return reduce128(u128{a} * b); }
  u64 add(u64 a, u64 b) const noexcept {
    u64 s = a + b;
    return s >= q_ ? s - q_ : s;
  }
  u64 sub(u64 a, u64 b) const noexcept { return a >= b ? a - b : a + q_ - b; }
  u64 neg(u64 a) const noexcept { return a == 0 ? 0 : q_ - a; }

  u64 pow(u64 base, u64 e) const noexcept {
    u64 r = 1 % q_;
    base %= q_;
    while (e) {
      if (e & 1) r = mul(r, base);
      base = mul(base, base);
      e >>= 1;
    }
    return r;
  }
  /// q is prime, so Fermat.
  u64 inv(u64 a) const noexcept { return pow(a, q_ - 2); }

  /// Reduces a signed value.
  u64 from_signed(std::int64_t v) const noexcept {
    if (v >= 0) return static_cast<u64>(v) % q_;
    u64 m = static_cast<u64>(-(v + 1)) % q_;  // avoids overflow at INT64_MIN
    return q_ - 1 - m;
  }

  /// Precomputation for repeated multiplication by the same w.
  u64 shoup(u64 w) const noexcept { return static_cast<u64>((u128{w} << 64) / q_); }
  u64 mul_shoup(u64 a, u64 w, u64 wp) const noexcept {
    u64 hq = static_cast<u64>((u128{a} * wp) >> 64);
    u64 r = a * w - hq * q_;
    return r >= q_ ? r - q_ : r;
  }

 private:
  u64 q_ = 0;
  u64 ratio_lo_ = 0;
  u64 ratio_hi_ = 0;
};

inline u64 mulmod_slow(u64 a, u64 b, u64 m) { return static_cast<u64>(u128{a} * b % m); }

inline u64 powmod_slow(u64 b, u64 e, u64 m) {
  u64 r = 1 % m;
  b %= m;
  while (e) {
    if (e & 1) r = mulmod_slow(r, b, m);
    b = mulmod_slow(b, b, m);
    e >>= 1;
  }
  return r;
}

/// Deterministic Miller-Rabin for 64-bit inputs.
inline bool is_prime(u64 n) {
  if (n < 2) return false;
  for (u64 p : {2ull, 3ull, 5ull, 7ull, 11ull, 13ull, 17ull, 19ull, 23ull, 29ull, 31ull, 37ull}) {
    if (n % p == 0) return n == p;
  }
  u64 d = n - 1;
  int r = 0;
  while ((d & 1) == 0) {
    d >>= 1;
    ++r;
  }
  for (u64 a : {2ull, 3ull, 5ull, 7ull, 11ull, 13ull, 17ull, 19ull, 23ull, 29ull, 31ull, 37ull}) {
    u64 x = powmod_slow(a, d, n);
    if (x == 1 || x == n - 1) continue;
    bool composite = true;
    for (int i = 1; i < r; ++i) {
      x = mulmod_slow(x, x, n);
      if (x == n - 1) {
        composite = false;
        break;
      }
    }
    if (composite) return false;
  }
  return true;
}

/// Prime p = 1 (mod m) closest to `target`, skipping anything in `used`.
inline u64 nearest_ntt_prime(long double target, u64 m, const std::vector<u64>& used) {
  auto taken = [&](u64 p) {
    for (u64 u : used)
      if (u == p) return true;
    return false;
  };
  u64 base = static_cast<u64>(target / m) * m + 1;
  for (u64 step = 0; step < (u64{1} << 40); ++step) {
    u64 up = base + step * m;
    if (is_prime(up) && !taken(up)) {
      // check the symmetric candidate below as well, keep the closer one
      if (step > 0 && base > step * m) {
        u64 dn = base - step * m;
        if (is_prime(dn) && !taken(dn) && (target - dn) < (up - target)) return dn;
      }
      return up;
    }
    if (base > (step + 1) * m) {
      u64 dn = base - (step + 1) * m;
      if (is_prime(dn) && !taken(dn)) return dn;
    }
  }
  throw std::runtime_error("no NTT prime found");
}

/// Largest prime below 2^bits that is 1 (mod m) and not in `used`.
inline u64 ntt_prime_below(int bits, u64 m, const std::vector<u64>& used) {
  u64 p = ((u64{1} << bits) / m) * m + 1;
  if (p >= (u64{1} << bits)) p -= m;
  for (; p > m; p -= m) {
    if (!is_prime(p)) continue;
    bool dup = false;
    for (u64 u : used) dup |= (u == p);
    if (!dup) return p;
  }
  throw std::runtime_error("no NTT prime found");
}

/// Smallest generator-derived primitive m-th root of unity mod q (m a power of two).
inline u64 primitive_root_of_unity(u64 q, u64 m) {
  Modulus mod(q);
  for (u64 g = 2; g < q; ++g) {
    u64 w = mod.pow(g, (q - 1) / m);
    if (mod.pow(w, m / 2) == q - 1) {
      // pick the minimal primitive root among the odd powers, for a canonical choice
      u64 best = w;
      u64 w2 = mod.mul(w, w);
      u64 cur = w;
      for (u64 i = 1; i < m; i += 2) {
        if (cur < best) best = cur;
        cur = mod.mul(cur, w2);
      }
      return best;
    }
  }
  throw std::runtime_error("no root of unity");
}

}  // namespace ensi::he
