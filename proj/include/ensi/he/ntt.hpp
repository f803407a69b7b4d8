#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "ensi/he/modarith.hpp"

namespace ensi::he {

inline std::uint32_t bit_reverse(std::uint32_t x, int bits) {
  std::uint32_t r = 0;
  for (int i = 0; i < bits; ++i) {
    r = (r << 1) | (x & 1);
    x >>= 1;
  }
  return r;
}

/// Negacyclic NTT over Z_q[X]/(X^n + 1). Output index i holds a(psi^(2*brv(i)+1)).
class NttTables {
 public:
  NttTables() = default;
  NttTables(std::size_t n, const Modulus& q) : n_(n), q_(q) {
    log_n_ = 0;
    while ((std::size_t{1} << log_n_) < n) ++log_n_;
    psi_ = primitive_root_of_unity(q.value(), 2 * n);
    const u64 psi_inv = q.inv(psi_);
    fwd_.resize(n);
    fwd_shoup_.resize(n);
    inv_.resize(n);
    inv_shoup_.resize(n);
    u64 p = 1, pi = 1;
    std::vector<u64> pw(n), pwi(n);
    for (std::size_t i = 0; i < n; ++i) {
      pw[i] = p;
      pwi[i] = pi;
      p = q.mul(p, psi_);
      pi = q.mul(pi, psi_inv);
    }
    for (std::size_t i = 0; i < n; ++i) {
      auto r = bit_reverse(static_cast<std::uint32_t>(i), log_n_);
      fwd_[i] = pw[r];
      inv_[i] = pwi[r];
      fwd_shoup_[i] = q.shoup(fwd_[i]);
      inv_shoup_[i] = q.shoup(inv_[i]);
    }
    n_inv_ = q.inv(n % q.value());
    n_inv_shoup_ = q.shoup(n_inv_);
  }

  std::size_t size() const noexcept { return n_; }
  const Modulus& modulus() const noexcept { return q_; }
  u64 psi() const noexcept { return psi_; }

  void forward(u64* a) const noexcept {
    const u64 q = q_.value();
    const u64 two_q = 2 * q;
    std::size_t t = n_;
    for (std::size_t m = 1; m < n_; m <<= 1) {
      t >>= 1;
      for (std::size_t i = 0; i < m; ++i) {
        const u64 w = fwd_[m + i];
        const u64 wp = fwd_shoup_[m + i];
        u64* x = a + 2 * i * t;
        u64* y = x + t;
        for (std::size_t j = 0; j < t; ++j) {
          u64 u = x[j];
          if (u >= two_q) u -= two_q;
          u64 v = lazy_mul(y[j], w, wp, q);
          x[j] = u + v;
          y[j] = u - v + two_q;
        }
      }
    }
    for (std::size_t i = 0; i < n_; ++i) {
      u64 v = a[i];
      if (v >= two_q) v -= two_q;
      if (v >= q) v -= q;
      a[i] = v;
    }
  }

  void inverse(u64* a) const noexcept {
    const u64 q = q_.value();
    const u64 two_q = 2 * q;
    std::size_t t = 1;
    for (std::size_t m = n_; m > 1; m >>= 1) {
      const std::size_t h = m >> 1;
      std::size_t j1 = 0;
      for (std::size_t i = 0; i < h; ++i) {
        const u64 w = inv_[h + i];
        const u64 wp = inv_shoup_[h + i];
        u64* x = a + j1;
        u64* y = x + t;
        for (std::size_t j = 0; j < t; ++j) {
          u64 u = x[j];
          u64 v = y[j];
          u64 s = u + v;
          if (s >= two_q) s -= two_q;
          x[j] = s;
          y[j] = lazy_mul(u - v + two_q, w, wp, q);
        }
        j1 += 2 * t;
      }
      t <<= 1;
    }
    for (std::size_t i = 0; i < n_; ++i) {
      u64 v = lazy_mul(a[i], n_inv_, n_inv_shoup_, q);
      a[i] = v >= q ? v - q : v;
    }
  }

 private:
  static u64 lazy_mul(u64 a, u64 w, u64 wp, u64 q) noexcept {
    u64 hq = static_cast<u64>((u128{a} * wp) >> 64);
    return a * w - hq * q;
  }

  std::size_t n_ = 0;
  int log_n_ = 0;
  Modulus q_;
  u64 psi_ = 0;
  std::vector<u64> fwd_, fwd_shoup_, inv_, inv_shoup_;
  u64 n_inv_ = 0, n_inv_shoup_ = 0;
};

}  // namespace ensi::he
