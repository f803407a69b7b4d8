#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ensi/core/error.hpp"
#include "ensi/he/modarith.hpp"

namespace ensi::he {

/// Ring, level and modulus parameters shared by both backends.
/// The clear backend only looks at ring_degree, max_level and refresh_cost.
struct HeParams {
  std::uint32_t ring_degree = 1u << 12;  // N'
  int max_level = 12;                    // L
  int refresh_cost = 2;                  // K
  int scale_bits = 40;                   // log2 of the initial scale
  int base_bits = 60;                    // bit size of q0
  int digit_size = 0;                    // primes per key-switching digit, 0 = auto
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> modulus_chain;  // q0..qL
  std::vector<std::uint64_t> special_primes;
  std::string security_note = "toy parameters, NOT secure";

  std::uint32_t slot_count() const noexcept { return ring_degree / 2; }
  int refreshed_level() const noexcept { return max_level - refresh_cost; }
  double initial_scale() const noexcept { return std::ldexp(1.0, scale_bits); }

  int resolved_digit_size() const noexcept {
    if (digit_size > 0) return digit_size;
    const int primes = max_level + 1;
    const int dnum = primes < 4 ? primes : 4;
    return (primes + dnum - 1) / dnum;
  }
  int digit_count() const noexcept {
    const int a = resolved_digit_size();
    return (max_level + 1 + a - 1) / a;
  }

  /// Checks the invariants; `need_chain` additionally requires a valid prime chain.
  void validate(bool need_chain = false) const {
    const auto n = ring_degree;
    if (n < 4 || (n & (n - 1)) != 0) throw InvalidParams("ring degree must be a power of two >= 4");
    if (max_level < 1) throw InvalidParams("max_level must be positive");
    if (refresh_cost <= 0 || refresh_cost >= max_level)
      throw InvalidParams("refresh cost K must satisfy 0 < K < L (got K=" + std::to_string(refresh_cost) +
                          ", L=" + std::to_string(max_level) + ")");
    if (scale_bits < 10 || scale_bits > 55) throw InvalidParams("scale_bits out of range");
    if (base_bits < scale_bits + 10 || base_bits > 60) throw InvalidParams("base_bits out of range");
    if (!need_chain && modulus_chain.empty()) return;
    if (modulus_chain.size() != static_cast<std::size_t>(max_level) + 1)
      throw InvalidParams("modulus chain must hold L+1 primes");
    std::vector<std::uint64_t> all = modulus_chain;
    all.insert(all.end(), special_primes.begin(), special_primes.end());
    if (special_primes.empty()) throw InvalidParams("missing special primes");
    for (std::size_t i = 0; i < all.size(); ++i) {
      if (!is_prime(all[i])) throw InvalidParams("modulus chain entry is not prime");
      if (all[i] % (2ull * n) != 1) throw InvalidParams("modulus chain prime is not 1 mod 2N'");
      if (all[i] >= (1ull << 61)) throw InvalidParams("modulus chain prime too large");
      for (std::size_t j = 0; j < i; ++j)
        if (all[i] == all[j]) throw InvalidParams("modulus chain primes must be distinct");
    }
  }

  /// Fills modulus_chain and special_primes deterministically from the sizes.
  /// Primes are picked top-down so that every level's exact scale stays at
  /// about 2^scale_bits after rescaling.
  void generate_chain() {
    validate(false);
    const std::uint64_t m = 2ull * ring_degree;
    std::vector<std::uint64_t> used;
    const std::uint64_t q0 = ntt_prime_below(base_bits, m, used);
    used.push_back(q0);
    std::vector<std::uint64_t> chain(max_level + 1);
    chain[0] = q0;
    long double delta = std::ldexp(1.0L, scale_bits);
    const long double target_scale = delta;
    for (int l = max_level; l >= 1; --l) {
      long double want = delta * delta / target_scale;
      chain[l] = nearest_ntt_prime(want, m, used);
      used.push_back(chain[l]);
      delta = delta * delta / static_cast<long double>(chain[l]);
    }
    modulus_chain = chain;

    double max_digit_bits = 0;
    const int a = resolved_digit_size();
    for (int g = 0; g * a <= max_level; ++g) {
      double bits = 0;
      for (int t = g * a; t < std::min((g + 1) * a, max_level + 1); ++t) bits += std::log2(double(chain[t]));
      max_digit_bits = std::max(max_digit_bits, bits);
    }
    const int k = static_cast<int>(std::ceil((max_digit_bits + 30.0) / 59.0));
    special_primes.clear();
    for (int j = 0; j < k; ++j) {
      auto p = ntt_prime_below(60, m, used);
      used.push_back(p);
      special_primes.push_back(p);
    }
  }

  static HeParams make(std::uint32_t ring_degree, int max_level, int refresh_cost, int scale_bits = 40,
                       std::uint64_t seed = 0) {
    HeParams p;
    p.ring_degree = ring_degree;
    p.max_level = max_level;
    p.refresh_cost = refresh_cost;
    p.scale_bits = scale_bits;
    p.seed = seed;
    p.validate(false);
    return p;
  }
};

}  // namespace ensi::he
