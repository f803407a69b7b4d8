#pragma once

// Shared backends and helpers for the unit tests.

#include <memory>
#include <vector>

#include "ensi/ensi.hpp"

namespace fx {

using ensi::Matrix;
using ensi::he::CkksBackend;
using ensi::he::ClearBackend;
using ensi::he::HeParams;

/// N'=2^12, L=12, K=2. Keys are generated once per test binary.
inline const CkksBackend& ckks() {
  static const CkksBackend b = CkksBackend::keygen(HeParams::make(1u << 12, 12, 2, 40, 7));
  return b;
}

/// Deep chain for polynomial and block tests: N'=2^11, L=24, K=2.
inline const CkksBackend& ckks_deep() {
  static const CkksBackend b = CkksBackend::keygen(HeParams::make(1u << 11, 24, 2, 40, 11));
  return b;
}

inline const ClearBackend& clear() {
  static const ClearBackend b(HeParams::make(1u << 12, 12, 2, 40, 7));
  return b;
}

inline const ClearBackend& clear_deep() {
  static const ClearBackend b(HeParams::make(1u << 11, 60, 2, 40, 11));
  return b;
}

/// Fresh copy with private counters, so counter assertions see only this test.
template <class B>
B isolated(const B& b) {
  B c = b;
  c.share_counters(std::make_shared<ensi::CounterSet>());
  return c;
}

inline std::vector<double> random_vec(ensi::Xoshiro256& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

inline double max_err(const std::vector<double>& a, const std::vector<double>& b, std::size_t n) {
  double m = 0;
  for (std::size_t i = 0; i < n; ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace fx
