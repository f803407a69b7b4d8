#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ensi/core/error.hpp"
#include "ensi/he/params.hpp"
#include "ensi/runtime/counters.hpp"

namespace ensi::he {

/// Metadata carried by every ciphertext regardless of backend.
struct CtInfo {
  int level = 0;
  int scale_bits = 0;  // nominal; the exact scale is a function of the level
  std::uint32_t slot_count = 0;
  std::string tag;     // counter_tag
  int path_depth = 0;  // multiplicative levels consumed along the deepest path (not serialized)
  double noise_bits = 0;  // rough diagnostic estimate only
  std::uint64_t key_id = 0;
};

/// Slot values plus the level/scale they are meant to be combined at.
struct Plaintext {
  std::vector<double> slots;
  int level = 0;
  double scale = 1.0;
};

/// Signed power-of-two decomposition (non-adjacent form) of a rotation amount,
/// normalised to (-N/2, N/2]. Each entry is one keyed rotation.
inline std::vector<int> rotation_steps(long k, std::uint32_t slots) {
  const long n = static_cast<long>(slots);
  k %= n;
  if (k < 0) k += n;
  if (k > n / 2) k -= n;
  std::vector<int> steps;
  long v = k;
  int bit = 0;
  while (v != 0) {
    if (v & 1) {
      long z = 2 - (((v % 4) + 4) % 4);  // +1 or -1
      steps.push_back(static_cast<int>(z * (1L << bit)));
      v -= z;
    }
    v /= 2;
    ++bit;
  }
  return steps;
}

/// Power-of-two rotation steps that get keys: +-2^k for 2^k < N.
inline std::vector<int> default_rotation_keys(std::uint32_t slots) {
  std::vector<int> out;
  for (std::uint32_t s = 1; s < slots; s <<= 1) {
    out.push_back(static_cast<int>(s));
    out.push_back(-static_cast<int>(s));
  }
  return out;
}

class BackendBase;

/// While alive, allows refresh on a backend running in strict mode.
class RefreshPermit {
 public:
  explicit RefreshPermit(const BackendBase& b);
  ~RefreshPermit();
  RefreshPermit(const RefreshPermit&) = delete;
  RefreshPermit& operator=(const RefreshPermit&) = delete;

 private:
  const BackendBase& b_;
};

/// Shared bookkeeping: params, counters, refresh policy.
class BackendBase {
 public:
  explicit BackendBase(HeParams p) : params_(std::move(p)), counters_(std::make_shared<CounterSet>()) {}

  const HeParams& params() const noexcept { return params_; }
  std::uint32_t slot_count() const noexcept { return params_.slot_count(); }
  int max_level() const noexcept { return params_.max_level; }
  int refreshed_level() const noexcept { return params_.refreshed_level(); }

  CounterSet& counters() const noexcept { return *counters_; }
  std::shared_ptr<CounterSet> counters_ptr() const noexcept { return counters_; }
  void share_counters(std::shared_ptr<CounterSet> c) { counters_ = std::move(c); }

  /// Strict mode: refresh raises unless a RefreshPermit is active.
  void set_strict_refresh(bool on) noexcept { strict_ = on; }
  bool strict_refresh() const noexcept { return strict_; }

 protected:
  void bump(Op op, const CtInfo& c, std::uint64_t n = 1) const { counters_->bump(op, c.tag, n); }
  void bump(Op op, std::uint64_t n = 1) const { counters_->bump(op, {}, n); }

  void check_refresh_allowed(const CtInfo& c) const {
    if (strict_ && permits_->load() == 0)
      throw RefreshDisabled("refresh disabled in strict mode" +
                            (c.tag.empty() ? std::string() : " (ciphertext '" + c.tag + "')"));
  }

  static void require_level(const CtInfo& c, int need) {
    if (c.level < need) throw DepthExceeded(c.tag, need, c.level);
  }

  void check_slots(const CtInfo& a, const CtInfo& b) const {
    if (a.slot_count != b.slot_count) throw DimensionMismatch("slot count mismatch");
  }

  /// Result metadata for a binary op that consumes `consumed` levels after
  /// aligning both inputs to the lower level.
  static CtInfo merged(const CtInfo& a, const CtInfo& b, int consumed) {
    CtInfo r = a;
    r.level = std::min(a.level, b.level) - consumed;
    r.path_depth = std::max(a.path_depth, b.path_depth) + consumed;
    if (r.tag.empty()) r.tag = b.tag;
    r.noise_bits = std::max(a.noise_bits, b.noise_bits) + (consumed ? 1.0 : 0.5);
    return r;
  }

 private:
  friend class RefreshPermit;
  HeParams params_;
  std::shared_ptr<CounterSet> counters_;
  bool strict_ = false;
  std::shared_ptr<std::atomic<int>> permits_ = std::make_shared<std::atomic<int>>(0);
};

inline RefreshPermit::RefreshPermit(const BackendBase& b) : b_(b) { b_.permits_->fetch_add(1); }
inline RefreshPermit::~RefreshPermit() { b_.permits_->fetch_sub(1); }

}  // namespace ensi::he
