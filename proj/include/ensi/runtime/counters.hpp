#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <map>
#include <mutex>
#include <string>
#include <string_view>

namespace ensi {

enum class Op : std::uint8_t { add, sub, mult, pmult, rot, refresh, encode, encrypt };
inline constexpr std::size_t kOpCount = 8;

inline constexpr std::array<std::string_view, kOpCount> kOpNames = {
    "add", "sub", "mult", "pmult", "rot", "refresh", "encode", "encrypt"};

/// Plain tally of backend operations.
struct OpCounters {
  std::uint64_t add = 0, sub = 0, mult = 0, pmult = 0, rot = 0, refresh = 0, encode = 0, encrypt = 0;

  std::uint64_t& at(Op op) {
    switch (op) {
      case Op::add: return add;
      case Op::sub: return sub;
      case Op::mult: return mult;
      case Op::pmult: return pmult;
      case Op::rot: return rot;
      case Op::refresh: return refresh;
      case Op::encode: return encode;
      case Op::encrypt: return encrypt;
    }
    return add;
  }
  std::uint64_t at(Op op) const { return const_cast<OpCounters*>(this)->at(op); }

  OpCounters& operator+=(const OpCounters& o) {
    for (std::size_t i = 0; i < kOpCount; ++i) at(Op(i)) += o.at(Op(i));
    return *this;
  }
  friend OpCounters operator+(OpCounters a, const OpCounters& b) { return a += b; }
  friend bool operator==(const OpCounters& a, const OpCounters& b) {
    for (std::size_t i = 0; i < kOpCount; ++i)
      if (a.at(Op(i)) != b.at(Op(i))) return false;
    return true;
  }
  bool empty() const { return *this == OpCounters{}; }
};

/// Counter delta between two snapshots (after - before).
inline OpCounters diff(const OpCounters& before, const OpCounters& after) {
  OpCounters d;
  for (std::size_t i = 0; i < kOpCount; ++i) d.at(Op(i)) = after.at(Op(i)) - before.at(Op(i));
  return d;
}

/// Live counters shared by a backend instance. Totals are atomic; the
/// per-tag breakdown sits behind a mutex and is only touched for tagged ops.
class CounterSet {
 public:
  void bump(Op op, std::string_view tag = {}, std::uint64_t n = 1) {
    totals_[static_cast<std::size_t>(op)].fetch_add(n, std::memory_order_relaxed);
    if (!tag.empty()) {
      std::lock_guard lock(mu_);
      auto it = by_tag_.find(tag);
      if (it == by_tag_.end()) it = by_tag_.emplace(std::string(tag), OpCounters{}).first;
      it->second.at(op) += n;
    }
  }

  OpCounters snapshot() const {
    OpCounters c;
    for (std::size_t i = 0; i < kOpCount; ++i) c.at(Op(i)) = totals_[i].load(std::memory_order_relaxed);
    return c;
  }

  std::map<std::string, OpCounters, std::less<>> by_tag() const {
    std::lock_guard lock(mu_);
    return by_tag_;
  }

  void reset() {
    for (auto& t : totals_) t.store(0);
    std::lock_guard lock(mu_);
    by_tag_.clear();
  }

  /// Folds another counter set in (used when joining worker pipelines).
  void merge(const CounterSet& other) {
    auto snap = other.snapshot();
    for (std::size_t i = 0; i < kOpCount; ++i) totals_[i].fetch_add(snap.at(Op(i)));
    auto tags = other.by_tag();
    std::lock_guard lock(mu_);
    for (auto& [k, v] : tags) by_tag_[k] += v;
  }

 private:
  std::array<std::atomic<std::uint64_t>, kOpCount> totals_{};
  mutable std::mutex mu_;
  std::map<std::string, OpCounters, std::less<>> by_tag_;
};

}  // namespace ensi
