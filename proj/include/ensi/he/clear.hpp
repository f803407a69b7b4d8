#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ensi/core/bytes.hpp"
#include "ensi/core/rng.hpp"
#include "ensi/he/common.hpp"

namespace ensi::he {

/// Exact reference backend: "ciphertexts" are plain slot vectors with the
/// same level, rotation and counting rules as the CKKS backend.
class ClearBackend : public BackendBase {
 public:
  static constexpr std::uint8_t kPayloadTag = 0;

  struct Ciphertext {
    std::vector<double> slots;
    CtInfo info;
    int level() const noexcept { return info.level; }
  };

  explicit ClearBackend(HeParams p) : BackendBase(std::move(p)) {
    params().validate(false);
    key_id_ = mix64(params().seed, 0xc1ea7ull ^ params().ring_degree);
  }

  static ClearBackend keygen(const HeParams& p) { return ClearBackend(p); }

  std::uint64_t key_id() const noexcept { return key_id_; }
  static constexpr const char* name() { return "clear"; }

  Plaintext encode(std::span<const double> v, int level = -1) const {
    if (v.size() > slot_count())
      throw DimensionMismatch("encode: " + std::to_string(v.size()) + " values exceed " +
                              std::to_string(slot_count()) + " slots");
    bump(Op::encode);
    Plaintext pt;
    pt.slots.assign(slot_count(), 0.0);
    std::copy(v.begin(), v.end(), pt.slots.begin());
    pt.level = level < 0 ? max_level() : level;
    pt.scale = params().initial_scale();
    return pt;
  }
  std::vector<double> decode(const Plaintext& pt) const { return pt.slots; }

  Ciphertext encrypt(const Plaintext& pt) const {
    if (pt.level < 0) throw DepthExceeded("", 0, pt.level);
    if (pt.level > max_level()) throw InvalidParams("plaintext level above L");
    bump(Op::encrypt);
    Ciphertext c;
    c.slots = pt.slots;
    c.slots.resize(slot_count(), 0.0);
    c.info = fresh_info(pt.level);
    return c;
  }
  Ciphertext encrypt(std::span<const double> v, int level = -1) const { return encrypt(encode(v, level)); }

  std::vector<double> decrypt(const Ciphertext& c) const {
    if (c.info.key_id != key_id_) throw KeyMismatch("ciphertext was encrypted under a different key");
    return c.slots;
  }

  Ciphertext add(const Ciphertext& a, const Ciphertext& b) const { return binary(a, b, Op::add, +1); }
  Ciphertext sub(const Ciphertext& a, const Ciphertext& b) const { return binary(a, b, Op::sub, -1); }

  Ciphertext negate(const Ciphertext& a) const {
    bump(Op::sub, a.info);
    Ciphertext r = a;
    for (auto& x : r.slots) x = -x;
    return r;
  }

  Ciphertext add_plain(const Ciphertext& a, std::span<const double> v) const {
    check_len(v);
    bump(Op::add, a.info);
    Ciphertext r = a;
    for (std::size_t i = 0; i < v.size(); ++i) r.slots[i] += v[i];
    return r;
  }
  Ciphertext add_plain(const Ciphertext& a, const Plaintext& p) const { return add_plain(a, p.slots); }

  Ciphertext add_scalar(const Ciphertext& a, double c) const {
    bump(Op::add, a.info);
    Ciphertext r = a;
    for (auto& x : r.slots) x += c;
    return r;
  }

  Ciphertext mult(const Ciphertext& a, const Ciphertext& b) const {
    check_slots(a.info, b.info);
    require_level(a.info, 1);
    require_level(b.info, 1);
    bump(Op::mult, a.info);
    Ciphertext r;
    r.info = merged(a.info, b.info, 1);
    r.slots.resize(slot_count());
    for (std::size_t i = 0; i < r.slots.size(); ++i) r.slots[i] = a.slots[i] * b.slots[i];
    return r;
  }

  Ciphertext mult_plain(const Ciphertext& a, std::span<const double> v) const {
    check_len(v);
    require_level(a.info, 1);
    bump(Op::pmult, a.info);
    Ciphertext r = a;
    for (std::size_t i = 0; i < r.slots.size(); ++i) r.slots[i] *= i < v.size() ? v[i] : 0.0;
    consume(r.info);
    return r;
  }
  Ciphertext mult_plain(const Ciphertext& a, const Plaintext& p) const { return mult_plain(a, p.slots); }

  Ciphertext mult_scalar(const Ciphertext& a, double c) const {
    require_level(a.info, 1);
    bump(Op::pmult, a.info);
    Ciphertext r = a;
    for (auto& x : r.slots) x *= c;
    consume(r.info);
    return r;
  }

  /// sum_i a_i * b_i with one (lazy) relinearisation; counts n mults.
  Ciphertext dot(std::span<const Ciphertext* const> a, std::span<const Ciphertext* const> b) const {
    if (a.size() != b.size() || a.empty()) throw DimensionMismatch("dot: operand count mismatch");
    Ciphertext acc;
    for (std::size_t i = 0; i < a.size(); ++i) {
      require_level(a[i]->info, 1);
      require_level(b[i]->info, 1);
      CtInfo info = merged(a[i]->info, b[i]->info, 1);
      if (i == 0) {
        acc.info = info;
        acc.slots.assign(slot_count(), 0.0);
      } else {
        acc.info = merged(acc.info, info, 0);
        acc.info.noise_bits = std::max(acc.info.noise_bits, info.noise_bits);
      }
      for (std::size_t k = 0; k < acc.slots.size(); ++k) acc.slots[k] += a[i]->slots[k] * b[i]->slots[k];
    }
    bump(Op::mult, a[0]->info, a.size());
    if (a.size() > 1) bump(Op::add, a[0]->info, a.size() - 1);
    return acc;
  }

  Ciphertext rotate(const Ciphertext& a, long k) const {
    auto steps = rotation_steps(k, slot_count());
    Ciphertext r = a;
    if (steps.empty()) return r;
    const long n = slot_count();
    long shift = ((k % n) + n) % n;
    for (long i = 0; i < n; ++i) r.slots[i] = a.slots[(i + shift) % n];
    bump(Op::rot, a.info, steps.size());
    return r;
  }

  Ciphertext refresh(const Ciphertext& a) const {
    check_refresh_allowed(a.info);
    bump(Op::refresh, a.info);
    Ciphertext r = a;
    r.info.level = refreshed_level();
    r.info.noise_bits = 0;
    return r;
  }

  /// Discards levels without touching values; free.
  Ciphertext drop_to(const Ciphertext& a, int level) const {
    if (level > a.info.level) throw InvalidParams("drop_to cannot raise the level");
    Ciphertext r = a;
    r.info.path_depth += a.info.level - level;
    r.info.level = level;
    return r;
  }

  Ciphertext zero_like(const Ciphertext& a) const {
    Ciphertext r = a;
    std::fill(r.slots.begin(), r.slots.end(), 0.0);
    return r;
  }

  void write_payload(ByteWriter& w, const Ciphertext& c) const {
    w.u8(kPayloadTag);
    w.u64(c.info.key_id);
    w.u32(static_cast<std::uint32_t>(c.slots.size()));
    for (double x : c.slots) w.f64(x);
  }

  Ciphertext read_payload(ByteReader& r, const CtInfo& header) const {
    auto at = r.offset();
    if (r.u8() != kPayloadTag) throw FormatError("payload is not a clear-backend ciphertext", at);
    Ciphertext c;
    c.info = header;
    c.info.key_id = r.u64();
    at = r.offset();
    auto n = r.u32();
    if (n != slot_count()) throw FormatError("slot count does not match parameters", at);
    c.slots.resize(n);
    for (auto& x : c.slots) x = r.f64();
    return c;
  }

 private:
  CtInfo fresh_info(int level) const {
    CtInfo i;
    i.level = level;
    i.scale_bits = params().scale_bits;
    i.slot_count = slot_count();
    i.key_id = key_id_;
    return i;
  }

  static void consume(CtInfo& i) {
    i.level -= 1;
    i.path_depth += 1;
    i.noise_bits += 1;
  }

  void check_len(std::span<const double> v) const {
    if (v.size() > slot_count()) throw DimensionMismatch("plaintext longer than slot count");
  }

  Ciphertext binary(const Ciphertext& a, const Ciphertext& b, Op op, int sign) const {
    check_slots(a.info, b.info);
    bump(op, a.info);
    Ciphertext r;
    r.info = merged(a.info, b.info, 0);
    r.slots.resize(slot_count());
    for (std::size_t i = 0; i < r.slots.size(); ++i) r.slots[i] = a.slots[i] + sign * b.slots[i];
    return r;
  }

  std::uint64_t key_id_;
};

}  // namespace ensi::he
