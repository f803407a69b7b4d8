#pragma once

#include <concepts>
#include <cstdint>
#include <span>
#include <vector>

#include "ensi/he/ckks.hpp"
#include "ensi/he/clear.hpp"
#include "ensi/he/common.hpp"

namespace ensi::he {

/// What kernels need from a backend. Both ClearBackend and CkksBackend model it.
template <class B>
concept Backend = requires(const B& b, const typename B::Ciphertext& c, std::span<const double> v,
                           std::span<const typename B::Ciphertext* const> cs, ByteWriter& w, ByteReader& r,
                           const CtInfo& info) {
  typename B::Ciphertext;
  { c.info } -> std::convertible_to<CtInfo>;
  { c.level() } -> std::convertible_to<int>;
  { b.params() } -> std::convertible_to<HeParams>;
  { b.slot_count() } -> std::convertible_to<std::uint32_t>;
  { b.key_id() } -> std::convertible_to<std::uint64_t>;
  { b.encode(v, 0) } -> std::same_as<Plaintext>;
  { b.encrypt(v, 0) } -> std::same_as<typename B::Ciphertext>;
  { b.decrypt(c) } -> std::same_as<std::vector<double>>;
  { b.add(c, c) } -> std::same_as<typename B::Ciphertext>;
  { b.sub(c, c) } -> std::same_as<typename B::Ciphertext>;
  { b.negate(c) } -> std::same_as<typename B::Ciphertext>;
  { b.add_plain(c, v) } -> std::same_as<typename B::Ciphertext>;
  { b.add_scalar(c, 1.0) } -> std::same_as<typename B::Ciphertext>;
  { b.mult(c, c) } -> std::same_as<typename B::Ciphertext>;
  { b.mult_plain(c, v) } -> std::same_as<typename B::Ciphertext>;
  { b.mult_scalar(c, 1.0) } -> std::same_as<typename B::Ciphertext>;
  { b.dot(cs, cs) } -> std::same_as<typename B::Ciphertext>;
  { b.rotate(c, 1L) } -> std::same_as<typename B::Ciphertext>;
  { b.refresh(c) } -> std::same_as<typename B::Ciphertext>;
  { b.drop_to(c, 0) } -> std::same_as<typename B::Ciphertext>;
  { b.zero_like(c) } -> std::same_as<typename B::Ciphertext>;
  { b.counters() } -> std::same_as<CounterSet&>;
  b.write_payload(w, c);
  { b.read_payload(r, info) } -> std::same_as<typename B::Ciphertext>;
};

static_assert(Backend<ClearBackend>);
static_assert(Backend<CkksBackend>);

}  // namespace ensi::he
