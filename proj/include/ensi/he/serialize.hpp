#pragma once

#include <cstdint>
#include <vector>

#include "ensi/core/bytes.hpp"
#include "ensi/he/backend.hpp"

namespace ensi::he {

inline constexpr std::uint8_t kCiphertextVersion = 1;

// "ENSC" | version u8 | N' u32 | level u16 | scale exponent i16 | payload length u64 | payload

template <Backend B>
void write_ciphertext(ByteWriter& w, const B& b, const typename B::Ciphertext& c) {
  w.magic("ENSC");
  w.u8(kCiphertextVersion);
  w.u32(b.params().ring_degree);
  w.u16(static_cast<std::uint16_t>(c.info.level));
  w.i16(static_cast<std::int16_t>(c.info.scale_bits));
  ByteWriter body;
  b.write_payload(body, c);
  w.u64(body.size());
  w.bytes(body.buffer());
}

template <Backend B>
typename B::Ciphertext read_ciphertext(ByteReader& r, const B& b) {
  r.expect_magic("ENSC");
  auto at = r.offset();
  if (auto v = r.u8(); v != kCiphertextVersion)
    throw FormatError("unsupported ciphertext version " + std::to_string(v), at);
  at = r.offset();
  if (r.u32() != b.params().ring_degree) throw FormatError("ring degree does not match parameters", at);
  CtInfo info;
  at = r.offset();
  info.level = r.u16();
  if (info.level > b.params().max_level) throw FormatError("level above L", at);
  info.scale_bits = r.i16();
  info.slot_count = b.slot_count();
  const auto len = r.u64();
  at = r.offset();
  if (len > r.remaining()) throw FormatError("payload length exceeds input", at);
  auto body = r.sub(static_cast<std::size_t>(len));
  auto c = b.read_payload(body, info);
  if (!body.done()) throw FormatError("trailing bytes in ciphertext payload", body.offset());
  return c;
}

template <Backend B>
std::vector<std::uint8_t> ciphertext_bytes(const B& b, const typename B::Ciphertext& c) {
  ByteWriter w;
  write_ciphertext(w, b, c);
  return w.take();
}

template <Backend B>
typename B::Ciphertext ciphertext_from_bytes(const B& b, std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  auto c = read_ciphertext(r, b);
  if (!r.done()) throw FormatError("trailing bytes after ciphertext", r.offset());
  return c;
}

}  // namespace ensi::he
