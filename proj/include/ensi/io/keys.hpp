#pragma once

// Key files.
//   secret key   "ENSK" | version u8 | backend u8 | params | key_id u64 | n x i8
//   eval keys    "ENSE" | version u8 | backend u8 | params | key_id u64 |
//                pk_b | pk_a | relin b polys | galois count u32 | (step i32, b polys)*
// The uniform `a` halves of switching keys are re-expanded from the seed in
// params, so only the `b` halves are stored. The clear backend writes the
// headers only.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>

#include "ensi/core/bytes.hpp"
#include "ensi/he/backend.hpp"

namespace ensi::io {

inline constexpr std::uint8_t kKeyVersion = 1;

enum class BackendKind : std::uint8_t { clear = 0, ckks = 1 };

inline void write_params(ByteWriter& w, const he::HeParams& p) {
  w.u32(p.ring_degree);
  w.u16(static_cast<std::uint16_t>(p.max_level));
  w.u16(static_cast<std::uint16_t>(p.refresh_cost));
  w.u16(static_cast<std::uint16_t>(p.scale_bits));
  w.u16(static_cast<std::uint16_t>(p.base_bits));
  w.u16(static_cast<std::uint16_t>(p.digit_size));
  w.u64(p.seed);
  w.u16(static_cast<std::uint16_t>(p.modulus_chain.size()));
  for (auto q : p.modulus_chain) w.u64(q);
  w.u16(static_cast<std::uint16_t>(p.special_primes.size()));
  for (auto q : p.special_primes) w.u64(q);
}

inline he::HeParams read_params(ByteReader& r) {
  const auto at = r.offset();
  he::HeParams p;
  p.ring_degree = r.u32();
  p.max_level = r.u16();
  p.refresh_cost = r.u16();
  p.scale_bits = r.u16();
  p.base_bits = r.u16();
  p.digit_size = r.u16();
  p.seed = r.u64();
  p.modulus_chain.resize(r.u16());
  for (auto& q : p.modulus_chain) q = r.u64();
  p.special_primes.resize(r.u16());
  for (auto& q : p.special_primes) q = r.u64();
  try {
    p.validate(!p.modulus_chain.empty());
  } catch (const InvalidParams& e) {
    throw FormatError(std::string("invalid parameters: ") + e.what(), at);
  }
  return p;
}

namespace detail {

inline void write_poly(ByteWriter& w, const he::RnsPoly& p) {
  w.u16(static_cast<std::uint16_t>(p.primes));
  w.raw(p.data.data(), p.data.size() * 8);
}

inline he::RnsPoly read_poly(ByteReader& r, const he::CkksContext& c) {
  auto at = r.offset();
  he::RnsPoly p;
  p.primes = r.u16();
  if (p.primes > c.total_primes()) throw FormatError("polynomial has too many residues", at);
  at = r.offset();
  auto bytes = r.take(std::size_t(p.primes) * c.n() * 8);
  p.data.resize(std::size_t(p.primes) * c.n());
  std::memcpy(p.data.data(), bytes.data(), bytes.size());
  for (int i = 0; i < p.primes; ++i)
    for (std::size_t k = 0; k < c.n(); ++k)
      if (p.data[std::size_t(i) * c.n() + k] >= c.mod(i).value()) throw FormatError("residue out of range", at);
  return p;
}

inline void header(ByteWriter& w, std::string_view magic, BackendKind kind, const he::HeParams& p, std::uint64_t id) {
  w.magic(magic);
  w.u8(kKeyVersion);
  w.u8(static_cast<std::uint8_t>(kind));
  write_params(w, p);
  w.u64(id);
}

struct Header {
  BackendKind kind;
  he::HeParams params;
  std::uint64_t key_id;
};

inline Header read_header(ByteReader& r, std::string_view magic) {
  r.expect_magic(magic);
  auto at = r.offset();
  if (auto v = r.u8(); v != kKeyVersion) throw FormatError("unsupported key file version " + std::to_string(v), at);
  at = r.offset();
  auto k = r.u8();
  if (k > 1) throw FormatError("unknown backend kind", at);
  Header h{static_cast<BackendKind>(k), read_params(r), 0};
  h.key_id = r.u64();
  return h;
}

}  // namespace detail

// ---- clear backend ----

inline std::vector<std::uint8_t> key_bytes(const he::ClearBackend& b, bool secret) {
  ByteWriter w;
  detail::header(w, secret ? "ENSK" : "ENSE", BackendKind::clear, b.params(), b.key_id());
  return w.take();
}

// ---- CKKS backend ----

inline std::vector<std::uint8_t> secret_key_bytes(const he::CkksBackend& b) {
  if (!b.secret_key()) throw MissingKey("backend holds no secret key");
  ByteWriter w;
  detail::header(w, "ENSK", BackendKind::ckks, b.context().params(), b.key_id());
  const auto& s = b.secret_key()->coeffs;
  w.raw(s.data(), s.size());
  return w.take();
}

inline std::vector<std::uint8_t> eval_key_bytes(const he::CkksBackend& b) {
  ByteWriter w;
  const auto& pub = *b.public_keys();
  detail::header(w, "ENSE", BackendKind::ckks, b.context().params(), b.key_id());
  detail::write_poly(w, pub.pk_b);
  detail::write_poly(w, pub.pk_a);
  for (const auto& p : pub.relin.b) detail::write_poly(w, p);
  w.u32(static_cast<std::uint32_t>(pub.galois.size()));
  for (const auto& [step, k] : pub.galois) {
    w.u32(static_cast<std::uint32_t>(static_cast<std::int32_t>(step)));
    for (const auto& p : k.b) detail::write_poly(w, p);
  }
  return w.take();
}

inline std::shared_ptr<he::CkksPublicKeys> read_eval_keys(ByteReader& r, const he::CkksContext& c,
                                                           std::uint64_t key_id) {
  auto pub = std::make_shared<he::CkksPublicKeys>();
  const auto seed = c.params().seed;
  pub->key_id = key_id;
  pub->pk_b = detail::read_poly(r, c);
  pub->pk_a = detail::read_poly(r, c);
  for (int g = 0; g < c.digit_count(); ++g) pub->relin.b.push_back(detail::read_poly(r, c));
  he::CkksBackend::expand_switch_key_a(c, pub->relin, he::CkksBackend::relin_seed(seed));
  const auto count = r.u32();
  for (std::uint32_t k = 0; k < count; ++k) {
    const int step = static_cast<std::int32_t>(r.u32());
    he::SwitchKey sk;
    for (int g = 0; g < c.digit_count(); ++g) sk.b.push_back(detail::read_poly(r, c));
    he::CkksBackend::expand_switch_key_a(c, sk, he::CkksBackend::galois_seed(seed, step));
    pub->galois.emplace(step, std::move(sk));
  }
  const auto at = r.offset();
  if (he::CkksBackend::compute_key_id(c, *pub) != key_id) throw FormatError("key id does not match key data", at);
  return pub;
}

inline std::shared_ptr<he::CkksSecretKey> read_secret(ByteReader& r, const he::CkksContext& c) {
  auto sk = std::make_shared<he::CkksSecretKey>();
  sk->coeffs.resize(c.n());
  for (auto& v : sk->coeffs) {
    const auto at = r.offset();
    const auto x = static_cast<std::int8_t>(r.u8());
    if (x < -1 || x > 1) throw FormatError("secret key coefficient out of range", at);
    v = x;
  }
  sk->ntt = he::CkksBackend::from_small(c, sk->coeffs, c.total_primes());
  return sk;
}

/// Client view: secret + evaluation keys.
inline he::CkksBackend load_ckks_client(std::span<const std::uint8_t> secret, std::span<const std::uint8_t> eval) {
  ByteReader rs(secret), re(eval);
  auto hs = detail::read_header(rs, "ENSK");
  auto he_ = detail::read_header(re, "ENSE");
  if (hs.kind != BackendKind::ckks || he_.kind != BackendKind::ckks) throw Error("not CKKS key files");
  if (hs.key_id != he_.key_id) throw KeyMismatch("secret and evaluation keys belong to different key sets");
  auto ctx = std::make_shared<const he::CkksContext>(he_.params);
  auto pub = read_eval_keys(re, *ctx, he_.key_id);
  auto sk = read_secret(rs, *ctx);
  if (!rs.done()) throw FormatError("trailing bytes in secret key", rs.offset());
  if (!re.done()) throw FormatError("trailing bytes in evaluation keys", re.offset());
  return he::CkksBackend(ctx, pub, sk, sk);
}

/// Server view: evaluation keys, plus the refresh oracle when one is supplied.
/// The resulting backend cannot decrypt.
inline he::CkksBackend load_ckks_server(std::span<const std::uint8_t> eval,
                                        std::span<const std::uint8_t> refresh_oracle = {}) {
  ByteReader re(eval);
  auto h = detail::read_header(re, "ENSE");
  if (h.kind != BackendKind::ckks) throw Error("not a CKKS evaluation key file");
  auto ctx = std::make_shared<const he::CkksContext>(h.params);
  auto pub = read_eval_keys(re, *ctx, h.key_id);
  if (!re.done()) throw FormatError("trailing bytes in evaluation keys", re.offset());
  std::shared_ptr<const he::CkksSecretKey> oracle;
  if (!refresh_oracle.empty()) {
    ByteReader ro(refresh_oracle);
    auto ho = detail::read_header(ro, "ENSK");
    if (ho.key_id != h.key_id) throw KeyMismatch("refresh oracle belongs to a different key set");
    oracle = read_secret(ro, *ctx);
  }
  return he::CkksBackend(ctx, pub, nullptr, oracle);
}

inline he::ClearBackend load_clear(std::span<const std::uint8_t> bytes, std::string_view magic) {
  ByteReader r(bytes);
  auto h = detail::read_header(r, magic);
  if (h.kind != BackendKind::clear) throw Error("not a clear-backend key file");
  he::ClearBackend b(h.params);
  if (b.key_id() != h.key_id) throw FormatError("key id does not match parameters", 0);
  return b;
}

inline BackendKind key_file_kind(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.take(4);
  r.u8();
  auto at = r.offset();
  auto k = r.u8();
  if (k > 1) throw FormatError("unknown backend kind", at);
  return static_cast<BackendKind>(k);
}

}  // namespace ensi::io
