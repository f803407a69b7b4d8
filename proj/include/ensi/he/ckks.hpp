#pragma once

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <complex>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ensi/core/bytes.hpp"
#include "ensi/core/rng.hpp"
#include "ensi/he/common.hpp"
#include "ensi/he/encoder.hpp"
#include "ensi/he/modarith.hpp"
#include "ensi/he/ntt.hpp"

namespace ensi::he {

/// Precomputed tables for one parameter set. Immutable after construction.
class CkksContext {
 public:
  explicit CkksContext(HeParams p) : params_(std::move(p)) {
    if (params_.modulus_chain.empty()) params_.generate_chain();
    params_.validate(true);
    n_ = params_.ring_degree;
    L_ = params_.max_level;
    K_ = static_cast<int>(params_.special_primes.size());
    log_n_ = std::countr_zero(n_);
    for (auto q : params_.modulus_chain) mods_.emplace_back(q);
    for (auto q : params_.special_primes) mods_.emplace_back(q);
    for (auto& m : mods_) ntt_.emplace_back(n_, m);
    encoder_ = SlotEncoder(n_);

    scales_.resize(L_ + 1);
    scales_[L_] = std::ldexp(1.0L, params_.scale_bits);
    for (int l = L_; l >= 1; --l) scales_[l - 1] = scales_[l] * scales_[l] / params_.modulus_chain[l];

    // rescale: q_l^{-1} mod q_i and q_l mod q_i
    rs_inv_.resize(L_ + 1);
    for (int l = 1; l <= L_; ++l) {
      for (int i = 0; i < l; ++i) {
        u64 ql = mods_[l].value() % mods_[i].value();
        u64 inv = mods_[i].inv(ql);
        rs_inv_[l].push_back({inv, mods_[i].shoup(inv)});
      }
    }

    // key-switching digits and base conversion tables
    alpha_ = params_.resolved_digit_size();
    dnum_ = params_.digit_count();
    for (int g = 0; g < dnum_; ++g) {
      int g0 = g * alpha_, g1 = std::min((g + 1) * alpha_, L_ + 1);
      for (int end = g0 + 1; end <= g1; ++end) conv_.emplace(key(g0, end), make_conv(src_range(g0, end)));
    }
    std::vector<int> sp;
    for (int j = 0; j < K_; ++j) sp.push_back(L_ + 1 + j);
    p_conv_ = make_conv(sp);
    p_inv_.resize(L_ + 1);
    p_mod_.resize(L_ + 1);
    for (int i = 0; i <= L_; ++i) {
      u64 pm = 1;
      for (int j : sp) pm = mods_[i].mul(pm, mods_[j].value() % mods_[i].value());
      p_mod_[i] = pm;
      u64 inv = mods_[i].inv(pm);
      p_inv_[i] = {inv, mods_[i].shoup(inv)};
    }
  }

  const HeParams& params() const noexcept { return params_; }
  std::size_t n() const noexcept { return n_; }
  int max_level() const noexcept { return L_; }
  int special_count() const noexcept { return K_; }
  int digit_size() const noexcept { return alpha_; }
  int digit_count() const noexcept { return dnum_; }
  const Modulus& mod(int i) const { return mods_[i]; }
  const NttTables& ntt(int i) const { return ntt_[i]; }
  const SlotEncoder& encoder() const noexcept { return encoder_; }
  long double scale(int level) const { return scales_[level]; }
  int total_primes() const noexcept { return L_ + 1 + K_; }

  /// Global prime index of position e in the extended basis at `level`.
  int ext_prime(int level, int e) const noexcept { return e <= level ? e : L_ + 1 + (e - level - 1); }

  /// NTT-domain index permutation for X -> X^g.
  std::vector<std::uint32_t> galois_permutation(u64 g) const {
    const u64 m = 2 * n_;
    std::vector<std::uint32_t> perm(n_);
    for (std::size_t i = 0; i < n_; ++i) {
      u64 e = 2 * bit_reverse(static_cast<std::uint32_t>(i), log_n_) + 1;
      u64 eg = (e * g) % m;
      perm[i] = bit_reverse(static_cast<std::uint32_t>((eg - 1) / 2), log_n_);
    }
    return perm;
  }

  u64 galois_element(long step) const {
    const long slots = static_cast<long>(n_ / 2);
    long r = ((step % slots) + slots) % slots;
    return powmod_slow(5, static_cast<u64>(r), 2 * n_);
  }

  struct ConvTable {
    std::vector<int> src;                          // global prime indices
    std::vector<std::pair<u64, u64>> inv_hat;      // (Q/q_i)^{-1} mod q_i, shoup
    std::vector<std::vector<u64>> hat;             // hat[t][i] = (Q/q_i) mod prime t
  };

  const ConvTable& digit_conv(int g0, int end) const { return conv_.at(key(g0, end)); }
  const ConvTable& special_conv() const noexcept { return p_conv_; }
  std::pair<u64, u64> p_inv(int i) const { return p_inv_[i]; }
  u64 p_mod(int i) const { return p_mod_[i]; }
  std::pair<u64, u64> rescale_inv(int level, int i) const { return rs_inv_[level][i]; }

 private:
  static std::uint64_t key(int a, int b) { return (std::uint64_t(a) << 32) | std::uint32_t(b); }
  static std::vector<int> src_range(int a, int b) {
    std::vector<int> v;
    for (int i = a; i < b; ++i) v.push_back(i);
    return v;
  }

  ConvTable make_conv(const std::vector<int>& src) const {
    ConvTable t;
    t.src = src;
    for (int i : src) {
      const auto& qi = mods_[i];
      u64 h = 1;
      for (int j : src)
        if (j != i) h = qi.mul(h, mods_[j].value() % qi.value());
      u64 inv = qi.inv(h);
      t.inv_hat.push_back({inv, qi.shoup(inv)});
    }
    t.hat.resize(mods_.size());
    for (std::size_t p = 0; p < mods_.size(); ++p) {
      const auto& mp = mods_[p];
      for (int i : src) {
        u64 h = 1;
        for (int j : src)
          if (j != i) h = mp.mul(h, mods_[j].value() % mp.value());
        t.hat[p].push_back(h);
      }
    }
    return t;
  }

  HeParams params_;
  std::size_t n_ = 0;
  int L_ = 0, K_ = 0, log_n_ = 0, alpha_ = 0, dnum_ = 0;
  std::vector<Modulus> mods_;
  std::vector<NttTables> ntt_;
  SlotEncoder encoder_;
  std::vector<long double> scales_;
  std::vector<std::vector<std::pair<u64, u64>>> rs_inv_;
  std::map<std::uint64_t, ConvTable> conv_;
  ConvTable p_conv_;
  std::vector<std::pair<u64, u64>> p_inv_;
  std::vector<u64> p_mod_;
};

/// Residue-major polynomial storage: `primes` blocks of n words.
struct RnsPoly {
  std::vector<u64> data;
  int primes = 0;
  u64* res(int i, std::size_t n) { return data.data() + std::size_t(i) * n; }
  const u64* res(int i, std::size_t n) const { return data.data() + std::size_t(i) * n; }
};

/// Key switching key: one (b, a) pair per digit over all L+1+K primes.
struct SwitchKey {
  std::vector<RnsPoly> b, a;
};

struct CkksSecretKey {
  std::vector<std::int8_t> coeffs;
  RnsPoly ntt;  // over all primes
};

struct CkksPublicKeys {
  RnsPoly pk_b, pk_a;  // over q0..qL
  SwitchKey relin;
  std::map<int, SwitchKey> galois;  // by rotation step
  std::uint64_t key_id = 0;
};

namespace detail {

inline u64 uniform_mod(Xoshiro256& rng, u64 q) {
  const int bits = 64 - std::countl_zero(q);
  const u64 mask = bits == 64 ? ~u64{0} : ((u64{1} << bits) - 1);
  for (;;) {
    u64 v = rng() & mask;
    if (v < q) return v;
  }
}

/// Centered binomial, eta = 21.
inline std::int64_t cbd(Xoshiro256& rng) {
  u64 r = rng();
  return std::popcount(r & 0x1fffffull) - std::popcount((r >> 21) & 0x1fffffull);
}

}  // namespace detail

/// Leveled CKKS over an RNS modulus chain with hybrid key switching.
/// Ciphertexts are kept in NTT form; at level l they live mod q0..ql and
/// carry the exact scale ctx.scale(l).
class CkksBackend : public BackendBase {
 public:
  static constexpr std::uint8_t kPayloadTag = 1;

  struct Ciphertext {
    std::vector<u64> data;  // c0 residues then c1 residues, (level+1)*n words each
    CtInfo info;
    int level() const noexcept { return info.level; }
  };

  CkksBackend(std::shared_ptr<const CkksContext> ctx, std::shared_ptr<const CkksPublicKeys> pub,
              std::shared_ptr<const CkksSecretKey> secret = nullptr,
              std::shared_ptr<const CkksSecretKey> refresh_oracle = nullptr)
      : BackendBase(ctx->params()),
        ctx_(std::move(ctx)),
        pub_(std::move(pub)),
        sk_(std::move(secret)),
        oracle_(std::move(refresh_oracle)) {}

  /// Deterministic under params.seed. `rotations` defaults to +-2^k, 2^k < N.
  static CkksBackend keygen(const HeParams& p, std::optional<std::vector<int>> rotations = std::nullopt) {
    p.validate(false);
    auto ctx = std::make_shared<const CkksContext>(p);
    const auto& c = *ctx;
    const std::size_t n = c.n();
    const int T = c.total_primes();
    const int L = c.max_level();
    const std::uint64_t seed = c.params().seed;

    auto sk = std::make_shared<CkksSecretKey>();
    {
      Xoshiro256 rng(mix64(seed, 0x5ec7e7));
      sk->coeffs.resize(n);
      for (auto& v : sk->coeffs) v = static_cast<std::int8_t>(static_cast<int>(rng() % 3) - 1);
      sk->ntt = from_small(c, sk->coeffs, T);
    }

    auto pub = std::make_shared<CkksPublicKeys>();
    {
      Xoshiro256 rng(mix64(seed, 0x9b11c));
      pub->pk_a = uniform_poly(c, rng, L + 1);
      auto e = sample_error(c, rng, L + 1);
      pub->pk_b.primes = L + 1;
      pub->pk_b.data.resize(std::size_t(L + 1) * n);
      for (int i = 0; i <= L; ++i) {
        const auto& m = c.mod(i);
        const u64 *a = pub->pk_a.res(i, n), *s = sk->ntt.res(i, n), *ee = e.res(i, n);
        u64* b = pub->pk_b.res(i, n);
        for (std::size_t k = 0; k < n; ++k) b[k] = m.sub(ee[k], m.mul(a[k], s[k]));
      }
    }
    {
      RnsPoly s2 = sk->ntt;
      for (int i = 0; i < T; ++i) {
        const auto& m = c.mod(i);
        u64* x = s2.res(i, n);
        for (std::size_t k = 0; k < n; ++k) x[k] = m.mul(x[k], x[k]);
      }
      pub->relin = make_switch_key(c, *sk, s2, mix64(seed, 0x4e11));
    }
    auto rots = rotations.value_or(default_rotation_keys(p.slot_count()));
    for (int step : rots) {
      auto perm = c.galois_permutation(c.galois_element(step));
      RnsPoly sg = permuted(c, sk->ntt, perm);
      pub->galois.emplace(step, make_switch_key(c, *sk, sg, mix64(seed, 0x6a10 + std::uint64_t(step) * 7919)));
    }
    pub->key_id = compute_key_id(c, *pub);
    return CkksBackend(ctx, pub, sk, sk);
  }

  static constexpr const char* name() { return "ckks"; }

  const CkksContext& context() const noexcept { return *ctx_; }
  std::shared_ptr<const CkksContext> context_ptr() const noexcept { return ctx_; }
  std::shared_ptr<const CkksPublicKeys> public_keys() const noexcept { return pub_; }
  std::shared_ptr<const CkksSecretKey> secret_key() const noexcept { return sk_; }
  std::shared_ptr<const CkksSecretKey> refresh_oracle() const noexcept { return oracle_; }
  std::uint64_t key_id() const noexcept { return pub_->key_id; }
  bool has_secret_key() const noexcept { return static_cast<bool>(sk_); }
  bool can_refresh() const noexcept { return static_cast<bool>(oracle_); }

  /// Copy of this backend without decryption capability (server view).
  CkksBackend evaluation_only(bool keep_refresh_oracle = true) const {
    return CkksBackend(ctx_, pub_, nullptr, keep_refresh_oracle ? oracle_ : nullptr);
  }

  // ---- encoding / encryption ----

  Plaintext encode(std::span<const double> v, int level = -1) const {
    if (v.size() > slot_count())
      throw DimensionMismatch("encode: " + std::to_string(v.size()) + " values exceed " +
                              std::to_string(slot_count()) + " slots");
    bump(Op::encode);
    Plaintext pt;
    pt.slots.assign(slot_count(), 0.0);
    std::copy(v.begin(), v.end(), pt.slots.begin());
    pt.level = level < 0 ? max_level() : level;
    if (pt.level > max_level()) throw InvalidParams("plaintext level above L");
    pt.scale = pt.level >= 0 ? static_cast<double>(ctx_->scale(pt.level)) : 1.0;
    return pt;
  }

  std::vector<double> decode(const Plaintext& pt) const {
    // round-trips through the integer encoding so the result reflects encoding error
    auto coeffs = to_coeffs(pt.slots, ctx_->scale(pt.level));
    std::vector<double> c(coeffs.size());
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = static_cast<double>(coeffs[i] / ctx_->scale(pt.level));
    auto z = ctx_->encoder().embed(c);
    std::vector<double> out(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i].real();
    return out;
  }

  Ciphertext encrypt(const Plaintext& pt) const {
    if (pt.level < 0) throw DepthExceeded("", 0, pt.level);
    bump(Op::encrypt);
    std::uint64_t stream = mix64(params().seed ^ 0xe0c, enc_counter_->fetch_add(1));
    return encrypt_with(pt.slots, pt.level, stream);
  }
  Ciphertext encrypt(std::span<const double> v, int level = -1) const { return encrypt(encode(v, level)); }

  std::vector<double> decrypt(const Ciphertext& ct) const {
    if (!sk_) throw MissingKey("decrypt requires the secret key");
    return decrypt_with(*sk_, ct);
  }

  // ---- arithmetic ----

  Ciphertext add(const Ciphertext& a, const Ciphertext& b) const { return addsub(a, b, Op::add); }
  Ciphertext sub(const Ciphertext& a, const Ciphertext& b) const { return addsub(a, b, Op::sub); }

  Ciphertext negate(const Ciphertext& a) const {
    bump(Op::sub, a.info);
    Ciphertext r = a;
    const std::size_t n = ctx_->n();
    for (int comp = 0; comp < 2; ++comp)
      for (int i = 0; i <= a.level(); ++i) {
        const auto& m = ctx_->mod(i);
        u64* x = comp_res(r, comp, i);
        for (std::size_t k = 0; k < n; ++k) x[k] = m.neg(x[k]);
      }
    return r;
  }

  Ciphertext add_plain(const Ciphertext& a, std::span<const double> v) const {
    bump(Op::add, a.info);
    auto p = encode_poly(v, a.level(), ctx_->scale(a.level()));
    Ciphertext r = a;
    add_into(r, 0, p);
    return r;
  }
  Ciphertext add_plain(const Ciphertext& a, const Plaintext& p) const { return add_plain(a, p.slots); }

  Ciphertext add_scalar(const Ciphertext& a, double c) const {
    bump(Op::add, a.info);
    Ciphertext r = a;
    const long double v = static_cast<long double>(c) * ctx_->scale(a.level());
    const std::int64_t z = checked_round(v);
    const std::size_t n = ctx_->n();
    for (int i = 0; i <= a.level(); ++i) {
      const auto& m = ctx_->mod(i);
      const u64 zi = m.from_signed(z);
      u64* x = comp_res(r, 0, i);
      for (std::size_t k = 0; k < n; ++k) x[k] = m.add(x[k], zi);
    }
    return r;
  }

  Ciphertext mult_scalar(const Ciphertext& a, double c) const {
    require_level(a.info, 1);
    bump(Op::pmult, a.info);
    const std::int64_t z = checked_round(static_cast<long double>(c) * ctx_->scale(a.level()));
    Ciphertext r = a;
    scale_by_int(r, z);
    rescale(r);
    r.info.path_depth += 1;
    r.info.noise_bits += 1;
    return r;
  }

  Ciphertext mult_plain(const Ciphertext& a, std::span<const double> v) const {
    require_level(a.info, 1);
    bump(Op::pmult, a.info);
    auto p = encode_poly(v, a.level(), ctx_->scale(a.level()));
    Ciphertext r = a;
    const std::size_t n = ctx_->n();
    for (int comp = 0; comp < 2; ++comp)
      for (int i = 0; i <= a.level(); ++i) {
        const auto& m = ctx_->mod(i);
        u64* x = comp_res(r, comp, i);
        const u64* y = p.res(i, n);
        for (std::size_t k = 0; k < n; ++k) x[k] = m.mul(x[k], y[k]);
      }
    rescale(r);
    r.info.path_depth += 1;
    r.info.noise_bits += 1;
    return r;
  }
  Ciphertext mult_plain(const Ciphertext& a, const Plaintext& p) const { return mult_plain(a, p.slots); }

  Ciphertext mult(const Ciphertext& a, const Ciphertext& b) const {
    const Ciphertext* pa = &a;
    const Ciphertext* pb = &b;
    bump(Op::mult, a.info);
    return dot_impl(std::span(&pa, 1), std::span(&pb, 1));
  }

  /// sum_i a_i * b_i with a single relinearisation and rescale; counts n mults.
  Ciphertext dot(std::span<const Ciphertext* const> a, std::span<const Ciphertext* const> b) const {
    if (a.size() != b.size() || a.empty()) throw DimensionMismatch("dot: operand count mismatch");
    bump(Op::mult, a[0]->info, a.size());
    if (a.size() > 1) bump(Op::add, a[0]->info, a.size() - 1);
    return dot_impl(a, b);
  }

  Ciphertext rotate(const Ciphertext& a, long k) const {
    auto steps = rotation_steps(k, slot_count());
    Ciphertext r = a;
    for (int s : steps) {
      auto it = pub_->galois.find(s);
      if (it == pub_->galois.end()) throw MissingKey("no rotation key for step " + std::to_string(s));
      r = apply_galois(r, ctx_->galois_element(s), it->second);
    }
    if (!steps.empty()) bump(Op::rot, a.info, steps.size());
    return r;
  }

  /// Simulated bootstrapping: decrypt-recrypt through the trusted refresh oracle.
  Ciphertext refresh(const Ciphertext& a) const {
    check_refresh_allowed(a.info);
    if (!oracle_) throw MissingKey("refresh requires the trusted refresh oracle");
    bump(Op::refresh, a.info);
    auto v = decrypt_with(*oracle_, a);
    std::uint64_t h = fnv1a(std::span(reinterpret_cast<const std::uint8_t*>(a.data.data()), a.data.size() * 8));
    Ciphertext r = encrypt_with(v, refreshed_level(), mix64(h, 0x4ef4));
    r.info.tag = a.info.tag;
    r.info.path_depth = a.info.path_depth;
    return r;
  }

  Ciphertext drop_to(const Ciphertext& a, int level) const {
    if (level > a.level()) throw InvalidParams("drop_to cannot raise the level");
    if (level < 0) throw DepthExceeded(a.info.tag, a.level() - level, a.level());
    Ciphertext r = align(a, level);
    r.info.path_depth += a.level() - level;
    return r;
  }

  Ciphertext zero_like(const Ciphertext& a) const {
    Ciphertext r = a;
    std::fill(r.data.begin(), r.data.end(), 0);
    return r;
  }

  // ---- serialization ----

  void write_payload(ByteWriter& w, const Ciphertext& c) const {
    w.u8(kPayloadTag);
    w.u64(c.info.key_id);
    w.u8(2);
    w.raw(c.data.data(), c.data.size() * sizeof(u64));
  }

  Ciphertext read_payload(ByteReader& r, const CtInfo& header) const {
    auto at = r.offset();
    if (r.u8() != kPayloadTag) throw FormatError("payload is not a CKKS ciphertext", at);
    Ciphertext c;
    c.info = header;
    c.info.key_id = r.u64();
    at = r.offset();
    if (r.u8() != 2) throw FormatError("unsupported component count", at);
    if (header.level < 0 || header.level > max_level()) throw FormatError("level out of range", at);
    const std::size_t words = 2 * std::size_t(header.level + 1) * ctx_->n();
    at = r.offset();
    auto bytes = r.take(words * sizeof(u64));
    c.data.resize(words);
    std::memcpy(c.data.data(), bytes.data(), bytes.size());
    for (int comp = 0; comp < 2; ++comp)
      for (int i = 0; i <= header.level; ++i) {
        const u64* x = comp_res(c, comp, i);
        for (std::size_t k = 0; k < ctx_->n(); ++k)
          if (x[k] >= ctx_->mod(i).value()) throw FormatError("residue out of range", at);
      }
    return c;
  }

  /// Exact scale of a ciphertext at `level`.
  long double exact_scale(int level) const { return ctx_->scale(level); }

  // ---- key material helpers used by the key files ----
  static std::uint64_t compute_key_id(const CkksContext& c, const CkksPublicKeys& pub) {
    std::uint64_t h = fnv1a(std::span(reinterpret_cast<const std::uint8_t*>(pub.pk_b.data.data()),
                                      pub.pk_b.data.size() * 8));
    return mix64(h, c.params().ring_degree);
  }

  /// Expands the `a` half of a switch key from its seed (keys on disk keep only `b`).
  static void expand_switch_key_a(const CkksContext& c, SwitchKey& k, std::uint64_t seed) {
    Xoshiro256 rng(seed);
    k.a.clear();
    for (int g = 0; g < c.digit_count(); ++g) k.a.push_back(uniform_poly(c, rng, c.total_primes()));
  }

  static std::uint64_t relin_seed(std::uint64_t seed) { return mix64(mix64(seed, 0x4e11), 0xa); }
  static std::uint64_t galois_seed(std::uint64_t seed, int step) {
    return mix64(mix64(seed, 0x6a10 + std::uint64_t(step) * 7919), 0xa);
  }

  static RnsPoly from_small(const CkksContext& c, const std::vector<std::int8_t>& v, int primes) {
    const std::size_t n = c.n();
    RnsPoly p;
    p.primes = primes;
    p.data.resize(std::size_t(primes) * n);
    for (int i = 0; i < primes; ++i) {
      const auto& m = c.mod(i);
      u64* x = p.res(i, n);
      for (std::size_t k = 0; k < n; ++k) x[k] = m.from_signed(v[k]);
      c.ntt(i).forward(x);
    }
    return p;
  }

 private:
  static RnsPoly uniform_poly(const CkksContext& c, Xoshiro256& rng, int primes) {
    const std::size_t n = c.n();
    RnsPoly p;
    p.primes = primes;
    p.data.resize(std::size_t(primes) * n);
    for (int i = 0; i < primes; ++i) {
      const u64 q = c.mod(i).value();
      u64* x = p.res(i, n);
      for (std::size_t k = 0; k < n; ++k) x[k] = detail::uniform_mod(rng, q);
    }
    return p;
  }

  /// Error polynomial in NTT form over the first `primes` primes.
  static RnsPoly sample_error(const CkksContext& c, Xoshiro256& rng, int primes) {
    const std::size_t n = c.n();
    std::vector<std::int64_t> e(n);
    for (auto& x : e) x = detail::cbd(rng);
    RnsPoly p;
    p.primes = primes;
    p.data.resize(std::size_t(primes) * n);
    for (int i = 0; i < primes; ++i) {
      const auto& m = c.mod(i);
      u64* x = p.res(i, n);
      for (std::size_t k = 0; k < n; ++k) x[k] = m.from_signed(e[k]);
      c.ntt(i).forward(x);
    }
    return p;
  }

  static RnsPoly permuted(const CkksContext& c, const RnsPoly& src, const std::vector<std::uint32_t>& perm) {
    const std::size_t n = c.n();
    RnsPoly out = src;
    for (int i = 0; i < src.primes; ++i) {
      const u64* s = src.res(i, n);
      u64* d = out.res(i, n);
      for (std::size_t k = 0; k < n; ++k) d[k] = s[perm[k]];
    }
    return out;
  }

  /// b_g = -a_g s + e_g + [t in digit g] * P * s' over every prime.
  static SwitchKey make_switch_key(const CkksContext& c, const CkksSecretKey& sk, const RnsPoly& s_prime,
                                   std::uint64_t seed) {
    const std::size_t n = c.n();
    const int T = c.total_primes();
    const int L = c.max_level();
    SwitchKey k;
    expand_switch_key_a(c, k, mix64(seed, 0xa));
    Xoshiro256 erng(mix64(seed, 0xe));
    for (int g = 0; g < c.digit_count(); ++g) {
      auto e = sample_error(c, erng, T);
      RnsPoly b;
      b.primes = T;
      b.data.resize(std::size_t(T) * n);
      const int g0 = g * c.digit_size(), g1 = std::min((g + 1) * c.digit_size(), L + 1);
      for (int i = 0; i < T; ++i) {
        const auto& m = c.mod(i);
        const u64 *a = k.a[g].res(i, n), *s = sk.ntt.res(i, n), *ee = e.res(i, n), *sp = s_prime.res(i, n);
        u64* bb = b.res(i, n);
        const bool in_digit = i >= g0 && i < g1;
        const u64 pm = in_digit ? c.p_mod(i) : 0;
        for (std::size_t t = 0; t < n; ++t) {
          u64 v = m.sub(ee[t], m.mul(a[t], s[t]));
          if (in_digit) v = m.add(v, m.mul(pm, sp[t]));
          bb[t] = v;
        }
      }
      k.b.push_back(std::move(b));
    }
    return k;
  }

  u64* comp_res(Ciphertext& c, int comp, int i) const {
    return c.data.data() + (std::size_t(comp) * (c.level() + 1) + i) * ctx_->n();
  }
  const u64* comp_res(const Ciphertext& c, int comp, int i) const {
    return c.data.data() + (std::size_t(comp) * (c.level() + 1) + i) * ctx_->n();
  }

  static std::int64_t checked_round(long double v) {
    if (!(std::fabs(v) < 0x1p62L)) throw Error("value too large for the CKKS encoding range");
    return static_cast<std::int64_t>(std::llroundl(v));
  }

  std::vector<long double> to_coeffs(std::span<const double> v, long double scale) const {
    std::vector<std::complex<double>> z(slot_count());
    for (std::size_t i = 0; i < v.size() && i < z.size(); ++i) z[i] = {v[i], 0.0};
    auto c = ctx_->encoder().embed_inverse(z);
    std::vector<long double> out(c.size());
    for (std::size_t i = 0; i < c.size(); ++i) out[i] = std::roundl(static_cast<long double>(c[i]) * scale);
    return out;
  }

  RnsPoly encode_poly(std::span<const double> v, int level, long double scale) const {
    if (v.size() > slot_count()) throw DimensionMismatch("plaintext longer than slot count");
    auto coeffs = to_coeffs(v, scale);
    const std::size_t n = ctx_->n();
    RnsPoly p;
    p.primes = level + 1;
    p.data.resize(std::size_t(level + 1) * n);
    std::vector<std::int64_t> ic(n);
    for (std::size_t k = 0; k < n; ++k) ic[k] = checked_round(coeffs[k]);
    for (int i = 0; i <= level; ++i) {
      const auto& m = ctx_->mod(i);
      u64* x = p.res(i, n);
      for (std::size_t k = 0; k < n; ++k) x[k] = m.from_signed(ic[k]);
      ctx_->ntt(i).forward(x);
    }
    return p;
  }

  void add_into(Ciphertext& r, int comp, const RnsPoly& p) const {
    const std::size_t n = ctx_->n();
    for (int i = 0; i <= r.level(); ++i) {
      const auto& m = ctx_->mod(i);
      u64* x = comp_res(r, comp, i);
      const u64* y = p.res(i, n);
      for (std::size_t k = 0; k < n; ++k) x[k] = m.add(x[k], y[k]);
    }
  }

  Ciphertext encrypt_with(std::span<const double> v, int level, std::uint64_t stream) const {
    const std::size_t n = ctx_->n();
    auto m = encode_poly(v, level, ctx_->scale(level));
    Xoshiro256 rng(stream);
    std::vector<std::int8_t> u(n);
    for (auto& x : u) x = static_cast<std::int8_t>(static_cast<int>(rng() % 3) - 1);
    auto un = from_small(*ctx_, u, level + 1);
    auto e0 = sample_error(*ctx_, rng, level + 1);
    auto e1 = sample_error(*ctx_, rng, level + 1);
    Ciphertext c;
    c.data.resize(2 * std::size_t(level + 1) * n);
    c.info.level = level;
    c.info.scale_bits = params().scale_bits;
    c.info.slot_count = slot_count();
    c.info.key_id = pub_->key_id;
    for (int i = 0; i <= level; ++i) {
      const auto& md = ctx_->mod(i);
      const u64 *pb = pub_->pk_b.res(i, n), *pa = pub_->pk_a.res(i, n), *uu = un.res(i, n);
      const u64 *x0 = e0.res(i, n), *x1 = e1.res(i, n), *mm = m.res(i, n);
      u64* c0 = comp_res(c, 0, i);
      u64* c1 = comp_res(c, 1, i);
      for (std::size_t k = 0; k < n; ++k) {
        c0[k] = md.add(md.add(md.mul(uu[k], pb[k]), x0[k]), mm[k]);
        c1[k] = md.add(md.mul(uu[k], pa[k]), x1[k]);
      }
    }
    return c;
  }

  std::vector<double> decrypt_with(const CkksSecretKey& sk, const Ciphertext& ct) const {
    if (ct.info.key_id != pub_->key_id) throw KeyMismatch("ciphertext was encrypted under a different key");
    const std::size_t n = ctx_->n();
    const auto& m = ctx_->mod(0);
    std::vector<u64> x(n);
    const u64 *c0 = comp_res(ct, 0, 0), *c1 = comp_res(ct, 1, 0), *s = sk.ntt.res(0, n);
    for (std::size_t k = 0; k < n; ++k) x[k] = m.add(c0[k], m.mul(c1[k], s[k]));
    ctx_->ntt(0).inverse(x.data());
    const long double scale = ctx_->scale(ct.level());
    const u64 q = m.value();
    std::vector<double> coeffs(n);
    for (std::size_t k = 0; k < n; ++k) {
      long double v = x[k] > q / 2 ? -static_cast<long double>(q - x[k]) : static_cast<long double>(x[k]);
      coeffs[k] = static_cast<double>(v / scale);
    }
    auto z = ctx_->encoder().embed(coeffs);
    std::vector<double> out(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i].real();
    return out;
  }

  void scale_by_int(Ciphertext& r, std::int64_t z) const {
    const std::size_t n = ctx_->n();
    for (int i = 0; i <= r.level(); ++i) {
      const auto& m = ctx_->mod(i);
      const u64 zi = m.from_signed(z);
      const u64 zp = m.shoup(zi);
      for (int comp = 0; comp < 2; ++comp) {
        u64* x = comp_res(r, comp, i);
        for (std::size_t k = 0; k < n; ++k) x[k] = m.mul_shoup(x[k], zi, zp);
      }
    }
  }

  /// Divides by the top prime with rounding and drops it.
  void rescale(Ciphertext& c) const {
    const int l = c.level();
    if (l < 1) throw DepthExceeded(c.info.tag, 1, l);
    const std::size_t n = ctx_->n();
    std::vector<u64> out(2 * std::size_t(l) * n);
    std::vector<u64> top(n), tmp(n);
    const auto& ml = ctx_->mod(l);
    const u64 ql = ml.value();
    for (int comp = 0; comp < 2; ++comp) {
      std::copy_n(comp_res(c, comp, l), n, top.data());
      ctx_->ntt(l).inverse(top.data());
      for (int i = 0; i < l; ++i) {
        const auto& mi = ctx_->mod(i);
        for (std::size_t k = 0; k < n; ++k) {
          u64 v = top[k];
          tmp[k] = v > ql / 2 ? mi.sub(mi.reduce(v), mi.reduce(ql)) : mi.reduce(v);
        }
        ctx_->ntt(i).forward(tmp.data());
        auto [inv, invp] = ctx_->rescale_inv(l, i);
        const u64* x = comp_res(c, comp, i);
        u64* o = out.data() + (std::size_t(comp) * l + i) * n;
        for (std::size_t k = 0; k < n; ++k) o[k] = mi.mul_shoup(mi.sub(x[k], tmp[k]), inv, invp);
      }
    }
    c.data = std::move(out);
    c.info.level = l - 1;
  }

  /// Keeps residues 0..level of each component.
  Ciphertext truncated(const Ciphertext& a, int level) const {
    const std::size_t n = ctx_->n();
    Ciphertext r;
    r.info = a.info;
    r.info.level = level;
    r.data.resize(2 * std::size_t(level + 1) * n);
    for (int comp = 0; comp < 2; ++comp)
      std::copy_n(comp_res(a, comp, 0), std::size_t(level + 1) * n, r.data.data() + comp * std::size_t(level + 1) * n);
    return r;
  }

  /// Brings `a` to `level` with the exact scale of that level. Free of counters.
  Ciphertext align(const Ciphertext& a, int level) const {
    if (level == a.level()) return a;
    Ciphertext r = truncated(a, level + 1);
    const long double z = ctx_->scale(level) * ctx_->mod(level + 1).value() / ctx_->scale(a.level());
    scale_by_int(r, checked_round(z));
    rescale(r);
    return r;
  }

  Ciphertext addsub(const Ciphertext& a, const Ciphertext& b, Op op) const {
    check_slots(a.info, b.info);
    bump(op, a.info);
    const int l = std::min(a.level(), b.level());
    Ciphertext x = align(a, l);
    Ciphertext y = align(b, l);
    x.info = merged(a.info, b.info, 0);
    const std::size_t n = ctx_->n();
    for (int comp = 0; comp < 2; ++comp)
      for (int i = 0; i <= l; ++i) {
        const auto& m = ctx_->mod(i);
        u64* p = comp_res(x, comp, i);
        const u64* q = comp_res(y, comp, i);
        if (op == Op::add)
          for (std::size_t k = 0; k < n; ++k) p[k] = m.add(p[k], q[k]);
        else
          for (std::size_t k = 0; k < n; ++k) p[k] = m.sub(p[k], q[k]);
      }
    return x;
  }

  Ciphertext dot_impl(std::span<const Ciphertext* const> a, std::span<const Ciphertext* const> b) const {
    int l = max_level();
    CtInfo info;
    for (std::size_t i = 0; i < a.size(); ++i) {
      check_slots(a[i]->info, b[i]->info);
      require_level(a[i]->info, 1);
      require_level(b[i]->info, 1);
      l = std::min({l, a[i]->level(), b[i]->level()});
      CtInfo mi = merged(a[i]->info, b[i]->info, 1);
      if (i == 0) info = mi;
      else {
        info.level = std::min(info.level, mi.level);
        info.path_depth = std::max(info.path_depth, mi.path_depth);
        info.noise_bits = std::max(info.noise_bits, mi.noise_bits);
        if (info.tag.empty()) info.tag = mi.tag;
      }
    }
    const std::size_t n = ctx_->n();
    const std::size_t len = std::size_t(l + 1) * n;
    std::vector<u64> d0(len, 0), d1(len, 0), d2(len, 0);
    for (std::size_t t = 0; t < a.size(); ++t) {
      Ciphertext x = align(*a[t], l);
      Ciphertext y = align(*b[t], l);
      for (int i = 0; i <= l; ++i) {
        const auto& m = ctx_->mod(i);
        const u64 *x0 = comp_res(x, 0, i), *x1 = comp_res(x, 1, i);
        const u64 *y0 = comp_res(y, 0, i), *y1 = comp_res(y, 1, i);
        u64 *p0 = d0.data() + i * n, *p1 = d1.data() + i * n, *p2 = d2.data() + i * n;
        for (std::size_t k = 0; k < n; ++k) {
          p0[k] = m.add(p0[k], m.mul(x0[k], y0[k]));
          p1[k] = m.reduce128(u128{x0[k]} * y1[k] + u128{x1[k]} * y0[k] + p1[k]);
          p2[k] = m.add(p2[k], m.mul(x1[k], y1[k]));
        }
      }
    }
    auto [k0, k1] = key_switch(d2, l, pub_->relin);
    Ciphertext r;
    r.info = info;
    r.info.level = l;
    r.data.resize(2 * len);
    for (int i = 0; i <= l; ++i) {
      const auto& m = ctx_->mod(i);
      u64* c0 = comp_res(r, 0, i);
      u64* c1 = comp_res(r, 1, i);
      for (std::size_t k = 0; k < n; ++k) {
        c0[k] = m.add(d0[i * n + k], k0[i * n + k]);
        c1[k] = m.add(d1[i * n + k], k1[i * n + k]);
      }
    }
    rescale(r);
    r.info.level = l - 1;
    return r;
  }

  Ciphertext apply_galois(const Ciphertext& a, u64 g, const SwitchKey& key) const {
    const std::size_t n = ctx_->n();
    const int l = a.level();
    auto perm = ctx_->galois_permutation(g);
    std::vector<u64> c1(std::size_t(l + 1) * n);
    Ciphertext r = a;
    for (int i = 0; i <= l; ++i) {
      const u64* s0 = comp_res(a, 0, i);
      const u64* s1 = comp_res(a, 1, i);
      u64* d0 = comp_res(r, 0, i);
      u64* d1 = c1.data() + i * n;
      for (std::size_t k = 0; k < n; ++k) {
        d0[k] = s0[perm[k]];
        d1[k] = s1[perm[k]];
      }
    }
    auto [k0, k1] = key_switch(c1, l, key);
    for (int i = 0; i <= l; ++i) {
      const auto& m = ctx_->mod(i);
      u64* d0 = comp_res(r, 0, i);
      u64* d1 = comp_res(r, 1, i);
      for (std::size_t k = 0; k < n; ++k) {
        d0[k] = m.add(d0[k], k0[i * n + k]);
        d1[k] = k1[i * n + k];
      }
    }
    r.info.noise_bits += 0.5;
    return r;
  }

  /// Hybrid key switching of `d` (NTT form, primes 0..l). Returns (k0, k1) with
  /// k0 + k1*s ~= d*s'.
  std::pair<std::vector<u64>, std::vector<u64>> key_switch(const std::vector<u64>& d, int l,
                                                           const SwitchKey& key) const {
    const auto& c = *ctx_;
    const std::size_t n = c.n();
    const int K = c.special_count();
    const int ext = l + 1 + K;
    std::vector<u64> coef(d);
    for (int i = 0; i <= l; ++i) c.ntt(i).inverse(coef.data() + i * n);

    // Products are < 2^120, so up to 256 digits accumulate in 128 bits before
    // a single reduction.
    std::vector<u128> wide0(std::size_t(ext) * n, 0), wide1(std::size_t(ext) * n, 0);
    std::vector<u64> t(n);
    std::vector<u64> y;
    for (int g = 0; g < c.digit_count(); ++g) {
      const int g0 = g * c.digit_size();
      if (g0 > l) break;
      const int end = std::min((g + 1) * c.digit_size(), l + 1);
      const auto& cv = c.digit_conv(g0, end);
      const int cnt = end - g0;
      y.resize(std::size_t(cnt) * n);
      for (int j = 0; j < cnt; ++j) {
        const auto& m = c.mod(g0 + j);
        auto [iv, ivp] = cv.inv_hat[j];
        const u64* src = coef.data() + (g0 + j) * n;
        u64* dst = y.data() + j * n;
        for (std::size_t k = 0; k < n; ++k) dst[k] = m.mul_shoup(src[k], iv, ivp);
      }
      for (int e = 0; e < ext; ++e) {
        const int p = c.ext_prime(l, e);
        const auto& m = c.mod(p);
        const u64* tv;
        if (p >= g0 && p < end) {
          tv = d.data() + p * n;
        } else {
          const auto& hat = cv.hat[p];
          for (std::size_t k = 0; k < n; ++k) {
            u128 s = 0;
            for (int j = 0; j < cnt; ++j) s += u128{y[j * n + k]} * hat[j];
            t[k] = m.reduce128(s);
          }
          c.ntt(p).forward(t.data());
          tv = t.data();
        }
        const u64* kb = key.b[g].res(p, n);
        const u64* ka = key.a[g].res(p, n);
        u128* a0 = wide0.data() + e * n;
        u128* a1 = wide1.data() + e * n;
        for (std::size_t k = 0; k < n; ++k) {
          a0[k] += u128{tv[k]} * kb[k];
          a1[k] += u128{tv[k]} * ka[k];
        }
      }
    }
    std::vector<u64> acc0(std::size_t(ext) * n), acc1(std::size_t(ext) * n);
    for (int e = 0; e < ext; ++e) {
      const auto& m = c.mod(c.ext_prime(l, e));
      for (std::size_t k = e * n; k < (e + 1) * n; ++k) {
        acc0[k] = m.reduce128(wide0[k]);
        acc1[k] = m.reduce128(wide1[k]);
      }
    }
    return {mod_down(acc0, l), mod_down(acc1, l)};
  }

  /// (x - conv_P(x mod P)) * P^{-1} over q0..ql.
  std::vector<u64> mod_down(std::vector<u64>& acc, int l) const {
    const auto& c = *ctx_;
    const std::size_t n = c.n();
    const int K = c.special_count();
    const auto& cv = c.special_conv();
    std::vector<u64> y(std::size_t(K) * n);
    for (int j = 0; j < K; ++j) {
      const int p = c.max_level() + 1 + j;
      const auto& m = c.mod(p);
      u64* src = acc.data() + (l + 1 + j) * n;
      c.ntt(p).inverse(src);
      auto [iv, ivp] = cv.inv_hat[j];
      for (std::size_t k = 0; k < n; ++k) y[j * n + k] = m.mul_shoup(src[k], iv, ivp);
    }
    // Exact, centred conversion: the overflow count v = round(sum y_j / p_j)
    // is removed so the result is round(x / P) instead of a biased floor.
    std::vector<long double> recip(K);
    for (int j = 0; j < K; ++j) recip[j] = 1.0L / c.mod(c.max_level() + 1 + j).value();
    std::vector<u64> over(n);
    for (std::size_t k = 0; k < n; ++k) {
      long double v = 0.5L;
      for (int j = 0; j < K; ++j) v += static_cast<long double>(y[j * n + k]) * recip[j];
      over[k] = static_cast<u64>(v);
    }
    std::vector<u64> out(std::size_t(l + 1) * n), t(n);
    for (int i = 0; i <= l; ++i) {
      const auto& m = c.mod(i);
      const auto& hat = cv.hat[i];
      const u64 pm = c.p_mod(i);
      for (std::size_t k = 0; k < n; ++k) {
        u128 s = 0;
        for (int j = 0; j < K; ++j) s += u128{y[j * n + k]} * hat[j];
        t[k] = m.sub(m.reduce128(s), m.mul(over[k], pm));
      }
      c.ntt(i).forward(t.data());
      auto [pi, pip] = c.p_inv(i);
      const u64* x = acc.data() + i * n;
      u64* o = out.data() + i * n;
      for (std::size_t k = 0; k < n; ++k) o[k] = m.mul_shoup(m.sub(x[k], t[k]), pi, pip);
    }
    return out;
  }

  std::shared_ptr<const CkksContext> ctx_;
  std::shared_ptr<const CkksPublicKeys> pub_;
  std::shared_ptr<const CkksSecretKey> sk_;
  std::shared_ptr<const CkksSecretKey> oracle_;
  std::shared_ptr<std::atomic<std::uint64_t>> enc_counter_ = std::make_shared<std::atomic<std::uint64_t>>(0);
};

}  // namespace ensi::he
