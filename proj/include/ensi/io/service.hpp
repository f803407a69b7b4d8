#pragma once

// Named kernels for `infer`/`serve`, and the two ends of one encrypted
// inference over the wire.

#include <string>
#include <string_view>

#include "ensi/blocks.hpp"
#include "ensi/io/config.hpp"
#include "ensi/io/wire.hpp"
#include "ensi/reference.hpp"

namespace ensi::io {

enum class Kernel { pcmm, ccmm, rope, attention, rmsnorm, ffn, layer };

inline Kernel parse_kernel(std::string_view s) {
  if (s == "pcmm") return Kernel::pcmm;
  if (s == "ccmm") return Kernel::ccmm;
  if (s == "rope") return Kernel::rope;
  if (s == "attention") return Kernel::attention;
  if (s == "rmsnorm") return Kernel::rmsnorm;
  if (s == "ffn") return Kernel::ffn;
  if (s == "layer") return Kernel::layer;
  throw InvalidParams("unknown kernel '" + std::string(s) + "'");
}

inline const char* kernel_name(Kernel k) {
  constexpr const char* names[] = {"pcmm", "ccmm", "rope", "attention", "rmsnorm", "ffn", "layer"};
  return names[static_cast<int>(k)];
}

/// Input X is s x d. pcmm: X Wq. ccmm: X X^T. rope: per-head RoPE of X.
/// attention: sigmoid attention over (X Wq, X Wk, X Wv). rmsnorm: with
/// gamma_attn. ffn: SwiGLU. layer: the full block.
template <he::Backend B>
PackedMatrix<B> run_kernel(const B& b, Kernel k, const PackedMatrix<B>& x, const LayerWeights& w,
                           const LayerConfig& cfg, LevelTracker* tracker = nullptr) {
  auto acfg = cfg.attention;
  acfg.seq_len = x.rows;
  switch (k) {
    case Kernel::pcmm:
      return pcmm(b, x, w.Wq, tracker);
    case Kernel::ccmm:
      return ccmm(b, x, transposed(x), 1.0, tracker);
    case Kernel::rope: {
      const std::size_t dh = x.ncols() / acfg.heads;
      const auto t = make_rope_tables(x.rows, dh, w.rope_base);
      std::vector<PackedMatrix<B>> parts;
      for (std::size_t h = 0; h < acfg.heads; ++h) {
        auto part = column_slice(x, h * dh, dh);
        parts.push_back(cfg.rope_mode == RopeMode::paired ? rope(b, part, t, tracker)
                                                          : rope_faithful(b, part, t, tracker));
      }
      return level_align(b, concat_columns(std::move(parts)));
    }
    case Kernel::attention:
      return sigmoid_attention(b, pcmm(b, x, w.Wq, tracker), pcmm(b, x, w.Wk, tracker), pcmm(b, x, w.Wv, tracker),
                               acfg, tracker);
    case Kernel::rmsnorm:
      return rmsnorm(b, x, w.gamma_attn, cfg.norm, tracker);
    case Kernel::ffn:
      return swiglu_ffn(b, x, w.W1, w.W2, w.W3, cfg.silu, tracker);
    case Kernel::layer:
      return transformer_layer(b, x, w, cfg, tracker);
  }
  throw InvalidParams("unknown kernel");
}

/// Plaintext counterpart of run_kernel with exact nonlinearities.
inline Matrix reference_kernel(Kernel k, const Matrix& x, const LayerWeights& w, const LayerConfig& cfg) {
  auto acfg = cfg.attention;
  acfg.seq_len = x.rows();
  const auto f = ref::Scalars::exact(acfg.resolved_bias());
  switch (k) {
    case Kernel::pcmm:
      return ref::matmul(x, w.Wq);
    case Kernel::ccmm:
      return ref::matmul(x, ref::transpose(x));
    case Kernel::rope:
      return ref::rope_heads(x, acfg.heads, w.rope_base);
    case Kernel::attention:
      return ref::sigmoid_attention(ref::matmul(x, w.Wq), ref::matmul(x, w.Wk), ref::matmul(x, w.Wv), acfg.heads,
                                    acfg.resolved_scale(x.cols()), f);
    case Kernel::rmsnorm:
      return ref::rmsnorm(x, w.gamma_attn, cfg.norm.eps, f);
    case Kernel::ffn:
      return ref::swiglu(x, w.W1, w.W2, w.W3, f);
    case Kernel::layer:
      return ref::layer(x, w, cfg, f);
  }
  throw InvalidParams("unknown kernel");
}

/// Server state: evaluation-capable backend, weights and config. Never holds
/// a decryption key (the CKKS backend is built with evaluation_only or from
/// the evaluation key file).
template <he::Backend B>
struct InferenceServer {
  B backend;
  LayerWeights weights;
  RunConfig config;
  Kernel kernel = Kernel::layer;
  bool strict = true;  // refresh only inside rmsnorm

  Response operator()(const Request& q) const {
    if (q.config_digest != config_digest(config))
      throw ProtocolError(err_config, "request was prepared for a different run configuration");
    if (q.key_id != backend.key_id()) throw KeyMismatch("request uses a key set the server does not hold");
    B b = backend;  // private counters per request
    b.share_counters(std::make_shared<CounterSet>());
    b.set_strict_refresh(strict);
    auto x = packed_from_bytes(b, q.packed);
    LevelTracker tr(b.counters());
    auto y = run_kernel(b, kernel, x, weights, config.resolved_layer(), &tr);
    return {packed_bytes(b, y), report_records(tr.records())};
  }
};

/// Client side: encrypt, one round trip, decrypt.
template <he::Backend B>
Matrix remote_infer(const B& client, const RunConfig& cfg, const Endpoint& server, const Matrix& x,
                    std::string* report = nullptr) {
  Request q;
  q.config_digest = config_digest(cfg);
  q.key_id = client.key_id();
  q.packed = packed_bytes(client, pack_columns(client, x));
  auto r = round_trip(server, q);
  if (report) *report = r.report;
  return unpack(client, packed_from_bytes(client, r.packed));
}

}  // namespace ensi::io
