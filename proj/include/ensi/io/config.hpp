#pragma once

// Run configuration, read from JSON. Every field is optional; missing fields
// keep the defaults below. Example:
//   {"he": {"ring_degree": 8192, "max_level": 42, "refresh_cost": 2, "scale_bits": 40},
//    "model": {"seq_len": 8, "dim": 16, "heads": 2, "ffn_dim": 32},
//    "approx": {"sigmoid": {"domain": [-16, 16], "degree": 59}, "sqrt": {...},
//               "inverse": {"degree": 59}, "silu": {...}},
//    "eps": 1e-5, "bias_mode": "standard", "rope_mode": "paired",
//    "backend": "ckks", "seed": 1}

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ensi/blocks.hpp"
#include "ensi/core/bytes.hpp"
#include "ensi/he/params.hpp"
#include "json.hpp"

namespace ensi::io {

struct ModelDims {
  std::size_t seq_len = 8;
  std::size_t dim = 16;
  std::size_t heads = 2;
  std::size_t ffn_dim = 32;
};

struct RunConfig {
  he::HeParams he = he::HeParams::make(1u << 13, 42, 2, 40, 1);
  ModelDims model;
  LayerConfig layer;
  std::string backend = "ckks";
  std::uint64_t seed = 1;
  std::vector<std::size_t> bench_sizes{4, 8, 16};

  LayerConfig resolved_layer() const {
    LayerConfig l = layer;
    l.attention.heads = model.heads;
    l.attention.seq_len = model.seq_len;
    return l;
  }

  void validate() const {
    he.validate(false);
    if (backend != "clear" && backend != "ckks") throw InvalidParams("backend must be 'clear' or 'ckks'");
    if (model.seq_len == 0 || model.seq_len > he.slot_count())
      throw InvalidParams("seq_len must be in [1, slot count]");
    resolved_layer().attention.validate(model.dim);
    if ((model.dim / model.heads) % 2) throw InvalidParams("head dimension must be even for RoPE");
    if (layer.norm.sqrt.domain.lo <= 0 || layer.norm.eps < 0) throw InvalidParams("sqrt domain needs lo > 0");
  }
};

namespace detail {

inline void read_profile(const nlohmann::json& j, ApproxProfile& p) {
  if (j.contains("domain")) {
    auto d = j.at("domain").get<std::vector<double>>();
    if (d.size() != 2 || !(d[0] < d[1])) throw InvalidParams("approximation domain must be [lo, hi] with lo < hi");
    p.domain = {d[0], d[1]};
  }
  if (j.contains("degree")) p.degree = j.at("degree").get<int>();
}

inline nlohmann::json profile_json(const ApproxProfile& p) {
  return {{"domain", {p.domain.lo, p.domain.hi}}, {"degree", p.degree}};
}

}  // namespace detail

inline RunConfig config_from_json(const nlohmann::json& j) {
  RunConfig c;
  try {
    if (j.contains("he")) {
      const auto& h = j.at("he");
      c.he.ring_degree = h.value("ring_degree", c.he.ring_degree);
      c.he.max_level = h.value("max_level", c.he.max_level);
      c.he.refresh_cost = h.value("refresh_cost", c.he.refresh_cost);
      c.he.scale_bits = h.value("scale_bits", c.he.scale_bits);
      c.he.base_bits = h.value("base_bits", c.he.base_bits);
      c.he.digit_size = h.value("digit_size", c.he.digit_size);
    }
    c.seed = j.value("seed", c.seed);
    c.he.seed = c.seed;
    if (j.contains("model")) {
      const auto& m = j.at("model");
      c.model.seq_len = m.value("seq_len", c.model.seq_len);
      c.model.dim = m.value("dim", c.model.dim);
      c.model.heads = m.value("heads", c.model.heads);
      c.model.ffn_dim = m.value("ffn_dim", c.model.ffn_dim);
    }
    if (j.contains("approx")) {
      const auto& a = j.at("approx");
      if (a.contains("sigmoid")) detail::read_profile(a.at("sigmoid"), c.layer.attention.sigmoid);
      if (a.contains("silu")) detail::read_profile(a.at("silu"), c.layer.silu);
      if (a.contains("sqrt")) detail::read_profile(a.at("sqrt"), c.layer.norm.sqrt);
      if (a.contains("inverse")) detail::read_profile(a.at("inverse"), c.layer.norm.inverse);
    }
    c.layer.norm.eps = j.value("eps", c.layer.norm.eps);
    const auto bias_mode = j.value("bias_mode", std::string("standard"));
    if (bias_mode == "standard") c.layer.attention.bias_mode = BiasMode::standard;
    else if (bias_mode == "faithful") c.layer.attention.bias_mode = BiasMode::faithful;
    else throw InvalidParams("bias_mode must be 'standard' or 'faithful'");
    if (j.contains("bias") && !j.at("bias").is_null()) c.layer.attention.bias = j.at("bias").get<double>();
    const auto rope_mode = j.value("rope_mode", std::string("paired"));
    if (rope_mode == "paired") c.layer.rope_mode = RopeMode::paired;
    else if (rope_mode == "faithful") c.layer.rope_mode = RopeMode::faithful;
    else throw InvalidParams("rope_mode must be 'paired' or 'faithful'");
    c.layer.final_norm = j.value("final_norm", c.layer.final_norm);
    c.backend = j.value("backend", c.backend);
    if (j.contains("bench_sizes")) c.bench_sizes = j.at("bench_sizes").get<std::vector<std::size_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw InvalidParams(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

inline nlohmann::json config_to_json(const RunConfig& c) {
  nlohmann::json j;
  j["he"] = {{"ring_degree", c.he.ring_degree}, {"max_level", c.he.max_level}, {"refresh_cost", c.he.refresh_cost},
             {"scale_bits", c.he.scale_bits},   {"base_bits", c.he.base_bits}, {"digit_size", c.he.digit_size}};
  j["seed"] = c.seed;
  j["model"] = {{"seq_len", c.model.seq_len}, {"dim", c.model.dim}, {"heads", c.model.heads},
                {"ffn_dim", c.model.ffn_dim}};
  j["approx"] = {{"sigmoid", detail::profile_json(c.layer.attention.sigmoid)},
                 {"silu", detail::profile_json(c.layer.silu)},
                 {"sqrt", detail::profile_json(c.layer.norm.sqrt)},
                 {"inverse", detail::profile_json(c.layer.norm.inverse)}};
  j["eps"] = c.layer.norm.eps;
  j["bias_mode"] = c.layer.attention.bias_mode == BiasMode::standard ? "standard" : "faithful";
  j["bias"] = c.layer.attention.bias ? nlohmann::json(*c.layer.attention.bias) : nlohmann::json(nullptr);
  j["rope_mode"] = c.layer.rope_mode == RopeMode::paired ? "paired" : "faithful";
  j["final_norm"] = c.layer.final_norm;
  j["backend"] = c.backend;
  j["bench_sizes"] = c.bench_sizes;
  return j;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("config is not valid JSON: ") + e.what(), e.byte);
  }
  return config_from_json(j);
}

/// Stable digest of everything that affects a computation; travels in requests.
inline std::uint64_t config_digest(const RunConfig& c) { return fnv1a(config_to_json(c).dump()); }

}  // namespace ensi::io
