#pragma once

// "ENSW" | version u8 | tensor count u32 | tensors
// tensor: name len u16 | name | rank u8 | dims u32 x rank | dtype u8 | payload
// dtype 0 = ternary i8 (one byte per entry, 0x00/0x01/0xFF), 1 = f32.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ensi/blocks.hpp"
#include "ensi/core/bytes.hpp"

namespace ensi::io {

inline constexpr std::uint8_t kWeightVersion = 1;

enum class DType : std::uint8_t { ternary_i8 = 0, real_f32 = 1 };

struct Tensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  DType dtype = DType::real_f32;
  std::vector<std::int8_t> ternary;
  std::vector<float> real;

  std::size_t count() const {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
  bool operator==(const Tensor&) const = default;
};

struct WeightFile {
  std::vector<Tensor> tensors;

  const Tensor& get(std::string_view name) const {
    for (const auto& t : tensors)
      if (t.name == name) return t;
    throw Error("weight file has no tensor '" + std::string(name) + "'");
  }
  const Tensor* find(std::string_view name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }
  bool operator==(const WeightFile&) const = default;
};

inline std::vector<std::uint8_t> weights_bytes(const WeightFile& wf) {
  ByteWriter w;
  w.magic("ENSW");
  w.u8(kWeightVersion);
  w.u32(static_cast<std::uint32_t>(wf.tensors.size()));
  for (const auto& t : wf.tensors) {
    if (t.name.size() > 0xffff) throw InvalidParams("tensor name too long");
    w.u16(static_cast<std::uint16_t>(t.name.size()));
    w.magic(t.name);
    w.u8(static_cast<std::uint8_t>(t.dims.size()));
    for (auto d : t.dims) w.u32(d);
    w.u8(static_cast<std::uint8_t>(t.dtype));
    if (t.dtype == DType::ternary_i8) {
      if (t.ternary.size() != t.count()) throw DimensionMismatch("tensor '" + t.name + "': payload size");
      for (auto v : t.ternary) {
        if (v < -1 || v > 1) throw InvalidParams("tensor '" + t.name + "': non-ternary entry");
        w.u8(static_cast<std::uint8_t>(v));
      }
    } else {
      if (t.real.size() != t.count()) throw DimensionMismatch("tensor '" + t.name + "': payload size");
      for (auto v : t.real) w.f32(v);
    }
  }
  return w.take();
}

inline WeightFile weights_from_bytes(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_magic("ENSW");
  auto at = r.offset();
  if (auto v = r.u8(); v != kWeightVersion)
    throw FormatError("unsupported weight file version " + std::to_string(v), at);
  const auto count = r.u32();
  WeightFile wf;
  for (std::uint32_t k = 0; k < count; ++k) {
    Tensor t;
    const auto len = r.u16();
    auto name = r.take(len);
    t.name.assign(name.begin(), name.end());
    const auto rank = r.u8();
    std::uint64_t n = 1;
    for (int i = 0; i < rank; ++i) {
      t.dims.push_back(r.u32());
      n *= t.dims.back();
    }
    at = r.offset();
    const auto dt = r.u8();
    if (dt > 1) throw FormatError("unknown dtype " + std::to_string(dt), at);
    t.dtype = static_cast<DType>(dt);
    const std::uint64_t payload = t.dtype == DType::ternary_i8 ? n : 4 * n;
    if (payload > r.remaining())
      throw FormatError("tensor '" + t.name + "' declares " + std::to_string(payload) + " payload byte(s), " +
                            std::to_string(r.remaining()) + " left",
                        r.offset());
    if (t.dtype == DType::ternary_i8) {
      t.ternary.resize(n);
      for (std::uint64_t i = 0; i < n; ++i) {
        at = r.offset();
        const auto b = r.u8();
        if (b != 0x00 && b != 0x01 && b != 0xFF)
          throw FormatError("non-ternary byte in tensor '" + t.name + "'", at);
        t.ternary[i] = static_cast<std::int8_t>(b);
      }
    } else {
      t.real.resize(n);
      for (auto& v : t.real) v = r.f32();
    }
    wf.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw FormatError("trailing bytes after last tensor", r.offset());
  return wf;
}

inline void save_weights(const WeightFile& wf, const std::filesystem::path& path) { write_file(path, weights_bytes(wf)); }
inline WeightFile load_weight_file(const std::filesystem::path& path) { return weights_from_bytes(read_file(path)); }

// ---- LayerWeights mapping ----

inline Tensor ternary_tensor(std::string name, const TernaryMatrix& m) {
  Tensor t;
  t.name = std::move(name);
  t.dims = {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())};
  t.dtype = DType::ternary_i8;
  t.ternary.assign(m.data().begin(), m.data().end());
  return t;
}

inline Tensor real_tensor(std::string name, const std::vector<double>& v) {
  Tensor t;
  t.name = std::move(name);
  t.dims = {static_cast<std::uint32_t>(v.size())};
  t.dtype = DType::real_f32;
  for (double x : v) t.real.push_back(static_cast<float>(x));
  return t;
}

inline TernaryMatrix to_ternary(const Tensor& t) {
  if (t.dtype != DType::ternary_i8 || t.dims.size() != 2)
    throw Error("tensor '" + t.name + "' is not a ternary matrix");
  return TernaryMatrix(t.dims[0], t.dims[1], t.ternary);
}

inline std::vector<double> to_vector(const Tensor& t) {
  if (t.dtype != DType::real_f32 || t.dims.size() != 1) throw Error("tensor '" + t.name + "' is not a real vector");
  return {t.real.begin(), t.real.end()};
}

inline WeightFile to_weight_file(const LayerWeights& w) {
  WeightFile wf;
  wf.tensors.push_back(ternary_tensor("wq", w.Wq));
  wf.tensors.push_back(ternary_tensor("wk", w.Wk));
  wf.tensors.push_back(ternary_tensor("wv", w.Wv));
  wf.tensors.push_back(ternary_tensor("wo", w.Wo));
  wf.tensors.push_back(ternary_tensor("w1", w.W1));
  wf.tensors.push_back(ternary_tensor("w2", w.W2));
  wf.tensors.push_back(ternary_tensor("w3", w.W3));
  wf.tensors.push_back(real_tensor("gamma_attn", w.gamma_attn));
  wf.tensors.push_back(real_tensor("gamma_ffn", w.gamma_ffn));
  if (!w.gamma_final.empty()) wf.tensors.push_back(real_tensor("gamma_final", w.gamma_final));
  wf.tensors.push_back(real_tensor("rope_base", {w.rope_base}));
  return wf;
}

inline LayerWeights to_layer(const WeightFile& wf) {
  LayerWeights w;
  w.Wq = to_ternary(wf.get("wq"));
  w.Wk = to_ternary(wf.get("wk"));
  w.Wv = to_ternary(wf.get("wv"));
  w.Wo = to_ternary(wf.get("wo"));
  w.W1 = to_ternary(wf.get("w1"));
  w.W2 = to_ternary(wf.get("w2"));
  w.W3 = to_ternary(wf.get("w3"));
  w.gamma_attn = to_vector(wf.get("gamma_attn"));
  w.gamma_ffn = to_vector(wf.get("gamma_ffn"));
  if (const auto* g = wf.find("gamma_final")) w.gamma_final = to_vector(*g);
  if (const auto* rb = wf.find("rope_base")) w.rope_base = to_vector(*rb).at(0);
  w.validate();
  return w;
}

inline void save_weights(const LayerWeights& w, const std::filesystem::path& path) {
  save_weights(to_weight_file(w), path);
}
inline LayerWeights load_weights(const std::filesystem::path& path) { return to_layer(load_weight_file(path)); }

}  // namespace ensi::io
