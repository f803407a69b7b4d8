#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ensi/core/bytes.hpp"
#include "ensi/core/matrix.hpp"
#include "ensi/he/backend.hpp"
#include "ensi/he/serialize.hpp"

namespace ensi {

/// s x d real matrix held as d column ciphertexts; slot i of cols[j] is X(i, j).
template <he::Backend B>
struct PackedMatrix {
  using Ciphertext = typename B::Ciphertext;
  static constexpr const char* layout = "column";

  std::vector<Ciphertext> cols;
  std::size_t rows = 0;

  std::size_t ncols() const noexcept { return cols.size(); }

  int level() const {
    int l = cols.empty() ? 0 : cols.front().level();
    for (const auto& c : cols) l = std::min(l, c.level());
    return l;
  }
  int depth() const {
    int d = 0;
    for (const auto& c : cols) d = std::max(d, c.info.path_depth);
    return d;
  }
};

template <he::Backend B>
PackedMatrix<B> pack_columns(const B& b, const Matrix& X, int level = -1) {
  if (X.rows() > b.slot_count())
    throw DimensionMismatch("pack_columns: " + std::to_string(X.rows()) + " rows exceed " +
                            std::to_string(b.slot_count()) + " slots");
  PackedMatrix<B> pm;
  pm.rows = X.rows();
  pm.cols.reserve(X.cols());
  for (std::size_t j = 0; j < X.cols(); ++j) {
    auto col = X.column(j);
    pm.cols.push_back(b.encrypt(col, level));
  }
  return pm;
}

template <he::Backend B>
Matrix unpack(const B& b, const PackedMatrix<B>& pm) {
  Matrix X(pm.rows, pm.ncols());
  for (std::size_t j = 0; j < pm.ncols(); ++j) {
    auto v = b.decrypt(pm.cols[j]);
    for (std::size_t i = 0; i < pm.rows; ++i) X(i, j) = v[i];
  }
  return X;
}

/// c in every slot.
template <he::Backend B>
he::Plaintext encode_broadcast(const B& b, double c, int level = -1) {
  std::vector<double> v(b.slot_count(), c);
  return b.encode(v, level);
}

/// v in slots 0..len-1, zeros after.
template <he::Backend B>
he::Plaintext encode_slotwise(const B& b, std::span<const double> v, int level = -1) {
  return b.encode(v, level);
}

/// Re-levels every column to the lowest column level.
template <he::Backend B>
PackedMatrix<B> level_align(const B& b, PackedMatrix<B> pm) {
  const int l = pm.level();
  for (auto& c : pm.cols)
    if (c.level() != l) c = b.drop_to(c, l);
  return pm;
}

template <he::Backend B>
double slot_utilization(const B& b, const PackedMatrix<B>& pm) {
  return static_cast<double>(pm.rows) / b.slot_count();
}

// "ENSM" | s u32 | d u32 | d ciphertexts

template <he::Backend B>
void write_packed(ByteWriter& w, const B& b, const PackedMatrix<B>& pm) {
  w.magic("ENSM");
  w.u32(static_cast<std::uint32_t>(pm.rows));
  w.u32(static_cast<std::uint32_t>(pm.ncols()));
  for (const auto& c : pm.cols) he::write_ciphertext(w, b, c);
}

template <he::Backend B>
PackedMatrix<B> read_packed(ByteReader& r, const B& b) {
  r.expect_magic("ENSM");
  auto at = r.offset();
  PackedMatrix<B> pm;
  pm.rows = r.u32();
  if (pm.rows > b.slot_count()) throw FormatError("row count exceeds slot count", at);
  const auto d = r.u32();
  pm.cols.reserve(d);
  for (std::uint32_t j = 0; j < d; ++j) pm.cols.push_back(he::read_ciphertext(r, b));
  return pm;
}

template <he::Backend B>
std::vector<std::uint8_t> packed_bytes(const B& b, const PackedMatrix<B>& pm) {
  ByteWriter w;
  write_packed(w, b, pm);
  return w.take();
}

template <he::Backend B>
PackedMatrix<B> packed_from_bytes(const B& b, std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  auto pm = read_packed(r, b);
  if (!r.done()) throw FormatError("trailing bytes after packed matrix", r.offset());
  return pm;
}

}  // namespace ensi
