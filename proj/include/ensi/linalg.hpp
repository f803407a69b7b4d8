#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ensi/core/matrix.hpp"
#include "ensi/packing.hpp"
#include "ensi/runtime/stage.hpp"

namespace ensi {

enum class Orientation { direct, transposed };

/// Reads entry (j, i) of a logical d x m right-hand operand out of a packed matrix.
/// direct: B(j,i) is slot j of cols[i]. transposed (B = K^T): slot i of cols[j].
template <he::Backend B>
struct ElementAccessor {
  const PackedMatrix<B>* source = nullptr;
  Orientation orientation = Orientation::direct;

  std::size_t rows() const { return orientation == Orientation::direct ? source->rows : source->ncols(); }
  std::size_t cols() const { return orientation == Orientation::direct ? source->ncols() : source->rows; }

  std::pair<std::size_t, std::size_t> resolve(std::size_t j, std::size_t i) const {
    if (j >= rows() || i >= cols()) throw DimensionMismatch("element accessor index out of range");
    return orientation == Orientation::direct ? std::pair{i, j} : std::pair{j, i};
  }

  /// Upper bound on the slot positions this accessor reads.
  std::size_t slot_bound() const { return source->rows; }
};

template <he::Backend B>
ElementAccessor<B> direct(const PackedMatrix<B>& m) {
  return {&m, Orientation::direct};
}
template <he::Backend B>
ElementAccessor<B> transposed(const PackedMatrix<B>& m) {
  return {&m, Orientation::transposed};
}

enum class ExtractMode { doubling, naive };

inline int ceil_log2(std::size_t x) { return x <= 1 ? 0 : std::bit_width(x - 1); }

/// Y = X * W for ternary W (d x m) using only additions and subtractions.
template <he::Backend B>
PackedMatrix<B> pcmm(const B& b, const PackedMatrix<B>& X, const TernaryMatrix& W, LevelTracker* tracker = nullptr) {
  if (X.ncols() != W.rows())
    throw DimensionMismatch("pcmm: X has " + std::to_string(X.ncols()) + " columns, W has " +
                            std::to_string(W.rows()) + " rows");
  if (X.ncols() == 0) throw DimensionMismatch("pcmm: empty input");
  return run_stage(
      tracker, "pcmm",
      [&] {
        PackedMatrix<B> Y;
        Y.rows = X.rows;
        Y.cols.reserve(W.cols());
        for (std::size_t i = 0; i < W.cols(); ++i) {
          std::optional<typename B::Ciphertext> acc;
          // start from a +1 term when there is one so no negation is needed
          std::size_t first = W.rows();
          for (std::size_t j = 0; j < W.rows(); ++j)
            if (W(j, i) == 1) {
              first = j;
              break;
            }
          if (first < W.rows()) acc = X.cols[first];
          for (std::size_t j = 0; j < W.rows(); ++j) {
            if (j == first || W(j, i) == 0) continue;
            if (!acc) {
              acc = b.negate(X.cols[j]);  // only -1 terms in this column so far
              continue;
            }
            acc = W(j, i) == 1 ? b.add(*acc, X.cols[j]) : b.sub(*acc, X.cols[j]);
          }
          Y.cols.push_back(acc ? std::move(*acc) : b.zero_like(X.cols[0]));
        }
        return level_align(b, std::move(Y));
      },
      X);
}

/// Replicates slot `slot` of `ct` into slots 0..2^ceil(log2 span)-1 (doubling)
/// or 0..span-1 (naive). `scale` is folded into the selection mask.
template <he::Backend B>
typename B::Ciphertext extract_broadcast(const B& b, const typename B::Ciphertext& ct, std::size_t slot,
                                         std::size_t span, double scale = 1.0,
                                         ExtractMode mode = ExtractMode::doubling) {
  if (span == 0 || slot >= span || span > b.slot_count())
    throw DimensionMismatch("extract_broadcast: need slot < span <= N");
  std::vector<double> mask(slot + 1, 0.0);
  mask[slot] = scale;
  auto x = b.mult_plain(ct, mask);
  if (mode == ExtractMode::doubling) {
    const int r = ceil_log2(span);
    for (int j = 0; j < r; ++j) {
      const long step = 1L << j;
      x = b.add(x, b.rotate(x, (slot >> j) & 1 ? step : -step));
    }
    return x;
  }
  auto acc = x;
  auto cur = x;
  for (std::size_t t = 0; t < slot; ++t) {
    cur = b.rotate(cur, 1);
    acc = b.add(acc, cur);
  }
  cur = x;
  for (std::size_t t = slot + 1; t < span; ++t) {
    cur = b.rotate(cur, -1);
    acc = b.add(acc, cur);
  }
  return acc;
}

/// C = A * B via outer products: column i = sum_j a_j * broadcast(B(j,i)).
/// Two levels: one for the extraction mask, one for the product.
template <he::Backend B>
PackedMatrix<B> ccmm(const B& b, const PackedMatrix<B>& A, const ElementAccessor<B>& Bm, double scale_fold = 1.0,
                     LevelTracker* tracker = nullptr, ExtractMode mode = ExtractMode::doubling) {
  if (A.ncols() != Bm.rows())
    throw DimensionMismatch("ccmm: A has " + std::to_string(A.ncols()) + " columns, B has " +
                            std::to_string(Bm.rows()) + " rows");
  const std::size_t span = std::max(A.rows, Bm.slot_bound());
  return run_stage(
      tracker, "ccmm",
      [&] {
        PackedMatrix<B> C;
        C.rows = A.rows;
        const std::size_t d = A.ncols();
        for (std::size_t i = 0; i < Bm.cols(); ++i) {
          std::vector<typename B::Ciphertext> ext;
          ext.reserve(d);
          for (std::size_t j = 0; j < d; ++j) {
            auto [ci, slot] = Bm.resolve(j, i);
            try {
              ext.push_back(extract_broadcast(b, Bm.source->cols[ci], slot, span, scale_fold, mode));
            } catch (const DepthExceeded& e) {
              throw DepthExceeded("extract(" + std::to_string(j) + "," + std::to_string(i) + ")", e.required(),
                                  e.available());
            }
          }
          std::vector<const typename B::Ciphertext*> pa, pb;
          for (std::size_t j = 0; j < d; ++j) {
            pa.push_back(&A.cols[j]);
            pb.push_back(&ext[j]);
          }
          try {
            C.cols.push_back(b.dot(pa, pb));
          } catch (const DepthExceeded& e) {
            throw DepthExceeded("column " + std::to_string(i), e.required(), e.available());
          }
        }
        return level_align(b, std::move(C));
      },
      A, *Bm.source);
}

/// Slotwise product of every column with one plaintext vector.
template <he::Backend B>
PackedMatrix<B> hadamard_pc(const B& b, const PackedMatrix<B>& pm, std::span<const double> v,
                            LevelTracker* tracker = nullptr) {
  return run_stage(
      tracker, "hadamard_pc",
      [&] {
        PackedMatrix<B> out;
        out.rows = pm.rows;
        for (const auto& c : pm.cols) out.cols.push_back(b.mult_plain(c, v));
        return level_align(b, std::move(out));
      },
      pm);
}

/// Slotwise product with a plaintext matrix of the same shape.
template <he::Backend B>
PackedMatrix<B> hadamard_pc(const B& b, const PackedMatrix<B>& pm, const Matrix& V, LevelTracker* tracker = nullptr) {
  if (V.rows() != pm.rows || V.cols() != pm.ncols()) throw DimensionMismatch("hadamard_pc: shape mismatch");
  return run_stage(
      tracker, "hadamard_pc",
      [&] {
        PackedMatrix<B> out;
        out.rows = pm.rows;
        for (std::size_t j = 0; j < pm.ncols(); ++j) out.cols.push_back(b.mult_plain(pm.cols[j], V.column(j)));
        return level_align(b, std::move(out));
      },
      pm);
}

template <he::Backend B>
PackedMatrix<B> hadamard_cc(const B& b, const PackedMatrix<B>& x, const PackedMatrix<B>& y,
                            LevelTracker* tracker = nullptr) {
  if (x.rows != y.rows || x.ncols() != y.ncols()) throw DimensionMismatch("hadamard_cc: shape mismatch");
  return run_stage(
      tracker, "hadamard_cc",
      [&] {
        PackedMatrix<B> out;
        out.rows = x.rows;
        for (std::size_t j = 0; j < x.ncols(); ++j) out.cols.push_back(b.mult(x.cols[j], y.cols[j]));
        return level_align(b, std::move(out));
      },
      x, y);
}

/// Columnwise sum; the deeper operand decides the level.
template <he::Backend B>
PackedMatrix<B> add(const B& b, const PackedMatrix<B>& x, const PackedMatrix<B>& y) {
  if (x.rows != y.rows || x.ncols() != y.ncols()) throw DimensionMismatch("add: shape mismatch");
  PackedMatrix<B> out;
  out.rows = x.rows;
  for (std::size_t j = 0; j < x.ncols(); ++j) out.cols.push_back(b.add(x.cols[j], y.cols[j]));
  return level_align(b, std::move(out));
}

/// Columns [first, first+count).
template <he::Backend B>
PackedMatrix<B> column_slice(const PackedMatrix<B>& x, std::size_t first, std::size_t count) {
  if (first + count > x.ncols()) throw DimensionMismatch("column slice out of range");
  PackedMatrix<B> out;
  out.rows = x.rows;
  out.cols.assign(x.cols.begin() + first, x.cols.begin() + first + count);
  return out;
}

template <he::Backend B>
PackedMatrix<B> concat_columns(std::vector<PackedMatrix<B>> parts) {
  PackedMatrix<B> out;
  for (auto& p : parts) {
    if (out.cols.empty()) out.rows = p.rows;
    else if (p.rows != out.rows) throw DimensionMismatch("concat: row mismatch");
    for (auto& c : p.cols) out.cols.push_back(std::move(c));
  }
  return out;
}

}  // namespace ensi
