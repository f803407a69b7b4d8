#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <vector>

namespace ensi::he {

/// Canonical-embedding encoder: n/2 complex slots <-> n real coefficients.
/// Slot j corresponds to evaluation at zeta^(5^j), zeta = exp(i*pi/n).
class SlotEncoder {
 public:
  using cplx = std::complex<double>;

  SlotEncoder() = default;
  explicit SlotEncoder(std::size_t ring_degree) : n_(ring_degree), slots_(ring_degree / 2) {
    const std::size_t m = 2 * n_;
    rot_group_.resize(slots_);
    std::size_t five = 1;
    for (std::size_t j = 0; j < slots_; ++j) {
      rot_group_[j] = five;
      five = (five * 5) % m;
    }
    ksi_.resize(m + 1);
    for (std::size_t j = 0; j <= m; ++j) {
      double a = 2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(m);
      ksi_[j] = {std::cos(a), std::sin(a)};
    }
    log_slots_ = 0;
    while ((std::size_t{1} << log_slots_) < slots_) ++log_slots_;
  }

  std::size_t ring_degree() const noexcept { return n_; }
  std::size_t slot_count() const noexcept { return slots_; }

  /// Real coefficients (unscaled) whose embedding is `z`.
  std::vector<double> embed_inverse(const std::vector<cplx>& z) const {
    std::vector<cplx> v(z);
    v.resize(slots_);
    fft_special_inv(v);
    std::vector<double> coeffs(n_);
    for (std::size_t i = 0; i < slots_; ++i) {
      coeffs[i] = v[i].real();
      coeffs[i + slots_] = v[i].imag();
    }
    return coeffs;
  }

  std::vector<cplx> embed(const std::vector<double>& coeffs) const {
    std::vector<cplx> v(slots_);
    for (std::size_t i = 0; i < slots_; ++i) v[i] = {coeffs[i], coeffs[i + slots_]};
    fft_special(v);
    return v;
  }

  std::size_t rot_group(std::size_t j) const { return rot_group_[j]; }

 private:
  void bit_reverse(std::vector<cplx>& v) const {
    for (std::size_t i = 1, j = 0; i < slots_; ++i) {
      std::size_t bit = slots_ >> 1;
      for (; j >= bit; bit >>= 1) j -= bit;
      j += bit;
      if (i < j) std::swap(v[i], v[j]);
    }
  }

  void fft_special(std::vector<cplx>& v) const {
    const std::size_t m = 2 * n_;
    bit_reverse(v);
    for (std::size_t len = 2; len <= slots_; len <<= 1) {
      const std::size_t lenh = len >> 1, lenq = len << 2;
      for (std::size_t i = 0; i < slots_; i += len) {
        for (std::size_t j = 0; j < lenh; ++j) {
          std::size_t idx = (rot_group_[j] % lenq) * (m / lenq);
          cplx u = v[i + j];
          cplx w = v[i + j + lenh] * ksi_[idx];
          v[i + j] = u + w;
          v[i + j + lenh] = u - w;
        }
      }
    }
  }

  void fft_special_inv(std::vector<cplx>& v) const {
    const std::size_t m = 2 * n_;
    for (std::size_t len = slots_; len >= 2; len >>= 1) {
      const std::size_t lenh = len >> 1, lenq = len << 2;
      for (std::size_t i = 0; i < slots_; i += len) {
        for (std::size_t j = 0; j < lenh; ++j) {
          std::size_t idx = (lenq - (rot_group_[j] % lenq)) * (m / lenq);
          cplx u = v[i + j] + v[i + j + lenh];
          cplx w = (v[i + j] - v[i + j + lenh]) * ksi_[idx];
          v[i + j] = u;
          v[i + j + lenh] = w;
        }
      }
    }
    bit_reverse(v);
    const double inv = 1.0 / static_cast<double>(slots_);
    for (auto& x : v) x *= inv;
  }

  std::size_t n_ = 0, slots_ = 0;
  int log_slots_ = 0;
  std::vector<std::size_t> rot_group_;
  std::vector<cplx> ksi_;
};

}  // namespace ensi::he
