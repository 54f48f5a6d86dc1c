// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "galore/errors.hpp"
#include "galore/matrix.hpp"

namespace galore {

/// Largest code magnitude for a signed symmetric `bits`-wide code.
constexpr int signed_code_max(int bits) noexcept { return (1 << (bits - 1)) - 1; }

/// Per-column symmetric absmax quantization of a projection matrix.
struct QuantizedMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  int bits = 8;
  std::vector<std::int8_t> codes; // row-major, |code| <= 2^(bits-1) - 1
  std::vector<double> scales;     // per-column absmax

  /// Bytes of storage at `bits` per code plus one 32-bit scale per column.
  std::size_t storage_bytes() const noexcept {
    return (codes.size() * static_cast<std::size_t>(bits) + 7) / 8 + scales.size() * 4;
  }

  friend bool operator==(const QuantizedMatrix &, const QuantizedMatrix &) = default;
};

inline QuantizedMatrix quantize_projector(const Matrix &p, int bits) {
  if (bits != 4 && bits != 8) {
    throw ParameterError("quantize_projector: bits must be 4 or 8, got " + std::to_string(bits));
  }
  QuantizedMatrix q;
  q.rows = p.rows();
  q.cols = p.cols();
  q.bits = bits;
  q.codes.resize(p.size());
  q.scales.assign(p.cols(), 0.0);
  const double qmax = signed_code_max(bits);
  for (std::size_t i = 0; i < p.rows(); ++i) {
    for (std::size_t j = 0; j < p.cols(); ++j) {
      q.scales[j] = std::max(q.scales[j], std::abs(p(i, j)));
    }
  }
  for (std::size_t i = 0; i < p.rows(); ++i) {
    for (std::size_t j = 0; j < p.cols(); ++j) {
      const double scale = q.scales[j];
      const double code = scale == 0.0 ? 0.0 : std::round(p(i, j) / scale * qmax);
      q.codes[i * p.cols() + j] = static_cast<std::int8_t>(std::clamp(code, -qmax, qmax));
    }
  }
  return q;
}

inline Matrix dequantize_projector(const QuantizedMatrix &q) {
  Matrix p(q.rows, q.cols);
  const double qmax = signed_code_max(q.bits);
  for (std::size_t i = 0; i < q.rows; ++i) {
    for (std::size_t j = 0; j < q.cols; ++j) {
      p(i, j) = q.codes[i * q.cols + j] * q.scales[j] / qmax;
    }
  }
  return p;
}

/// Blockwise 8-bit linear absmax quantization of an optimizer moment.
///
/// Signed moments (first moment) map to [-127, 127]; unsigned moments
/// (second moment, non-negative) map to [0, 255]. Blocks are contiguous runs
/// of `block_size` entries of the row-major data; the last block may be short.
/// Unsigned codes round positive values up to at least one step so that the
/// decoded second moment of a non-zero entry is never exactly zero.
struct QuantizedMoment {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t block_size = 256;
  bool is_signed = true;
  std::vector<std::uint8_t> codes; // reinterpret as int8 when signed
  std::vector<double> block_scales;

  std::size_t storage_bytes() const noexcept { return codes.size() + block_scales.size() * 4; }
};

inline QuantizedMoment quantize_moment(const Matrix &x, std::size_t block_size, bool is_signed) {
  if (block_size < 1) {
    throw ParameterError("quantize_moment: block_size must be >= 1");
  }
  QuantizedMoment q;
  q.rows = x.rows();
  q.cols = x.cols();
  q.block_size = block_size;
  q.is_signed = is_signed;
  const auto data = x.data();
  q.codes.resize(data.size());
  const std::size_t blocks = (data.size() + block_size - 1) / block_size;
  q.block_scales.assign(blocks, 0.0);
  const double qmax = is_signed ? 127.0 : 255.0;
  for (std::size_t b = 0; b < blocks; ++b) {
    const std::size_t lo = b * block_size;
    const std::size_t hi = std::min(lo + block_size, data.size());
    double absmax = 0.0;
    for (std::size_t i = lo; i < hi; ++i) {
      absmax = std::max(absmax, std::abs(data[i]));
    }
    q.block_scales[b] = absmax;
    for (std::size_t i = lo; i < hi; ++i) {
      double code = absmax == 0.0 ? 0.0 : std::round(data[i] / absmax * qmax);
      if (is_signed) {
        code = std::clamp(code, -qmax, qmax);
        q.codes[i] = static_cast<std::uint8_t>(static_cast<std::int8_t>(code));
      } else {
        if (data[i] < 0.0) {
          throw NumericError("quantize_moment: negative value in unsigned moment");
        }
        // A positive second moment never decodes to zero; code 1 is still
        // within absmax / 255 of any value below half a step.
        if (data[i] > 0.0) {
          code = std::max(code, 1.0);
        }
        q.codes[i] = static_cast<std::uint8_t>(std::clamp(code, 0.0, qmax));
      }
    }
  }
  return q;
}

inline Matrix dequantize_moment(const QuantizedMoment &q) {
  Matrix x(q.rows, q.cols);
  auto data = x.data();
  const double qmax = q.is_signed ? 127.0 : 255.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double scale = q.block_scales[i / q.block_size];
    const double code = q.is_signed ? static_cast<double>(static_cast<std::int8_t>(q.codes[i]))
                                    : static_cast<double>(q.codes[i]);
    data[i] = code * scale / qmax;
  }
  return x;
}

} // namespace galore
