// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <variant>

#include "msm/tensor.hpp"

namespace msm::io {

// MSMT tensor interchange format, all integers little-endian:
//   "MSMT" | version u16 | precision u8 (0 f32, 1 f64) | rank u8 |
//   rank x extent u64 | row-major payload
inline constexpr char kMagic[4] = {'M', 'S', 'M', 'T'};
inline constexpr std::uint16_t kFormatVersion = 1;

using AnyTensor = std::variant<TensorF, TensorD>;

template <typename T>
void write_msmt(std::ostream& os, const Tensor<T>& t);

template <typename T>
void write_msmt(const std::filesystem::path& path, const Tensor<T>& t);

AnyTensor read_msmt(std::istream& is);
AnyTensor read_msmt(const std::filesystem::path& path);

// Reads either precision and widens to double.
TensorD read_msmt_as_double(const std::filesystem::path& path);

// Writes a mask as an f32 tensor of 0.0/1.0 values.
void write_mask_msmt(const std::filesystem::path& path, const BoolMask& mask);

// Plain PBM (P1); 1 marks an allowed (q, k) pair.
void write_mask_pbm(const std::filesystem::path& path, const BoolMask& mask);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace msm::io
