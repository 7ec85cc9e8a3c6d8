// SPDX-License-Identifier: Apache-2.0
#include "msm/io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace msm::io {

namespace {

static_assert(std::endian::native == std::endian::little ||
                  std::endian::native == std::endian::big,
              "mixed-endian platforms are not supported");

template <typename U>
void put_le(std::ostream& os, U value) {
  std::array<char, sizeof(U)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  os.write(bytes.data(), bytes.size());
}

template <typename U>
U get_le(std::istream& is) {
  std::array<char, sizeof(U)> bytes;
  if (!is.read(bytes.data(), bytes.size())) throw ValidationError("MSMT: truncated stream");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  U value;
  std::memcpy(&value, bytes.data(), sizeof(U));
  return value;
}

template <typename T>
Tensor<T> read_payload(std::istream& is, Shape shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  std::vector<T> data(n);
  for (auto& v : data) v = get_le<T>(is);
  return Tensor<T>(std::move(shape), std::move(data));
}

std::ofstream open_out(const std::filesystem::path& path, std::ios::openmode mode) {
  std::ofstream os(path, mode);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  return os;
}

}  // namespace

template <typename T>
void write_msmt(std::ostream& os, const Tensor<T>& t) {
  os.write(kMagic, 4);
  put_le<std::uint16_t>(os, kFormatVersion);
  put_le<std::uint8_t>(os, static_cast<std::uint8_t>(precision_of<T>()));
  if (t.rank() > 255) throw ShapeError("MSMT: rank exceeds 255");
  put_le<std::uint8_t>(os, static_cast<std::uint8_t>(t.rank()));
  for (auto e : t.shape()) put_le<std::uint64_t>(os, e);
  for (T v : t.data()) put_le<T>(os, v);
}

template <typename T>
void write_msmt(const std::filesystem::path& path, const Tensor<T>& t) {
  auto os = open_out(path, std::ios::binary);
  write_msmt(os, t);
}

AnyTensor read_msmt(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw ValidationError("MSMT: bad magic");
  }
  const auto version = get_le<std::uint16_t>(is);
  if (version != kFormatVersion) {
    throw ValidationError("MSMT: unsupported version " + std::to_string(version));
  }
  const auto precision = get_le<std::uint8_t>(is);
  const auto rank = get_le<std::uint8_t>(is);
  Shape shape(rank);
  for (auto& e : shape) e = static_cast<std::size_t>(get_le<std::uint64_t>(is));
  AnyTensor result;
  switch (precision) {
    case 0: result = read_payload<float>(is, std::move(shape)); break;
    case 1: result = read_payload<double>(is, std::move(shape)); break;
    default: throw ValidationError("MSMT: unknown precision byte " + std::to_string(precision));
  }
  if (is.peek() != std::char_traits<char>::eof()) throw ValidationError("MSMT: trailing bytes");
  return result;
}

AnyTensor read_msmt(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("cannot open " + path.string());
  return read_msmt(is);
}

TensorD read_msmt_as_double(const std::filesystem::path& path) {
  return std::visit([](const auto& t) { return t.template cast<double>(); }, read_msmt(path));
}

void write_mask_msmt(const std::filesystem::path& path, const BoolMask& mask) {
  TensorF t({mask.rows(), mask.cols()});
  for (std::size_t r = 0; r < mask.rows(); ++r) {
    for (std::size_t c = 0; c < mask.cols(); ++c) t.at(r, c) = mask.get(r, c) ? 1.0f : 0.0f;
  }
  write_msmt(path, t);
}

void write_mask_pbm(const std::filesystem::path& path, const BoolMask& mask) {
  std::ostringstream ss;
  ss << "P1\n" << mask.cols() << ' ' << mask.rows() << '\n';
  for (std::size_t r = 0; r < mask.rows(); ++r) {
    for (std::size_t c = 0; c < mask.cols(); ++c) {
      if (c) ss << ' ';
      ss << (mask.get(r, c) ? '1' : '0');
    }
    ss << '\n';
  }
  write_text(path, ss.str());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  auto os = open_out(path, std::ios::binary);
  os << text;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

template void write_msmt(std::ostream&, const TensorF&);
template void write_msmt(std::ostream&, const TensorD&);
template void write_msmt(const std::filesystem::path&, const TensorF&);
template void write_msmt(const std::filesystem::path&, const TensorD&);

}  // namespace msm::io
