#include "pavad/tensor_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

namespace pavad::io {
namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t off) {
  return static_cast<std::uint32_t>(b[off]) | (static_cast<std::uint32_t>(b[off + 1]) << 8) |
         (static_cast<std::uint32_t>(b[off + 2]) << 16) | (static_cast<std::uint32_t>(b[off + 3]) << 24);
}

std::size_t header_size(std::size_t rank) { return 12 + 4 * rank; }

std::size_t element_count(const std::vector<std::uint32_t>& dims) {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

void check_dims(const std::vector<std::uint32_t>& dims) {
  if (dims.size() != 1 && dims.size() != 2)
    throw FormatError("PAVF rank must be 1 or 2, got " + std::to_string(dims.size()));
  for (auto d : dims)
    if (d == 0) throw FormatError("PAVF dims must be >= 1");
}

PavfHeader parse_header(std::span<const std::uint8_t> b) {
  if (b.size() < 12) throw FormatError("PAVF file truncated: header shorter than 12 bytes");
  if (std::memcmp(b.data(), kPavfMagic, 4) != 0) throw FormatError("bad PAVF magic");
  PavfHeader h;
  h.version = get_u32(b, 4);
  if (h.version != kPavfVersion) throw FormatError("unsupported PAVF version " + std::to_string(h.version));
  const std::uint32_t rank = get_u32(b, 8);
  if (rank != 1 && rank != 2) throw FormatError("PAVF rank must be 1 or 2, got " + std::to_string(rank));
  if (b.size() < header_size(rank)) throw FormatError("PAVF file truncated inside dims");
  for (std::uint32_t i = 0; i < rank; ++i) h.dims.push_back(get_u32(b, 12 + 4 * i));
  check_dims(h.dims);
  return h;
}

std::vector<std::uint8_t> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

PavfTensor PavfTensor::matrix(std::uint32_t rows, std::uint32_t cols, std::vector<float> values) {
  if (values.size() != static_cast<std::size_t>(rows) * cols)
    throw FormatError("matrix payload does not match dims");
  return PavfTensor{{rows, cols}, std::move(values)};
}

PavfTensor PavfTensor::vector(std::vector<float> values) {
  const auto n = static_cast<std::uint32_t>(values.size());
  return PavfTensor{{n}, std::move(values)};
}

std::vector<std::uint8_t> encode_pavf(const PavfTensor& t) {
  check_dims(t.dims);
  if (t.data.size() != element_count(t.dims)) throw FormatError("PAVF payload length does not match dims");
  std::vector<std::uint8_t> out;
  out.reserve(header_size(t.rank()) + 4 * t.data.size());
  out.insert(out.end(), kPavfMagic, kPavfMagic + 4);
  put_u32(out, kPavfVersion);
  put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.dims) put_u32(out, d);
  for (std::size_t i = 0; i < t.data.size(); ++i) {
    const float v = t.data[i];
    if (!std::isfinite(v)) throw FormatError("non-finite value at flat index " + std::to_string(i));
    put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

PavfTensor decode_pavf(std::span<const std::uint8_t> bytes) {
  PavfHeader h = parse_header(bytes);
  const std::size_t n = element_count(h.dims);
  const std::size_t expected = header_size(h.dims.size()) + 4 * n;
  if (bytes.size() != expected)
    throw FormatError("PAVF size mismatch: expected " + std::to_string(expected) + " bytes, found " +
                      std::to_string(bytes.size()));
  PavfTensor t;
  t.dims = std::move(h.dims);
  t.data.resize(n);
  const std::size_t off = header_size(t.dims.size());
  for (std::size_t i = 0; i < n; ++i) {
    t.data[i] = std::bit_cast<float>(get_u32(bytes, off + 4 * i));
    if (!std::isfinite(t.data[i])) throw FormatError("non-finite value at flat index " + std::to_string(i));
  }
  return t;
}

void write_tensor(const PavfTensor& t, const std::filesystem::path& path) {
  const auto bytes = encode_pavf(t);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

PavfTensor read_tensor(const std::filesystem::path& path) {
  const auto bytes = read_all(path);
  try {
    return decode_pavf(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

PavfHeader read_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::uint8_t> head(20);
  in.read(reinterpret_cast<char*>(head.data()), static_cast<std::streamsize>(head.size()));
  head.resize(static_cast<std::size_t>(in.gcount()));
  PavfHeader h;
  try {
    h = parse_header(head);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  const auto expected = header_size(h.dims.size()) + 4 * element_count(h.dims);
  if (std::filesystem::file_size(path) != expected)
    throw FormatError(path.string() + ": PAVF size mismatch");
  return h;
}

std::vector<double> expand_to_frames(std::span<const double> row_scores, std::size_t frames_per_row,
                                     std::size_t total_frames) {
  if (frames_per_row == 0) throw std::invalid_argument("frames_per_row must be positive");
  if (row_scores.size() * frames_per_row < total_frames)
    throw std::invalid_argument("insufficient rows: " + std::to_string(row_scores.size()) + " rows x " +
                                std::to_string(frames_per_row) + " < " + std::to_string(total_frames) +
                                " frames");
  std::vector<double> frames(total_frames);
  for (std::size_t f = 0; f < total_frames; ++f) frames[f] = row_scores[f / frames_per_row];
  return frames;
}

}  // namespace pavad::io
