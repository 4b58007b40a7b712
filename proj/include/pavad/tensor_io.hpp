#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pavad::io {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr char kPavfMagic[4] = {'P', 'A', 'V', 'F'};
inline constexpr std::uint32_t kPavfVersion = 1;

// A rank-1 or rank-2 float32 array as stored on disk. Rank-2 is row-major
// (rows = segments or vectors, cols = feature dimension).
struct PavfTensor {
  std::vector<std::uint32_t> dims;
  std::vector<float> data;

  static PavfTensor matrix(std::uint32_t rows, std::uint32_t cols, std::vector<float> values);
  static PavfTensor vector(std::vector<float> values);

  std::size_t rank() const { return dims.size(); }
  std::uint32_t rows() const { return dims.empty() ? 0 : dims[0]; }
  std::uint32_t cols() const { return dims.size() == 2 ? dims[1] : 1; }
  std::span<const float> row(std::size_t r) const {
    return std::span<const float>(data).subspan(r * cols(), cols());
  }
};

struct PavfHeader {
  std::uint32_t version = 0;
  std::vector<std::uint32_t> dims;
};

std::vector<std::uint8_t> encode_pavf(const PavfTensor& t);
PavfTensor decode_pavf(std::span<const std::uint8_t> bytes);

void write_tensor(const PavfTensor& t, const std::filesystem::path& path);
PavfTensor read_tensor(const std::filesystem::path& path);
// Reads and validates only the header; the file size must still match.
PavfHeader read_header(const std::filesystem::path& path);

// Segment-to-frame expansion: frame f takes row_scores[f / frames_per_row].
std::vector<double> expand_to_frames(std::span<const double> row_scores, std::size_t frames_per_row,
                                     std::size_t total_frames);

}  // namespace pavad::io
