#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace pavad::io {

enum class VideoLabel { normal, abnormal };
enum class Domain { real, pseudo };

std::string to_string(VideoLabel l);
std::string to_string(Domain d);

struct ManifestEntry {
  std::string path;  // relative to the manifest's directory unless absolute
  std::string video_id;
  VideoLabel label = VideoLabel::normal;
  Domain domain = Domain::real;
  std::string scene_id;
  std::uint32_t frames_per_row = 1;
  std::uint32_t total_frames = 1;
};

struct DatasetManifest {
  std::filesystem::path base_dir;
  std::vector<ManifestEntry> entries;

  std::filesystem::path tensor_path(const ManifestEntry& e) const;
  const ManifestEntry* find(const std::string& video_id) const;
};

enum class ManifestErrorCode {
  parse,
  missing_field,
  bad_value,
  duplicate_video_id,
  missing_tensor,
  bad_tensor,
  frame_count_mismatch,
  real_abnormal_in_training,
};

std::string to_string(ManifestErrorCode c);

// Structured validation failure. entry_index is absent for document-level
// problems (unparseable JSON, missing "entries").
class ManifestError : public std::runtime_error {
 public:
  ManifestError(ManifestErrorCode code, std::optional<std::size_t> entry_index, const std::string& detail);

  ManifestErrorCode code() const { return code_; }
  std::optional<std::size_t> entry_index() const { return entry_index_; }

 private:
  ManifestErrorCode code_;
  std::optional<std::size_t> entry_index_;
};

enum class ManifestPurpose { any, training };

DatasetManifest read_manifest(const std::filesystem::path& path, ManifestPurpose purpose = ManifestPurpose::any);
// Validates an in-memory JSON text as if it lived in base_dir.
DatasetManifest parse_manifest(const std::string& json_text, const std::filesystem::path& base_dir,
                               ManifestPurpose purpose = ManifestPurpose::any);
void write_manifest(const DatasetManifest& m, const std::filesystem::path& path);

// ---- frame-level ground truth ----

struct FrameMask {
  std::string video_id;
  std::vector<std::uint8_t> mask;  // one entry per frame, 1 = abnormal
};

// Intervals are half-open [start, end) frame ranges.
struct MaskIntervals {
  std::string video_id;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> intervals;
};

std::vector<MaskIntervals> read_mask_intervals(const std::filesystem::path& path);
void write_mask_intervals(const std::vector<MaskIntervals>& masks, const std::filesystem::path& path);
FrameMask compile_mask(const MaskIntervals& m, std::uint32_t total_frames);
// Compiles every entry of `manifest` that has an interval record; throws if a
// manifest video has no record.
std::vector<FrameMask> compile_masks(const std::vector<MaskIntervals>& masks, const DatasetManifest& manifest);

// ---- generation jobs ----

struct GenerationJob {
  std::string class_name;
  std::string init_image_path;
  std::string prompt;
  std::pair<std::uint32_t, std::uint32_t> resolution{832, 480};
  std::uint32_t frame_count = 81;
  std::uint32_t fps = 16;
  std::uint32_t sampling_steps = 25;
  std::pair<double, double> guidance{3.5, 3.5};
};

void validate(const GenerationJob& job);
std::string generation_manifest_json(const std::vector<GenerationJob>& jobs);
std::vector<GenerationJob> parse_generation_manifest(const std::string& json_text);

}  // namespace pavad::io
