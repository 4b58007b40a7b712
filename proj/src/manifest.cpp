#include "pavad/manifest.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "pavad/tensor_io.hpp"

namespace pavad::io {
namespace {

using nlohmann::json;

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

const json& require(const json& obj, const char* key, std::size_t idx) {
  auto it = obj.find(key);
  if (it == obj.end())
    throw ManifestError(ManifestErrorCode::missing_field, idx, std::string("missing field \"") + key + "\"");
  return *it;
}

std::string require_string(const json& obj, const char* key, std::size_t idx, bool allow_empty = false) {
  const json& v = require(obj, key, idx);
  if (!v.is_string())
    throw ManifestError(ManifestErrorCode::bad_value, idx, std::string("\"") + key + "\" must be a string");
  auto s = v.get<std::string>();
  if (s.empty() && !allow_empty)
    throw ManifestError(ManifestErrorCode::bad_value, idx, std::string("\"") + key + "\" must be non-empty");
  return s;
}

std::uint32_t require_positive(const json& obj, const char* key, std::size_t idx) {
  const json& v = require(obj, key, idx);
  if (!v.is_number_integer() || v.get<std::int64_t>() < 1 || v.get<std::int64_t>() > 0xffffffffLL)
    throw ManifestError(ManifestErrorCode::bad_value, idx,
                        std::string("\"") + key + "\" must be a positive integer");
  return static_cast<std::uint32_t>(v.get<std::int64_t>());
}

}  // namespace

std::string to_string(VideoLabel l) { return l == VideoLabel::normal ? "normal" : "abnormal"; }
std::string to_string(Domain d) { return d == Domain::real ? "real" : "pseudo"; }

std::string to_string(ManifestErrorCode c) {
  switch (c) {
    case ManifestErrorCode::parse: return "parse";
    case ManifestErrorCode::missing_field: return "missing_field";
    case ManifestErrorCode::bad_value: return "bad_value";
    case ManifestErrorCode::duplicate_video_id: return "duplicate_video_id";
    case ManifestErrorCode::missing_tensor: return "missing_tensor";
    case ManifestErrorCode::bad_tensor: return "bad_tensor";
    case ManifestErrorCode::frame_count_mismatch: return "frame_count_mismatch";
    case ManifestErrorCode::real_abnormal_in_training: return "real_abnormal_in_training";
  }
  return "unknown";
}

ManifestError::ManifestError(ManifestErrorCode code, std::optional<std::size_t> entry_index,
                             const std::string& detail)
    : std::runtime_error("manifest " + to_string(code) +
                         (entry_index ? " (entry " + std::to_string(*entry_index) + ")" : std::string()) + ": " +
                         detail),
      code_(code),
      entry_index_(entry_index) {}

std::filesystem::path DatasetManifest::tensor_path(const ManifestEntry& e) const {
  std::filesystem::path p(e.path);
  return p.is_absolute() ? p : base_dir / p;
}

const ManifestEntry* DatasetManifest::find(const std::string& video_id) const {
  for (const auto& e : entries)
    if (e.video_id == video_id) return &e;
  return nullptr;
}

DatasetManifest parse_manifest(const std::string& json_text, const std::filesystem::path& base_dir,
                               ManifestPurpose purpose) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ManifestError(ManifestErrorCode::parse, std::nullopt, e.what());
  }
  if (!doc.is_object()) throw ManifestError(ManifestErrorCode::parse, std::nullopt, "top level must be an object");
  auto it = doc.find("entries");
  if (it == doc.end() || !it->is_array())
    throw ManifestError(ManifestErrorCode::missing_field, std::nullopt, "missing \"entries\" array");

  DatasetManifest m;
  m.base_dir = base_dir;
  std::set<std::string> seen;
  for (std::size_t i = 0; i < it->size(); ++i) {
    const json& j = (*it)[i];
    if (!j.is_object()) throw ManifestError(ManifestErrorCode::bad_value, i, "entry must be an object");
    ManifestEntry e;
    e.path = require_string(j, "path", i);
    e.video_id = require_string(j, "video_id", i);
    const auto label = require_string(j, "label", i);
    if (label == "normal") e.label = VideoLabel::normal;
    else if (label == "abnormal") e.label = VideoLabel::abnormal;
    else throw ManifestError(ManifestErrorCode::bad_value, i, "label must be normal|abnormal, got " + label);
    const auto domain = require_string(j, "domain", i);
    if (domain == "real") e.domain = Domain::real;
    else if (domain == "pseudo") e.domain = Domain::pseudo;
    else throw ManifestError(ManifestErrorCode::bad_value, i, "domain must be real|pseudo, got " + domain);
    e.scene_id = require_string(j, "scene_id", i, /*allow_empty=*/true);
    e.frames_per_row = require_positive(j, "frames_per_row", i);
    e.total_frames = require_positive(j, "total_frames", i);

    if (!seen.insert(e.video_id).second)
      throw ManifestError(ManifestErrorCode::duplicate_video_id, i, "duplicate video_id \"" + e.video_id + "\"");
    if (purpose == ManifestPurpose::training && e.label == VideoLabel::abnormal && e.domain == Domain::real)
      throw ManifestError(ManifestErrorCode::real_abnormal_in_training, i,
                          "training manifests may not contain real abnormal video \"" + e.video_id + "\"");

    const auto tpath = m.tensor_path(e);
    if (!std::filesystem::is_regular_file(tpath))
      throw ManifestError(ManifestErrorCode::missing_tensor, i, "tensor file not found: " + tpath.string());
    PavfHeader h;
    try {
      h = read_header(tpath);
    } catch (const std::exception& ex) {
      throw ManifestError(ManifestErrorCode::bad_tensor, i, ex.what());
    }
    if (h.dims.size() != 2)
      throw ManifestError(ManifestErrorCode::bad_tensor, i, "feature tensor must be rank 2 (rows x dim)");
    const std::uint64_t rows = h.dims[0];
    const std::uint64_t covered = rows * e.frames_per_row;
    const std::uint64_t covered_minus_one = (rows - 1) * e.frames_per_row;
    if (!(covered >= e.total_frames && e.total_frames > covered_minus_one))
      throw ManifestError(ManifestErrorCode::frame_count_mismatch, i,
                          "rows=" + std::to_string(rows) + " frames_per_row=" + std::to_string(e.frames_per_row) +
                              " inconsistent with total_frames=" + std::to_string(e.total_frames));
    m.entries.push_back(std::move(e));
  }
  return m;
}

DatasetManifest read_manifest(const std::filesystem::path& path, ManifestPurpose purpose) {
  std::string text;
  try {
    text = slurp(path);
  } catch (const std::exception& e) {
    throw ManifestError(ManifestErrorCode::parse, std::nullopt, e.what());
  }
  return parse_manifest(text, path.parent_path(), purpose);
}

void write_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  json entries = json::array();
  for (const auto& e : m.entries) {
    entries.push_back({{"path", e.path},
                       {"video_id", e.video_id},
                       {"label", to_string(e.label)},
                       {"domain", to_string(e.domain)},
                       {"scene_id", e.scene_id},
                       {"frames_per_row", e.frames_per_row},
                       {"total_frames", e.total_frames}});
  }
  spit(path, json{{"entries", entries}}.dump(2) + "\n");
}

std::vector<MaskIntervals> read_mask_intervals(const std::filesystem::path& path) {
  const json doc = json::parse(slurp(path));
  if (!doc.is_array()) throw std::runtime_error(path.string() + ": mask file must be a JSON array");
  std::vector<MaskIntervals> out;
  for (const auto& j : doc) {
    MaskIntervals m;
    m.video_id = j.at("video_id").get<std::string>();
    for (const auto& iv : j.at("intervals")) {
      if (!iv.is_array() || iv.size() != 2)
        throw std::runtime_error("mask for " + m.video_id + ": interval must be [start, end)");
      m.intervals.emplace_back(iv[0].get<std::uint32_t>(), iv[1].get<std::uint32_t>());
    }
    out.push_back(std::move(m));
  }
  return out;
}

void write_mask_intervals(const std::vector<MaskIntervals>& masks, const std::filesystem::path& path) {
  json doc = json::array();
  for (const auto& m : masks) {
    json ivs = json::array();
    for (auto [s, e] : m.intervals) ivs.push_back({s, e});
    doc.push_back({{"video_id", m.video_id}, {"intervals", ivs}});
  }
  spit(path, doc.dump(2) + "\n");
}

FrameMask compile_mask(const MaskIntervals& m, std::uint32_t total_frames) {
  FrameMask fm{m.video_id, std::vector<std::uint8_t>(total_frames, 0)};
  for (auto [s, e] : m.intervals) {
    if (s >= e || e > total_frames)
      throw std::runtime_error("mask for " + m.video_id + ": interval [" + std::to_string(s) + ", " +
                               std::to_string(e) + ") outside [0, " + std::to_string(total_frames) + ")");
    for (auto f = s; f < e; ++f) fm.mask[f] = 1;
  }
  return fm;
}

std::vector<FrameMask> compile_masks(const std::vector<MaskIntervals>& masks, const DatasetManifest& manifest) {
  std::vector<FrameMask> out;
  out.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) {
    const MaskIntervals* found = nullptr;
    for (const auto& m : masks)
      if (m.video_id == e.video_id) found = &m;
    if (!found) throw std::runtime_error("no ground-truth mask for video " + e.video_id);
    out.push_back(compile_mask(*found, e.total_frames));
  }
  return out;
}

void validate(const GenerationJob& job) {
  if (job.prompt.empty()) throw std::invalid_argument("generation job for " + job.class_name + ": empty prompt");
  if (job.frame_count < 1) throw std::invalid_argument("generation job: frame_count must be >= 1");
  if (job.fps < 1 || job.sampling_steps < 1) throw std::invalid_argument("generation job: fps/steps must be >= 1");
}

std::string generation_manifest_json(const std::vector<GenerationJob>& jobs) {
  json doc = json::array();
  for (const auto& j : jobs) {
    validate(j);
    doc.push_back({{"class_name", j.class_name},
                   {"init_image_path", j.init_image_path},
                   {"prompt", j.prompt},
                   {"resolution", {j.resolution.first, j.resolution.second}},
                   {"frame_count", j.frame_count},
                   {"fps", j.fps},
                   {"sampling_steps", j.sampling_steps},
                   {"guidance", {j.guidance.first, j.guidance.second}}});
  }
  return doc.dump(2) + "\n";
}

std::vector<GenerationJob> parse_generation_manifest(const std::string& json_text) {
  const json doc = json::parse(json_text);
  std::vector<GenerationJob> jobs;
  for (const auto& j : doc) {
    GenerationJob g;
    g.class_name = j.at("class_name").get<std::string>();
    g.init_image_path = j.at("init_image_path").get<std::string>();
    g.prompt = j.at("prompt").get<std::string>();
    g.resolution = {j.at("resolution")[0].get<std::uint32_t>(), j.at("resolution")[1].get<std::uint32_t>()};
    g.frame_count = j.at("frame_count").get<std::uint32_t>();
    g.fps = j.at("fps").get<std::uint32_t>();
    g.sampling_steps = j.at("sampling_steps").get<std::uint32_t>();
    g.guidance = {j.at("guidance")[0].get<double>(), j.at("guidance")[1].get<double>()};
    validate(g);
    jobs.push_back(std::move(g));
  }
  return jobs;
}

}  // namespace pavad::io
