#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pavad/manifest.hpp"
#include "pavad/model.hpp"
#include "pavad/tensor_io.hpp"
#include "pavad/train.hpp"

namespace pavad::sim {

struct SimConfig {
  std::size_t dim = 32;
  std::size_t videos_per_stream = 16;  // training: real normal, pseudo normal, pseudo abnormal
  std::size_t test_videos_per_class = 16;
  std::size_t rows_per_video = 20;
  std::uint32_t frames_per_row = 16;
  double normal_mean_norm = 20.52;
  double pseudo_norm_scale = 23.03 / 20.52;
  double anomaly_fraction = 0.25;
  std::size_t n_abnormal_modes = 4;
  std::uint64_t seed = 0;

  // Direction model. Normal rows point near a shared scene direction; abnormal
  // rows near one of the mode centers. Spreads are std devs of the isotropic
  // perturbation (unit expected norm) added before normalization.
  double normal_spread = 0.3;
  double mode_spread = 0.6;
  double mode_scene_weight = 4.0;  // how much abnormal rows still share the scene direction
  double test_mode_shift = 0.1;    // perturbation of test-time mode centers
  double norm_jitter = 0.05;       // relative per-row norm noise

  void validate() const;
};

struct SimVideo {
  io::ManifestEntry entry;  // entry.path = features/<video_id>.pavf
  io::PavfTensor features;
};

struct SimSplit {
  std::vector<SimVideo> videos;
  std::vector<io::MaskIntervals> masks;  // one per video; empty intervals for normal videos
};

struct SimDataset {
  SimSplit train;
  SimSplit test;
};

SimDataset generate(const SimConfig& cfg);

// Contiguous burst length for one abnormal video.
std::size_t burst_rows(const SimConfig& cfg);

// Writes features/*.pavf, train_manifest.json, test_manifest.json,
// train_masks.json and test_masks.json under out_dir.
void write_dataset(const SimDataset& ds, const std::filesystem::path& out_dir);

io::DatasetManifest manifest_of(const SimSplit& split, const std::filesystem::path& base_dir = {});
train::Dataset to_dataset(const SimSplit& split);
std::vector<io::FrameMask> frame_masks(const SimSplit& split);

struct AblationVariant {
  std::string name;
  train::TrainConfig train;
};

struct AblationRow {
  std::string variant;
  std::uint64_t seed = 0;
  double auc_micro = 0.0;
  double usage_entropy = 0.0;
};

// One fresh simulated dataset per seed; every variant trains on it from the
// same initialization and is evaluated on its test split.
std::vector<AblationRow> run_ablation(const SimConfig& base, const model::ModelConfig& model_cfg,
                                      const std::vector<AblationVariant>& variants,
                                      const std::vector<std::uint64_t>& seeds);

void write_ablation(const std::vector<AblationRow>& rows, const std::filesystem::path& path);
double median(std::vector<double> v);

}  // namespace pavad::sim
