#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "pavad/losses.hpp"
#include "pavad/manifest.hpp"
#include "pavad/metrics.hpp"
#include "pavad/model.hpp"

namespace pavad::train {

using ad::Tensor;

struct TrainConfig {
  std::size_t batch_videos_per_stream = 4;
  double learning_rate = 1e-4;
  double weight_decay = 1e-5;
  std::size_t segment_number = 5;
  std::size_t steps = 100;
  std::uint64_t seed = 0;
  loss::LossWeights loss_weights;
  bool random_offsets = false;  // jitter the sampled row inside each stride
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
};

struct VideoData {
  std::string video_id;
  io::VideoLabel label = io::VideoLabel::normal;
  io::Domain domain = io::Domain::real;
  Tensor features;  // T x D
  std::uint32_t frames_per_row = 1;
  std::uint32_t total_frames = 1;
};

struct Dataset {
  std::vector<VideoData> videos;
  std::size_t feature_dim = 0;

  static Dataset load(const io::DatasetManifest& manifest);
};

enum class Stream { real_normal, pseudo_normal, pseudo_abnormal, real_abnormal };
Stream stream_of(const VideoData& v);

struct Batch {
  std::vector<Tensor> real_normal;
  std::vector<Tensor> pseudo_normal;
  std::vector<Tensor> pseudo_abnormal;
};

// Row indices giving exactly `segments` rows from a T-row video: uniformly
// spaced floor(i T / S) when T >= S, cyclic repetition otherwise.
std::vector<std::size_t> segment_indices(std::size_t rows, std::size_t segments, std::mt19937_64* jitter = nullptr);

Batch sample_batch(const Dataset& data, const TrainConfig& cfg, std::mt19937_64& rng);

loss::BatchForward forward_batch(const model::ModelVars& vars, const Batch& batch);

// Adam with decoupled weight decay.
class AdamW {
 public:
  AdamW(double lr, double weight_decay, double beta1, double beta2, double eps);
  void step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads);
  std::size_t steps_taken() const { return t_; }

 private:
  double lr_, wd_, b1_, b2_, eps_;
  std::size_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(std::size_t step, const std::string& what);
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

struct StepRecord {
  std::size_t step = 0;
  loss::LossBreakdown loss;
};

std::string loss_log_line(const StepRecord& r);

struct TrainResult {
  model::ModelParams params;
  std::vector<StepRecord> log;
  std::size_t da_skipped_steps = 0;
};

// Runs cfg.steps optimiser steps from `init`. Each record is also written to
// loss_log (JSON lines) when given.
TrainResult train(const TrainConfig& cfg, model::ModelParams init, const Dataset& data,
                  std::ostream* loss_log = nullptr);

// ---- evaluation ----

struct EvalResult {
  double auc_micro = 0.0;
  std::optional<double> auc_macro;
  std::size_t n_frames = 0;
  std::size_t n_videos = 0;
  std::vector<eval::ScoreTrace> traces;
};

// Scores every video at full length (no row sampling), expands rows to frames
// and computes frame-level AUC. Videos are scored in parallel when `parallel`.
EvalResult evaluate(const model::ModelParams& params, const Dataset& data, const std::vector<io::FrameMask>& masks,
                    bool parallel = true);
std::vector<eval::ScoreTrace> score_traces(const model::ModelParams& params, const Dataset& data, bool parallel = true);

// metrics.json + traces/<video_id>.json
void write_eval_outputs(const EvalResult& r, const std::filesystem::path& out_dir);

// Usage vector of the abnormal bank over every pseudo-abnormal row in `data`.
std::vector<double> slot_usage(const model::ModelParams& params, const Dataset& data);

}  // namespace pavad::train
