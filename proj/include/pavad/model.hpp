#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pavad/autodiff.hpp"

namespace pavad::model {

using ad::Graph;
using ad::Tensor;
using ad::Var;

struct ModelConfig {
  std::size_t input_dim = 32;   // D
  std::size_t model_dim = 16;   // d
  std::size_t heads = 2;
  std::size_t abnormal_slots = 10;
  std::size_t normal_slots = 10;
  double tau = 0.1;  // assignment temperature

  void validate() const;
};

enum class BankRole { abnormal, normal };

struct MemoryBank {
  Tensor slots;  // K x d
  BankRole role = BankRole::abnormal;
};

struct EncoderParams {
  Tensor conv_w;  // d x D x 3
  Tensor conv_b;  // d
  Tensor wq, wk, wv, wo;  // d x d; heads split the columns
  std::size_t heads = 1;
};

struct ScoreHeadParams {
  Tensor weight;  // 1 x 2d
  Tensor bias;    // 1
};

// d -> d/2 -> 1, relu hidden layer, sigmoid output.
struct DiscriminatorParams {
  Tensor w1;  // d x h
  Tensor b1;  // h
  Tensor w2;  // h x 1
  Tensor b2;  // 1
};

struct ModelParams {
  EncoderParams encoder;
  MemoryBank abnormal{Tensor{}, BankRole::abnormal};
  MemoryBank normal{Tensor{}, BankRole::normal};
  ScoreHeadParams head;
  DiscriminatorParams disc;
  double tau = 0.1;

  // Stable, deterministic parameter order used by the optimiser and checkpoints.
  std::vector<std::pair<std::string, Tensor*>> named();
  std::vector<std::pair<std::string, const Tensor*>> named() const;
  ModelConfig config() const;
};

// Seeded uniform initialisation, each tensor scaled by 1/sqrt(fan_in); biases
// start at zero. Memory slots that come out (numerically) zero are redrawn.
ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed);

struct EncoderVars {
  Var conv_w, conv_b, wq, wk, wv, wo;
  std::size_t heads = 1;
};

struct DiscriminatorVars {
  Var w1, b1, w2, b2;
};

struct ModelVars {
  EncoderVars encoder;
  Var mem_abnormal, mem_normal;
  Var head_w, head_b;
  DiscriminatorVars disc;
};

// Registers every parameter as a leaf of g, in named() order.
ModelVars bind(Graph& g, const ModelParams& p, bool requires_grad);
// Leaves of `vars` in named() order, matching ModelParams::named().
std::vector<Var> leaves(const ModelVars& vars);
// Inverse of leaves(): rebuilds the bundle from 14 vars in named() order.
ModelVars vars_from(std::span<const Var> leaves, std::size_t heads);

// f~ = x + Attn(x) Wo, x = Conv1dSame(f).  f: T x D -> T x d.
Var encode(Var features, const EncoderVars& enc);
// softmax(f~ M^T / sqrt(d)) M, per time step.
Var memory_read(Var f_tilde, Var slots);
// sigmoid(W [f~ ; hA + hN] + b) -> T x 1.
Var score(Var f_tilde, Var h_abnormal, Var h_normal, Var weight, Var bias);
Var discriminate(Var f_bar, const DiscriminatorVars& disc);

struct Assignments {
  Var q;      // N x K soft assignments of unit-normalised rows to unit-normalised slots
  Var usage;  // 1 x K column means of q
};

Assignments assignments_and_usage(Var z, Var slots, double tau);
// Same computation on plain values, outside any caller graph.
std::pair<Tensor, Tensor> assignment_values(const Tensor& z, const Tensor& slots, double tau);

struct VideoOutput {
  Var embedding;  // T x d
  Var scores;     // T x 1
};

VideoOutput forward_video(Var features, const ModelVars& vars);
// Inference on one video with read-only parameters; one score per row.
std::vector<double> score_rows(const ModelParams& p, const Tensor& features);
// Encoder output only (used for usage statistics).
Tensor embed_rows(const ModelParams& p, const Tensor& features);

// Checkpoint: directory of PAVF tensors plus index.json {config, tensors: {name -> {file, shape}}}.
void save_checkpoint(const ModelParams& p, const std::filesystem::path& dir);
ModelParams load_checkpoint(const std::filesystem::path& dir);

}  // namespace pavad::model
