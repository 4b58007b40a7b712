#include "pavad/train.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "json.hpp"
#include "pavad/tensor_io.hpp"

namespace pavad::train {

void TrainConfig::validate() const {
  if (steps < 1) throw std::invalid_argument("steps must be >= 1");
  if (!(learning_rate >= 0) || !std::isfinite(learning_rate)) throw std::invalid_argument("learning_rate must be >= 0");
  if (weight_decay < 0) throw std::invalid_argument("weight_decay must be >= 0");
  if (batch_videos_per_stream < 1) throw std::invalid_argument("batch_videos_per_stream must be >= 1");
  if (segment_number < 1) throw std::invalid_argument("segment_number must be >= 1");
  loss_weights.validate();
}

Dataset Dataset::load(const io::DatasetManifest& manifest) {
  Dataset d;
  for (const auto& e : manifest.entries) {
    const auto t = io::read_tensor(manifest.tensor_path(e));
    if (d.feature_dim == 0) d.feature_dim = t.cols();
    if (t.cols() != d.feature_dim)
      throw std::invalid_argument("video " + e.video_id + " has feature dim " + std::to_string(t.cols()) +
                                  ", expected " + std::to_string(d.feature_dim));
    VideoData v;
    v.video_id = e.video_id;
    v.label = e.label;
    v.domain = e.domain;
    v.frames_per_row = e.frames_per_row;
    v.total_frames = e.total_frames;
    v.features = Tensor({t.rows(), t.cols()}, std::vector<double>(t.data.begin(), t.data.end()));
    d.videos.push_back(std::move(v));
  }
  return d;
}

Stream stream_of(const VideoData& v) {
  if (v.label == io::VideoLabel::normal) return v.domain == io::Domain::real ? Stream::real_normal : Stream::pseudo_normal;
  return v.domain == io::Domain::pseudo ? Stream::pseudo_abnormal : Stream::real_abnormal;
}

std::vector<std::size_t> segment_indices(std::size_t rows, std::size_t segments, std::mt19937_64* jitter) {
  if (rows == 0 || segments == 0) throw std::invalid_argument("segment_indices: empty video or zero segments");
  std::vector<std::size_t> idx(segments);
  for (std::size_t i = 0; i < segments; ++i) {
    if (rows >= segments) {
      const std::size_t lo = i * rows / segments;
      const std::size_t hi = (i + 1) * rows / segments;  // exclusive
      idx[i] = lo;
      if (jitter && hi > lo + 1) idx[i] = lo + (*jitter)() % (hi - lo);
    } else {
      idx[i] = i % rows;
    }
  }
  return idx;
}

namespace {

Tensor gather_rows(const Tensor& f, const std::vector<std::size_t>& idx) {
  const std::size_t d = f.cols();
  Tensor out({idx.size(), d});
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::copy_n(f.data().begin() + static_cast<std::ptrdiff_t>(idx[i] * d), d,
                out.data().begin() + static_cast<std::ptrdiff_t>(i * d));
  return out;
}

std::vector<std::size_t> pick(std::vector<std::size_t> pool, std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> out;
  if (pool.empty()) return out;
  while (out.size() < n) {
    // Partial Fisher-Yates over the remaining pool; refill when exhausted.
    std::vector<std::size_t> p = pool;
    for (std::size_t i = 0; i < p.size() && out.size() < n; ++i) {
      const std::size_t j = i + rng() % (p.size() - i);
      std::swap(p[i], p[j]);
      out.push_back(p[i]);
    }
  }
  return out;
}

}  // namespace

Batch sample_batch(const Dataset& data, const TrainConfig& cfg, std::mt19937_64& rng) {
  std::vector<std::size_t> rn, pn, pa;
  for (std::size_t i = 0; i < data.videos.size(); ++i) {
    switch (stream_of(data.videos[i])) {
      case Stream::real_normal: rn.push_back(i); break;
      case Stream::pseudo_normal: pn.push_back(i); break;
      case Stream::pseudo_abnormal: pa.push_back(i); break;
      case Stream::real_abnormal: break;  // never used for training
    }
  }
  if (rn.empty()) throw std::invalid_argument("sample_batch: no real-normal videos");
  if (pa.empty()) throw std::invalid_argument("sample_batch: no pseudo-abnormal videos");

  std::mt19937_64* jitter = cfg.random_offsets ? &rng : nullptr;
  auto take = [&](const std::vector<std::size_t>& pool, std::vector<Tensor>& dst) {
    for (std::size_t v : pick(pool, cfg.batch_videos_per_stream, rng)) {
      const Tensor& f = data.videos[v].features;
      dst.push_back(gather_rows(f, segment_indices(f.rows(), cfg.segment_number, jitter)));
    }
  };
  Batch b;
  take(rn, b.real_normal);
  take(pn, b.pseudo_normal);
  take(pa, b.pseudo_abnormal);
  return b;
}

loss::BatchForward forward_batch(const model::ModelVars& vars, const Batch& batch) {
  ad::Graph& g = *vars.head_w.graph;
  loss::BatchForward out;
  for (const auto& f : batch.pseudo_abnormal) {
    auto o = model::forward_video(g.constant(f), vars);
    out.abnormal_scores.push_back(o.scores);
    out.abnormal_embeddings.push_back(o.embedding);
  }
  std::vector<ad::Var> normal_rows;
  for (const auto& f : batch.real_normal) {
    auto o = model::forward_video(g.constant(f), vars);
    out.normal_scores.push_back(o.scores);
    normal_rows.push_back(o.embedding);
  }
  if (!normal_rows.empty()) out.real_normal_mean = ad::mean_axis(ad::concat_rows(normal_rows), 0);
  std::vector<ad::Var> pseudo_rows;
  for (const auto& f : batch.pseudo_normal) pseudo_rows.push_back(model::encode(g.constant(f), vars.encoder));
  if (!pseudo_rows.empty()) out.pseudo_normal_mean = ad::mean_axis(ad::concat_rows(pseudo_rows), 0);
  return out;
}

AdamW::AdamW(double lr, double weight_decay, double beta1, double beta2, double eps)
    : lr_(lr), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {}

void AdamW::step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads) {
  if (params.size() != grads.size()) throw std::invalid_argument("AdamW: params/grads count mismatch");
  if (m_.empty()) {
    for (const Tensor* p : params) {
      m_.emplace_back(p->shape(), 0.0);
      v_.emplace_back(p->shape(), 0.0);
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    const Tensor& g = grads[k];
    for (std::size_t i = 0; i < p.numel(); ++i) {
      m_[k][i] = b1_ * m_[k][i] + (1.0 - b1_) * g[i];
      v_[k][i] = b2_ * v_[k][i] + (1.0 - b2_) * g[i] * g[i];
      const double mhat = m_[k][i] / c1;
      const double vhat = v_[k][i] / c2;
      p[i] -= lr_ * (mhat / (std::sqrt(vhat) + eps_) + wd_ * p[i]);
    }
  }
}

DivergenceError::DivergenceError(std::size_t step, const std::string& what)
    : std::runtime_error("training diverged at step " + std::to_string(step) + ": " + what), step_(step) {}

std::string loss_log_line(const StepRecord& r) {
  const nlohmann::json j = {{"step", r.step},         {"mil_rank", r.loss.mil_rank}, {"mil_cls", r.loss.mil_cls},
                            {"da", r.loss.da},        {"upd", r.loss.upd},           {"total", r.loss.total}};
  return j.dump();
}

TrainResult train(const TrainConfig& cfg, model::ModelParams init, const Dataset& data, std::ostream* loss_log) {
  cfg.validate();
  if (data.feature_dim != init.config().input_dim)
    throw std::invalid_argument("dataset feature dim " + std::to_string(data.feature_dim) +
                                " does not match model input dim " + std::to_string(init.config().input_dim));
  TrainResult result;
  result.params = std::move(init);
  const double tau = result.params.tau;
  std::mt19937_64 rng(cfg.seed);
  AdamW opt(cfg.learning_rate, cfg.weight_decay, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);

  std::vector<Tensor*> param_ptrs;
  for (auto& [name, t] : result.params.named()) param_ptrs.push_back(t);

  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    const Batch batch = sample_batch(data, cfg, rng);
    ad::Graph g;
    const auto vars = model::bind(g, result.params, true);
    const auto fwd = forward_batch(vars, batch);
    const auto tl = loss::total_loss(vars, fwd, cfg.loss_weights, tau);
    if (!std::isfinite(tl.parts.total)) throw DivergenceError(step, "non-finite loss");
    g.backward(tl.total);

    std::vector<Tensor> grads;
    for (ad::Var v : model::leaves(vars)) grads.push_back(g.grad(v));
    opt.step(param_ptrs, grads);
    for (const Tensor* p : param_ptrs)
      for (double x : p->data())
        if (!std::isfinite(x)) throw DivergenceError(step, "non-finite parameter after update");

    if (tl.da_skipped) ++result.da_skipped_steps;
    StepRecord rec{step, tl.parts};
    if (loss_log) *loss_log << loss_log_line(rec) << '\n';
    result.log.push_back(rec);
  }
  return result;
}

std::vector<double> slot_usage(const model::ModelParams& params, const Dataset& data) {
  std::vector<double> zdata;
  std::size_t rows = 0, d = 0;
  for (const auto& v : data.videos) {
    if (stream_of(v) != Stream::pseudo_abnormal) continue;
    const Tensor e = model::embed_rows(params, v.features);
    zdata.insert(zdata.end(), e.data().begin(), e.data().end());
    rows += e.rows();
    d = e.cols();
  }
  if (rows == 0) throw std::invalid_argument("slot_usage: dataset has no pseudo-abnormal videos");
  auto [q, u] = model::assignment_values(Tensor({rows, d}, std::move(zdata)), params.abnormal.slots, params.tau);
  return u.data();
}

}  // namespace pavad::train
