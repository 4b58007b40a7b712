#include "pavad/sim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>

#include "json.hpp"

namespace pavad::sim {

namespace {

using Vec = std::vector<double>;

Vec gaussian(std::size_t n, double sd, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Vec v(n);
  const double s = sd / std::sqrt(static_cast<double>(n));
  for (auto& x : v) x = nd(rng) * s;
  return v;
}

Vec normalized(Vec v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  if (n == 0.0) throw std::runtime_error("degenerate direction");
  for (auto& x : v) x /= n;
  return v;
}

Vec axpy(const Vec& a, double w, const Vec& b) {
  Vec out(a);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += w * b[i];
  return out;
}

struct Generator {
  const SimConfig& cfg;
  std::mt19937_64 rng;
  Vec scene;
  std::vector<Vec> modes;

  explicit Generator(const SimConfig& c) : cfg(c), rng(c.seed) {
    scene = normalized(gaussian(cfg.dim, 1.0, rng));
    for (std::size_t m = 0; m < cfg.n_abnormal_modes; ++m) modes.push_back(normalized(gaussian(cfg.dim, 1.0, rng)));
  }

  double row_norm(double scale) {
    std::normal_distribution<double> nd(0.0, 1.0);
    return cfg.normal_mean_norm * scale * std::max(0.0, 1.0 + cfg.norm_jitter * nd(rng));
  }

  void emit(std::vector<float>& out, const Vec& dir, double norm) {
    for (double x : dir) out.push_back(static_cast<float>(x * norm));
  }

  Vec normal_dir() { return normalized(axpy(scene, 1.0, gaussian(cfg.dim, cfg.normal_spread, rng))); }

  Vec abnormal_dir(const Vec& center) {
    Vec base = axpy(center, cfg.mode_scene_weight, scene);
    return normalized(axpy(base, 1.0, gaussian(cfg.dim, cfg.mode_spread, rng)));
  }

  // Returns burst [start, start + len) in rows, or len 0 for normal videos.
  SimVideo video(const std::string& id, io::VideoLabel label, io::Domain domain, double scale,
                 const std::vector<Vec>* centers, std::pair<std::size_t, std::size_t>* burst) {
    const std::size_t T = cfg.rows_per_video;
    std::size_t b0 = T, b1 = T;
    if (centers) {
      const std::size_t len = burst_rows(cfg);
      b0 = std::uniform_int_distribution<std::size_t>(0, T - len)(rng);
      b1 = b0 + len;
    }
    const std::size_t mode = centers ? std::uniform_int_distribution<std::size_t>(0, centers->size() - 1)(rng) : 0;
    std::vector<float> data;
    data.reserve(T * cfg.dim);
    for (std::size_t t = 0; t < T; ++t) {
      const bool abnormal = centers && t >= b0 && t < b1;
      emit(data, abnormal ? abnormal_dir((*centers)[mode]) : normal_dir(), row_norm(scale));
    }
    if (burst) *burst = {b0, b1};
    SimVideo v;
    v.entry.path = "features/" + id + ".pavf";
    v.entry.video_id = id;
    v.entry.label = label;
    v.entry.domain = domain;
    v.entry.scene_id = "sim";
    v.entry.frames_per_row = cfg.frames_per_row;
    v.entry.total_frames = static_cast<std::uint32_t>(T * cfg.frames_per_row);
    v.features = io::PavfTensor::matrix(static_cast<std::uint32_t>(T), static_cast<std::uint32_t>(cfg.dim),
                                        std::move(data));
    return v;
  }

  void add(SimSplit& split, SimVideo v, std::pair<std::size_t, std::size_t> burst, bool abnormal) {
    io::MaskIntervals m;
    m.video_id = v.entry.video_id;
    if (abnormal) {
      m.intervals.emplace_back(static_cast<std::uint32_t>(burst.first * cfg.frames_per_row),
                               static_cast<std::uint32_t>(burst.second * cfg.frames_per_row));
    }
    split.masks.push_back(std::move(m));
    split.videos.push_back(std::move(v));
  }
};

std::string vid(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%03zu", prefix, i);
  return buf;
}

}  // namespace

void SimConfig::validate() const {
  if (dim < 2) throw std::invalid_argument("sim: dim must be >= 2");
  if (rows_per_video < 2) throw std::invalid_argument("sim: rows_per_video must be >= 2");
  if (n_abnormal_modes == 0) throw std::invalid_argument("sim: n_abnormal_modes must be >= 1");
  if (videos_per_stream == 0 || test_videos_per_class == 0) throw std::invalid_argument("sim: video counts must be >= 1");
  if (frames_per_row == 0) throw std::invalid_argument("sim: frames_per_row must be >= 1");
  if (!(pseudo_norm_scale > 0.0) || !std::isfinite(pseudo_norm_scale))
    throw std::invalid_argument("sim: pseudo_norm_scale must be > 0");
  if (!(normal_mean_norm > 0.0) || !std::isfinite(normal_mean_norm))
    throw std::invalid_argument("sim: normal_mean_norm must be > 0");
  if (!(anomaly_fraction > 0.0 && anomaly_fraction < 1.0))
    throw std::invalid_argument("sim: anomaly_fraction must lie in (0, 1)");
  for (double x : {normal_spread, mode_spread, mode_scene_weight, test_mode_shift, norm_jitter})
    if (!(x >= 0.0) || !std::isfinite(x)) throw std::invalid_argument("sim: spreads and weights must be finite and >= 0");
}

std::size_t burst_rows(const SimConfig& cfg) {
  const auto T = cfg.rows_per_video;
  const auto len = static_cast<std::size_t>(std::llround(cfg.anomaly_fraction * static_cast<double>(T)));
  return std::clamp<std::size_t>(len, 1, T - 1);
}

SimDataset generate(const SimConfig& cfg) {
  cfg.validate();
  Generator g(cfg);
  std::vector<Vec> test_modes;
  for (const auto& m : g.modes) test_modes.push_back(normalized(axpy(m, 1.0, gaussian(cfg.dim, cfg.test_mode_shift, g.rng))));

  SimDataset ds;
  const double ps = cfg.pseudo_norm_scale;
  std::pair<std::size_t, std::size_t> burst{0, 0};
  for (std::size_t i = 0; i < cfg.videos_per_stream; ++i)
    g.add(ds.train, g.video(vid("rn", i), io::VideoLabel::normal, io::Domain::real, 1.0, nullptr, nullptr), {}, false);
  for (std::size_t i = 0; i < cfg.videos_per_stream; ++i)
    g.add(ds.train, g.video(vid("pn", i), io::VideoLabel::normal, io::Domain::pseudo, ps, nullptr, nullptr), {}, false);
  for (std::size_t i = 0; i < cfg.videos_per_stream; ++i) {
    auto v = g.video(vid("pa", i), io::VideoLabel::abnormal, io::Domain::pseudo, ps, &g.modes, &burst);
    g.add(ds.train, std::move(v), burst, true);
  }
  for (std::size_t i = 0; i < cfg.test_videos_per_class; ++i)
    g.add(ds.test, g.video(vid("tn", i), io::VideoLabel::normal, io::Domain::real, 1.0, nullptr, nullptr), {}, false);
  for (std::size_t i = 0; i < cfg.test_videos_per_class; ++i) {
    auto v = g.video(vid("ta", i), io::VideoLabel::abnormal, io::Domain::real, 1.0, &test_modes, &burst);
    g.add(ds.test, std::move(v), burst, true);
  }
  return ds;
}

io::DatasetManifest manifest_of(const SimSplit& split, const std::filesystem::path& base_dir) {
  io::DatasetManifest m;
  m.base_dir = base_dir;
  for (const auto& v : split.videos) m.entries.push_back(v.entry);
  return m;
}

void write_dataset(const SimDataset& ds, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir / "features");
  for (const auto* split : {&ds.train, &ds.test})
    for (const auto& v : split->videos) io::write_tensor(v.features, out_dir / v.entry.path);
  io::write_manifest(manifest_of(ds.train, out_dir), out_dir / "train_manifest.json");
  io::write_manifest(manifest_of(ds.test, out_dir), out_dir / "test_manifest.json");
  io::write_mask_intervals(ds.train.masks, out_dir / "train_masks.json");
  io::write_mask_intervals(ds.test.masks, out_dir / "test_masks.json");
}

train::Dataset to_dataset(const SimSplit& split) {
  train::Dataset d;
  for (const auto& v : split.videos) {
    train::VideoData vd;
    vd.video_id = v.entry.video_id;
    vd.label = v.entry.label;
    vd.domain = v.entry.domain;
    vd.frames_per_row = v.entry.frames_per_row;
    vd.total_frames = v.entry.total_frames;
    const auto rows = v.features.rows(), cols = v.features.cols();
    vd.features = ad::Tensor({rows, cols}, std::vector<double>(v.features.data.begin(), v.features.data.end()));
    d.feature_dim = cols;
    d.videos.push_back(std::move(vd));
  }
  return d;
}

std::vector<io::FrameMask> frame_masks(const SimSplit& split) {
  return io::compile_masks(split.masks, manifest_of(split));
}

std::vector<AblationRow> run_ablation(const SimConfig& base, const model::ModelConfig& model_cfg,
                                      const std::vector<AblationVariant>& variants,
                                      const std::vector<std::uint64_t>& seeds) {
  if (variants.empty() || seeds.empty()) throw std::invalid_argument("ablation needs at least one variant and seed");
  const std::size_t n_v = variants.size();
  std::vector<AblationRow> rows(n_v * seeds.size());
  for (std::size_t s = 0; s < seeds.size(); ++s) {
    SimConfig sc = base;
    sc.seed = seeds[s];
    const auto ds = generate(sc);
    const auto train_data = to_dataset(ds.train);
    const auto test_data = to_dataset(ds.test);
    const auto masks = frame_masks(ds.test);
    model::ModelConfig mc = model_cfg;
    mc.input_dim = sc.dim;
    const auto init = model::init_params(mc, seeds[s]);
#pragma omp parallel for schedule(dynamic)
    for (std::size_t v = 0; v < n_v; ++v) {
      auto tc = variants[v].train;
      tc.seed = seeds[s];
      const auto result = train::train(tc, init, train_data);
      const auto ev = train::evaluate(result.params, test_data, masks, false);
      const auto u = train::slot_usage(result.params, train_data);
      rows[s * n_v + v] = {variants[v].name, seeds[s], ev.auc_micro, eval::shannon_entropy(u)};
    }
  }
  return rows;
}

void write_ablation(const std::vector<AblationRow>& rows, const std::filesystem::path& path) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : rows) {
    arr.push_back({{"variant", r.variant}, {"seed", r.seed}, {"auc_micro", r.auc_micro}, {"usage_entropy", r.usage_entropy}});
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << arr.dump(2) << "\n";
}

double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of empty set");
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace pavad::sim
