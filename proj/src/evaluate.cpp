#include <cctype>
#include <fstream>

#include "json.hpp"
#include "pavad/tensor_io.hpp"
#include "pavad/train.hpp"

namespace pavad::train {
namespace {

std::string trace_file_name(const std::string& id) {
  std::string s = id;
  for (char& c : s)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.')) c = '_';
  return s + ".json";
}

}  // namespace

std::vector<eval::ScoreTrace> score_traces(const model::ModelParams& params, const Dataset& data, bool parallel) {
  const auto cfg = params.config();
  if (data.feature_dim != cfg.input_dim)
    throw std::invalid_argument("dataset feature dim " + std::to_string(data.feature_dim) +
                                " does not match checkpoint input dim " + std::to_string(cfg.input_dim));
  std::vector<eval::ScoreTrace> traces(data.videos.size());
  const long n = static_cast<long>(data.videos.size());
#pragma omp parallel for schedule(dynamic) if (parallel)
  for (long i = 0; i < n; ++i) {
    const auto& v = data.videos[static_cast<std::size_t>(i)];
    const auto rows = model::score_rows(params, v.features);
    traces[static_cast<std::size_t>(i)] = {v.video_id, io::expand_to_frames(rows, v.frames_per_row, v.total_frames)};
  }
  return traces;
}

EvalResult evaluate(const model::ModelParams& params, const Dataset& data, const std::vector<io::FrameMask>& masks,
                    bool parallel) {
  EvalResult r;
  r.traces = score_traces(params, data, parallel);
  r.auc_micro = eval::micro_auc(r.traces, masks);
  r.auc_macro = eval::macro_auc(r.traces, masks);
  r.n_videos = r.traces.size();
  for (const auto& t : r.traces) r.n_frames += t.frame_scores.size();
  return r;
}

void write_eval_outputs(const EvalResult& r, const std::filesystem::path& out_dir) {
  using nlohmann::json;
  std::filesystem::create_directories(out_dir / "traces");
  json metrics = {{"auc_micro", r.auc_micro},
                  {"auc_macro", r.auc_macro ? json(*r.auc_macro) : json(nullptr)},
                  {"n_frames", r.n_frames},
                  {"n_videos", r.n_videos}};
  std::ofstream(out_dir / "metrics.json", std::ios::trunc) << metrics.dump(2) << "\n";
  for (const auto& t : r.traces) {
    std::ofstream out(out_dir / "traces" / trace_file_name(t.video_id), std::ios::trunc);
    out << json{{"video_id", t.video_id}, {"frame_scores", t.frame_scores}}.dump() << "\n";
  }
}

}  // namespace pavad::train
