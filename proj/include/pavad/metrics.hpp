#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pavad/manifest.hpp"

namespace pavad::eval {

struct ScoreTrace {
  std::string video_id;
  std::vector<double> frame_scores;
};

// Area under the ROC curve via the Mann-Whitney statistic with midranks for
// tied scores: U / (P N), U = (sum of positive ranks) - P (P + 1) / 2.
// Throws std::invalid_argument when only one class is present.
double auc(std::span<const double> scores, std::span<const std::uint8_t> labels);

// Micro-average: every frame of every video pooled into one ranking.
double micro_auc(const std::vector<ScoreTrace>& traces, const std::vector<io::FrameMask>& masks);
// Mean per-video AUC over videos that contain both classes; nullopt when none do.
std::optional<double> macro_auc(const std::vector<ScoreTrace>& traces, const std::vector<io::FrameMask>& masks);

// Natural-log Shannon entropy of a probability vector (0 log 0 = 0).
double shannon_entropy(std::span<const double> p);

}  // namespace pavad::eval
