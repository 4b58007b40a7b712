#include "pavad/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace pavad::eval {
namespace {

const io::FrameMask& mask_for(const std::string& id, const std::vector<io::FrameMask>& masks) {
  for (const auto& m : masks)
    if (m.video_id == id) return m;
  throw std::invalid_argument("no mask for trace " + id);
}

}  // namespace

double auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("auc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  double positive_rank_sum = 0.0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + j) + 1.0;  // 1-based ranks i+1 .. j+1
    for (std::size_t r = i; r <= j; ++r)
      if (labels[order[r]]) {
        positive_rank_sum += midrank;
        ++positives;
      }
    i = j + 1;
  }
  const std::size_t negatives = n - positives;
  if (positives == 0 || negatives == 0) throw std::invalid_argument("auc: ground truth contains a single class");
  const double p = static_cast<double>(positives);
  const double u = positive_rank_sum - p * (p + 1.0) / 2.0;
  return u / (p * static_cast<double>(negatives));
}

double micro_auc(const std::vector<ScoreTrace>& traces, const std::vector<io::FrameMask>& masks) {
  std::vector<double> scores;
  std::vector<std::uint8_t> labels;
  for (const auto& t : traces) {
    const auto& m = mask_for(t.video_id, masks);
    if (m.mask.size() != t.frame_scores.size())
      throw std::invalid_argument("trace " + t.video_id + " length differs from its mask");
    scores.insert(scores.end(), t.frame_scores.begin(), t.frame_scores.end());
    labels.insert(labels.end(), m.mask.begin(), m.mask.end());
  }
  return auc(scores, labels);
}

std::optional<double> macro_auc(const std::vector<ScoreTrace>& traces, const std::vector<io::FrameMask>& masks) {
  double acc = 0.0;
  std::size_t n = 0;
  for (const auto& t : traces) {
    const auto& m = mask_for(t.video_id, masks);
    const auto pos = std::count(m.mask.begin(), m.mask.end(), std::uint8_t{1});
    if (pos == 0 || static_cast<std::size_t>(pos) == m.mask.size()) continue;
    acc += auc(t.frame_scores, m.mask);
    ++n;
  }
  if (n == 0) return std::nullopt;
  return acc / static_cast<double>(n);
}

double shannon_entropy(std::span<const double> p) {
  double h = 0.0;
  for (double x : p)
    if (x > 0) h -= x * std::log(x);
  return h;
}

}  // namespace pavad::eval
