#include "pavad/gradsuite.hpp"

#include <algorithm>
#include <random>

#include "pavad/gradcheck.hpp"
#include "pavad/model.hpp"
#include "pavad/train.hpp"

namespace pavad::ad {

namespace {

Tensor random_rows(std::size_t rows, std::size_t cols, double scale, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, scale);
  Tensor t({rows, cols}, 0.0);
  for (auto& x : t.data()) x = nd(rng);
  return t;
}

}  // namespace

double GradSuiteResult::max_rel_error() const {
  double m = 0.0;
  for (const auto& t : terms) m = std::max(m, t.max_rel_error);
  return m;
}

GradSuiteResult run_gradient_suite(const GradSuiteConfig& cfg) {
  const std::vector<std::string> names{"mil_rank", "mil_cls", "da", "upd", "total"};
  GradSuiteResult result;
  result.configurations = cfg.configurations;
  for (const auto& n : names) result.terms.push_back({n, 0.0, 0});

  for (std::size_t c = 0; c < cfg.configurations; ++c) {
    std::mt19937_64 rng(cfg.seed * 1000003 + c);
    model::ModelConfig mc;
    mc.input_dim = cfg.input_dim;
    mc.model_dim = cfg.model_dim;
    mc.heads = cfg.heads;
    mc.abnormal_slots = cfg.slots;
    mc.normal_slots = cfg.slots;
    const auto params = model::init_params(mc, rng());
    train::Batch batch;
    for (std::size_t v = 0; v < cfg.videos; ++v) {
      batch.real_normal.push_back(random_rows(cfg.rows, cfg.input_dim, 1.0, rng));
      batch.pseudo_normal.push_back(random_rows(cfg.rows, cfg.input_dim, 1.2, rng));
      batch.pseudo_abnormal.push_back(random_rows(cfg.rows, cfg.input_dim, 1.5, rng));
    }
    std::vector<Tensor> inputs;
    for (const auto& [_, t] : params.named()) inputs.push_back(*t);

    loss::LossWeights w = cfg.weights;
    w.topk = std::min<std::size_t>(std::max<std::size_t>(w.topk, 1), cfg.rows);
    // Targets from the unperturbed point, held fixed for every finite-difference evaluation.
    loss::UsageTargets frozen;
    {
      Graph g;
      auto vars = model::bind(g, params, false);
      auto fwd = train::forward_batch(vars, batch);
      frozen = loss::total_loss(vars, fwd, w, mc.tau, {false, nullptr}).targets;
    }

    for (std::size_t term = 0; term < names.size(); ++term) {
      GraphBuilder build = [&](Graph& g, std::span<const Var> leaves) -> Var {
        auto vars = model::vars_from(leaves, mc.heads);
        auto fwd = train::forward_batch(vars, batch);
        const double pairs = static_cast<double>(fwd.abnormal_scores.size());
        switch (term) {
          case 0: {
            std::vector<Var> r;
            for (std::size_t i = 0; i < fwd.abnormal_scores.size(); ++i)
              r.push_back(reshape(loss::mil_rank_loss(fwd.abnormal_scores[i], fwd.normal_scores[i]), {1, 1}));
            return scale(sum(concat_rows(r)), 1.0 / pairs);
          }
          case 1: {
            std::vector<Var> r;
            for (auto s : fwd.abnormal_scores) r.push_back(reshape(loss::mil_cls_loss(s, 1, w.topk), {1, 1}));
            for (auto s : fwd.normal_scores) r.push_back(reshape(loss::mil_cls_loss(s, 0, w.topk), {1, 1}));
            return scale(sum(concat_rows(r)), 1.0 / static_cast<double>(r.size()));
          }
          case 2:
            return loss::domain_alignment_loss(*fwd.real_normal_mean, *fwd.pseudo_normal_mean, vars.disc, w, false);
          case 3:
            return loss::usage_update_loss(vars.mem_abnormal, frozen, w);
          default:
            return loss::total_loss(vars, fwd, w, mc.tau, {false, &frozen}).total;
        }
        (void)g;
      };
      const auto report = check_gradients(build, inputs, {}, cfg.h);
      auto& tr = result.terms[term];
      tr.max_rel_error = std::max(tr.max_rel_error, report.max_rel_error);
      tr.n_checked += report.n_checked;
    }
  }
  return result;
}

}  // namespace pavad::ad
