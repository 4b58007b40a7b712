#include "pavad/model.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace pavad::model {
namespace {

Tensor uniform(ad::Shape shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

Tensor init_slots(std::size_t k, std::size_t d, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  Tensor slots = uniform({k, d}, bound, rng);
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (std::size_t r = 0; r < k; ++r) {
    for (;;) {
      double ss = 0.0;
      for (std::size_t c = 0; c < d; ++c) ss += slots.at(r, c) * slots.at(r, c);
      if (ss > 1e-12) break;
      for (std::size_t c = 0; c < d; ++c) slots.at(r, c) = dist(rng);
    }
  }
  return slots;
}

std::size_t hidden_width(std::size_t d) { return std::max<std::size_t>(1, d / 2); }

}  // namespace

void ModelConfig::validate() const {
  if (input_dim == 0 || model_dim == 0) throw std::invalid_argument("model dims must be positive");
  if (heads == 0 || model_dim % heads != 0) throw std::invalid_argument("model_dim must be divisible by heads");
  if (abnormal_slots == 0 || normal_slots == 0) throw std::invalid_argument("memory banks need at least one slot");
  if (!(tau > 0)) throw std::invalid_argument("tau must be > 0");
}

std::vector<std::pair<std::string, Tensor*>> ModelParams::named() {
  return {{"encoder.conv_w", &encoder.conv_w}, {"encoder.conv_b", &encoder.conv_b}, {"encoder.wq", &encoder.wq},
          {"encoder.wk", &encoder.wk},         {"encoder.wv", &encoder.wv},         {"encoder.wo", &encoder.wo},
          {"memory.abnormal", &abnormal.slots}, {"memory.normal", &normal.slots},   {"head.weight", &head.weight},
          {"head.bias", &head.bias},           {"disc.w1", &disc.w1},               {"disc.b1", &disc.b1},
          {"disc.w2", &disc.w2},               {"disc.b2", &disc.b2}};
}

std::vector<std::pair<std::string, const Tensor*>> ModelParams::named() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (auto& [name, t] : const_cast<ModelParams*>(this)->named()) out.emplace_back(name, t);
  return out;
}

ModelConfig ModelParams::config() const {
  ModelConfig c;
  c.input_dim = encoder.conv_w.shape().at(1);
  c.model_dim = encoder.conv_w.shape().at(0);
  c.heads = encoder.heads;
  c.abnormal_slots = abnormal.slots.rows();
  c.normal_slots = normal.slots.rows();
  c.tau = tau;
  return c;
}

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  const std::size_t D = cfg.input_dim, d = cfg.model_dim, h = hidden_width(d);
  const double inv_d = 1.0 / std::sqrt(static_cast<double>(d));
  ModelParams p;
  p.tau = cfg.tau;
  p.encoder.heads = cfg.heads;
  p.encoder.conv_w = uniform({d, D, 3}, 1.0 / std::sqrt(3.0 * static_cast<double>(D)), rng);
  p.encoder.conv_b = Tensor({d}, 0.0);
  p.encoder.wq = uniform({d, d}, inv_d, rng);
  p.encoder.wk = uniform({d, d}, inv_d, rng);
  p.encoder.wv = uniform({d, d}, inv_d, rng);
  p.encoder.wo = uniform({d, d}, inv_d, rng);
  p.abnormal.slots = init_slots(cfg.abnormal_slots, d, rng);
  p.normal.slots = init_slots(cfg.normal_slots, d, rng);
  p.head.weight = uniform({1, 2 * d}, 1.0 / std::sqrt(2.0 * static_cast<double>(d)), rng);
  p.head.bias = Tensor({1}, 0.0);
  p.disc.w1 = uniform({d, h}, inv_d, rng);
  p.disc.b1 = Tensor({h}, 0.0);
  p.disc.w2 = uniform({h, 1}, 1.0 / std::sqrt(static_cast<double>(h)), rng);
  p.disc.b2 = Tensor({1}, 0.0);
  return p;
}

ModelVars bind(Graph& g, const ModelParams& p, bool requires_grad) {
  auto leaf = [&](const Tensor& t) { return g.leaf(t, requires_grad); };
  ModelVars v;
  v.encoder = {leaf(p.encoder.conv_w), leaf(p.encoder.conv_b), leaf(p.encoder.wq), leaf(p.encoder.wk),
               leaf(p.encoder.wv),     leaf(p.encoder.wo),     p.encoder.heads};
  v.mem_abnormal = leaf(p.abnormal.slots);
  v.mem_normal = leaf(p.normal.slots);
  v.head_w = leaf(p.head.weight);
  v.head_b = leaf(p.head.bias);
  v.disc = {leaf(p.disc.w1), leaf(p.disc.b1), leaf(p.disc.w2), leaf(p.disc.b2)};
  return v;
}

std::vector<Var> leaves(const ModelVars& v) {
  return {v.encoder.conv_w, v.encoder.conv_b, v.encoder.wq, v.encoder.wk, v.encoder.wv,
          v.encoder.wo,     v.mem_abnormal,   v.mem_normal, v.head_w,     v.head_b,
          v.disc.w1,        v.disc.b1,        v.disc.w2,    v.disc.b2};
}

ModelVars vars_from(std::span<const Var> l, std::size_t heads) {
  if (l.size() != 14) throw std::invalid_argument("vars_from: expected 14 leaves, got " + std::to_string(l.size()));
  ModelVars v;
  v.encoder = {l[0], l[1], l[2], l[3], l[4], l[5], heads};
  v.mem_abnormal = l[6];
  v.mem_normal = l[7];
  v.head_w = l[8];
  v.head_b = l[9];
  v.disc = {l[10], l[11], l[12], l[13]};
  return v;
}

Var encode(Var features, const EncoderVars& enc) {
  const auto& w = enc.conv_w.value();
  if (features.value().rank() != 2 || features.value().cols() != w.shape().at(1))
    throw ad::ShapeError("encode: features " + ad::shape_str(features.shape()) + " do not match encoder input dim " +
                         std::to_string(w.shape().at(1)));
  if (features.value().rows() == 0) throw ad::ShapeError("encode: empty sequence");
  Var x = ad::conv1d_same(features, enc.conv_w, enc.conv_b);
  Var q = ad::matmul(x, enc.wq);
  Var k = ad::matmul(x, enc.wk);
  Var v = ad::matmul(x, enc.wv);
  Var attn = ad::attention(q, k, v, enc.heads);
  return ad::add(x, ad::matmul(attn, enc.wo));
}

Var memory_read(Var f_tilde, Var slots) {
  if (f_tilde.value().cols() != slots.value().cols())
    throw ad::ShapeError("memory_read: embedding dim " + std::to_string(f_tilde.value().cols()) +
                         " vs slot dim " + std::to_string(slots.value().cols()));
  const double s = 1.0 / std::sqrt(static_cast<double>(slots.value().cols()));
  Var attn = ad::softmax_rows(ad::scale(ad::matmul(f_tilde, ad::transpose(slots)), s));
  return ad::matmul(attn, slots);
}

Var score(Var f_tilde, Var h_abnormal, Var h_normal, Var weight, Var bias) {
  if (h_abnormal.shape() != f_tilde.shape() || h_normal.shape() != f_tilde.shape())
    throw ad::ShapeError("score: memory reads must match the embedding shape");
  if (weight.value().numel() != 2 * f_tilde.value().cols())
    throw ad::ShapeError("score: head weight must have 2d entries");
  const Var parts[] = {f_tilde, ad::add(h_abnormal, h_normal)};
  Var logits = ad::add(ad::matmul(ad::concat_cols(parts), ad::transpose(weight)), bias);
  return ad::sigmoid(logits);
}

Var discriminate(Var f_bar, const DiscriminatorVars& disc) {
  if (f_bar.value().rank() != 2 || f_bar.value().rows() != 1 || f_bar.value().cols() != disc.w1.value().rows())
    throw ad::ShapeError("discriminate: expected 1 x d input");
  Var h = ad::relu(ad::add(ad::matmul(f_bar, disc.w1), disc.b1));
  return ad::sigmoid(ad::add(ad::matmul(h, disc.w2), disc.b2));
}

Assignments assignments_and_usage(Var z, Var slots, double tau) {
  if (!(tau > 0)) throw std::invalid_argument("assignments_and_usage: tau must be > 0");
  if (z.value().cols() != slots.value().cols()) throw ad::ShapeError("assignments_and_usage: dimension mismatch");
  Var zn = ad::row_l2_normalize(z);
  Var mn = ad::row_l2_normalize(slots);
  Var q = ad::softmax_rows(ad::scale(ad::matmul(zn, ad::transpose(mn)), 1.0 / tau));
  return {q, ad::mean_axis(q, 0)};
}

std::pair<Tensor, Tensor> assignment_values(const Tensor& z, const Tensor& slots, double tau) {
  Graph g;
  auto a = assignments_and_usage(g.constant(z), g.constant(slots), tau);
  return {a.q.value(), a.usage.value()};
}

VideoOutput forward_video(Var features, const ModelVars& vars) {
  Var f = encode(features, vars.encoder);
  Var ha = memory_read(f, vars.mem_abnormal);
  Var hn = memory_read(f, vars.mem_normal);
  return {f, score(f, ha, hn, vars.head_w, vars.head_b)};
}

std::vector<double> score_rows(const ModelParams& p, const Tensor& features) {
  Graph g;
  ModelVars vars = bind(g, p, false);
  return forward_video(g.constant(features), vars).scores.value().data();
}

Tensor embed_rows(const ModelParams& p, const Tensor& features) {
  Graph g;
  ModelVars vars = bind(g, p, false);
  return encode(g.constant(features), vars.encoder).value();
}

}  // namespace pavad::model
