#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "pavad/gradcheck.hpp"
#include "pavad/model.hpp"
#include "support/oracles.hpp"
#include "support/temp_dir.hpp"

using namespace pavad;
using namespace pavad::model;
using ad::GraphBuilder;

namespace {

Tensor randn(ad::Shape s, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> nd(0.0, sd);
  Tensor t(s, 0.0);
  for (auto& x : t.data()) x = nd(rng);
  return t;
}

ModelConfig small() {
  ModelConfig c;
  c.input_dim = 16;
  c.model_dim = 8;
  c.heads = 2;
  c.abnormal_slots = 4;
  c.normal_slots = 3;
  return c;
}

// Solves the (K+1) x K least-squares system [M^T; 1^T] a = [h; 1] by normal equations.
std::vector<double> hull_weights(const std::vector<std::vector<double>>& slots, const std::vector<double>& h) {
  const std::size_t K = slots.size(), d = h.size();
  std::vector<std::vector<double>> A(K, std::vector<double>(K + 1, 0.0));
  for (std::size_t i = 0; i < K; ++i) {
    for (std::size_t j = 0; j < K; ++j) {
      double s = 1.0;
      for (std::size_t c = 0; c < d; ++c) s += slots[i][c] * slots[j][c];
      A[i][j] = s;
    }
    double r = 1.0;
    for (std::size_t c = 0; c < d; ++c) r += slots[i][c] * h[c];
    A[i][K] = r;
  }
  for (std::size_t c = 0; c < K; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < K; ++r)
      if (std::abs(A[r][c]) > std::abs(A[piv][c])) piv = r;
    std::swap(A[c], A[piv]);
    for (std::size_t r = 0; r < K; ++r) {
      if (r == c) continue;
      const double f = A[r][c] / A[c][c];
      for (std::size_t k = c; k <= K; ++k) A[r][k] -= f * A[c][k];
    }
  }
  std::vector<double> a(K);
  for (std::size_t i = 0; i < K; ++i) a[i] = A[i][K] / A[i][i];
  return a;
}

}  // namespace

TEST(Init, DeterministicFiniteAndShaped) {
  const auto a = init_params(small(), 7), b = init_params(small(), 7), c = init_params(small(), 8);
  EXPECT_EQ(a.encoder.conv_w, b.encoder.conv_w);
  EXPECT_NE(a.encoder.conv_w, c.encoder.conv_w);
  EXPECT_EQ(a.encoder.conv_w.shape(), (ad::Shape{8, 16, 3}));
  EXPECT_EQ(a.abnormal.slots.shape(), (ad::Shape{4, 8}));
  EXPECT_EQ(a.normal.slots.shape(), (ad::Shape{3, 8}));
  EXPECT_EQ(a.head.weight.shape(), (ad::Shape{1, 16}));
  EXPECT_EQ(a.disc.w1.shape(), (ad::Shape{8, 4}));
  for (const auto& [name, t] : a.named())
    for (double x : t->data()) EXPECT_TRUE(std::isfinite(x)) << name;
  for (std::size_t k = 0; k < 4; ++k) {
    double n = 0;
    for (std::size_t j = 0; j < 8; ++j) n += a.abnormal.slots.at(k, j) * a.abnormal.slots.at(k, j);
    EXPECT_GT(n, 0.0);
  }
  EXPECT_EQ(a.named().size(), 14u);
}

TEST(Init, ConfigValidation) {
  auto c = small();
  c.heads = 3;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = small();
  c.abnormal_slots = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = small();
  c.tau = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Encode, ShapeAndDimensionCheck) {
  std::mt19937_64 rng(1);
  const auto p = init_params(small(), 1);
  Graph g;
  auto v = bind(g, p, false);
  EXPECT_EQ(encode(g.constant(randn({6, 16}, rng)), v.encoder).shape(), (ad::Shape{6, 8}));
  EXPECT_THROW(encode(g.constant(randn({6, 15}, rng)), v.encoder), ad::ShapeError);
}

TEST(Encode, ZeroInputZeroBiasGivesZero) {
  const auto p = init_params(small(), 2);
  Graph g;
  auto v = bind(g, p, false);
  const auto out = encode(g.constant(Tensor({5, 16}, 0.0)), v.encoder).value();
  for (double x : out.data()) EXPECT_EQ(x, 0.0);
}

TEST(Encode, SingleStepIsValueProjectionPlusResidual) {
  std::mt19937_64 rng(3);
  const auto p = init_params(small(), 3);
  Graph g;
  auto v = bind(g, p, false);
  Var f = g.constant(randn({1, 16}, rng));
  Var x = ad::conv1d_same(f, v.encoder.conv_w, v.encoder.conv_b);
  const auto expected = ad::add(x, ad::matmul(ad::matmul(x, v.encoder.wv), v.encoder.wo)).value();
  const auto got = encode(f, v.encoder).value();
  for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(got[i], expected[i], 1e-12);
}

TEST(Encode, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(4);
  const auto p = init_params(small(), 4);
  std::vector<Tensor> inputs{randn({6, 16}, rng), p.encoder.conv_w, p.encoder.conv_b, p.encoder.wq,
                             p.encoder.wk,        p.encoder.wv,     p.encoder.wo};
  GraphBuilder build = [](Graph& g, std::span<const Var> in) {
    EncoderVars e{in[1], in[2], in[3], in[4], in[5], in[6], 2};
    std::mt19937_64 r(9);
    Var w = g.constant(randn({6, 8}, r));
    return ad::sum(ad::mul(encode(in[0], e), w));
  };
  EXPECT_LE(ad::check_gradients(build, inputs).max_rel_error, 1e-6);
}

TEST(MemoryRead, SingleSlotIsReturnedExactly) {
  std::mt19937_64 rng(5);
  Graph g;
  Var slot = g.constant(randn({1, 4}, rng));
  const auto h = memory_read(g.constant(randn({3, 4}, rng)), slot).value();
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(h.at(t, j), slot.value().at(0, j));
}

TEST(MemoryRead, OrthogonalQueryGivesSlotMean) {
  Graph g;
  Var slots = g.constant(Tensor::matrix(2, 3, {1, 2, 0, 3, -1, 0}));
  const auto h = memory_read(g.constant(Tensor::matrix(1, 3, {0, 0, 5})), slots).value();
  EXPECT_DOUBLE_EQ(h[0], 2.0);
  EXPECT_DOUBLE_EQ(h[1], 0.5);
  EXPECT_DOUBLE_EQ(h[2], 0.0);
}

TEST(MemoryRead, TwoSlotHandExample) {
  // d = 4, logits = <f, m_k> / 2: f.m1 = 2 -> 1.0, f.m2 = 0 -> 0.0.
  Graph g;
  Var slots = g.constant(Tensor::matrix(2, 4, {1, 1, 0, 0, 0, 0, 1, -1}));
  const auto h = memory_read(g.constant(Tensor::matrix(1, 4, {1, 1, 0, 0})), slots).value();
  const double a1 = std::exp(1.0) / (std::exp(1.0) + 1.0);  // 0.731
  EXPECT_NEAR(h[0], a1, 1e-3);
  EXPECT_NEAR(h[2], 1 - a1, 1e-3);
  EXPECT_NEAR(h[3], -(1 - a1), 1e-3);
  EXPECT_NEAR(h[0], 0.731, 5e-4);
}

TEST(MemoryRead, OutputsLieInConvexHullOfSlots) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t K = 1 + trial % 4, d = 6;
    Graph g;
    const Tensor slots = randn({K, d}, rng);
    const auto h = memory_read(g.constant(randn({3, d}, rng, 2.0)), g.constant(slots)).value();
    std::vector<std::vector<double>> m(K, std::vector<double>(d));
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t j = 0; j < d; ++j) m[k][j] = slots.at(k, j);
    for (std::size_t t = 0; t < 3; ++t) {
      std::vector<double> row(d);
      for (std::size_t j = 0; j < d; ++j) row[j] = h.at(t, j);
      const auto a = hull_weights(m, row);
      double s = 0;
      for (double x : a) {
        EXPECT_GE(x, -1e-9);
        s += x;
      }
      EXPECT_NEAR(s, 1.0, 1e-9);
      for (std::size_t j = 0; j < d; ++j) {
        double r = 0;
        for (std::size_t k = 0; k < K; ++k) r += a[k] * m[k][j];
        EXPECT_NEAR(r, row[j], 1e-8);
      }
    }
  }
}

TEST(Score, ZeroHeadGivesHalfAndLargeBiasSaturates) {
  std::mt19937_64 rng(7);
  Graph g;
  Var f = g.constant(randn({4, 3}, rng)), ha = g.constant(randn({4, 3}, rng)), hn = g.constant(randn({4, 3}, rng));
  const auto half = score(f, ha, hn, g.constant(Tensor({1, 6}, 0.0)), g.constant(Tensor({1}, 0.0))).value();
  for (double s : half.data()) EXPECT_EQ(s, 0.5);
  const auto high = score(f, ha, hn, g.constant(Tensor({1, 6}, 0.0)), g.constant(Tensor({1}, 20.0))).value();
  for (double s : high.data()) EXPECT_GE(s, 1 - 1e-8);
}

TEST(Score, HandEvaluatedSigmoid) {
  Graph g;
  Var f = g.constant(Tensor::matrix(1, 2, {1.0, -2.0}));
  Var ha = g.constant(Tensor::matrix(1, 2, {0.5, 0.0}));
  Var hn = g.constant(Tensor::matrix(1, 2, {0.5, 1.0}));
  Var w = g.constant(Tensor::matrix(1, 4, {0.1, 0.2, 0.3, -0.4}));
  Var b = g.constant(Tensor({1}, std::vector<double>{0.05}));
  // 0.1*1 + 0.2*(-2) + 0.3*1 + (-0.4)*1 + 0.05 = -0.35
  EXPECT_NEAR(score(f, ha, hn, w, b).value()[0], 1.0 / (1.0 + std::exp(0.35)), 1e-12);
}

TEST(Discriminator, ZeroWeightsHalfAndMonotoneInBias) {
  Graph g;
  Var f = g.constant(Tensor::matrix(1, 4, {1, 2, 3, 4}));
  DiscriminatorVars zero{g.constant(Tensor({4, 2}, 0.0)), g.constant(Tensor({2}, 0.0)), g.constant(Tensor({2, 1}, 0.0)),
                         g.constant(Tensor({1}, 0.0))};
  EXPECT_EQ(discriminate(f, zero).value().item(), 0.5);
  std::mt19937_64 rng(8);
  const Tensor w1 = randn({4, 2}, rng);
  double prev = 0.0;
  for (double b2 : {-2.0, -1.0, 0.0, 1.0, 2.0}) {
    DiscriminatorVars d{g.constant(w1), g.constant(Tensor({2}, 0.1)), g.constant(Tensor({2, 1}, 0.5)),
                        g.constant(Tensor({1}, b2))};
    const double p = discriminate(f, d).value().item();
    EXPECT_GT(p, prev);
    prev = p;
  }
}

TEST(Discriminator, GradientThroughReversalMatchesFiniteDifferencesOnParams) {
  std::mt19937_64 rng(9);
  const auto p = init_params(small(), 9);
  std::vector<Tensor> inputs{randn({1, 8}, rng), p.disc.w1, p.disc.b1, p.disc.w2, p.disc.b2};
  GraphBuilder build = [](Graph&, std::span<const Var> in) {
    return discriminate(ad::grad_reverse(in[0], 0.2), {in[1], in[2], in[3], in[4]});
  };
  // Only the discriminator parameters: the reversal changes the feature gradient by design.
  const auto r = ad::check_gradients(build, inputs, {false, true, true, true, true});
  EXPECT_LE(r.max_rel_error, 1e-6);
}

TEST(Assignments, RowsAndUsageSumToOne) {
  std::mt19937_64 rng(10);
  for (double tau : {0.05, 0.1, 1.0}) {
    const auto [q, u] = assignment_values(randn({12, 5}, rng), randn({4, 5}, rng), tau);
    double us = 0;
    for (std::size_t k = 0; k < 4; ++k) us += u[k];
    EXPECT_NEAR(us, 1.0, 1e-12);
    for (std::size_t r = 0; r < 12; ++r) {
      double s = 0;
      for (std::size_t k = 0; k < 4; ++k) s += q.at(r, k);
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Assignments, OrthogonalRowsGiveUniformUsage) {
  const auto [q, u] = assignment_values(Tensor::matrix(2, 3, {0, 0, 1, 0, 0, -2}),
                                        Tensor::matrix(2, 3, {1, 0, 0, 0, 1, 0}), 0.1);
  EXPECT_DOUBLE_EQ(u[0], 0.5);
  EXPECT_DOUBLE_EQ(u[1], 0.5);
}

TEST(Assignments, HandSoftmaxOfCosines) {
  // Unit row z and slots with cosines 0.8 and 0.2.
  const double s2 = std::sqrt(1 - 0.04);
  const auto [q, u] = assignment_values(Tensor::matrix(1, 2, {1, 0}), Tensor::matrix(2, 2, {0.8, 0.6, 0.2, s2}), 1.0);
  EXPECT_NEAR(q[0], 0.6457, 1e-4);
  EXPECT_NEAR(q[1], 0.3543, 1e-4);
}

TEST(Assignments, SmallTemperatureApproachesHardAssignment) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor z = randn({10, 4}, rng), m = randn({3, 4}, rng);
    const auto [q, u] = assignment_values(z, m, 1e-3);
    std::vector<std::vector<double>> slots(3, std::vector<double>(4));
    for (std::size_t k = 0; k < 3; ++k)
      for (std::size_t j = 0; j < 4; ++j) slots[k][j] = m.at(k, j);
    std::vector<double> freq(3, 0.0);
    for (std::size_t r = 0; r < 10; ++r) {
      std::vector<double> row(4);
      for (std::size_t j = 0; j < 4; ++j) row[j] = z.at(r, j);
      const auto k = oracle::nearest_cosine(row, slots);
      freq[k] += 0.1;
      EXPECT_GT(q.at(r, k), 0.5);
    }
    for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(u[k], freq[k], 0.1);
  }
}

TEST(Assignments, RejectsNonPositiveTemperature) {
  EXPECT_THROW(assignment_values(Tensor::matrix(1, 2, {1, 0}), Tensor::matrix(1, 2, {1, 0}), 0.0), std::invalid_argument);
}

TEST(ForwardVideo, ScoresStrictlyInsideUnitIntervalAndInferenceMatchesGraph) {
  std::mt19937_64 rng(12);
  const auto p = init_params(small(), 12);
  const Tensor f = randn({7, 16}, rng, 3.0);
  Graph g;
  auto v = bind(g, p, false);
  const auto out = forward_video(g.constant(f), v);
  const auto rows = score_rows(p, f);
  ASSERT_EQ(rows.size(), 7u);
  for (std::size_t t = 0; t < 7; ++t) {
    EXPECT_GT(rows[t], 0.0);
    EXPECT_LT(rows[t], 1.0);
    EXPECT_EQ(rows[t], out.scores.value()[t]);
  }
  EXPECT_EQ(embed_rows(p, f), out.embedding.value());
}

TEST(Checkpoint, RoundTripPreservesFloat32Values) {
  TempDir dir("ckpt");
  auto p = init_params(small(), 13);
  // Values that are exactly representable in float32 come back unchanged.
  for (auto& [name, t] : p.named())
    for (auto& x : t->data()) x = static_cast<double>(static_cast<float>(x));
  save_checkpoint(p, dir / "ck");
  const auto back = load_checkpoint(dir / "ck");
  for (std::size_t i = 0; i < 14; ++i) {
    EXPECT_EQ(p.named()[i].first, back.named()[i].first);
    EXPECT_EQ(*p.named()[i].second, *back.named()[i].second) << p.named()[i].first;
  }
  EXPECT_EQ(back.encoder.heads, 2u);
  EXPECT_EQ(back.tau, p.tau);
  EXPECT_THROW(load_checkpoint(dir / "missing"), std::runtime_error);
}
