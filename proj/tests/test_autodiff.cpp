#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "pavad/autodiff.hpp"
#include "pavad/gradcheck.hpp"

using namespace pavad::ad;

namespace {

Tensor randn(Shape s, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> nd(0.0, sd);
  Tensor t(s, 0.0);
  for (auto& x : t.data()) x = nd(rng);
  return t;
}

// Reduces any output to a scalar with fixed random weights so every output
// element contributes a distinct amount to the checked gradient.
Var weighted_sum(Var out, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  Graph& g = *out.graph;
  Var w = g.constant(randn(out.shape(), rng));
  return sum(mul(out, w));
}

void expect_fd_match(const GraphBuilder& build, const std::vector<Tensor>& inputs, double tol = 1e-6) {
  const auto r = check_gradients(build, inputs);
  EXPECT_LE(r.max_rel_error, tol);
  EXPECT_GT(r.n_checked, 0u);
}

}  // namespace

TEST(Autodiff, BackwardSeedsScalarAndAccumulatesLeaves) {
  Graph g;
  Var x = g.leaf(Tensor::row({1.0, 2.0}), true);
  Var y = sum(mul(x, x));
  g.backward(y);
  EXPECT_EQ(g.grad(x).data(), (std::vector<double>{2.0, 4.0}));
  g.backward(y);
  EXPECT_EQ(g.grad(x).data(), (std::vector<double>{4.0, 8.0}));
}

TEST(Autodiff, BackwardRequiresScalar) {
  Graph g;
  Var x = g.leaf(Tensor::row({1.0, 2.0}), true);
  EXPECT_THROW(g.backward(x), ShapeError);
}

TEST(Autodiff, ShapeErrorsAreReported) {
  Graph g;
  Var a = g.leaf(Tensor({2, 3}, 1.0));
  Var b = g.leaf(Tensor({2, 3}, 1.0));
  EXPECT_THROW(matmul(a, b), ShapeError);
  EXPECT_THROW(add(a, g.leaf(Tensor({3, 2}, 1.0))), ShapeError);
  EXPECT_THROW(attention(a, a, a, 2), ShapeError);
}

TEST(Autodiff, ConstantsReceiveNoGradientBuffer) {
  Graph g;
  Var c = g.constant(Tensor::row({1.0}));
  Var x = g.leaf(Tensor::row({3.0}), true);
  g.backward(sum(mul(c, x)));
  EXPECT_FALSE(g.requires_grad(c));
  EXPECT_EQ(g.grad(x).data(), (std::vector<double>{1.0}));
}

struct PrimitiveCase {
  const char* name;
  std::vector<Shape> shapes;
  GraphBuilder build;
};

TEST(PrimitiveGradients, AllPrimitivesMatchFiniteDifferences) {
  const std::vector<PrimitiveCase> cases = {
      {"matmul", {{3, 4}, {4, 2}}, [](Graph&, std::span<const Var> v) { return weighted_sum(matmul(v[0], v[1])); }},
      {"transpose", {{3, 4}}, [](Graph&, std::span<const Var> v) { return weighted_sum(transpose(v[0])); }},
      {"add", {{3, 4}, {3, 4}}, [](Graph&, std::span<const Var> v) { return weighted_sum(add(v[0], v[1])); }},
      {"add_broadcast_row", {{3, 4}, {1, 4}},
       [](Graph&, std::span<const Var> v) { return weighted_sum(add(v[0], v[1])); }},
      {"sub", {{3, 4}, {3, 4}}, [](Graph&, std::span<const Var> v) { return weighted_sum(sub(v[0], v[1])); }},
      {"mul", {{3, 4}, {3, 4}}, [](Graph&, std::span<const Var> v) { return weighted_sum(mul(v[0], v[1])); }},
      {"scale", {{2, 3}}, [](Graph&, std::span<const Var> v) { return weighted_sum(scale(v[0], -1.7)); }},
      {"add_scalar", {{2, 3}}, [](Graph&, std::span<const Var> v) { return weighted_sum(add_scalar(v[0], 0.3)); }},
      {"concat_cols", {{3, 2}, {3, 3}},
       [](Graph&, std::span<const Var> v) {
         std::vector<Var> p{v[0], v[1]};
         return weighted_sum(concat_cols(p));
       }},
      {"concat_rows", {{2, 3}, {1, 3}},
       [](Graph&, std::span<const Var> v) {
         std::vector<Var> p{v[0], v[1]};
         return weighted_sum(concat_rows(p));
       }},
      {"reshape", {{2, 6}}, [](Graph&, std::span<const Var> v) { return weighted_sum(reshape(v[0], {3, 4})); }},
      {"row_l2_normalize", {{3, 5}}, [](Graph&, std::span<const Var> v) { return weighted_sum(row_l2_normalize(v[0])); }},
      {"softmax_rows", {{3, 5}}, [](Graph&, std::span<const Var> v) { return weighted_sum(softmax_rows(v[0])); }},
      {"sigmoid", {{3, 4}}, [](Graph&, std::span<const Var> v) { return weighted_sum(sigmoid(v[0])); }},
      {"relu", {{3, 4}}, [](Graph&, std::span<const Var> v) { return weighted_sum(relu(v[0])); }},
      {"hinge", {{3, 4}}, [](Graph&, std::span<const Var> v) { return weighted_sum(hinge(v[0])); }},
      {"conv1d_same", {{6, 3}, {4, 3, 3}, {4}},
       [](Graph&, std::span<const Var> v) { return weighted_sum(conv1d_same(v[0], v[1], v[2])); }},
      {"conv1d_single_row", {{1, 3}, {2, 3, 3}, {2}},
       [](Graph&, std::span<const Var> v) { return weighted_sum(conv1d_same(v[0], v[1], v[2])); }},
      {"attention_1head", {{5, 4}, {5, 4}, {5, 4}},
       [](Graph&, std::span<const Var> v) { return weighted_sum(attention(v[0], v[1], v[2], 1)); }},
      {"attention_2heads", {{5, 4}, {5, 4}, {5, 4}},
       [](Graph&, std::span<const Var> v) { return weighted_sum(attention(v[0], v[1], v[2], 2)); }},
      {"mean_axis0", {{4, 3}}, [](Graph&, std::span<const Var> v) { return weighted_sum(mean_axis(v[0], 0)); }},
      {"mean_axis1", {{4, 3}}, [](Graph&, std::span<const Var> v) { return weighted_sum(mean_axis(v[0], 1)); }},
      {"sum", {{4, 3}}, [](Graph&, std::span<const Var> v) { return sum(mul(v[0], v[0])); }},
      {"squared_l2_norm", {{4, 3}}, [](Graph&, std::span<const Var> v) { return squared_l2_norm(v[0]); }},
      {"bce", {{4, 1}},
       [](Graph&, std::span<const Var> v) {
         return bce(sigmoid(v[0]), Tensor({4, 1}, std::vector<double>{1, 0, 1, 0}));
       }},
      {"topk_mean", {{6, 1}}, [](Graph&, std::span<const Var> v) { return weighted_sum(topk_mean(v[0], 3)); }},
      {"composite", {{4, 3}, {3, 3}},
       [](Graph&, std::span<const Var> v) {
         Var h = softmax_rows(matmul(row_l2_normalize(v[0]), v[1]));
         return squared_l2_norm(sub(h, mean_axis(h, 0)));
       }},
  };
  std::mt19937_64 rng(2024);
  for (const auto& c : cases) {
    SCOPED_TRACE(c.name);
    for (int trial = 0; trial < 3; ++trial) {
      std::vector<Tensor> inputs;
      for (const auto& s : c.shapes) inputs.push_back(randn(s, rng));
      expect_fd_match(c.build, inputs);
    }
  }
}

TEST(GradReverse, ForwardIsIdentityAndBackwardScalesByMinusLambda) {
  for (double lambda : {0.0, 0.1, 0.2, 1.0}) {
    Graph g;
    std::mt19937_64 rng(5);
    Var x = g.leaf(randn({3, 4}, rng), true);
    Var r = grad_reverse(x, lambda);
    EXPECT_EQ(r.value(), x.value());
    Var w = g.constant(randn({3, 4}, rng));
    g.backward(sum(mul(r, w)));
    for (std::size_t i = 0; i < 12; ++i) EXPECT_EQ(g.grad(x)[i], -lambda * w.value()[i]);
  }
}

TEST(Softmax, RowsSumToOneAndAreShiftInvariant) {
  Graph g;
  std::mt19937_64 rng(3);
  Tensor t = randn({4, 6}, rng, 5.0);
  Tensor shifted = t;
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 6; ++c) shifted.at(r, c) += 100.0 * static_cast<double>(r);
  auto a = softmax_rows(g.constant(t)).value();
  auto b = softmax_rows(g.constant(shifted)).value();
  for (std::size_t r = 0; r < 4; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 6; ++c) {
      s += a.at(r, c);
      EXPECT_NEAR(a.at(r, c), b.at(r, c), 1e-12);
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Softmax, PermutingInputsPermutesOutputs) {
  Graph g;
  auto a = softmax_rows(g.constant(Tensor::row({0.3, -1.0, 2.0}))).value();
  auto b = softmax_rows(g.constant(Tensor::row({2.0, 0.3, -1.0}))).value();
  EXPECT_DOUBLE_EQ(a[0], b[1]);
  EXPECT_DOUBLE_EQ(a[1], b[2]);
  EXPECT_DOUBLE_EQ(a[2], b[0]);
}

TEST(TopK, GradientFlowsOnlyToSelectedEntries) {
  Graph g;
  Var x = g.leaf(Tensor({5, 1}, std::vector<double>{0.1, 0.9, 0.4, 0.8, 0.2}), true);
  Var m = topk_mean(x, 2);
  EXPECT_DOUBLE_EQ(m.value().item(), 0.85);
  g.backward(m);
  EXPECT_EQ(g.grad(x).data(), (std::vector<double>{0.0, 0.5, 0.0, 0.5, 0.0}));
}

TEST(TopK, TiesGoToLowerIndex) {
  const std::vector<double> v{0.5, 0.7, 0.7, 0.7, 0.1};
  EXPECT_EQ(topk_indices(v, 2), (std::vector<std::size_t>{1, 2}));
  EXPECT_EQ(topk_indices(v, 5).size(), 5u);
}

TEST(Bce, ClampsPredictionsAwayFromZeroAndOne) {
  Graph g;
  Var p = g.leaf(Tensor({2, 1}, std::vector<double>{0.0, 1.0}), true);
  Var l = bce(p, Tensor({2, 1}, std::vector<double>{1.0, 0.0}));
  EXPECT_NEAR(l.value().item(), -std::log(kBceClamp), 1e-9);
  EXPECT_TRUE(std::isfinite(l.value().item()));
}

TEST(Bce, KnownValues) {
  Graph g;
  Var p = g.constant(Tensor({1, 1}, std::vector<double>{0.5}));
  EXPECT_NEAR(bce(p, Tensor({1, 1}, std::vector<double>{1.0})).value().item(), 0.6931471805599453, 1e-12);
}

TEST(RowNormalize, UnitRowsAndZeroRowStaysFinite) {
  Graph g;
  auto out = row_l2_normalize(g.constant(Tensor::matrix(2, 2, {3, 4, 0, 0}))).value();
  EXPECT_NEAR(out.at(0, 0), 0.6, 1e-12);
  EXPECT_NEAR(out.at(0, 1), 0.8, 1e-12);
  EXPECT_EQ(out.at(1, 0), 0.0);
}

TEST(Conv1d, SamePaddingMatchesHandComputation) {
  Graph g;
  // One input channel, one output channel, kernel [1, 2, 3] over taps t-1, t, t+1.
  Var x = g.constant(Tensor({3, 1}, std::vector<double>{1, 10, 100}));
  Var w = g.constant(Tensor({1, 1, 3}, std::vector<double>{1, 2, 3}));
  Var b = g.constant(Tensor({1}, std::vector<double>{0.5}));
  auto y = conv1d_same(x, w, b).value();
  EXPECT_DOUBLE_EQ(y[0], 0 * 1 + 1 * 2 + 10 * 3 + 0.5);
  EXPECT_DOUBLE_EQ(y[1], 1 * 1 + 10 * 2 + 100 * 3 + 0.5);
  EXPECT_DOUBLE_EQ(y[2], 10 * 1 + 100 * 2 + 0 * 3 + 0.5);
}

TEST(GradCheck, DetectsAWrongGradient) {
  // A deliberately broken op: forward x^2, backward claims 3x.
  GraphBuilder broken = [](Graph& g, std::span<const Var> v) {
    const Tensor& x = v[0].value();
    Tensor y = x;
    for (auto& e : y.data()) e *= e;
    const std::size_t in = v[0].id;
    Var out = g.record(OpKind::mul, {in}, y, [in](Graph& gr, std::size_t self) {
      const Tensor& up = gr.grad_of(self);
      Tensor& dx = gr.grad_buffer(in);
      const Tensor& xv = gr.value_of(in);
      for (std::size_t i = 0; i < up.numel(); ++i) dx[i] += up[i] * 3.0 * xv[i];
    });
    return sum(out);
  };
  const auto r = check_gradients(broken, {Tensor::row({1.0, 2.0})});
  EXPECT_GT(r.max_rel_error, 0.1);
}
