#include <gtest/gtest.h>

#include "oracles.hpp"
#include "rlsal/errors.hpp"
#include "rlsal/layers.hpp"

using namespace rlsal;

namespace {

double sum_loss(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v;
  return s;
}

}  // namespace

TEST(Tensor, ShapeAndDataMustAgree) {
  EXPECT_THROW(Tensor({2, 2}, {1.0, 2.0, 3.0}), DimensionError);
  Tensor t({2, 3});
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.rank(), 2u);
  EXPECT_EQ(Tensor::filled({2}, 1.5)[1], 1.5);
}

TEST(Tensor, ReshapeKeepsData) {
  Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  const Tensor r = t.reshaped({6});
  EXPECT_EQ(r.shape(), (Shape{6}));
  EXPECT_EQ(r[4], 5.0);
  EXPECT_THROW((void)t.reshaped({4}), DimensionError);
}

TEST(Conv2d, IdentityKernelCopiesInput) {
  Tensor in({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  const Tensor out = conv2d_forward(in, Tensor({1, 1, 1, 1}, {1.0}), Tensor({1}), 1, 0);
  EXPECT_EQ(out.shape(), (Shape{1, 3, 3}));
  EXPECT_TRUE(bitwise_equal(out.reshaped({1, 3, 3}), in));
}

TEST(Conv2d, ZeroInputGivesBias) {
  Rng rng(4);
  const Tensor k = oracle::random_tensor({3, 2, 3, 3}, rng);
  const Tensor out = conv2d_forward(Tensor({2, 5, 5}), k, Tensor::vector({0.5, -1.0, 2.0}), 2, 1);
  EXPECT_EQ(out.shape(), (Shape{3, 3, 3}));
  const double bias[] = {0.5, -1.0, 2.0};
  for (std::size_t o = 0; o < 3; ++o)
    for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(out[o * 9 + i], bias[o]);
}

TEST(Conv2d, StepEdgeWithLaplacianMatchesLoop) {
  Tensor in({1, 5, 5});
  for (std::size_t y = 0; y < 5; ++y)
    for (std::size_t x = 2; x < 5; ++x) in[y * 5 + x] = 1.0;
  const Tensor k({1, 1, 3, 3}, {0, -1, 0, -1, 4, -1, 0, -1, 0});
  const Tensor out = conv2d_forward(in, k, Tensor({1}), 1, 0);
  ASSERT_EQ(out.shape(), (Shape{1, 3, 3}));
  EXPECT_TRUE(bitwise_equal(out, oracle::conv(in, k, Tensor({1}), 1, 0)));
  // Columns of the 3×3 output sit over input columns 1..3: -1, +1, 0.
  for (std::size_t y = 0; y < 3; ++y) {
    EXPECT_EQ(out[y * 3 + 0], -1.0);
    EXPECT_EQ(out[y * 3 + 1], 1.0);
    EXPECT_EQ(out[y * 3 + 2], 0.0);
  }
}

TEST(Conv2d, MatchesNaiveLoopsOnDenseAndSparseInputs) {
  Rng rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t c = 1 + rng.below(3), h = 4 + rng.below(8), w = 4 + rng.below(8);
    const std::size_t k = 1 + rng.below(3), stride = 1 + rng.below(2), pad = rng.below(2);
    Tensor in = oracle::random_tensor({c, h, w}, rng);
    if (trial % 2)  // sparse frames take the scatter path
      for (double& v : in.data()) v = rng.uniform() < 0.05 ? v : 0.0;
    const Tensor kern = oracle::random_tensor({3, c, k, k}, rng);
    const Tensor bias = oracle::random_tensor({3}, rng);
    EXPECT_LT(oracle::max_abs_diff(conv2d_forward(in, kern, bias, stride, pad), oracle::conv(in, kern, bias, stride, pad)),
              1e-12);
  }
}

TEST(Conv2d, ChannelMismatchThrows) {
  EXPECT_THROW(conv2d_forward(Tensor({2, 4, 4}), Tensor({1, 3, 2, 2}), Tensor({1}), 1, 0), DimensionError);
  EXPECT_THROW(conv2d_forward(Tensor({1, 2, 2}), Tensor({1, 1, 3, 3}), Tensor({1}), 1, 0), DimensionError);
}

TEST(Conv2dBackward, ZeroUpstreamGivesZeroGradients) {
  Rng rng(2);
  ExecutionTape tape;
  const Tensor k = oracle::random_tensor({3, 2, 3, 3}, rng), b = oracle::random_tensor({3}, rng);
  const Tensor out = tape.conv(oracle::random_tensor({2, 6, 6}, rng), k, b, 1, 1);
  const LayerGrads g = conv2d_backward(tape[0], Tensor(out.shape()));
  EXPECT_EQ(g.input.max_abs(), 0.0);
  EXPECT_EQ(g.params.weights.max_abs(), 0.0);
  EXPECT_EQ(g.params.bias.max_abs(), 0.0);
}

TEST(Conv2dBackward, ScalarKernelScalesUpstream) {
  ExecutionTape tape;
  const Tensor k({1, 1, 1, 1}, {-2.5});
  Rng rng(3);
  const Tensor b = Tensor::zeros({1});
  tape.conv(oracle::random_tensor({1, 3, 4}, rng), k, b, 1, 0);
  const Tensor up = oracle::random_tensor({1, 3, 4}, rng);
  const LayerGrads g = conv2d_backward(tape[0], up);
  for (std::size_t i = 0; i < up.size(); ++i) EXPECT_DOUBLE_EQ(g.input[i], -2.5 * up[i]);
}

TEST(Conv2dBackward, MatchesFiniteDifferences) {
  Rng rng(5);
  const Tensor x = oracle::random_tensor({2, 6, 6}, rng);
  const Tensor k = oracle::random_tensor({3, 2, 3, 3}, rng), b = oracle::random_tensor({3}, rng);
  for (std::size_t stride : {1, 2}) {
    ExecutionTape tape;
    const Tensor out = tape.conv(x, k, b, stride, 1);
    const LayerGrads g = conv2d_backward(tape[0], Tensor::filled(out.shape(), 1.0));
    const double h = 1e-5;
    auto fd = [&](Tensor& v, auto&& eval) {
      Tensor d(v.shape());
      for (std::size_t i = 0; i < v.size(); ++i) {
        const double old = v[i];
        v[i] = old + h;
        const double up = eval();
        v[i] = old - h;
        const double down = eval();
        v[i] = old;
        d[i] = (up - down) / (2 * h);
      }
      return d;
    };
    Tensor xv = x, kv = k, bv = b;
    auto loss = [&] { return sum_loss(oracle::conv(xv, kv, bv, stride, 1)); };
    EXPECT_LE(oracle::relative_error(g.input, fd(xv, loss)), 1e-4);
    EXPECT_LE(oracle::relative_error(g.params.weights, fd(kv, loss)), 1e-4);
    EXPECT_LE(oracle::relative_error(g.params.bias, fd(bv, loss)), 1e-4);
  }
}

TEST(Dense, HandArithmetic) {
  const Tensor out = dense_forward(Tensor::vector({1, 2}), Tensor({2, 2}, {1, 1, 2, 0}), Tensor::vector({0, 1}));
  EXPECT_EQ(out, Tensor::vector({3, 3}));
  EXPECT_EQ(dense_forward(Tensor({2}), Tensor({2, 2}, {1, 1, 2, 0}), Tensor::vector({4, 5})), Tensor::vector({4, 5}));
  EXPECT_THROW(dense_forward(Tensor({3}), Tensor({2, 2}), Tensor({2})), DimensionError);
}

TEST(DenseBackward, IdentityPassesUpstreamAndBiasGradEqualsUpstream) {
  ExecutionTape tape;
  const Tensor eye({2, 2}, {1, 0, 0, 1});
  const Tensor b = Tensor::zeros({2});
  tape.dense(Tensor::vector({3, 4}), eye, b);
  const Tensor up = Tensor::vector({0.25, -7});
  const LayerGrads g = dense_backward(tape[0], up);
  EXPECT_EQ(g.input, up);
  EXPECT_EQ(g.params.bias, up);
  const LayerGrads z = dense_backward(tape[0], Tensor({2}));
  EXPECT_EQ(z.input.max_abs() + z.params.weights.max_abs() + z.params.bias.max_abs(), 0.0);
}

TEST(DenseBackward, MatchesFiniteDifferences) {
  Rng rng(8);
  Tensor x = oracle::random_tensor({8}, rng), w = oracle::random_tensor({4, 8}, rng), b = oracle::random_tensor({4}, rng);
  const Tensor up = oracle::random_tensor({4}, rng);
  ExecutionTape tape;
  tape.dense(x, w, b);
  const LayerGrads g = dense_backward(tape[0], up);
  auto loss = [&] {
    const Tensor o = oracle::dense(x, w, b);
    double s = 0.0;
    for (std::size_t i = 0; i < 4; ++i) s += up[i] * o[i];
    return s;
  };
  auto fd = [&](Tensor& v) {
    Tensor d(v.shape());
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double old = v[i];
      v[i] = old + 1e-5;
      const double a = loss();
      v[i] = old - 1e-5;
      const double c = loss();
      v[i] = old;
      d[i] = (a - c) / 2e-5;
    }
    return d;
  };
  EXPECT_LE(oracle::relative_error(g.input, fd(x)), 1e-4);
  EXPECT_LE(oracle::relative_error(g.params.weights, fd(w)), 1e-4);
  EXPECT_LE(oracle::relative_error(g.params.bias, fd(b)), 1e-4);
}

TEST(Relu, Forward) {
  EXPECT_EQ(relu_forward(Tensor::vector({-1, 0, 2})), Tensor::vector({0, 0, 2}));
  EXPECT_EQ(relu_forward(Tensor::vector({-1, -3})).max_abs(), 0.0);
  EXPECT_EQ(relu_forward(Tensor::vector({0, 1.5})), Tensor::vector({0, 1.5}));
}

TEST(Relu, BackwardRules) {
  auto run = [](double x, double g, ReluRule rule) {
    ExecutionTape tape;
    tape.relu(Tensor::vector({x}));
    return relu_backward(tape[0], Tensor::vector({g}), rule)[0];
  };
  EXPECT_EQ(run(-1, 5, ReluRule::Vanilla), 0.0);
  EXPECT_EQ(run(-1, 5, ReluRule::Guided), 0.0);
  EXPECT_EQ(run(2, -3, ReluRule::Vanilla), -3.0);
  EXPECT_EQ(run(2, -3, ReluRule::Guided), 0.0);
  EXPECT_EQ(run(2, 3, ReluRule::Vanilla), 3.0);
  EXPECT_EQ(run(2, 3, ReluRule::Guided), 3.0);
  // Strict gate: x = 0 blocks under both rules.
  EXPECT_EQ(run(0, 3, ReluRule::Vanilla), 0.0);
  EXPECT_EQ(run(0, 3, ReluRule::Guided), 0.0);
}

TEST(Relu, GuidedClampProperty) {
  Rng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    ExecutionTape tape;
    const Tensor x = oracle::random_tensor({20}, rng);
    if (trial == 0) {
      Tensor z = x;
      z[3] = 0.0;
      tape.relu(z);
    } else {
      tape.relu(x);
    }
    const Tensor out = relu_backward(tape[0], oracle::random_tensor({20}, rng), ReluRule::Guided);
    for (std::size_t i = 0; i < 20; ++i) {
      EXPECT_GE(out[i], 0.0);
      if (tape[0].input[i] <= 0.0) {
        EXPECT_EQ(out[i], 0.0);
      }
    }
  }
}

TEST(BackwardToInput, SingleRelu) {
  ExecutionTape tape;
  tape.relu(Tensor::vector({2, 2}));
  EXPECT_EQ(backward_to_input(tape, Tensor::vector({1, -1}), ReluRule::Vanilla).gradient, Tensor::vector({1, -1}));
  EXPECT_EQ(backward_to_input(tape, Tensor::vector({1, -1}), ReluRule::Guided).gradient, Tensor::vector({1, 0}));
}

TEST(BackwardToInput, IdentityDenseLayers) {
  ExecutionTape tape;
  const Tensor eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  const Tensor zero({3});
  tape.dense(tape.dense(Tensor::vector({1, 2, 3}), eye, zero), eye, zero);
  const Tensor g = Tensor::vector({0.5, -2, 9});
  EXPECT_EQ(backward_to_input(tape, g).gradient, g);
}

TEST(BackwardToInput, TwoConvOneDenseMatchesFiniteDifferences) {
  Rng rng(21);
  const Tensor x = oracle::random_tensor({2, 7, 7}, rng);
  const Tensor k1 = oracle::random_tensor({3, 2, 3, 3}, rng), b1 = oracle::random_tensor({3}, rng);
  const Tensor k2 = oracle::random_tensor({2, 3, 2, 2}, rng), b2 = oracle::random_tensor({2}, rng);
  auto run = [&](const Tensor& in, ExecutionTape* tape) {
    ExecutionTape local;
    ExecutionTape& t = tape ? *tape : local;
    Tensor a = t.relu(t.conv(in, k1, b1, 1, 1));
    a = t.relu(t.conv(a, k2, b2, 2, 0));
    a = t.flatten(a);
    return a;
  };
  ExecutionTape probe;
  const std::size_t n = run(x, &probe).size();
  const Tensor w = oracle::random_tensor({1, n}, rng), b = oracle::random_tensor({1}, rng);
  ExecutionTape tape;
  tape.dense(run(x, &tape), w, b);
  const Tensor grad = backward_to_input(tape, Tensor::vector({1.0})).gradient;
  Tensor fd(x.shape()), xp = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    xp[i] = x[i] + 1e-5;
    const double up = oracle::dense(run(xp, nullptr), w, b)[0];
    xp[i] = x[i] - 1e-5;
    const double down = oracle::dense(run(xp, nullptr), w, b)[0];
    xp[i] = x[i];
    fd[i] = (up - down) / 2e-5;
  }
  EXPECT_LE(oracle::relative_error(grad, fd), 1e-4);
}

TEST(BackwardToInput, StopAtLayerReturnsGradientAtThatOutput) {
  Rng rng(1);
  ExecutionTape tape;
  const Tensor k = oracle::random_tensor({2, 1, 3, 3}, rng);
  const Tensor kb = Tensor::zeros({2}), w = oracle::random_tensor({1, 50}, rng), wb = Tensor::zeros({1});
  Tensor a = tape.relu(tape.conv(oracle::random_tensor({1, 5, 5}, rng), k, kb, 1, 1));
  const Tensor flat = tape.flatten(a);
  tape.dense(flat, w, wb);
  const Tensor seed = Tensor::vector({1.0});
  const BackwardResult full = backward_to_input(tape, seed);
  const BackwardResult at_relu = backward_to_input(tape, seed, ReluRule::Vanilla, 1);
  EXPECT_EQ(at_relu.gradient.shape(), (Shape{2, 5, 5}));
  EXPECT_TRUE(bitwise_equal(at_relu.gradient, full.grad_at_output[1]));
  EXPECT_TRUE(bitwise_equal(backward_to_input(tape, seed, ReluRule::Vanilla, 3).gradient, seed));
  EXPECT_THROW(backward_to_input(tape, seed, ReluRule::Vanilla, 4), IndexError);
  EXPECT_THROW(backward_to_input(tape, Tensor::vector({1, 2})), DimensionError);
}

TEST(BackwardToInput, ShapesRoundTripForEveryLayerKind) {
  Rng rng(31);
  ExecutionTape tape;
  const Tensor k = oracle::random_tensor({3, 2, 2, 2}, rng), kb = Tensor::zeros({3});
  const Tensor w = oracle::random_tensor({4, 36}, rng), wb = Tensor::zeros({4});
  Tensor a = tape.conv(oracle::random_tensor({2, 6, 5}, rng), k, kb, 2, 1);
  a = tape.relu(a);
  a = tape.flatten(a);
  a = tape.dense(a, w, wb);
  BackwardOptions opt;
  opt.param_grads = true;
  const BackwardResult r = backward_to_input(tape, oracle::random_tensor({4}, rng), opt);
  for (std::size_t i = 0; i < tape.size(); ++i) {
    EXPECT_EQ(r.grad_at_output[i].shape(), tape[i].output.shape());
    EXPECT_EQ(r.grad_at_input[i].shape(), tape[i].input.shape());
  }
  EXPECT_EQ(r.params[0]->weights.shape(), (Shape{3, 2, 2, 2}));
  EXPECT_FALSE(r.params[1].has_value());
}

TEST(BackwardToInput, Deterministic) {
  Rng rng(77);
  auto run = [&](std::uint64_t seed) {
    Rng r(seed);
    ExecutionTape tape;
    const Tensor x = oracle::random_tensor({2, 8, 8}, r), k = oracle::random_tensor({4, 2, 3, 3}, r);
    const Tensor kb = oracle::random_tensor({4}, r), w = oracle::random_tensor({3, 256}, r), wb = Tensor::zeros({3});
    Tensor a = tape.relu(tape.conv(x, k, kb, 1, 1));
    a = tape.flatten(a);
    tape.dense(a, w, wb);
    return backward_to_input(tape, Tensor::vector({1, -1, 0.5}), ReluRule::Guided).gradient;
  };
  EXPECT_TRUE(bitwise_equal(run(9), run(9)));
}
