#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <numeric>

#include "vog/ad/gradcheck.hpp"
#include "vog/ad/op_suite.hpp"
#include "vog/ad/ops.hpp"
#include "vog/ad/params.hpp"

using namespace vog;
using namespace vog::ad;

namespace {

Tensor random_tensor(Shape s, Rng& rng, bool grad = true, double scale = 1.0) {
  std::vector<double> v(numel_of(s));
  for (auto& x : v) x = scale * rng.normal();
  return Tensor(std::move(s), std::move(v), grad);
}

}  // namespace

TEST(Ops, MatmulHandExample) {
  auto a = Tensor::matrix(2, 2, {1, 2, 3, 4});
  auto b = Tensor::matrix(2, 1, {1, 1});
  auto c = matmul(a, b);
  EXPECT_EQ(c.shape(), (Shape{2, 1}));
  EXPECT_DOUBLE_EQ(c[0], 3);
  EXPECT_DOUBLE_EQ(c[1], 7);
}

// Forward product and both input gradients against triple loops, over
// shapes that cross typical kernel block sizes.
TEST(Ops, MatmulMatchesLoopOracle) {
  Rng rng(11);
  for (std::size_t m : {1u, 3u, 8u, 17u, 64u})
    for (std::size_t k : {1u, 5u, 64u, 256u})
      for (std::size_t n : {1u, 7u, 64u, 256u}) {
        auto a = random_tensor({m, k}, rng), b = random_tensor({k, n}, rng);
        const auto g = random_tensor({m, n}, rng, false);
        auto c = matmul(a, b);
        backward(sum_all(mul(c, g)));
        double fwd = 0, ga = 0, gb = 0;
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            double s = 0;
            for (std::size_t l = 0; l < k; ++l) s += a[i * k + l] * b[l * n + j];
            fwd = std::max(fwd, std::abs(s - c[i * n + j]));
          }
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t l = 0; l < k; ++l) {
            double s = 0;
            for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * b[l * n + j];
            ga = std::max(ga, std::abs(s - a.grad()[i * k + l]));
          }
        for (std::size_t l = 0; l < k; ++l)
          for (std::size_t j = 0; j < n; ++j) {
            double s = 0;
            for (std::size_t i = 0; i < m; ++i) s += a[i * k + l] * g[i * n + j];
            gb = std::max(gb, std::abs(s - b.grad()[l * n + j]));
          }
        EXPECT_LE(std::max({fwd, ga, gb}), 1e-9) << m << "x" << k << "x" << n;
      }
}

TEST(Ops, ShapeErrorsNameBothShapes) {
  auto a = Tensor::zeros({2, 3});
  auto b = Tensor::zeros({2, 3});
  try {
    matmul(a, b);
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("[2,3]"), std::string::npos);
  }
  EXPECT_THROW(add(a, Tensor::zeros({2})), ShapeError);
  EXPECT_THROW(concat({a, b}, 2), ShapeError);
  EXPECT_THROW(concat({a, b}, -3), ShapeError);
  EXPECT_THROW(slice(a, 1, 2, 5), ShapeError);
  EXPECT_THROW(masked_fill(a, std::vector<std::uint8_t>(5, 0), 0.0), ShapeError);
}

TEST(Ops, SoftmaxRowsSumToOne) {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    auto x = random_tensor({4, 7}, rng, false, 30.0);
    auto y = softmax(x, 1);
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0;
      for (std::size_t c = 0; c < 7; ++c) s += y[r * 7 + c];
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
  auto big = Tensor({3}, {1e300, -1e300, 0});
  auto y = softmax(big, 0);
  for (double v : y.values()) EXPECT_FALSE(std::isnan(v));
}

TEST(Ops, LayerNormMoments) {
  Rng rng(2);
  auto x = random_tensor({5, 16}, rng, false, 4.0);
  auto y = layer_norm(x, Tensor::full({16}, 1.0), Tensor::zeros({16}));
  for (std::size_t r = 0; r < 5; ++r) {
    double mu = 0, var = 0;
    for (std::size_t c = 0; c < 16; ++c) mu += y[r * 16 + c];
    mu /= 16;
    for (std::size_t c = 0; c < 16; ++c) var += (y[r * 16 + c] - mu) * (y[r * 16 + c] - mu);
    var /= 16;
    EXPECT_LT(std::abs(mu), 1e-10);
    EXPECT_NEAR(var, 1.0, 1e-8);
  }
}

TEST(Ops, ConcatSliceRoundTrip) {
  Rng rng(3);
  auto a = random_tensor({2, 3, 4}, rng, false);
  auto b = random_tensor({2, 5, 4}, rng, false);
  auto c = concat({a, b}, 1);
  EXPECT_EQ(c.shape(), (Shape{2, 8, 4}));
  auto a2 = slice(c, 1, 0, 3);
  auto b2 = slice(c, 1, 3, 8);
  EXPECT_TRUE(std::equal(a.values().begin(), a.values().end(), a2.values().begin()));
  EXPECT_TRUE(std::equal(b.values().begin(), b.values().end(), b2.values().begin()));
}

TEST(Backward, SumGivesOnes) {
  auto w = Tensor({3}, {1, -2, 5}, true);
  backward(sum_all(w));
  for (double g : w.grad()) EXPECT_DOUBLE_EQ(g, 1.0);
}

TEST(Backward, SquareHandDerivative) {
  auto w = Tensor({2}, {1, 2}, true);
  backward(sum_all(mul(w, w)));
  EXPECT_DOUBLE_EQ(w.grad()[0], 2.0);
  EXPECT_DOUBLE_EQ(w.grad()[1], 4.0);
}

TEST(Backward, NonScalarLossRejected) {
  auto w = Tensor({2}, {1, 2}, true);
  EXPECT_THROW(backward(w), ContractError);
}

TEST(Backward, UnreachableParameterGetsZeroAfterZeroGrad) {
  ParameterStore ps;
  auto a = ps.constant("a", {2}, 1.0);
  auto b = ps.constant("b", {2}, 1.0);
  ps.zero_grad();
  backward(sum_all(a));
  for (double g : b.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Bce, ClosedForms) {
  auto l0 = Tensor({1}, {0.0}, true);
  EXPECT_NEAR(bce_with_logits(l0, {1.0}).item(), std::log(2.0), 1e-15);
  auto l40 = Tensor({1}, {40.0});
  const double v = bce_with_logits(l40, {1.0}).item();
  EXPECT_GE(v, 0.0);
  EXPECT_LT(v, 1e-15);
  auto lneg = Tensor({1}, {-800.0});
  EXPECT_NEAR(bce_with_logits(lneg, {1.0}).item(), 800.0, 1e-9);
}

TEST(Bce, MaskedEntryIgnored) {
  auto l = Tensor({2}, {0.7, -3.0}, true);
  const double both = bce_with_logits(l, {1.0, 0.0}, {1, 0}).item();
  const double one = bce_with_logits(Tensor({1}, {0.7}), {1.0}).item();
  EXPECT_DOUBLE_EQ(both, one);
  backward(bce_with_logits(l, {1.0, 0.0}, {1, 0}));
  EXPECT_EQ(l.grad()[1], 0.0);
  EXPECT_THROW(bce_with_logits(l, {1.0, 0.0}, {0, 0}), ContractError);
}

TEST(Adam, ZeroGradLeavesParams) {
  ParameterStore ps;
  Rng rng(5);
  auto w = ps.weight("w", 3, 4, rng);
  const std::vector<double> before(w.values().begin(), w.values().end());
  ps.zero_grad();
  AdamState st;
  st.lr = 0.1;
  adam_step(st, ps);
  EXPECT_TRUE(std::equal(before.begin(), before.end(), w.values().begin()));
}

TEST(Adam, FirstStepClosedForm) {
  ParameterStore ps;
  auto w = ps.constant("w", {1}, 2.0);
  ps.zero_grad();
  w.mutable_grad()[0] = 1.0;
  AdamState st;
  st.lr = 0.1;
  adam_step(st, ps);
  // m_hat = 1, v_hat = 1 after bias correction: step = lr / (1 + eps).
  EXPECT_NEAR(w[0], 2.0 - 0.1 / (1.0 + 1e-8), 1e-15);
}

TEST(Adam, MissingGradRejected) {
  ParameterStore ps;
  ps.constant("w", {1}, 2.0);
  AdamState st;
  EXPECT_THROW(adam_step(st, ps), ContractError);
}

TEST(Adam, Deterministic) {
  auto run = [] {
    ParameterStore ps;
    Rng rng(9);
    auto w = ps.weight("w", 4, 3, rng);
    auto x = Tensor::matrix(2, 4, {1, 2, 3, 4, -1, 0, 1, 0.5});
    AdamState st;
    st.lr = 0.01;
    for (int i = 0; i < 20; ++i) {
      ps.zero_grad();
      backward(sum_all(mul(matmul(x, w), matmul(x, w))));
      adam_step(st, ps);
    }
    return std::vector<double>(w.values().begin(), w.values().end());
  };
  EXPECT_EQ(run(), run());
}

TEST(Params, DuplicateNamesRejected) {
  ParameterStore ps;
  ps.bias("b", 2);
  EXPECT_THROW(ps.bias("b", 2), ContractError);
}

TEST(Params, XavierRange) {
  ParameterStore ps;
  Rng rng(4);
  auto w = ps.weight("w", 10, 30, rng);
  const double a = std::sqrt(6.0 / 40.0);
  for (double v : w.values()) {
    EXPECT_GE(v, -a);
    EXPECT_LT(v, a);
  }
}

TEST(Checkpoint, RoundTrip) {
  ParameterStore ps;
  Rng rng(6);
  ps.weight("layer.w", 3, 2, rng);
  ps.bias("layer.b", 2);
  const auto bytes = encode_checkpoint(ps, "{\"seed\":1}");
  const auto ck = decode_checkpoint(bytes);
  EXPECT_EQ(ck.manifest, "{\"seed\":1}");
  ParameterStore other;
  Rng rng2(7);
  other.weight("layer.w", 3, 2, rng2);
  other.bias("layer.b", 2);
  load_into(ck, other);
  EXPECT_EQ(encode_checkpoint(other, "{\"seed\":1}"), bytes);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), DataError);
}

TEST(GradCheck, QuadraticFormIsTight) {
  Rng rng(11);
  auto A = random_tensor({4, 4}, rng, false);
  auto x = random_tensor({4, 1}, rng, true);
  auto f = [&] { return sum_all(mul(x, matmul(A, x))); };
  GradCheckOptions opt;
  opt.tol = 1e-7;
  EXPECT_TRUE(grad_check(f, {{"x", x}}, opt).passed);
}

TEST(GradCheck, ReluKinkIsExcluded) {
  auto x = Tensor({3}, {0.0, 1.0, -1.0}, true);
  auto f = [&] { return sum_all(relu(x)); };
  const auto rep = grad_check(f, {{"x", x}});
  EXPECT_EQ(rep.excluded, 1u);
  EXPECT_EQ(rep.excluded_coords[0].index, 0u);
  EXPECT_TRUE(rep.passed);
}

// Every operator's backward at 100 random points.
class OperatorGrad : public ::testing::TestWithParam<int> {};

TEST_P(OperatorGrad, MatchesFiniteDifferences) {
  const auto checks = check_operators(derive_seed({1000, static_cast<std::uint64_t>(GetParam())}));
  EXPECT_EQ(checks.size(), 24u);
  for (const auto& c : checks) {
    const auto& rep = c.report;
    EXPECT_TRUE(rep.passed) << c.op << ": worst " << rep.worst.tensor << "[" << rep.worst.index << "] analytic "
                            << rep.worst.analytic << " numeric " << rep.worst.numeric << " rel " << rep.max_rel_error;
    EXPECT_GT(rep.checked, 0u) << c.op;
  }
}

INSTANTIATE_TEST_SUITE_P(RandomPoints, OperatorGrad, ::testing::Range(0, 100));
