#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "unit/autodiff/gradcheck.hpp"
#include "unit/autodiff/nn_ops.hpp"
#include "unit/autodiff/ops.hpp"

using namespace unit;
using ad::Shape;
using ad::Tensor;
using ad::numel;
using T = Tensor<double>;

namespace {

T leaf(Shape s, std::vector<double> v) {
  T t(std::move(s), std::move(v));
  t.set_requires_grad(true);
  return t;
}

std::vector<double> grad_of(const T& t) { return {t.grad().begin(), t.grad().end()}; }

}  // namespace

TEST(Autodiff, MatmulValuesAndGradients) {
  T a = leaf({2, 3}, {1, 2, 3, 4, 5, 6});
  T b = leaf({3, 2}, {7, 8, 9, 10, 11, 12});
  ad::Tape<double> tape;
  T out;
  {
    ad::TapeScope<double> scope(tape);
    out = ad::matmul(a, b);
    ad::backward(tape, ad::sum(out));
  }
  EXPECT_EQ(std::vector<double>(out.data().begin(), out.data().end()), (std::vector<double>{58, 64, 139, 154}));
  // d sum(AB)/dA = 1 * B^T row sums
  EXPECT_EQ(grad_of(a), (std::vector<double>{15, 19, 23, 15, 19, 23}));
  EXPECT_EQ(grad_of(b), (std::vector<double>{5, 5, 7, 7, 9, 9}));
}

TEST(Autodiff, BroadcastAddAccumulatesIntoBias) {
  T x = leaf({3, 2}, {1, 2, 3, 4, 5, 6});
  T bias = leaf({2}, {10, 20});
  ad::Tape<double> tape;
  {
    ad::TapeScope<double> scope(tape);
    T y = ad::add(x, bias);
    EXPECT_EQ(y[5], 26);
    ad::backward(tape, ad::sum(y));
  }
  EXPECT_EQ(grad_of(bias), (std::vector<double>{3, 3}));
}

TEST(Autodiff, ReusedTensorAccumulatesGradient) {
  T x = leaf({1}, {3});
  ad::Tape<double> tape;
  {
    ad::TapeScope<double> scope(tape);
    ad::backward(tape, ad::mul(x, x));
  }
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
}

TEST(Autodiff, UnreachedLeafKeepsEmptyGrad) {
  T x = leaf({2}, {1, 2});
  T unused = leaf({2}, {3, 4});
  ad::Tape<double> tape;
  {
    ad::TapeScope<double> scope(tape);
    ad::backward(tape, ad::sum(x));
  }
  EXPECT_TRUE(x.has_grad());
  EXPECT_FALSE(unused.has_grad());
}

TEST(Autodiff, NoGradScopeRecordsNothing) {
  T x = leaf({2}, {1, 2});
  ad::Tape<double> tape;
  ad::TapeScope<double> scope(tape);
  {
    ad::NoGradScope<double> off;
    T y = ad::sum(ad::mul(x, x));
    EXPECT_FALSE(y.requires_grad());
  }
  EXPECT_EQ(tape.size(), 0u);
}

TEST(Autodiff, ShapeErrorsAreReported) {
  T a = T::zeros({2, 3});
  T b = T::zeros({2, 3});
  EXPECT_THROW(ad::matmul(a, b), std::invalid_argument);
  EXPECT_THROW(ad::reshape(a, {4}), std::invalid_argument);
  EXPECT_THROW(ad::slice(a, 1, 2, 2), std::invalid_argument);
  EXPECT_THROW(T({2, 2}, {1, 2, 3}), std::invalid_argument);
}

TEST(Autodiff, SoftmaxRowsSumToOneAndAreStable) {
  T a({2, 3}, {1000, 1001, 1002, -5, 0, 5});
  T s = ad::softmax(a, 1);
  for (int r = 0; r < 2; ++r) EXPECT_NEAR(s[3 * r] + s[3 * r + 1] + s[3 * r + 2], 1.0, 1e-12);
  EXPECT_NEAR(s[2], std::exp(2.0) / (1 + std::exp(1.0) + std::exp(2.0)), 1e-12);
}

TEST(Autodiff, LayerNormNormalizesRows) {
  T x({2, 4}, {1, 2, 3, 4, -1, 0, 0, 5});
  T y = ad::layer_norm(x, T::full({4}, 1.0), T::zeros({4}), 1e-12);
  for (int r = 0; r < 2; ++r) {
    double m = 0, v = 0;
    for (int j = 0; j < 4; ++j) m += y[4 * r + j] / 4;
    for (int j = 0; j < 4; ++j) v += (y[4 * r + j] - m) * (y[4 * r + j] - m) / 4;
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v, 1.0, 1e-9);
  }
}

TEST(Autodiff, CrossEntropyMatchesHandComputation) {
  T logits({2, 3}, {0, 0, 0, 1, 2, 3});
  std::vector<int> targets{0, 2};
  const double l0 = std::log(3.0);
  const double l1 = -(3 - std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0)));
  EXPECT_NEAR(ad::cross_entropy<double>(logits, targets).item(), (l0 + l1) / 2, 1e-12);
  std::vector<double> w{0.1, 1, 1};
  EXPECT_NEAR(ad::cross_entropy<double>(logits, targets, w).item(), (0.1 * l0 + l1) / 1.1, 1e-12);
  EXPECT_NEAR(ad::cross_entropy<double>(logits, targets, w, ad::Reduction::sum).item(), 0.1 * l0 + l1, 1e-12);
}

TEST(Autodiff, DropoutIsIdentityInEvalAndScalesInTrain) {
  Rng rng(3);
  T x = T::full({1000}, 1.0);
  T e = ad::dropout(x, 0.5, rng, false);
  EXPECT_EQ(e.id(), x.id());
  T d = ad::dropout(x, 0.25, rng, true);
  std::size_t zeros = 0;
  for (double v : d.data()) {
    if (v == 0) ++zeros;
    else EXPECT_DOUBLE_EQ(v, 1 / 0.75);
  }
  EXPECT_NEAR(static_cast<double>(zeros) / 1000, 0.25, 0.05);
}

TEST(Autodiff, MaskedKeysGetExactlyZeroWeight) {
  Rng rng(5);
  std::vector<double> vals(2 * 3 * 4);
  for (auto& v : vals) v = rng.normal();
  T q({2, 3, 4}, vals), k({2, 3, 4}, vals), v({2, 3, 4}, vals);
  std::vector<std::uint8_t> pad{0, 0, 1, 0, 1, 1};
  std::vector<double> w;
  ad::attention(q, k, v, 2, pad, &w);
  ASSERT_EQ(w.size(), 2u * 2 * 3 * 3);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t h = 0; h < 2; ++h)
      for (std::size_t i = 0; i < 3; ++i) {
        double row = 0;
        for (std::size_t j = 0; j < 3; ++j) {
          const double x = w[((b * 2 + h) * 3 + i) * 3 + j];
          if (pad[b * 3 + j]) {
            EXPECT_EQ(x, 0.0);
          }
          row += x;
        }
        EXPECT_NEAR(row, 1.0, 1e-12);
      }
  std::vector<std::uint8_t> all_masked{1, 1, 1, 0, 0, 0};
  EXPECT_THROW(ad::attention(q, k, v, 2, all_masked), std::invalid_argument);
}

TEST(Autodiff, Conv2dMatchesDirectSum) {
  Rng rng(9);
  auto rnd = [&](Shape s) {
    std::vector<double> v(numel(s));
    for (auto& x : v) x = rng.normal();
    return T(s, v);
  };
  T x = rnd({1, 5, 5, 2}), w = rnd({3, 3, 2, 4}), b = rnd({4});
  T y = ad::conv2d(x, w, b, ad::Conv2dGeometry{3, 2, 1});
  ASSERT_EQ(y.shape(), (Shape{1, 3, 3, 4}));
  for (std::size_t oy = 0; oy < 3; ++oy)
    for (std::size_t ox = 0; ox < 3; ++ox)
      for (std::size_t co = 0; co < 4; ++co) {
        double s = b[co];
        for (int ky = 0; ky < 3; ++ky)
          for (int kx = 0; kx < 3; ++kx) {
            const int iy = static_cast<int>(oy) * 2 - 1 + ky, ix = static_cast<int>(ox) * 2 - 1 + kx;
            if (iy < 0 || ix < 0 || iy >= 5 || ix >= 5) continue;
            for (std::size_t ci = 0; ci < 2; ++ci)
              s += x[(static_cast<std::size_t>(iy) * 5 + static_cast<std::size_t>(ix)) * 2 + ci] *
                   w[((static_cast<std::size_t>(ky) * 3 + static_cast<std::size_t>(kx)) * 2 + ci) * 4 + co];
          }
        EXPECT_NEAR(y[(oy * 3 + ox) * 4 + co], s, 1e-12);
      }
}

TEST(Autodiff, GradcheckDetectsAWrongGradient) {
  // values flow through but the gradient does not
  auto broken = [](const std::vector<T>& in) {
    ad::NoGradScope<double> off;
    return ad::sum(ad::mul(in[0], in[0]));
  };
  auto ok = [](const std::vector<T>& in) { return ad::sum(ad::mul(in[0], in[0])); };
  T x({3}, {0.5, -1, 2});
  EXPECT_GT(ad::gradcheck(broken, {x.detach()}).max_relative_error, 0.5);
  EXPECT_LT(ad::gradcheck(ok, {x.detach()}).max_relative_error, 1e-8);
}
