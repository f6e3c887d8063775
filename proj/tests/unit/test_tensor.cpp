#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "starchnet/error.hpp"
#include "starchnet/ops.hpp"
#include "starchnet/rng.hpp"
#include "starchnet/tensor.hpp"

using namespace starchnet;

TEST(Tensor, ConstructionChecksSize) {
  const Tensor t = Tensor::from_vector({2, 3}, std::vector<float>{1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.rank(), 2u);
  EXPECT_EQ(t.dtype(), DType::F32);
  EXPECT_EQ(t.at(4), 5.0);
  EXPECT_THROW(Tensor::from_vector({2, 2}, std::vector<float>{1, 2, 3}), ShapeError);
}

TEST(Tensor, FactoriesAndConversion) {
  EXPECT_EQ(Tensor::zeros({3}).to_vector(), (std::vector<double>{0, 0, 0}));
  EXPECT_EQ(Tensor::ones({2}, DType::F64).to_vector(), (std::vector<double>{1, 1}));
  EXPECT_EQ(Tensor::full({2}, 2.5).to_vector(), (std::vector<double>{2.5, 2.5}));
  const Tensor d = Tensor::full({2}, 0.1, DType::F64);
  EXPECT_EQ(d.to(DType::F32).dtype(), DType::F32);
  EXPECT_EQ(d.to(DType::F32).at(0), static_cast<double>(0.1f));
  EXPECT_EQ(d.reshaped({1, 2}).shape(), (Shape{1, 2}));
  EXPECT_THROW(d.reshaped({3}), ShapeError);
}

TEST(Tensor, CopiesShareStorageCloneDoesNot) {
  Tensor a = Tensor::zeros({2});
  Tensor b = a;
  EXPECT_TRUE(a.same_storage(b));
  Tensor c = a.clone();
  EXPECT_FALSE(a.same_storage(c));
  a.mutable_data<float>()[0] = 3.0f;
  EXPECT_EQ(b.at(0), 3.0);
  EXPECT_EQ(c.at(0), 0.0);
}

TEST(Tensor, RandnIsSeeded) {
  Rng r1(11), r2(11);
  EXPECT_TRUE(bit_equal(Tensor::randn({4, 4}, r1), Tensor::randn({4, 4}, r2)));
}

TEST(Tensor, NonFiniteResultIsNumericError) {
  const Tensor big = Tensor::full({1}, std::numeric_limits<float>::max());
  try {
    ops::add(big, big);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("add"), std::string::npos);
  }
}

TEST(Backward, SumGivesOnes) {
  Tensor x = Tensor::from_vector({3}, std::vector<double>{1, -2, 5});
  x.set_requires_grad(true);
  ops::sum(x).backward();
  EXPECT_EQ(x.grad().to_vector(), (std::vector<double>{1, 1, 1}));
}

TEST(Backward, MeanGivesOneOverN) {
  Tensor x = Tensor::from_vector({4}, std::vector<double>{1, 2, 3, 4});
  x.set_requires_grad(true);
  ops::mean(x).backward();
  for (double g : x.grad().to_vector()) EXPECT_DOUBLE_EQ(g, 0.25);
}

TEST(Backward, NonScalarIsArgumentError) {
  Tensor x = Tensor::ones({2}, DType::F64);
  x.set_requires_grad(true);
  EXPECT_THROW(ops::mul(x, x).backward(), ArgumentError);
}

TEST(Backward, ReusedNodeAccumulatesThroughBothPaths) {
  // f = sum(x * x) + sum(x)  ->  df/dx = 2x + 1
  Tensor x = Tensor::from_vector({3}, std::vector<double>{1, 2, -3});
  x.set_requires_grad(true);
  Tensor sq = ops::mul(x, x);
  ops::add(ops::sum(sq), ops::sum(x)).backward();
  EXPECT_EQ(x.grad().to_vector(), (std::vector<double>{3, 5, -5}));
}

TEST(Backward, LeafGradientsAccumulateUntilZeroed) {
  Tensor x = Tensor::ones({2}, DType::F64);
  x.set_requires_grad(true);
  ops::sum(x).backward();
  ops::sum(x).backward();
  EXPECT_EQ(x.grad().to_vector(), (std::vector<double>{2, 2}));
  x.zero_grad();
  EXPECT_FALSE(x.has_grad());
}

TEST(Backward, NoGradGuardRecordsNothing) {
  Tensor x = Tensor::ones({2}, DType::F64);
  x.set_requires_grad(true);
  {
    NoGradGuard guard;
    EXPECT_FALSE(grad_enabled());
    const Tensor y = ops::mul(x, x);
    EXPECT_FALSE(y.requires_grad());
    EXPECT_TRUE(y.is_leaf());
  }
  EXPECT_TRUE(grad_enabled());
  EXPECT_TRUE(ops::mul(x, x).requires_grad());
}

TEST(Backward, InputsWithoutRequiresGradGetNoGradient) {
  Tensor x = Tensor::ones({2}, DType::F64);
  Tensor w = Tensor::full({2}, 3.0, DType::F64);
  w.set_requires_grad(true);
  ops::sum(ops::mul(x, w)).backward();
  EXPECT_FALSE(x.has_grad());
  EXPECT_EQ(w.grad().to_vector(), (std::vector<double>{1, 1}));
}

TEST(Backward, DeepChainDoesNotRecurse) {
  Tensor x = Tensor::ones({1}, DType::F64);
  x.set_requires_grad(true);
  Tensor y = x;
  const Tensor one = Tensor::ones({1}, DType::F64);
  for (int i = 0; i < 20000; ++i) y = ops::add(y, one);
  ops::sum(y).backward();
  EXPECT_EQ(x.grad().at(0), 1.0);
}

TEST(Rng, DeriveSeedSeparatesPurposesAndSalts) {
  EXPECT_EQ(derive_seed(1, "split"), derive_seed(1, "split"));
  EXPECT_NE(derive_seed(1, "split"), derive_seed(1, "init"));
  EXPECT_NE(derive_seed(1, "split", 0), derive_seed(1, "split", 1));
  EXPECT_NE(derive_seed(1, "augment", 1, 2), derive_seed(1, "augment", 2, 1));
  EXPECT_NE(derive_seed(1, "split"), derive_seed(2, "split"));
}

TEST(Rng, UniformAndBelowRanges) {
  Rng rng(3);
  std::array<int, 5> hits{};
  for (int i = 0; i < 5000; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    ++hits[rng.below(5)];
  }
  for (int h : hits) EXPECT_NEAR(h, 1000, 150);
}

TEST(Rng, NormalMoments) {
  Rng rng(5);
  double s = 0, s2 = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double v = rng.normal();
    s += v;
    s2 += v * v;
  }
  EXPECT_NEAR(s / n, 0.0, 0.03);
  EXPECT_NEAR(s2 / n, 1.0, 0.04);
}
