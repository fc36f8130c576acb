#include <gtest/gtest.h>

#include <limits>

#include "stsx/tensor.hpp"
#include "support.hpp"

using namespace stsx;
using stsx::testing::check_gradients;
using stsx::testing::random_matrix;

namespace {

constexpr double kTol = 1e-4;

// Generic scalar readout: sum(W .* y) with a fixed random W.
Tensor project(const Tensor& y, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  const Matrix w = random_matrix(y.rows(), y.cols(), rng);
  return sum(hadamard(y, Tensor(w)));
}

Matrix away_from_zero(Matrix m) {
  for (Index i = 0; i < m.size(); ++i)
    if (std::abs(m.data()[i]) < 0.05) m.data()[i] = 0.3;
  return m;
}

}  // namespace

TEST(TensorGrad, Matmul) {
  std::mt19937_64 rng(1);
  auto r = check_gradients([](const auto& in) { return project(matmul(in[0], in[1])); },
                           {random_matrix(3, 4, rng), random_matrix(4, 5, rng)});
  EXPECT_LT(r.max_rel, kTol);
}

TEST(TensorGrad, TransposeAddSubHadamardScalar) {
  std::mt19937_64 rng(2);
  auto r = check_gradients(
      [](const auto& in) {
        auto a = transpose(in[0]);
        return project(mul_scalar(hadamard(add(a, in[1]), sub(in[1], a)), 1.7));
      },
      {random_matrix(4, 3, rng), random_matrix(3, 4, rng)});
  EXPECT_LT(r.max_rel, kTol);
}

TEST(TensorGrad, AddRowBroadcast) {
  std::mt19937_64 rng(3);
  auto r = check_gradients(
      [](const auto& in) { return project(add_row(in[0], in[1])); },
      {random_matrix(5, 3, rng), random_matrix(1, 3, rng)});
  EXPECT_LT(r.max_rel, kTol);
}

TEST(TensorGrad, ReluExpLog) {
  std::mt19937_64 rng(4);
  auto r = check_gradients([](const auto& in) { return project(relu(in[0])); },
                           {away_from_zero(random_matrix(4, 4, rng))});
  EXPECT_LT(r.max_rel, kTol);
  r = check_gradients([](const auto& in) { return project(exp(in[0])); }, {random_matrix(3, 3, rng, 0.5)});
  EXPECT_LT(r.max_rel, kTol);
  Matrix pos = random_matrix(3, 3, rng).cwiseAbs().array() + 0.5;
  r = check_gradients([](const auto& in) { return project(log(in[0])); }, {pos});
  EXPECT_LT(r.max_rel, kTol);
}

TEST(TensorGrad, SoftmaxWithMask) {
  std::mt19937_64 rng(5);
  Matrix mask = Matrix::Zero(4, 6);
  const double ninf = -std::numeric_limits<double>::infinity();
  mask(0, 1) = ninf;
  mask(2, 0) = mask(2, 5) = ninf;
  auto r = check_gradients([&](const auto& in) { return project(softmax_rows(add(in[0], Tensor(mask)))); },
                           {random_matrix(4, 6, rng)});
  EXPECT_LT(r.max_rel, kTol);
}

TEST(TensorGrad, ReductionsAndReshaping) {
  std::mt19937_64 rng(6);
  auto r = check_gradients([](const auto& in) { return project(mean_rows(in[0])); }, {random_matrix(5, 3, rng)});
  EXPECT_LT(r.max_rel, kTol);
  r = check_gradients(
      [](const auto& in) {
        auto c = concat_cols<double>({in[0], in[1]});
        auto s = concat_rows<double>({slice_rows(c, 1, 2), slice_cols(c, 0, 5)});
        return project(s);
      },
      {random_matrix(3, 2, rng), random_matrix(3, 3, rng)});
  EXPECT_LT(r.max_rel, kTol);
  for (Index off : {-3, -1, 0, 2, 7}) {
    r = check_gradients([off](const auto& in) { return project(shift_rows(in[0], off)); },
                        {random_matrix(5, 2, rng)});
    EXPECT_LT(r.max_rel, kTol) << "offset " << off;
  }
}

TEST(Tensor, ShiftRowsSemantics) {
  Matrix x(4, 1);
  x << 1, 2, 3, 4;
  Matrix up(4, 1), down(4, 1);
  up << 3, 4, 0, 0;
  down << 0, 1, 2, 3;
  EXPECT_EQ(shift_rows(Tensor(x), 2).value(), up);
  EXPECT_EQ(shift_rows(Tensor(x), -1).value(), down);
  EXPECT_EQ(shift_rows(Tensor(x), 9).value(), Matrix::Zero(4, 1));
}

TEST(Tensor, SoftmaxMaskedEntriesAndEmptyRows) {
  const double ninf = -std::numeric_limits<double>::infinity();
  Matrix x(2, 3);
  x << 0.0, ninf, 1.0, ninf, ninf, ninf;
  std::vector<Index> empty;
  auto y = softmax_rows(Tensor(x), &empty);
  EXPECT_EQ(y(0, 1), 0.0);
  EXPECT_NEAR(y(0, 0) + y(0, 2), 1.0, 1e-15);
  EXPECT_EQ(y.value().row(1), Matrix::Zero(1, 3));
  ASSERT_EQ(empty.size(), 1u);
  EXPECT_EQ(empty[0], 1);
}

TEST(Tensor, ShapeAndRankContracts) {
  Tensor a = Tensor::zeros(2, 3);
  EXPECT_THROW(matmul(a, a), DimensionError);
  EXPECT_THROW(add(a, Tensor::zeros(3, 2)), DimensionError);
  EXPECT_THROW(slice_cols(a, 2, 2), BoundsError);
  EXPECT_THROW(slice_rows(a, -1, 1), BoundsError);
  EXPECT_THROW(Tensor(Matrix::Zero(2, 3), Shape{5}, false), DimensionError);
  EXPECT_EQ(mean_rows(a).rank(), 1u);
  EXPECT_EQ(sum(a).rank(), 0u);
  EXPECT_THROW(a.item(), ContractError);
}

TEST(Tensor, BackwardTwiceIsAContractError) {
  Tensor x(Matrix::Ones(2, 2), true);
  auto loss = sum(mul_scalar(x, 3.0));
  backward(loss);
  EXPECT_EQ(x.grad(), Matrix::Constant(2, 2, 3.0));
  EXPECT_THROW(backward(loss), ContractError);
  // Reusing a consumed intermediate in a new graph is rejected too.
  auto mid = mul_scalar(x, 2.0);
  backward(sum(mid));
  EXPECT_THROW(sum(mid), ContractError);
}

TEST(Tensor, GradientsAccumulateAcrossUses) {
  Tensor x(Matrix::Constant(1, 1, 2.0), true);
  backward(sum(add(hadamard(x, x), x)));  // d/dx (x^2 + x) = 2x + 1
  EXPECT_DOUBLE_EQ(x.grad()(0, 0), 5.0);
}

TEST(Tensor, NonFiniteFromFiniteInputsRaises) {
  Tensor x(Matrix::Constant(1, 2, 1000.0));
  EXPECT_THROW(exp(x), NumericError);
  EXPECT_THROW(log(Tensor(Matrix::Zero(1, 1))), NumericError);
  Matrix nan = Matrix::Zero(1, 2);
  nan(0, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(softmax_rows(Tensor(nan)), NumericError);
}

TEST(Tensor, NoGradGuardSkipsTaping) {
  Tensor x(Matrix::Ones(2, 2), true);
  {
    NoGradGuard guard;
    auto y = sum(mul_scalar(x, 2.0));
    EXPECT_FALSE(y.requires_grad());
    EXPECT_THROW(backward(y), ContractError);
  }
  EXPECT_TRUE(sum(x).requires_grad());
}

TEST(Tensor, GraphIsTopologicallyOrdered) {
  Tensor a(Matrix::Ones(2, 2), true);
  Tensor b(Matrix::Ones(2, 2), true);
  auto loss = sum(add(matmul(a, b), a));
  ComputeGraph<double> g(loss);
  const auto ops = g.ops();
  ASSERT_EQ(ops.back(), "sum");
  const auto pos = [&](std::string_view name) { return std::find(ops.begin(), ops.end(), name) - ops.begin(); };
  EXPECT_LT(pos("matmul"), pos("add"));
  EXPECT_LT(pos("add"), pos("sum"));
}

TEST(Tensor, FloatInstantiation) {
  BasicTensor<float> x(Mat<float>::Ones(2, 3), true);
  auto y = sum(matmul(x, transpose(x)));
  backward(y);
  EXPECT_FLOAT_EQ(y.item(), 12.0f);
  EXPECT_EQ(x.grad(), Mat<float>::Constant(2, 3, 4.0f));
}
