#include <gtest/gtest.h>

#include <random>
#include <tuple>

#include "qat/ops.hpp"
#include "qat/oracle.hpp"

using namespace qat;

TEST(Tensor, CopiesShareStorageCloneDoesNot) {
  Tensor<float> a(Shape{2, 3}, 1.0f);
  Tensor<float> b = a;
  b[0] = 5.0f;
  EXPECT_EQ(a[0], 5.0f);
  auto c = a.clone();
  c[0] = 7.0f;
  EXPECT_EQ(a[0], 5.0f);
  EXPECT_EQ(a.numel(), 6u);
}

TEST(Tensor, DataSizeMismatchThrows) {
  EXPECT_THROW(Tensor<float>(Shape{2, 2}, std::vector<float>{1, 2, 3}), ShapeError);
}

TEST(Ops, AddShapeMismatchThrows) {
  Tape<float> t;
  Tensor<float> a(Shape{2, 3}), b(Shape{3, 2});
  EXPECT_THROW(add(t, a, b), ShapeError);
}

TEST(Ops, MatmulValues) {
  Tape<double> t(false);
  Tensor<double> a(Shape{2, 2}, std::vector<double>{1, 2, 3, 4});
  Tensor<double> b(Shape{2, 2}, std::vector<double>{5, 6, 7, 8});
  auto c = matmul(t, a, b);
  EXPECT_DOUBLE_EQ(c[0], 19);
  EXPECT_DOUBLE_EQ(c[1], 22);
  EXPECT_DOUBLE_EQ(c[2], 43);
  EXPECT_DOUBLE_EQ(c[3], 50);
}

TEST(Ops, MatmulInnerMismatchThrows) {
  Tape<double> t;
  Tensor<double> a(Shape{2, 3}), b(Shape{2, 3});
  EXPECT_THROW(matmul(t, a, b), ShapeError);
}

TEST(Ops, Conv2dIdentityKernel) {
  Tape<double> t(false);
  Tensor<double> x(Shape{1, 1, 3, 3}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9});
  Tensor<double> w(Shape{1, 1, 3, 3}, 0.0);
  w[4] = 1.0;
  auto y = conv2d(t, x, w, 1, 1);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 3, 3}));
  for (std::size_t i = 0; i < 9; ++i) EXPECT_DOUBLE_EQ(y[i], x[i]);
}

TEST(Ops, Conv2dChannelMismatchThrows) {
  Tape<double> t;
  Tensor<double> x(Shape{1, 2, 4, 4}), w(Shape{1, 3, 3, 3});
  EXPECT_THROW(conv2d(t, x, w, 1, 1), ShapeError);
}

TEST(Ops, SoftmaxCrossEntropyUniformLogits) {
  Tape<double> t(false);
  Tensor<double> logits(Shape{2, 4}, 0.0);
  std::vector<std::int32_t> y{1, 3};
  auto l = softmax_cross_entropy(t, logits, std::span<const std::int32_t>(y));
  EXPECT_NEAR(l.item(), std::log(4.0), 1e-12);
}

TEST(Ops, SoftmaxCrossEntropyBadLabelThrows) {
  Tape<double> t(false);
  Tensor<double> logits(Shape{1, 3}, 0.0);
  std::vector<std::int32_t> y{3};
  EXPECT_ANY_THROW(softmax_cross_entropy(t, logits, std::span<const std::int32_t>(y)));
}

TEST(Tape, BackwardAccumulatesThroughSharedInput) {
  Tape<double> t;
  Tensor<double> x(Shape{3}, std::vector<double>{1, 2, 3}, true);
  auto y = sum(t, mul(t, x, x));  // d/dx = 2x
  t.backward(y);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 2 * x[i]);
}

TEST(Tape, BackwardRequiresScalar) {
  Tape<double> t;
  Tensor<double> x(Shape{3}, 1.0, true);
  auto y = scale(t, x, 2.0);
  EXPECT_THROW(t.backward(y), ShapeError);
}

TEST(Tape, LinearGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd;
  Tensor<double> x(Shape{4, 3}), w(Shape{2, 3});
  for (auto& v : x.data()) v = nd(rng);
  for (auto& v : w.data()) v = nd(rng);
  auto loss_of = [&](const Tensor<double>& wv) {
    Tape<double> t(false);
    auto y = linear(t, x, wv);
    double a = 0;
    for (double v : y.data()) a += v * v;
    return a;
  };
  Tape<double> t;
  w.set_requires_grad(true);
  auto y = linear(t, x, w);
  auto l = sum(t, mul(t, y, y));
  t.backward(l);
  auto fd = oracle::fd_gradient(loss_of, w.clone());
  for (std::size_t i = 0; i < w.numel(); ++i) EXPECT_NEAR(w.grad()[i], fd[i], 1e-6);
}

TEST(Ops, BatchNormUpdatesRunningStats) {
  Tape<double> t(false);
  Tensor<double> x(Shape{4, 1}, std::vector<double>{1, 2, 3, 4});
  Tensor<double> g(Shape{1}, 1.0), b(Shape{1}, 0.0), rm(Shape{1}, 0.0), rv(Shape{1}, 1.0);
  auto y = batch_norm(t, x, g, b, rm, rv, true);
  double mean = 0;
  for (double v : y.data()) mean += v;
  EXPECT_NEAR(mean, 0.0, 1e-12);
  EXPECT_GT(rm[0], 0.0);
}

namespace {

std::vector<double> random_vec(std::size_t n, std::mt19937_64& g) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(g);
  return v;
}

}  // namespace

TEST(Kernels, GemmVariantsMatchNaive) {
  std::mt19937_64 g(3);
  for (auto [M, N, K] : {std::tuple<std::size_t, std::size_t, std::size_t>{1, 1, 1}, {5, 7, 37}, {4, 300, 9},
                         {9, 3, 70}, {2, 2, 16}, {17, 260, 33}}) {
    auto A = random_vec(M * K, g), B = random_vec(K * N, g), C0 = random_vec(M * N, g);
    std::vector<double> ref(M * N);
    for (std::size_t i = 0; i < M; ++i)
      for (std::size_t j = 0; j < N; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < K; ++k) s += A[i * K + k] * B[k * N + j];
        ref[i * N + j] = s;
      }
    std::vector<double> At(K * M), Bt(N * K);
    for (std::size_t i = 0; i < M; ++i)
      for (std::size_t k = 0; k < K; ++k) At[k * M + i] = A[i * K + k];
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t j = 0; j < N; ++j) Bt[j * K + k] = B[k * N + j];

    std::vector<double> nn(M * N), nt(M * N), tn(M * N), acc = C0;
    detail::gemm_nn(M, N, K, A.data(), B.data(), nn.data(), false);
    detail::gemm_nt(M, N, K, A.data(), Bt.data(), nt.data(), false);
    detail::gemm_tn(M, N, K, At.data(), B.data(), tn.data(), false);
    detail::gemm_nt(M, N, K, A.data(), Bt.data(), acc.data(), true);
    for (std::size_t i = 0; i < M * N; ++i) {
      EXPECT_NEAR(nn[i], ref[i], 1e-12) << M << "x" << N << "x" << K;
      EXPECT_NEAR(nt[i], ref[i], 1e-12) << M << "x" << N << "x" << K;
      EXPECT_NEAR(tn[i], ref[i], 1e-12) << M << "x" << N << "x" << K;
      EXPECT_NEAR(acc[i], C0[i] + ref[i], 1e-12);
    }
  }
}

TEST(Kernels, Im2colAndCol2imMatchDirectIndexing) {
  std::mt19937_64 g(4);
  for (auto [H, W, k, stride, pad] : {std::tuple<std::size_t, std::size_t, std::size_t, std::size_t, std::size_t>{5, 7, 3, 1, 1},
                                      {6, 6, 3, 2, 1}, {7, 5, 3, 2, 1}, {4, 4, 1, 1, 0}, {3, 3, 3, 1, 2}}) {
    const std::size_t C = 2;
    detail::ConvGeometry geo{C, H, W, k, k, stride, pad, (H + 2 * pad - k) / stride + 1, (W + 2 * pad - k) / stride + 1};
    auto x = random_vec(C * H * W, g);
    const std::size_t P = geo.pixels(), rows = geo.patch();
    std::vector<double> cols(rows * P), ref(rows * P, 0.0);
    detail::im2col(geo, x.data(), cols.data());
    auto pixel = [&](std::size_t c, long y, long xx) {
      return (y < 0 || xx < 0 || y >= long(H) || xx >= long(W)) ? -1L : long((c * H + y) * W + xx);
    };
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t ki = 0; ki < k; ++ki)
        for (std::size_t kj = 0; kj < k; ++kj)
          for (std::size_t oy = 0; oy < geo.out_h; ++oy)
            for (std::size_t ox = 0; ox < geo.out_w; ++ox) {
              const long at = pixel(c, long(oy * stride + ki) - long(pad), long(ox * stride + kj) - long(pad));
              ref[((c * k + ki) * k + kj) * P + oy * geo.out_w + ox] = at < 0 ? 0.0 : x[std::size_t(at)];
            }
    EXPECT_EQ(cols, ref);

    // col2im is the adjoint: <im2col(x), y> == <x, col2im(y)>
    auto y = random_vec(rows * P, g);
    std::vector<double> back(C * H * W, 0.0);
    detail::col2im_add(geo, y.data(), back.data());
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < cols.size(); ++i) lhs += cols[i] * y[i];
    for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * back[i];
    EXPECT_NEAR(lhs, rhs, 1e-12);
  }
}
