#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "rrnn/autodiff.hpp"
#include "rrnn/ops.hpp"
#include "rrnn/tensor.hpp"
#include "support.hpp"

using rrnn::Shape;
using rrnn::Tensor;
namespace ad = rrnn::ad;

TEST(Tensor, ShapeAndIndexing) {
    Tensor t = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
    EXPECT_EQ(t.shape(), (Shape{2, 3}));
    EXPECT_EQ(t.rows(), 2u);
    EXPECT_EQ(t.cols(), 3u);
    EXPECT_EQ(t(1, 2), 6.0);
    EXPECT_EQ(Tensor::scalar(2.5).item(), 2.5);
    EXPECT_EQ(rrnn::to_string(t.shape()), "(2x3)");
}

TEST(Tensor, RejectsBadShapes) {
    EXPECT_THROW(Tensor(Shape{2, 0}), rrnn::shape_error);
    EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), rrnn::shape_error);
    EXPECT_THROW(Tensor::matrix({{1, 2}, {3}}), rrnn::shape_error);
    EXPECT_THROW(Tensor::matrix(2, 2).item(), rrnn::shape_error);
}

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
    ad::Tape tape;
    auto i2 = tape.constant(Tensor::matrix({{1, 0}, {0, 1}}));
    auto m = tape.constant(Tensor::matrix({{1, 2}, {3, 4}}));
    EXPECT_EQ(ad::matmul(i2, m).value(), Tensor::matrix({{1, 2}, {3, 4}}));
}

TEST(Matmul, Projector) {
    ad::Tape tape;
    auto p = tape.constant(Tensor::matrix({{1, 0}, {0, 0}}));
    auto v = tape.constant(Tensor::matrix({{5}, {7}}));
    EXPECT_EQ(ad::matmul(p, v).value(), Tensor::matrix({{5}, {0}}));
}

TEST(Matmul, MatchesTripleLoop) {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor a = testutil::random_matrix(3, 4, rng);
        Tensor b = testutil::random_matrix(4, 2, rng);
        ad::Tape tape;
        const Tensor c = ad::matmul(tape.constant(a), tape.constant(b)).value();
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 2; ++j) {
                double acc = 0.0;
                for (std::size_t k = 0; k < 4; ++k) acc += a(i, k) * b(k, j);
                EXPECT_NEAR(c(i, j), acc, 1e-12);
            }
    }
}

TEST(Matmul, TransposedKernelsMatchTripleLoop) {
    std::mt19937_64 rng(12);
    Tensor a = testutil::random_matrix(5, 3, rng);
    Tensor b = testutil::random_matrix(4, 3, rng);
    Tensor c = Tensor::matrix(5, 4);
    rrnn::blas::gemm_acc(a, false, b, true, c);
    Tensor d = Tensor::matrix(3, 3);
    rrnn::blas::gemm_acc(a, true, a, false, d);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 4; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < 3; ++k) acc += a(i, k) * b(j, k);
            EXPECT_NEAR(c(i, j), acc, 1e-12);
        }
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < 5; ++k) acc += a(k, i) * a(k, j);
            EXPECT_NEAR(d(i, j), acc, 1e-12);
        }
}

TEST(Matmul, ShapeMismatchThrows) {
    ad::Tape tape;
    auto a = tape.constant(Tensor::matrix(2, 3));
    auto b = tape.constant(Tensor::matrix(2, 3));
    EXPECT_THROW(ad::matmul(a, b), rrnn::shape_error);
    EXPECT_THROW(ad::add(a, tape.constant(Tensor::matrix(3, 2))), rrnn::shape_error);
    EXPECT_THROW(ad::add_bias(a, tape.constant(Tensor::vector({1, 2, 3}))), rrnn::shape_error);
}

TEST(Elementwise, SigmoidAndTanhValues) {
    ad::Tape tape;
    auto x = tape.constant(Tensor::vector({0.0, 30.0, -30.0}));
    const Tensor s = ad::sigmoid(x).value();
    const Tensor t = ad::tanh(x).value();
    EXPECT_EQ(s[0], 0.5);
    EXPECT_NEAR(s[1], 1.0, 1e-12);
    EXPECT_NEAR(s[2], 0.0, 1e-12);
    EXPECT_GT(s[2], 0.0);
    EXPECT_EQ(t[0], 0.0);
}

TEST(Elementwise, SigmoidIsStableForLargeInputs) {
    ad::Tape tape;
    auto x = tape.constant(Tensor::vector({-800.0, 800.0}));
    const Tensor s = ad::sigmoid(x).value();
    EXPECT_EQ(s[0], 0.0);
    EXPECT_EQ(s[1], 1.0);
}

TEST(Elementwise, AddBiasBroadcastsOverColumns) {
    ad::Tape tape;
    auto m = tape.constant(Tensor::matrix({{1, 2}, {3, 4}}));
    auto b = tape.constant(Tensor::vector({10, 20}));
    EXPECT_EQ(ad::add_bias(m, b).value(), Tensor::matrix({{11, 12}, {23, 24}}));
}

TEST(Elementwise, NonFiniteResultRaisesNumericError) {
    ad::Tape tape;
    auto x = tape.constant(Tensor::vector({std::numeric_limits<double>::max()}));
    EXPECT_THROW(ad::scale(x, 10.0), rrnn::numeric_error);
    auto n = tape.constant(Tensor::vector({std::nan("")}));
    EXPECT_THROW(ad::tanh(n), rrnn::numeric_error);
}

TEST(Gather, RowsAndConcat) {
    ad::Tape tape;
    auto src = tape.constant(Tensor::matrix({{1, 2, 3}, {4, 5, 6}, {7, 8, 9}}));
    EXPECT_EQ(ad::gather_rows(src, {2, 0, 2}, 2).value(), Tensor::matrix({{7, 8}, {1, 2}, {7, 8}}));
    EXPECT_THROW(ad::gather_rows(src, {3}, 2), rrnn::shape_error);
    EXPECT_THROW(ad::gather_rows(src, {0}, 4), rrnn::shape_error);

    auto a = tape.constant(Tensor::matrix({{1}, {2}}));
    auto b = tape.constant(Tensor::matrix({{3, 4}, {5, 6}}));
    EXPECT_EQ(ad::concat_cols({a, b}).value(), Tensor::matrix({{1, 3, 4}, {2, 5, 6}}));
}

TEST(Embedding, LooksUpColumns) {
    ad::Tape tape;
    auto table = tape.constant(Tensor::matrix({{1, 2}, {3, 4}, {5, 6}}));
    EXPECT_EQ(ad::embedding(table, {2, 0}).value(), Tensor::matrix({{5, 1}, {6, 2}}));
    EXPECT_THROW(ad::embedding(table, {3}), rrnn::validation_error);
}
