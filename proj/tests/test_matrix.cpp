#include "crlab/matrix.hpp"

#include <gtest/gtest.h>

#include <vector>

#include "crlab/errors.hpp"
#include "crlab/rng.hpp"

using crlab::Matrix;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, crlab::Rng& rng) {
    Matrix m(r, c);
    for (double& v : m.data) {
        v = rng.gaussian();
    }
    return m;
}

// Independent index-by-index reference for y = W x.
std::vector<double> naive_matvec(const Matrix& w, const std::vector<double>& x) {
    std::vector<double> y(w.rows, 0.0);
    for (std::size_t o = 0; o < w.rows; ++o) {
        for (std::size_t i = 0; i < w.cols; ++i) {
            y[o] += w.at(o, i) * x[i];
        }
    }
    return y;
}

}  // namespace

TEST(Matrix, ConstructionZeroFills) {
    Matrix m(3, 4);
    EXPECT_EQ(m.rows, 3u);
    EXPECT_EQ(m.cols, 4u);
    EXPECT_EQ(m.size(), 12u);
    for (double v : m.data) {
        EXPECT_EQ(v, 0.0);
    }
}

TEST(Matrix, RowAndAtAgree) {
    Matrix m(2, 3);
    m.at(1, 2) = 7.5;
    EXPECT_EQ(m.row(1)[2], 7.5);
    m.row(0)[1] = -2.0;
    EXPECT_EQ(m.at(0, 1), -2.0);
}

TEST(Matrix, MatvecHandOracle) {
    // [[1,2],[3,4],[5,6]] * [10, 100] = [210, 430, 650]
    Matrix w(3, 2);
    w.data = {1, 2, 3, 4, 5, 6};
    const double x[2] = {10, 100};
    double y[3];
    crlab::matvec(w, x, y);
    EXPECT_DOUBLE_EQ(y[0], 210);
    EXPECT_DOUBLE_EQ(y[1], 430);
    EXPECT_DOUBLE_EQ(y[2], 650);
}

TEST(Matrix, MatvecMatchesNaive) {
    crlab::Rng rng(41);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t r = 1 + rng.below(16);
        const std::size_t c = 1 + rng.below(16);
        const Matrix w = random_matrix(r, c, rng);
        std::vector<double> x(c);
        for (double& v : x) {
            v = rng.gaussian();
        }
        std::vector<double> y(r);
        crlab::matvec(w, x.data(), y.data());
        const auto want = naive_matvec(w, x);
        for (std::size_t i = 0; i < r; ++i) {
            ASSERT_NEAR(y[i], want[i], 1e-12);
        }
    }
}

TEST(Matrix, MatvecAddAccumulates) {
    Matrix w(2, 2);
    w.data = {1, 0, 0, 1};
    const double x[2] = {3, 4};
    double y[2] = {10, 20};
    crlab::matvec_add(w, x, y);
    EXPECT_DOUBLE_EQ(y[0], 13);
    EXPECT_DOUBLE_EQ(y[1], 24);
}

TEST(Matrix, MatvecTransposeHandOracle) {
    // W = [[1,2],[3,4],[5,6]] (3x2); W^T * [1,1,1] = [9, 12]
    Matrix w(3, 2);
    w.data = {1, 2, 3, 4, 5, 6};
    const double x[3] = {1, 1, 1};
    double y[2];
    crlab::matvec_transpose(w, x, y);
    EXPECT_DOUBLE_EQ(y[0], 9);
    EXPECT_DOUBLE_EQ(y[1], 12);
}

TEST(Matrix, MatvecTransposeOverwritesStaleOutput) {
    Matrix w(2, 2);
    w.data = {0, 0, 0, 0};
    const double x[2] = {1, 1};
    double y[2] = {99, -99};
    crlab::matvec_transpose(w, x, y);
    EXPECT_DOUBLE_EQ(y[0], 0);
    EXPECT_DOUBLE_EQ(y[1], 0);
}

TEST(Matrix, MatvecTransposeAddAccumulates) {
    Matrix w(2, 2);
    w.data = {1, 2, 3, 4};
    const double x[2] = {1, 1};
    double y[2] = {100, 200};
    crlab::matvec_transpose_add(w, x, y);
    EXPECT_DOUBLE_EQ(y[0], 104);
    EXPECT_DOUBLE_EQ(y[1], 206);
}

TEST(Matrix, TransposeIsAdjointOfForward) {
    // <Wx, y> == <x, W^T y> for random W, x, y.
    crlab::Rng rng(43);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t r = 1 + rng.below(12);
        const std::size_t c = 1 + rng.below(12);
        const Matrix w = random_matrix(r, c, rng);
        std::vector<double> x(c), y(r), wx(r), wty(c);
        for (double& v : x) {
            v = rng.gaussian();
        }
        for (double& v : y) {
            v = rng.gaussian();
        }
        crlab::matvec(w, x.data(), wx.data());
        crlab::matvec_transpose(w, y.data(), wty.data());
        double lhs = 0.0, rhs = 0.0;
        for (std::size_t i = 0; i < r; ++i) {
            lhs += wx[i] * y[i];
        }
        for (std::size_t i = 0; i < c; ++i) {
            rhs += x[i] * wty[i];
        }
        ASSERT_NEAR(lhs, rhs, 1e-9 * (1.0 + std::abs(lhs)));
    }
}

TEST(Matrix, AddOuterHandOracle) {
    // C += a b^T with a=[1,2], b=[3,4,5]
    Matrix c(2, 3);
    c.data = {1, 1, 1, 1, 1, 1};
    const double a[2] = {1, 2};
    const double b[3] = {3, 4, 5};
    crlab::add_outer(c, a, b);
    const std::vector<double> want{4, 5, 6, 7, 9, 11};
    EXPECT_EQ(c.data, want);
}

TEST(Matrix, MatmulHandOracle) {
    // [[1,2],[3,4]] * [[5,6],[7,8]] = [[19,22],[43,50]]
    Matrix a(2, 2), b(2, 2);
    a.data = {1, 2, 3, 4};
    b.data = {5, 6, 7, 8};
    const Matrix c = crlab::matmul(a, b);
    const std::vector<double> want{19, 22, 43, 50};
    EXPECT_EQ(c.data, want);
}

TEST(Matrix, MatmulAgreesWithMatvecPerColumn) {
    crlab::Rng rng(47);
    const Matrix a = random_matrix(5, 7, rng);
    const Matrix b = random_matrix(7, 3, rng);
    const Matrix c = crlab::matmul(a, b);
    for (std::size_t j = 0; j < b.cols; ++j) {
        std::vector<double> col(b.rows), want(a.rows);
        for (std::size_t k = 0; k < b.rows; ++k) {
            col[k] = b.at(k, j);
        }
        crlab::matvec(a, col.data(), want.data());
        for (std::size_t i = 0; i < a.rows; ++i) {
            ASSERT_NEAR(c.at(i, j), want[i], 1e-12);
        }
    }
}

TEST(Matrix, MatmulShapeMismatchThrows) {
    Matrix a(2, 3), b(2, 2);
    EXPECT_THROW(crlab::matmul(a, b), crlab::DimensionError);
}

TEST(Matrix, ZeroClearsValues) {
    Matrix m(2, 2);
    m.data = {1, 2, 3, 4};
    m.zero();
    for (double v : m.data) {
        EXPECT_EQ(v, 0.0);
    }
}

TEST(Matrix, SameShape) {
    Matrix a(2, 3), b(2, 3), c(3, 2);
    EXPECT_TRUE(a.same_shape(b));
    EXPECT_FALSE(a.same_shape(c));
}
