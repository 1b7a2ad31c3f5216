#include "tlab/linalg.hpp"
#include "tlab/taskmodel.hpp"

#include <gtest/gtest.h>

#include <limits>

using namespace tlab;

namespace {

Matrix random_matrix(int r, int c, std::uint64_t seed) {
    Rng rng(seed);
    return standard_normal(r, c, rng);
}

}  // namespace

TEST(Pseudoinverse, IdentityIsItsOwnInverse) {
    EXPECT_LT((pseudoinverse(Matrix::Identity(3, 3)) - Matrix::Identity(3, 3)).norm(), 1e-14);
}

TEST(Pseudoinverse, ZeroMatrixGivesTransposedZero) {
    const Matrix p = pseudoinverse(Matrix::Zero(2, 3));
    EXPECT_EQ(p.rows(), 3);
    EXPECT_EQ(p.cols(), 2);
    EXPECT_EQ(p.norm(), 0.0);
}

TEST(Pseudoinverse, SatisfiesPenroseConditions) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const Matrix m = random_matrix(3, 5, seed);
        const Matrix p = pseudoinverse(m);
        EXPECT_LT((m * p * m - m).norm(), 1e-10);
        EXPECT_LT((p * m * p - p).norm(), 1e-10);
        EXPECT_LT((m * p - (m * p).transpose()).norm(), 1e-10);
        EXPECT_LT((p * m - (p * m).transpose()).norm(), 1e-10);
    }
}

TEST(Pseudoinverse, ProjectorsAreSymmetricIdempotent) {
    // Rank-deficient input: product of thin factors.
    const Matrix m = random_matrix(6, 2, 7) * random_matrix(2, 5, 8);
    const Matrix p = pseudoinverse(m);
    const Matrix a = m * p, b = p * m;
    EXPECT_LT((a - a.transpose()).norm(), 1e-8);
    EXPECT_LT((a * a - a).norm(), 1e-8);
    EXPECT_LT((b - b.transpose()).norm(), 1e-8);
    EXPECT_LT((b * b - b).norm(), 1e-8);
    EXPECT_NEAR(b.trace(), 2.0, 1e-8);
}

TEST(Pseudoinverse, RejectsNonFinite) {
    Matrix m = Matrix::Identity(2, 2);
    m(0, 1) = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(pseudoinverse(m), std::invalid_argument);
}

TEST(SymPsdSqrt, IdentityAndDiagonal) {
    EXPECT_LT((sym_psd_sqrt(Matrix::Identity(4, 4)) - Matrix::Identity(4, 4)).norm(), 1e-14);
    Matrix s = Matrix::Zero(2, 2);
    s(0, 0) = 4;
    s(1, 1) = 9;
    const Matrix r = sym_psd_sqrt(s);
    EXPECT_NEAR(r(0, 0), 2.0, 1e-14);
    EXPECT_NEAR(r(1, 1), 3.0, 1e-14);
    EXPECT_NEAR(r(0, 1), 0.0, 1e-14);
}

TEST(SymPsdSqrt, ReconstructsRandomPsd) {
    const Matrix a = random_matrix(5, 5, 11);
    const Matrix s = a.transpose() * a;
    const Matrix r = sym_psd_sqrt(s);
    EXPECT_LT((r * r - s).norm() / s.norm(), 1e-10);
    EXPECT_LT((r - r.transpose()).norm(), 1e-12);
    EXPECT_GE(eig_sym(r).eigenvalues.minCoeff(), 0.0);
}

TEST(SymPsdSqrt, ClampsRoundOffOnSingularInput) {
    const Matrix a = random_matrix(2, 5, 12);
    const Matrix s = a.transpose() * a;  // rank 2
    const Matrix r = sym_psd_sqrt(s);
    EXPECT_GE(eig_sym(r).eigenvalues.minCoeff(), -1e-12 * r.norm());
    EXPECT_LT((r * r - s).norm() / s.norm(), 1e-8);
}

TEST(SymPsdSqrt, RejectsAsymmetricAndIndefinite) {
    Matrix asym = Matrix::Identity(2, 2);
    asym(0, 1) = 1.0;
    EXPECT_THROW(sym_psd_sqrt(asym), std::invalid_argument);
    Matrix indef = Matrix::Identity(2, 2);
    indef(1, 1) = -1.0;
    EXPECT_THROW(sym_psd_sqrt(indef), std::invalid_argument);
}

TEST(EigSym, DiagonalIsSortedDescending) {
    Matrix s = Matrix::Zero(3, 3);
    s.diagonal() << 3, 1, 2;
    const Spectrum sp = eig_sym(s);
    EXPECT_NEAR(sp.eigenvalues(0), 3.0, 1e-14);
    EXPECT_NEAR(sp.eigenvalues(1), 2.0, 1e-14);
    EXPECT_NEAR(sp.eigenvalues(2), 1.0, 1e-14);
}

TEST(EigSym, IdentityHasUnitSpectrum) {
    const Spectrum sp = eig_sym(Matrix::Identity(5, 5));
    for (int i = 0; i < 5; ++i) EXPECT_NEAR(sp.eigenvalues(i), 1.0, 1e-14);
}

TEST(EigSym, ReconstructionOrthonormalityAndTrace) {
    for (std::uint64_t seed : {21u, 22u, 23u}) {
        const Matrix a = random_matrix(6, 6, seed);
        const Matrix s = a + a.transpose();
        const Spectrum sp = eig_sym(s);
        const Matrix& v = sp.eigenvectors;
        EXPECT_LT((v.transpose() * v - Matrix::Identity(6, 6)).norm(), 1e-10);
        EXPECT_LT((v * sp.eigenvalues.asDiagonal() * v.transpose() - s).norm(), 1e-10);
        EXPECT_NEAR(sp.eigenvalues.sum(), s.trace(), 1e-8 * std::max(1.0, std::abs(s.trace())));
        for (int i = 1; i < 6; ++i) EXPECT_GE(sp.eigenvalues(i - 1), sp.eigenvalues(i));
    }
}

TEST(EigSym, RejectsAsymmetric) {
    Matrix s = Matrix::Identity(3, 3);
    s(2, 0) = 0.5;
    EXPECT_THROW(eig_sym(s), std::invalid_argument);
}
