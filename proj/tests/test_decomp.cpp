#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "oracles.hpp"
#include "sttgcn/decomp.hpp"
#include "sttgcn/error.hpp"

using namespace stt;

namespace {

double rel_err(const DenseTensor3& a, const DenseTensor3& b) { return oracle::max_abs(a, b) / oracle::frob(b); }

double rel_frob_err(const DenseTensor3& approx, const DenseTensor3& t) {
    double s = 0;
    for (std::size_t i = 0; i < t.size(); ++i) s += std::pow(approx.data()[i] - t.data()[i], 2);
    return std::sqrt(s) / oracle::frob(t);
}

double orthonormality_gap(const DenseMatrix& u) {
    return (u.transpose() * u - DenseMatrix::Identity(u.cols(), u.cols())).cwiseAbs().maxCoeff();
}

DenseTensor3 rank_one(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const Eigen::VectorXd& c) {
    DenseTensor3 t({static_cast<std::size_t>(a.size()), static_cast<std::size_t>(b.size()),
                    static_cast<std::size_t>(c.size())});
    for (Eigen::Index i = 0; i < a.size(); ++i)
        for (Eigen::Index j = 0; j < b.size(); ++j)
            for (Eigen::Index k = 0; k < c.size(); ++k)
                t(static_cast<std::size_t>(i), static_cast<std::size_t>(j), static_cast<std::size_t>(k)) =
                    a(i) * b(j) * c(k);
    return t;
}

void expect_monotone(const std::vector<double>& trace) {
    for (std::size_t i = 1; i < trace.size(); ++i) EXPECT_GE(trace[i], trace[i - 1] - 1e-12) << "step " << i;
}

} // namespace

TEST(Hosvd, FullRankIsExact) {
    std::mt19937_64 rng(11);
    for (int rep = 0; rep < 10; ++rep) {
        const auto t = oracle::random_tensor({4, 5, 3}, rng);
        const auto d = hosvd(t, t.dims());
        EXPECT_LT(rel_frob_err(tucker_reconstruct(d), t), 1e-10);
        for (const auto& u : d.factors) EXPECT_LT(orthonormality_gap(u), 1e-10);
        EXPECT_NEAR(frobenius_norm(d.core), frobenius_norm(t), 1e-10 * frobenius_norm(t));
    }
}

TEST(Hosvd, RankOneIsExact) {
    std::mt19937_64 rng(12);
    const auto t = rank_one(oracle::random_matrix(4, 1, rng), oracle::random_matrix(3, 1, rng),
                            oracle::random_matrix(5, 1, rng));
    const auto d = hosvd(t, {1, 1, 1});
    EXPECT_LT(rel_frob_err(tucker_reconstruct(d), t), 1e-10);
    EXPECT_EQ(d.core.dims(), (Dims3{1, 1, 1}));
}

TEST(Hosvd, CoreMatchesJacobiOracle) {
    std::mt19937_64 rng(13);
    for (int rep = 0; rep < 5; ++rep) {
        const auto t = oracle::random_tensor({4, 4, 4}, rng);
        const auto d = hosvd(t, {2, 2, 2});
        const auto o = oracle::hosvd(t, {2, 2, 2});
        EXPECT_LT(oracle::max_abs(d.core, o.core), 1e-8);
        for (int m = 0; m < 3; ++m) EXPECT_LT((d.factors[m] - o.u[m]).cwiseAbs().maxCoeff(), 1e-8);
    }
}

TEST(Hosvd, RepeatedSingularValuesGetCanonicalBasis) {
    // Mode-1 unfolding with orthogonal rows of equal norm: every basis of R^3
    // is a valid singular basis, the canonical one is the identity.
    DenseTensor3 t({3, 3, 1});
    for (std::size_t i = 0; i < 3; ++i) t(i, i, 0) = 2.0;
    const auto d = hosvd(t, {3, 3, 1});
    EXPECT_LT((d.factors[0] - DenseMatrix::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-12);
    // Rotating the data rotates the subspace but not the canonical basis.
    std::mt19937_64 rng(14);
    const auto q = oracle::random_orthonormal(3, rng);
    const auto rotated = mode_n_product(t, q, 1);
    const auto d2 = hosvd(rotated, {3, 3, 1});
    EXPECT_LT((d2.factors[0] - DenseMatrix::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Hosvd, SignConventionAndRankErrors) {
    std::mt19937_64 rng(15);
    const auto t = oracle::random_tensor({5, 4, 3}, rng);
    const auto d = hosvd(t, {3, 2, 2});
    for (const auto& u : d.factors)
        for (Eigen::Index c = 0; c < u.cols(); ++c) {
            Eigen::Index arg = 0;
            u.col(c).cwiseAbs().maxCoeff(&arg);
            EXPECT_GT(u(arg, c), 0.0);
        }
    EXPECT_THROW(hosvd(t, {0, 1, 1}), UsageError);
    EXPECT_THROW(hosvd(t, {6, 1, 1}), UsageError);
    DenseTensor3 bad({2, 2, 2});
    bad(0, 0, 0) = std::nan("");
    EXPECT_THROW(hosvd(bad, {1, 1, 1}), NumericalError);
}

TEST(Hooi, FullRankConvergesInOneSweep) {
    std::mt19937_64 rng(16);
    const auto t = oracle::random_tensor({4, 4, 9}, rng);
    const auto d = hooi(t, t.dims());
    EXPECT_EQ(d.iterations, 1);
    EXPECT_LT(rel_frob_err(tucker_reconstruct(d), t), 1e-10);
}

TEST(Hooi, MonotoneAndNotWorseThanHosvd) {
    std::mt19937_64 rng(17);
    for (int rep = 0; rep < 10; ++rep) {
        const auto t = oracle::random_tensor({5, 5, 5}, rng);
        const auto h = hosvd(t, {3, 3, 3});
        const auto d = hooi(t, {3, 3, 3});
        expect_monotone(d.objective_trace);
        EXPECT_GE(d.objective_trace.back(), h.objective_trace.front() - 1e-12);
        EXPECT_NEAR(d.objective_trace.back(), std::pow(frobenius_norm(d.core), 2), 1e-10);
        for (const auto& u : d.factors) EXPECT_LT(orthonormality_gap(u), 1e-10);
    }
    EXPECT_THROW(hooi(oracle::random_tensor({2, 2, 2}, rng), {1, 1, 1}, {0, 1e-8}), UsageError);
}

TEST(L1Pca, FixedPointMatchesGridOnTwoDimensionalData) {
    std::mt19937_64 rng(18);
    for (int rep = 0; rep < 10; ++rep) {
        const auto x = oracle::random_matrix(2, 7, rng);
        const auto r = l1_pca(x, leading_left_singular_vectors(x, 1));
        EXPECT_NEAR(r.objective, oracle::l1_grid_max(x), 1e-3);
        EXPECT_NEAR(r.basis.norm(), 1.0, 1e-12);
    }
}

TEST(L1Tucker, TwoByTwoExample) {
    // X = [[2,0],[0,1]] as the mode-1 unfolding of a 2x2x1 tensor.
    DenseTensor3 t({2, 2, 1});
    t(0, 0, 0) = 2;
    t(1, 1, 0) = 1;
    const auto d = l1_tucker(t, {1, 1, 1});
    const DenseMatrix x = unfold(t, 1);
    const double got = (d.factors[0].transpose() * x).cwiseAbs().sum();
    // With only the first mode free (mode-2 and mode-3 factors fixed to the
    // returned ones) the grid oracle gives the best attainable value.
    const DenseMatrix xp = unfold(mode_n_product(t, d.factors[1].transpose(), 2), 1);
    EXPECT_NEAR((d.factors[0].transpose() * xp).cwiseAbs().sum(), oracle::l1_grid_max(xp), 1e-3);
    EXPECT_NEAR(got, 2.0, 1e-12);
    EXPECT_NEAR(d.objective_trace.back(), 2.0, 1e-12);
    // Per-mode L1-PCA of the whole X reaches sqrt(5).
    EXPECT_NEAR(oracle::l1_grid_max(x), std::sqrt(5.0), 1e-6);
    EXPECT_NEAR(l1_pca(x, leading_left_singular_vectors(x, 1)).objective, std::sqrt(5.0), 1e-12);
}

TEST(L1Tucker, FullRankExactAndMonotone) {
    std::mt19937_64 rng(19);
    for (int rep = 0; rep < 5; ++rep) {
        const auto t = oracle::random_tensor({4, 3, 5}, rng);
        const auto d = l1_tucker(t, t.dims());
        EXPECT_LT(rel_frob_err(tucker_reconstruct(d), t), 1e-10);
        expect_monotone(d.objective_trace);
        EXPECT_NEAR(d.objective_trace.back(), l1_norm(d.core), 1e-9);
        for (const auto& u : d.factors) EXPECT_LT(orthonormality_gap(u), 1e-10);
    }
}

TEST(L1Tucker, LowRankMonotoneFromBothStarts) {
    std::mt19937_64 rng(20);
    for (int rep = 0; rep < 5; ++rep) {
        const auto t = oracle::random_tensor({6, 6, 9}, rng);
        expect_monotone(l1_tucker(t, {3, 3, 4}).objective_trace);
        L1TuckerOptions o;
        o.init = L1Init::random;
        o.seed = static_cast<std::uint64_t>(rep);
        const auto a = l1_tucker(t, {3, 3, 4}, o);
        const auto b = l1_tucker(t, {3, 3, 4}, o);
        expect_monotone(a.objective_trace);
        EXPECT_EQ(a.core, b.core);  // same seed, same result
    }
}

TEST(TtSvd, ExactWithoutTruncation) {
    std::mt19937_64 rng(21);
    for (const Dims3 dims : {Dims3{4, 3, 2}, Dims3{5, 4, 3}, Dims3{4, 4, 4}}) {
        const auto t = oracle::random_tensor(dims, rng);
        const auto d = tt_svd(t, std::min(dims[0], dims[1] * dims[2]), 0.0);
        EXPECT_LT(rel_frob_err(tt_reconstruct(d), t), 1e-10);
        EXPECT_EQ(d.cores[0].dims()[0], 1u);
        EXPECT_EQ(d.cores[2].dims()[2], 1u);
    }
    // Unlimited rank is exact for every shape.
    const auto t = oracle::random_tensor({4, 4, 9}, rng);
    EXPECT_LT(rel_frob_err(tt_reconstruct(tt_svd(t, 1000, 0.0)), t), 1e-10);
}

TEST(TtSvd, RankOneAndTruncationOracle) {
    std::mt19937_64 rng(22);
    const auto r1 = rank_one(oracle::random_matrix(3, 1, rng), oracle::random_matrix(4, 1, rng),
                             oracle::random_matrix(2, 1, rng));
    EXPECT_LT(rel_frob_err(tt_reconstruct(tt_svd(r1, 1, 0.0)), r1), 1e-10);

    // Explicit reshape + truncated SVD oracle (Jacobi based) for max_rank 2.
    const auto t = oracle::random_tensor({4, 4, 9}, rng);
    const auto got = tt_reconstruct(tt_svd(t, 2, 0.0));
    const DenseMatrix x1 = oracle::unfold(t, 1);  // 4 x 36
    const auto s1 = oracle::jacobi_left_svd(x1);
    const DenseMatrix u1 = s1.u.leftCols(2);
    const DenseMatrix rest = u1.transpose() * x1;  // 2 x (4*9), column j + 4k
    DenseMatrix c2(8, 9);                          // row a + 2j
    for (Eigen::Index a = 0; a < 2; ++a)
        for (Eigen::Index j = 0; j < 4; ++j)
            for (Eigen::Index k = 0; k < 9; ++k) c2(a + 2 * j, k) = rest(a, j + 4 * k);
    const auto s2 = oracle::jacobi_left_svd(c2);
    const DenseMatrix u2 = s2.u.leftCols(2);
    const DenseMatrix c2hat = u2 * (u2.transpose() * c2);
    DenseTensor3 want({4, 4, 9});
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j)
            for (std::size_t k = 0; k < 9; ++k) {
                double s = 0;
                for (Eigen::Index a = 0; a < 2; ++a)
                    s += u1(static_cast<Eigen::Index>(i), a) *
                         c2hat(a + 2 * static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k));
                want(i, j, k) = s;
            }
    EXPECT_NEAR(rel_frob_err(got, t), rel_frob_err(want, t), 1e-8);
    EXPECT_LT(oracle::max_abs(got, want), 1e-8);
    EXPECT_EQ(tt_svd(t, 2, 0.0).ranks(), (std::array<std::size_t, 2>{2, 2}));
}

TEST(TtSvd, ToleranceControlsResidual) {
    std::mt19937_64 rng(23);
    const auto t = oracle::random_tensor({6, 5, 7}, rng);
    for (double tol : {0.05, 0.2, 0.5}) {
        EXPECT_LE(rel_frob_err(tt_reconstruct(tt_svd(t, 100, tol)), t), tol + 1e-12);
    }
    EXPECT_THROW(tt_svd(t, 0, 0.0), UsageError);
}

TEST(TuckerReconstruct, ZeroCoreAndNaiveOracle) {
    std::mt19937_64 rng(24);
    TuckerDecomp d;
    d.core = DenseTensor3({2, 2, 2});
    for (int m = 0; m < 3; ++m) d.factors[m] = oracle::random_matrix(3, 2, rng);
    EXPECT_EQ(oracle::frob(tucker_reconstruct(d)), 0.0);
    d.core = oracle::random_tensor({2, 2, 2}, rng);
    EXPECT_LT(oracle::max_abs(tucker_reconstruct(d), oracle::expand(d.core, d.factors)), 1e-12);
    d.factors[1] = oracle::random_matrix(3, 3, rng);
    EXPECT_THROW(tucker_reconstruct(d), UsageError);
}

TEST(TuckerIo, SaveLoadRoundTrip) {
    std::mt19937_64 rng(25);
    const auto t = oracle::random_tensor({3, 4, 2}, rng);
    const auto d = hooi(t, {2, 2, 2});
    const auto prefix = std::filesystem::temp_directory_path() / "sttgcn_tests" / "tucker";
    save_tucker(prefix, d);
    const auto r = load_tucker(prefix);
    EXPECT_EQ(r.core, d.core);
    for (int m = 0; m < 3; ++m) EXPECT_EQ(r.factors[m], d.factors[m]);
    EXPECT_EQ(r.method, TuckerMethod::hooi);
    EXPECT_EQ(r.iterations, d.iterations);
}

TEST(Determinism, RepeatedCallsAreBitwiseEqual) {
    std::mt19937_64 rng(26);
    const auto t = oracle::random_tensor({5, 5, 9}, rng);
    EXPECT_EQ(hooi(t, {3, 3, 3}).core, hooi(t, {3, 3, 3}).core);
    EXPECT_EQ(l1_tucker(t, {3, 3, 3}).core, l1_tucker(t, {3, 3, 3}).core);
}
