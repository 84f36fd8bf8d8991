#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sttgcn/tensor_core.hpp"

namespace stt {

enum class TuckerMethod { hosvd, hooi, l1_tucker };

std::string to_string(TuckerMethod m);

// Tucker model t ~ core x1 U1 x2 U2 x3 U3 with column-orthonormal factors.
struct TuckerDecomp {
    DenseTensor3 core;
    std::array<DenseMatrix, 3> factors;
    // hosvd: single entry. hooi: ||core||_F^2 after init and after every sweep.
    // l1_tucker: ||core||_1 likewise.
    std::vector<double> objective_trace;
    TuckerMethod method = TuckerMethod::hosvd;
    int iterations = 0;
};

// Tensor-train chain; core n has dims (r_{n-1}, d_n, r_n) with r_0 = r_3 = 1.
struct TTDecomp {
    std::array<DenseTensor3, 3> cores;
    Dims3 dims{0, 0, 0};

    std::array<std::size_t, 2> ranks() const { return {cores[0].dims()[2], cores[1].dims()[2]}; }
};

struct HooiOptions {
    int max_iter = 100;
    double tol = 1e-8;
};

enum class L1Init { hosvd, random };

struct L1TuckerOptions {
    int max_iter = 100;
    int inner_max_iter = 500;
    double tol = 1e-8;
    std::uint64_t seed = 0;
    // hosvd initialization ignores the seed; random draws orthonormal factors
    // from it.
    L1Init init = L1Init::hosvd;
};

TuckerDecomp hosvd(const DenseTensor3& t, const Dims3& ranks);
TuckerDecomp hooi(const DenseTensor3& t, const Dims3& ranks, const HooiOptions& opts = {});
TuckerDecomp l1_tucker(const DenseTensor3& t, const Dims3& ranks, const L1TuckerOptions& opts = {});

// tol is the relative Frobenius residual budget over the whole chain;
// max_rank caps both TT ranks.
TTDecomp tt_svd(const DenseTensor3& t, std::size_t max_rank, double tol);

DenseTensor3 tucker_reconstruct(const TuckerDecomp& d);
DenseTensor3 tt_reconstruct(const TTDecomp& d);

// t x1 U1^T x2 U2^T x3 U3^T
DenseTensor3 project(const DenseTensor3& t, const std::array<DenseMatrix, 3>& factors);

// Leading `rank` left singular vectors of x in canonical form: singular
// vectors sharing a singular value (relative gap below 1e-9) are replaced by
// the Gram-Schmidt basis of the projected unit vectors e_1, e_2, ... of that
// subspace, then every vector is signed so its largest-magnitude entry is
// nonnegative (near-ties go to the lowest index). rank may be up to x.rows().
// `mode` only labels error messages.
DenseMatrix leading_left_singular_vectors(const DenseMatrix& x, std::size_t rank, int mode = 0);

// Polar factor W V^T of m = W S V^T (closest column-orthonormal matrix).
DenseMatrix nearest_orthonormal(const DenseMatrix& m);

struct L1PcaResult {
    DenseMatrix basis;
    double objective = 0.0;  // ||basis^T x||_1
    int iterations = 0;
};

// Fixed-point L1 principal components: B <- sgn(X^T U) with sgn(0) = +1,
// U <- polar(X B), until B repeats or max_iter. Starts from `init`.
// A single component is then polished: exactly by an angular sweep when X
// has two rows, otherwise by greedy sign flips of B.
L1PcaResult l1_pca(const DenseMatrix& x, const DenseMatrix& init, int max_iter = 500);

// Writes <prefix>.core.stt, <prefix>.u{1,2,3}.stm and <prefix>.manifest.
void save_tucker(const std::filesystem::path& prefix, const TuckerDecomp& d);
TuckerDecomp load_tucker(const std::filesystem::path& prefix);

} // namespace stt
