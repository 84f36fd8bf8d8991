#include "sttgcn/decomp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include <Eigen/QR>
#include <Eigen/SVD>
#include <fmt/format.h>

#include "sttgcn/error.hpp"
#include "sttgcn/io.hpp"

namespace stt {

namespace {

constexpr double kClusterGap = 1e-9;
constexpr double kSignTie = 1e-9;
constexpr double kSpanFloor = 1e-6;

void check_ranks(const DenseTensor3& t, const Dims3& ranks) {
    for (int m = 0; m < 3; ++m) {
        if (ranks[m] < 1 || ranks[m] > t.dims()[m]) {
            throw UsageError(fmt::format("rank {} for mode {} is outside [1, {}]", ranks[m], m + 1, t.dims()[m]));
        }
    }
}

void check_finite(const DenseTensor3& t) {
    if (!t.all_finite()) throw NumericalError("input tensor has non-finite entries");
}

void fix_sign(Eigen::Ref<Eigen::VectorXd> v) {
    const double m = v.cwiseAbs().maxCoeff();
    if (m == 0.0) return;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (std::abs(v(i)) >= m * (1.0 - kSignTie)) {
            if (v(i) < 0) v = -v;
            return;
        }
    }
}

// Replaces each block of numerically equal singular values with a basis that
// depends only on the spanned subspace.
void canonicalize(DenseMatrix& u, const Eigen::VectorXd& sv) {
    const Eigen::Index d = u.rows();
    const double gap = kClusterGap * std::max(sv.size() ? sv(0) : 0.0, std::numeric_limits<double>::min());
    Eigen::Index i = 0;
    while (i < d) {
        Eigen::Index j = i + 1;
        while (j < d && sv(j - 1) - sv(j) <= gap) ++j;
        const Eigen::Index m = j - i;
        if (m > 1) {
            const DenseMatrix q = u.middleCols(i, m);
            Eigen::Index accepted = 0;
            for (Eigen::Index e = 0; e < d && accepted < m; ++e) {
                Eigen::VectorXd v = q * q.row(e).transpose();
                for (int pass = 0; pass < 2; ++pass) {
                    for (Eigen::Index p = 0; p < accepted; ++p) {
                        v -= u.col(i + p) * u.col(i + p).dot(v);
                    }
                }
                const double norm = v.norm();
                if (norm > kSpanFloor) {
                    u.col(i + accepted) = v / norm;
                    ++accepted;
                }
            }
            if (accepted < m) throw NumericalError("could not build a canonical basis for a repeated singular value");
        }
        i = j;
    }
    for (Eigen::Index c = 0; c < u.cols(); ++c) fix_sign(u.col(c));
}

DenseTensor3 partial_project(const DenseTensor3& t, const std::array<DenseMatrix, 3>& factors, int skip_mode) {
    DenseTensor3 y = t;
    for (int m = 1; m <= 3; ++m) {
        if (m == skip_mode) continue;
        y = mode_n_product(y, factors[m - 1].transpose(), m);
    }
    return y;
}

double squared_norm(const DenseTensor3& t) {
    const double f = frobenius_norm(t);
    return f * f;
}

Eigen::MatrixXd sign_matrix(const DenseMatrix& m) {
    return m.unaryExpr([](double v) { return v >= 0.0 ? 1.0 : -1.0; });
}

std::size_t choose_tt_rank(const Eigen::VectorXd& sv, double delta, std::size_t max_rank) {
    std::size_t r = static_cast<std::size_t>(sv.size());
    double tail = 0.0;
    while (r > 1) {
        const double next = tail + sv(static_cast<Eigen::Index>(r - 1)) * sv(static_cast<Eigen::Index>(r - 1));
        if (std::sqrt(next) > delta) break;
        tail = next;
        --r;
    }
    return std::max<std::size_t>(1, std::min(r, max_rank));
}

} // namespace

std::string to_string(TuckerMethod m) {
    switch (m) {
        case TuckerMethod::hosvd: return "hosvd";
        case TuckerMethod::hooi: return "hooi";
        case TuckerMethod::l1_tucker: return "l1_tucker";
    }
    return "unknown";
}

DenseMatrix leading_left_singular_vectors(const DenseMatrix& x, std::size_t rank, int mode) {
    const auto d = x.rows();
    if (rank < 1 || static_cast<Eigen::Index>(rank) > d) {
        throw UsageError(fmt::format("requested {} singular vectors from a matrix with {} rows", rank, d));
    }
    if (!x.allFinite()) throw NumericalError(fmt::format("SVD input for mode {} has non-finite entries", mode));

    const unsigned options = d <= x.cols() ? Eigen::ComputeThinU : Eigen::ComputeFullU;
    Eigen::BDCSVD<DenseMatrix> svd(x, options);
    if (svd.info() != Eigen::Success) throw NumericalError(fmt::format("SVD failed for mode {}", mode));

    DenseMatrix u = svd.matrixU();
    Eigen::VectorXd sv = Eigen::VectorXd::Zero(d);
    sv.head(svd.singularValues().size()) = svd.singularValues();
    canonicalize(u, sv);
    return u.leftCols(static_cast<Eigen::Index>(rank));
}

DenseMatrix nearest_orthonormal(const DenseMatrix& m) {
    if (!m.allFinite()) throw NumericalError("polar factor input has non-finite entries");
    Eigen::BDCSVD<DenseMatrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    if (svd.info() != Eigen::Success) throw NumericalError("SVD failed in polar factor");
    return svd.matrixU() * svd.matrixV().transpose();
}

DenseTensor3 project(const DenseTensor3& t, const std::array<DenseMatrix, 3>& factors) {
    DenseTensor3 y = t;
    for (int m = 1; m <= 3; ++m) y = mode_n_product(y, factors[m - 1].transpose(), m);
    return y;
}

TuckerDecomp hosvd(const DenseTensor3& t, const Dims3& ranks) {
    check_ranks(t, ranks);
    check_finite(t);
    TuckerDecomp d;
    d.method = TuckerMethod::hosvd;
    for (int m = 1; m <= 3; ++m) d.factors[m - 1] = leading_left_singular_vectors(unfold(t, m), ranks[m - 1], m);
    d.core = project(t, d.factors);
    d.objective_trace.push_back(squared_norm(d.core));
    return d;
}

TuckerDecomp hooi(const DenseTensor3& t, const Dims3& ranks, const HooiOptions& opts) {
    if (opts.max_iter < 1 || !(opts.tol > 0)) throw UsageError("hooi needs max_iter >= 1 and tol > 0");
    TuckerDecomp d = hosvd(t, ranks);
    d.method = TuckerMethod::hooi;

    for (int it = 1; it <= opts.max_iter; ++it) {
        auto factors = d.factors;
        for (int m = 1; m <= 3; ++m) {
            factors[m - 1] = leading_left_singular_vectors(unfold(partial_project(t, factors, m), m), ranks[m - 1], m);
        }
        DenseTensor3 core = project(t, factors);
        const double obj = squared_norm(core);
        const double prev = d.objective_trace.back();
        d.iterations = it;
        // Ascent is guaranteed in exact arithmetic; a rounding-level dip ends
        // the run with the previous iterate.
        if (obj < prev) break;
        d.factors = std::move(factors);
        d.core = std::move(core);
        d.objective_trace.push_back(obj);
        if (obj - prev < opts.tol) break;
    }
    return d;
}

namespace {

// Exact single component for two-row data. With u = (cos t, sin t) the sign
// pattern sgn(X^T u) only changes where u is orthogonal to a column, so
// sweeping t over [0, pi) visits every attainable pattern b; the best one
// gives u = X b / ||X b||.
DenseMatrix exact_two_row_component(const DenseMatrix& x) {
    std::vector<std::pair<double, Eigen::Index>> breaks;
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        if (x(0, j) == 0.0 && x(1, j) == 0.0) continue;
        double t = std::atan2(x(1, j), x(0, j)) + M_PI / 2;
        t = std::fmod(t, M_PI);
        if (t < 0) t += M_PI;
        breaks.emplace_back(t, j);
    }
    if (breaks.empty()) return DenseMatrix::Zero(2, 1);
    std::sort(breaks.begin(), breaks.end());

    // Start just past the last breakpoint, wrapping through pi.
    const double start = 0.5 * (breaks.back().first + breaks.front().first + M_PI);
    const Eigen::Vector2d u0(std::cos(start), std::sin(start));
    Eigen::VectorXd b = sign_matrix(x.transpose() * u0);
    Eigen::Vector2d v = x * b;
    Eigen::Vector2d best = v;
    for (std::size_t k = 0; k < breaks.size(); ++k) {
        const Eigen::Index j = breaks[k].second;
        v -= 2.0 * b(j) * x.col(j);
        b(j) = -b(j);
        if (k + 1 < breaks.size() && breaks[k + 1].first == breaks[k].first) continue;
        if (v.squaredNorm() > best.squaredNorm()) best = v;
    }
    return best / best.norm();
}

// Single-component refinement by greedy sign flips. For one component the
// problem is max over b in {-1,1}^m of ||X b||_2; starting from the fixed
// point, flip the bit with the largest gain until no flip helps.
void bit_flip_refine(const DenseMatrix& x, DenseMatrix& u) {
    Eigen::VectorXd b = sign_matrix(x.transpose() * u);
    Eigen::VectorXd v = x * b;
    const Eigen::VectorXd sq = x.colwise().squaredNorm().transpose();
    const double scale = std::max(1.0, sq.sum());
    // Every flip strictly increases ||v||, so the loop ends; the cap is a guard.
    for (Eigen::Index it = 0; it < 100 * (x.cols() + 1); ++it) {
        // ||v - 2 b_j x_j||^2 - ||v||^2 = 4 (||x_j||^2 - b_j x_j.v)
        const Eigen::VectorXd gain = sq - b.cwiseProduct(x.transpose() * v);
        Eigen::Index j = 0;
        if (gain.maxCoeff(&j) <= 1e-12 * scale) break;
        v -= 2.0 * b(j) * x.col(j);
        b(j) = -b(j);
    }
    const double norm = v.norm();
    if (norm > 0) {
        const DenseMatrix cand = v / norm;
        if ((x.transpose() * cand).cwiseAbs().sum() > (x.transpose() * u).cwiseAbs().sum()) u = cand;
    }
}

} // namespace

L1PcaResult l1_pca(const DenseMatrix& x, const DenseMatrix& init, int max_iter) {
    if (init.rows() != x.rows()) throw UsageError("l1_pca: initial basis rows must match data rows");
    if (max_iter < 1) throw UsageError("l1_pca: max_iter must be >= 1");
    L1PcaResult r;
    r.basis = init;
    Eigen::MatrixXd b = sign_matrix(x.transpose() * r.basis);
    for (int it = 1; it <= max_iter; ++it) {
        r.basis = nearest_orthonormal(x * b);
        r.iterations = it;
        Eigen::MatrixXd next = sign_matrix(x.transpose() * r.basis);
        if (next == b) break;
        b = std::move(next);
    }
    if (r.basis.cols() == 1) {
        if (x.rows() == 2) {
            const DenseMatrix exact = exact_two_row_component(x);
            if ((x.transpose() * exact).cwiseAbs().sum() > (x.transpose() * r.basis).cwiseAbs().sum()) r.basis = exact;
        } else {
            bit_flip_refine(x, r.basis);
        }
    }
    r.objective = (x.transpose() * r.basis).cwiseAbs().sum();
    return r;
}

TuckerDecomp l1_tucker(const DenseTensor3& t, const Dims3& ranks, const L1TuckerOptions& opts) {
    if (opts.max_iter < 1 || opts.inner_max_iter < 1 || !(opts.tol > 0)) {
        throw UsageError("l1_tucker needs max_iter >= 1, inner_max_iter >= 1 and tol > 0");
    }
    TuckerDecomp d;
    if (opts.init == L1Init::hosvd) {
        d = hosvd(t, ranks);
    } else {
        check_ranks(t, ranks);
        check_finite(t);
        std::mt19937_64 rng(opts.seed);
        std::normal_distribution<double> normal;
        for (int m = 0; m < 3; ++m) {
            DenseMatrix g(static_cast<Eigen::Index>(t.dims()[m]), static_cast<Eigen::Index>(ranks[m]));
            for (Eigen::Index c = 0; c < g.cols(); ++c)
                for (Eigen::Index r = 0; r < g.rows(); ++r) g(r, c) = normal(rng);
            d.factors[m] = nearest_orthonormal(g);
        }
        d.core = project(t, d.factors);
    }
    d.method = TuckerMethod::l1_tucker;
    d.objective_trace.assign(1, l1_norm(d.core));

    for (int it = 1; it <= opts.max_iter; ++it) {
        auto factors = d.factors;
        for (int m = 1; m <= 3; ++m) {
            const DenseMatrix x = unfold(partial_project(t, factors, m), m);
            const double current = (x.transpose() * factors[m - 1]).cwiseAbs().sum();
            L1PcaResult r = l1_pca(x, factors[m - 1], opts.inner_max_iter);
            if (r.objective >= current) factors[m - 1] = std::move(r.basis);
        }
        DenseTensor3 core = project(t, factors);
        const double obj = l1_norm(core);
        const double prev = d.objective_trace.back();
        d.iterations = it;
        if (obj < prev) break;
        d.factors = std::move(factors);
        d.core = std::move(core);
        d.objective_trace.push_back(obj);
        if (obj - prev < opts.tol) break;
    }
    return d;
}

TTDecomp tt_svd(const DenseTensor3& t, std::size_t max_rank, double tol) {
    if (max_rank < 1) throw UsageError("tt_svd: max_rank must be >= 1");
    if (!(tol >= 0)) throw UsageError("tt_svd: tol must be >= 0");
    check_finite(t);
    const auto [d1, d2, d3] = t.dims();
    const double delta = tol / std::sqrt(2.0) * frobenius_norm(t);

    TTDecomp out;
    out.dims = t.dims();

    Eigen::BDCSVD<DenseMatrix> svd1(unfold(t, 1), Eigen::ComputeThinU | Eigen::ComputeThinV);
    if (svd1.info() != Eigen::Success) throw NumericalError("SVD failed in TT sweep step 1");
    const std::size_t r1 = choose_tt_rank(svd1.singularValues(), delta, max_rank);
    const auto e1 = static_cast<Eigen::Index>(r1);

    out.cores[0] = DenseTensor3({1, d1, r1});
    Eigen::Map<DenseMatrix>(out.cores[0].data().data(), static_cast<Eigen::Index>(d1), e1) =
        svd1.matrixU().leftCols(e1);

    // Remainder S V^T (r1 x d2*d3) reinterpreted column-major as (r1*d2) x d3.
    DenseMatrix rest = svd1.singularValues().head(e1).asDiagonal() * svd1.matrixV().leftCols(e1).transpose();
    Eigen::Map<const DenseMatrix> c2(rest.data(), e1 * static_cast<Eigen::Index>(d2), static_cast<Eigen::Index>(d3));

    Eigen::BDCSVD<DenseMatrix> svd2(c2, Eigen::ComputeThinU | Eigen::ComputeThinV);
    if (svd2.info() != Eigen::Success) throw NumericalError("SVD failed in TT sweep step 2");
    const std::size_t r2 = choose_tt_rank(svd2.singularValues(), delta, max_rank);
    const auto e2 = static_cast<Eigen::Index>(r2);

    out.cores[1] = DenseTensor3({r1, d2, r2});
    Eigen::Map<DenseMatrix>(out.cores[1].data().data(), e1 * static_cast<Eigen::Index>(d2), e2) =
        svd2.matrixU().leftCols(e2);

    out.cores[2] = DenseTensor3({r2, d3, 1});
    Eigen::Map<DenseMatrix>(out.cores[2].data().data(), e2, static_cast<Eigen::Index>(d3)) =
        svd2.singularValues().head(e2).asDiagonal() * svd2.matrixV().leftCols(e2).transpose();
    return out;
}

DenseTensor3 tucker_reconstruct(const TuckerDecomp& d) {
    const auto& g = d.core.dims();
    for (int m = 0; m < 3; ++m) {
        if (static_cast<std::size_t>(d.factors[m].cols()) != g[m]) {
            throw UsageError(fmt::format("factor {} has {} columns but core mode size is {}", m + 1,
                                         d.factors[m].cols(), g[m]));
        }
    }
    DenseTensor3 y = d.core;
    for (int m = 1; m <= 3; ++m) y = mode_n_product(y, d.factors[m - 1], m);
    return y;
}

DenseTensor3 tt_reconstruct(const TTDecomp& d) {
    const auto [d1, d2, d3] = d.dims;
    const auto& g1 = d.cores[0];
    const auto& g2 = d.cores[1];
    const auto& g3 = d.cores[2];
    if (g1.dims()[0] != 1 || g1.dims()[1] != d1 || g2.dims()[0] != g1.dims()[2] || g2.dims()[1] != d2 ||
        g3.dims()[0] != g2.dims()[2] || g3.dims()[1] != d3 || g3.dims()[2] != 1) {
        throw UsageError("tensor-train cores do not form a consistent chain");
    }
    const auto r1 = static_cast<Eigen::Index>(g1.dims()[2]);
    const auto r2 = static_cast<Eigen::Index>(g2.dims()[2]);
    const auto e1 = static_cast<Eigen::Index>(d1), e2 = static_cast<Eigen::Index>(d2),
               e3 = static_cast<Eigen::Index>(d3);

    Eigen::Map<const DenseMatrix> left(g1.data().data(), e1, r1);
    Eigen::Map<const DenseMatrix> right(g3.data().data(), r2, e3);
    DenseTensor3 out(d.dims);
    DenseMatrix mid(r1, r2);
    for (Eigen::Index j = 0; j < e2; ++j) {
        for (Eigen::Index b = 0; b < r2; ++b)
            for (Eigen::Index a = 0; a < r1; ++a) mid(a, b) = g2(a, j, b);
        const DenseMatrix slice = left * mid * right;  // d1 x d3
        for (Eigen::Index k = 0; k < e3; ++k)
            for (Eigen::Index i = 0; i < e1; ++i) out(i, j, k) = slice(i, k);
    }
    return out;
}

void save_tucker(const std::filesystem::path& prefix, const TuckerDecomp& d) {
    const std::string base = prefix.string();
    io::write_tensor(base + ".core.stt", d.core);
    for (int m = 0; m < 3; ++m) io::write_matrix(fmt::format("{}.u{}.stm", base, m + 1), d.factors[m]);
    io::Manifest man;
    man.set("method", to_string(d.method));
    const auto& g = d.core.dims();
    man.set("ranks", fmt::format("{},{},{}", g[0], g[1], g[2]));
    man.set("dims", fmt::format("{},{},{}", d.factors[0].rows(), d.factors[1].rows(), d.factors[2].rows()));
    man.set("iterations", static_cast<long long>(d.iterations));
    man.set("final_objective", d.objective_trace.empty() ? 0.0 : d.objective_trace.back());
    man.set("objective_trace", d.objective_trace);
    man.write(base + ".manifest");
}

TuckerDecomp load_tucker(const std::filesystem::path& prefix) {
    const std::string base = prefix.string();
    const auto man = io::Manifest::read(base + ".manifest");
    TuckerDecomp d;
    const auto& method = man.get("method");
    if (method == "hosvd") d.method = TuckerMethod::hosvd;
    else if (method == "hooi") d.method = TuckerMethod::hooi;
    else if (method == "l1_tucker") d.method = TuckerMethod::l1_tucker;
    else throw FormatError(fmt::format("{}.manifest: unknown method '{}'", base, method));
    d.iterations = static_cast<int>(man.get_int("iterations"));
    d.objective_trace = man.get_doubles("objective_trace");
    d.core = io::read_tensor(base + ".core.stt");
    for (int m = 0; m < 3; ++m) d.factors[m] = io::read_matrix(fmt::format("{}.u{}.stm", base, m + 1));
    return d;
}

} // namespace stt
