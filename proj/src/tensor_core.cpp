#include "sttgcn/tensor_core.hpp"

#include <cmath>

#include <fmt/format.h>

#include "sttgcn/error.hpp"

namespace stt {

namespace {

using ColMap = Eigen::Map<Eigen::MatrixXd>;
using ConstColMap = Eigen::Map<const Eigen::MatrixXd>;

std::size_t volume(const Dims3& d) { return d[0] * d[1] * d[2]; }

void check_dims(const Dims3& dims) {
    for (auto d : dims) {
        if (d == 0) {
            throw UsageError(fmt::format("tensor dims must be positive, got ({}, {}, {})", dims[0], dims[1],
                                         dims[2]));
        }
    }
}

} // namespace

void check_mode(int mode) {
    if (mode < 1 || mode > 3) {
        throw UsageError(fmt::format("invalid mode {}; expected 1, 2 or 3", mode));
    }
}

DenseTensor3::DenseTensor3(Dims3 dims) : dims_(dims) {
    check_dims(dims_);
    data_.assign(volume(dims_), 0.0);
}

DenseTensor3::DenseTensor3(Dims3 dims, std::vector<double> data) : dims_(dims), data_(std::move(data)) {
    check_dims(dims_);
    if (data_.size() != volume(dims_)) {
        throw UsageError(fmt::format("tensor data length {} does not match dims ({}, {}, {})", data_.size(),
                                     dims_[0], dims_[1], dims_[2]));
    }
}

std::size_t DenseTensor3::dim(int mode) const {
    check_mode(mode);
    return dims_[static_cast<std::size_t>(mode - 1)];
}

bool DenseTensor3::all_finite() const noexcept {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

DenseMatrix unfold(const DenseTensor3& t, int mode) {
    check_mode(mode);
    const auto [d1, d2, d3] = t.dims();
    switch (mode) {
        case 1:
            return ConstColMap(t.data().data(), static_cast<Eigen::Index>(d1), static_cast<Eigen::Index>(d2 * d3));
        case 2: {
            DenseMatrix m(d2, d1 * d3);
            for (std::size_t k = 0; k < d3; ++k)
                for (std::size_t j = 0; j < d2; ++j)
                    for (std::size_t i = 0; i < d1; ++i) m(j, i + d1 * k) = t(i, j, k);
            return m;
        }
        default:
            // Mode 3 is the transpose of the (d1*d2) x d3 column-major view.
            return ConstColMap(t.data().data(), static_cast<Eigen::Index>(d1 * d2), static_cast<Eigen::Index>(d3))
                .transpose();
    }
}

DenseTensor3 fold(const DenseMatrix& m, int mode, const Dims3& dims) {
    check_mode(mode);
    check_dims(dims);
    const auto [d1, d2, d3] = dims;
    const std::size_t rows = dims[static_cast<std::size_t>(mode - 1)];
    const std::size_t cols = volume(dims) / rows;
    if (static_cast<std::size_t>(m.rows()) != rows || static_cast<std::size_t>(m.cols()) != cols) {
        throw UsageError(fmt::format("cannot fold a {}x{} matrix along mode {} into dims ({}, {}, {})", m.rows(),
                                     m.cols(), mode, d1, d2, d3));
    }
    DenseTensor3 t(dims);
    switch (mode) {
        case 1:
            ColMap(t.data().data(), static_cast<Eigen::Index>(d1), static_cast<Eigen::Index>(d2 * d3)) = m;
            break;
        case 2:
            for (std::size_t k = 0; k < d3; ++k)
                for (std::size_t j = 0; j < d2; ++j)
                    for (std::size_t i = 0; i < d1; ++i) t(i, j, k) = m(j, i + d1 * k);
            break;
        default:
            ColMap(t.data().data(), static_cast<Eigen::Index>(d1 * d2), static_cast<Eigen::Index>(d3)) =
                m.transpose();
            break;
    }
    return t;
}

DenseTensor3 mode_n_product(const DenseTensor3& t, const DenseMatrix& u, int mode) {
    check_mode(mode);
    const auto [d1, d2, d3] = t.dims();
    const std::size_t n = t.dim(mode);
    if (static_cast<std::size_t>(u.cols()) != n) {
        throw UsageError(fmt::format("mode-{} product: matrix has {} columns but tensor mode size is {}", mode,
                                     u.cols(), n));
    }
    Dims3 out_dims = t.dims();
    out_dims[static_cast<std::size_t>(mode - 1)] = static_cast<std::size_t>(u.rows());
    DenseTensor3 out(out_dims);
    const auto r = static_cast<Eigen::Index>(u.rows());
    const auto e1 = static_cast<Eigen::Index>(d1), e2 = static_cast<Eigen::Index>(d2),
               e3 = static_cast<Eigen::Index>(d3);

    switch (mode) {
        case 1:
            ColMap(out.data().data(), r, e2 * e3).noalias() = u * ConstColMap(t.data().data(), e1, e2 * e3);
            break;
        case 2:
            // Each frontal slice (d1 x d2) is multiplied on the right by u^T.
            for (Eigen::Index k = 0; k < e3; ++k) {
                ColMap(out.data().data() + k * e1 * r, e1, r).noalias() =
                    ConstColMap(t.data().data() + k * e1 * e2, e1, e2) * u.transpose();
            }
            break;
        default:
            ColMap(out.data().data(), e1 * e2, r).noalias() =
                ConstColMap(t.data().data(), e1 * e2, e3) * u.transpose();
            break;
    }
    return out;
}

double frobenius_norm(const DenseTensor3& t) {
    double s = 0.0;
    for (double v : t.data()) s += v * v;
    return std::sqrt(s);
}

double l1_norm(const DenseTensor3& t) {
    double s = 0.0;
    for (double v : t.data()) s += std::abs(v);
    return s;
}

double max_abs_diff(const DenseTensor3& a, const DenseTensor3& b) {
    if (a.dims() != b.dims()) throw UsageError("max_abs_diff: dims differ");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    return m;
}

} // namespace stt
