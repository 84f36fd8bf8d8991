#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace stt {

using DenseMatrix = Eigen::MatrixXd;
using Dims3 = std::array<std::size_t, 3>;

// Dense rank-3 tensor of doubles.
//
// Layout: entry (i, j, k) (0-based) lives at data[i + d1 * (j + d2 * k)], i.e.
// the first index varies fastest. The mode-1 unfolding is therefore a plain
// column-major reinterpretation of the buffer. Every file format and unfolding
// in this library is defined against this map.
class DenseTensor3 {
public:
    DenseTensor3() = default;
    explicit DenseTensor3(Dims3 dims);
    DenseTensor3(Dims3 dims, std::vector<double> data);

    const Dims3& dims() const noexcept { return dims_; }
    std::size_t dim(int mode) const;
    std::size_t size() const noexcept { return data_.size(); }

    std::size_t index(std::size_t i, std::size_t j, std::size_t k) const noexcept {
        return i + dims_[0] * (j + dims_[1] * k);
    }

    double& operator()(std::size_t i, std::size_t j, std::size_t k) noexcept { return data_[index(i, j, k)]; }
    double operator()(std::size_t i, std::size_t j, std::size_t k) const noexcept {
        return data_[index(i, j, k)];
    }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }

    bool all_finite() const noexcept;

    friend bool operator==(const DenseTensor3&, const DenseTensor3&) = default;

private:
    Dims3 dims_{0, 0, 0};
    std::vector<double> data_;
};

// Mode-n unfolding (mode in {1,2,3}); rows index the chosen mode, columns run
// over the remaining two modes with the lower-numbered one varying fastest:
//   mode 1: column j + d2*k    mode 2: column i + d1*k    mode 3: column i + d1*j
DenseMatrix unfold(const DenseTensor3& t, int mode);

// Inverse of unfold for the given target dims.
DenseTensor3 fold(const DenseMatrix& m, int mode, const Dims3& dims);

// t x_mode u: contracts mode `mode` of t with the columns of u.
DenseTensor3 mode_n_product(const DenseTensor3& t, const DenseMatrix& u, int mode);

double frobenius_norm(const DenseTensor3& t);
double l1_norm(const DenseTensor3& t);

// Largest elementwise |a - b|; dims must agree.
double max_abs_diff(const DenseTensor3& a, const DenseTensor3& b);

void check_mode(int mode);

} // namespace stt
