#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <span>
#include <vector>

namespace trawl {

// Eigen's default storage is column-major, so a Matrix shares the
// first-index-fastest linearization used by DenseTensor.
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

using Shape = std::vector<std::size_t>;

/**
 * Dense N-mode array of doubles.
 *
 * Entries are stored with the first index varying fastest, so element
 * (i_0, ..., i_{N-1}) lives at i_0 + I_0 * (i_1 + I_1 * (i_2 + ...)).
 * This is the convention the mode-n unfolding below depends on.
 *
 * Values are immutable after construction; all kernels return new tensors.
 */
class DenseTensor {
public:
    // Zero-filled tensor. Throws std::invalid_argument on an empty shape or a
    // zero-sized mode.
    explicit DenseTensor(Shape shape);

    // Throws std::invalid_argument if the data length does not match the
    // shape or if any entry is NaN/Inf.
    DenseTensor(Shape shape, std::vector<double> data);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t order() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t mode) const { return shape_.at(mode); }
    std::size_t size() const noexcept { return data_.size(); }
    std::span<const double> data() const noexcept { return data_; }

    double operator()(std::size_t i, std::size_t j, std::size_t k) const {
        return data_[i + shape_[0] * (j + shape_[1] * k)];
    }
    double at(std::span<const std::size_t> index) const;

    // Zero-copy view of a 3-mode tensor's k-th frontal slice.
    Eigen::Map<const Matrix> frontal_slice(std::size_t k) const;

    // A 2-mode tensor viewed as 3-mode with a trailing singleton mode;
    // 3-mode tensors are returned unchanged.
    DenseTensor as_order3() const;

    static DenseTensor from_matrix(const Matrix& m);

    friend bool operator==(const DenseTensor&, const DenseTensor&) = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

std::size_t shape_product(std::span<const std::size_t> shape);

// Mode-n unfolding X_(n): rows index mode n, columns run over the remaining
// modes with lower-numbered modes varying fastest (Kolda-Bader).
Matrix unfold(const DenseTensor& t, std::size_t mode);

// Inverse of unfold for the given target shape.
DenseTensor fold(const Matrix& m, std::size_t mode, const Shape& shape);

// t x_mode m: every mode-n fiber of t is multiplied by m.
DenseTensor mode_n_product(const DenseTensor& t, const Matrix& m, std::size_t mode);

// Column-wise Kronecker product; a's row index varies slower.
Matrix khatri_rao(const Matrix& a, const Matrix& b);

double frobenius_norm(const DenseTensor& t);

// Frontal slice k of the result is slices[k].
DenseTensor stack_matrices(std::span<const Matrix> slices);
std::vector<Matrix> unstack_matrices(const DenseTensor& t);

}  // namespace trawl
