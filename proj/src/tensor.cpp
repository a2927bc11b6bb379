#include "trawl/tensor.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace trawl {

namespace {

void check_shape(const Shape& shape) {
    if (shape.empty())
        throw std::invalid_argument("tensor shape must have at least one mode");
    for (std::size_t n : shape)
        if (n == 0)
            throw std::invalid_argument("tensor mode sizes must be positive");
}

void check_mode(std::size_t mode, std::size_t order) {
    if (mode >= order)
        throw std::invalid_argument("mode " + std::to_string(mode) +
                                    " out of range for a " + std::to_string(order) +
                                    "-mode tensor");
}

// Product of the mode sizes strictly before and strictly after `mode`.
std::pair<std::size_t, std::size_t> outer_extents(const Shape& shape, std::size_t mode) {
    std::size_t left = 1, right = 1;
    for (std::size_t d = 0; d < mode; ++d) left *= shape[d];
    for (std::size_t d = mode + 1; d < shape.size(); ++d) right *= shape[d];
    return {left, right};
}

}  // namespace

std::size_t shape_product(std::span<const std::size_t> shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

DenseTensor::DenseTensor(Shape shape) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_.assign(shape_product(shape_), 0.0);
}

DenseTensor::DenseTensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape(shape_);
    if (shape_product(shape_) != data_.size())
        throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                    " does not match shape product " +
                                    std::to_string(shape_product(shape_)));
    for (double v : data_)
        if (!std::isfinite(v))
            throw std::invalid_argument("tensor entries must be finite");
}

double DenseTensor::at(std::span<const std::size_t> index) const {
    if (index.size() != shape_.size())
        throw std::invalid_argument("index arity does not match tensor order");
    std::size_t offset = 0, stride = 1;
    for (std::size_t d = 0; d < shape_.size(); ++d) {
        if (index[d] >= shape_[d]) throw std::out_of_range("tensor index out of range");
        offset += index[d] * stride;
        stride *= shape_[d];
    }
    return data_[offset];
}

Eigen::Map<const Matrix> DenseTensor::frontal_slice(std::size_t k) const {
    if (order() != 3) throw std::invalid_argument("frontal_slice requires a 3-mode tensor");
    if (k >= shape_[2]) throw std::out_of_range("frontal slice index out of range");
    const auto rows = static_cast<Eigen::Index>(shape_[0]);
    const auto cols = static_cast<Eigen::Index>(shape_[1]);
    return {data_.data() + k * shape_[0] * shape_[1], rows, cols};
}

DenseTensor DenseTensor::as_order3() const {
    if (order() == 3) return *this;
    if (order() == 2) return DenseTensor({shape_[0], shape_[1], 1}, data_);
    throw std::invalid_argument("expected a 2- or 3-mode tensor, got order " +
                                std::to_string(order()));
}

DenseTensor DenseTensor::from_matrix(const Matrix& m) {
    return DenseTensor({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())},
                       std::vector<double>(m.data(), m.data() + m.size()));
}

Matrix unfold(const DenseTensor& t, std::size_t mode) {
    check_mode(mode, t.order());
    const auto& shape = t.shape();
    const auto [left, right] = outer_extents(shape, mode);
    const std::size_t dim = shape[mode];
    const auto src = t.data();

    // Linear index l + left*(i + dim*r) maps to entry (i, l + left*r).
    Matrix out(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(left * right));
    for (std::size_t r = 0; r < right; ++r)
        for (std::size_t i = 0; i < dim; ++i)
            for (std::size_t l = 0; l < left; ++l)
                out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(l + left * r)) =
                    src[l + left * (i + dim * r)];
    return out;
}

DenseTensor fold(const Matrix& m, std::size_t mode, const Shape& shape) {
    check_shape(shape);
    check_mode(mode, shape.size());
    const auto [left, right] = outer_extents(shape, mode);
    const std::size_t dim = shape[mode];
    if (static_cast<std::size_t>(m.rows()) != dim ||
        static_cast<std::size_t>(m.cols()) != left * right)
        throw std::invalid_argument("fold: matrix is " + std::to_string(m.rows()) + "x" +
                                    std::to_string(m.cols()) + ", expected " +
                                    std::to_string(dim) + "x" + std::to_string(left * right));

    std::vector<double> data(shape_product(shape));
    for (std::size_t r = 0; r < right; ++r)
        for (std::size_t i = 0; i < dim; ++i)
            for (std::size_t l = 0; l < left; ++l)
                data[l + left * (i + dim * r)] =
                    m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(l + left * r));
    return DenseTensor(shape, std::move(data));
}

DenseTensor mode_n_product(const DenseTensor& t, const Matrix& m, std::size_t mode) {
    check_mode(mode, t.order());
    if (static_cast<std::size_t>(m.cols()) != t.dim(mode))
        throw std::invalid_argument("mode_n_product: matrix has " + std::to_string(m.cols()) +
                                    " columns but mode " + std::to_string(mode) + " has size " +
                                    std::to_string(t.dim(mode)));
    Shape out_shape = t.shape();
    out_shape[mode] = static_cast<std::size_t>(m.rows());
    const Matrix product = m * unfold(t, mode);
    return fold(product, mode, out_shape);
}

Matrix khatri_rao(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols())
        throw std::invalid_argument("khatri_rao: column counts differ (" +
                                    std::to_string(a.cols()) + " vs " +
                                    std::to_string(b.cols()) + ")");
    Matrix out(a.rows() * b.rows(), a.cols());
    for (Eigen::Index r = 0; r < a.cols(); ++r)
        for (Eigen::Index i = 0; i < a.rows(); ++i)
            out.col(r).segment(i * b.rows(), b.rows()) = a(i, r) * b.col(r);
    return out;
}

double frobenius_norm(const DenseTensor& t) {
    const auto d = t.data();
    return Eigen::Map<const Vector>(d.data(), static_cast<Eigen::Index>(d.size())).norm();
}

DenseTensor stack_matrices(std::span<const Matrix> slices) {
    if (slices.empty()) throw std::invalid_argument("stack_matrices: empty slice list");
    const Eigen::Index rows = slices.front().rows(), cols = slices.front().cols();
    if (rows == 0 || cols == 0) throw std::invalid_argument("stack_matrices: empty matrix");
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(rows * cols) * slices.size());
    for (std::size_t k = 0; k < slices.size(); ++k) {
        const Matrix& s = slices[k];
        if (s.rows() != rows || s.cols() != cols)
            throw std::invalid_argument("stack_matrices: slice " + std::to_string(k) + " is " +
                                        std::to_string(s.rows()) + "x" +
                                        std::to_string(s.cols()) + ", expected " +
                                        std::to_string(rows) + "x" + std::to_string(cols));
        data.insert(data.end(), s.data(), s.data() + s.size());
    }
    return DenseTensor({static_cast<std::size_t>(rows), static_cast<std::size_t>(cols),
                        slices.size()},
                       std::move(data));
}

std::vector<Matrix> unstack_matrices(const DenseTensor& t) {
    const DenseTensor t3 = t.as_order3();
    std::vector<Matrix> out;
    out.reserve(t3.dim(2));
    for (std::size_t k = 0; k < t3.dim(2); ++k) out.emplace_back(t3.frontal_slice(k));
    return out;
}

}  // namespace trawl
