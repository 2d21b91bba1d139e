#ifndef ANCHOR_TENSOR_HPP
#define ANCHOR_TENSOR_HPP

#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

namespace anchor {

namespace detail {

inline void check(bool condition, const char* message) {
    if (!condition) throw std::invalid_argument(message);
}

}  // namespace detail

// Dense row-major tensor of 64-bit floats. Batches and activations are rank-2
// (rows = samples), which is all the dense trunk needs; the shape vector is
// kept generic so image metadata can ride along untouched.
class Tensor {
public:
    Tensor() = default;

    Tensor(std::size_t rows, std::size_t cols)
        : shape_{rows, cols}, data_(rows * cols, 0.0) {}

    Tensor(std::vector<std::size_t> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        detail::check(data_.size() == element_count(shape_), "Tensor: data length must equal product of shape");
    }

    [[nodiscard]] const std::vector<std::size_t>& shape() const { return shape_; }
    [[nodiscard]] std::size_t size() const { return data_.size(); }

    [[nodiscard]] std::size_t rows() const {
        detail::check(shape_.size() == 2, "Tensor: rows() requires rank 2");
        return shape_[0];
    }

    [[nodiscard]] std::size_t cols() const {
        detail::check(shape_.size() == 2, "Tensor: cols() requires rank 2");
        return shape_[1];
    }

    [[nodiscard]] double& operator()(std::size_t r, std::size_t c) {
        return data_[r * shape_[1] + c];
    }

    [[nodiscard]] double operator()(std::size_t r, std::size_t c) const {
        return data_[r * shape_[1] + c];
    }

    [[nodiscard]] std::span<double> data() { return data_; }
    [[nodiscard]] std::span<const double> data() const { return data_; }

    [[nodiscard]] std::span<double> row(std::size_t r) {
        return std::span<double>(data_).subspan(r * shape_[1], shape_[1]);
    }

    [[nodiscard]] std::span<const double> row(std::size_t r) const {
        return std::span<const double>(data_).subspan(r * shape_[1], shape_[1]);
    }

    [[nodiscard]] bool all_finite() const {
        for (double v : data_) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

private:
    static std::size_t element_count(const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (std::size_t d : shape) n *= d;
        return shape.empty() ? 0 : n;
    }

    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

[[nodiscard]] inline bool all_finite(std::span<const double> values) {
    for (double v : values) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

}  // namespace anchor

#endif  // ANCHOR_TENSOR_HPP
