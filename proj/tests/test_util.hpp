#ifndef ANCHOR_TESTS_TEST_UTIL_HPP
#define ANCHOR_TESTS_TEST_UTIL_HPP

#include <cmath>
#include <cstddef>
#include <vector>

#include "anchor/net.hpp"
#include "anchor/rng.hpp"
#include "anchor/tensor.hpp"

namespace anchor_test {

// |a - b| <= abs_tol + rel_tol * max(|a|, |b|)
inline bool close(double a, double b, double rel_tol, double abs_tol = 0.0) {
    return std::abs(a - b) <= abs_tol + rel_tol * std::max(std::abs(a), std::abs(b));
}

inline anchor::Tensor random_batch(std::size_t rows, std::size_t cols, anchor::Rng& rng) {
    anchor::Tensor t(rows, cols);
    for (double& v : t.data()) v = rng.gaussian();
    return t;
}

inline std::vector<int> random_labels(std::size_t rows, std::size_t classes, anchor::Rng& rng) {
    std::vector<int> y(rows);
    for (int& v : y) v = static_cast<int>(rng.index(classes));
    return y;
}

// Central finite differences of the batch loss with respect to every
// parameter; the independent oracle for backpropagation.
inline anchor::ParamVector fd_loss_grad(anchor::MultiHeadNet& net, const anchor::Tensor& batch,
                                        const std::vector<int>& labels, int head, double step = 1e-5) {
    const anchor::ParamVector theta = net.params();
    anchor::ParamVector grad(theta.size(), 0.0);
    for (std::size_t k = 0; k < theta.size(); ++k) {
        anchor::ParamVector plus = theta;
        anchor::ParamVector minus = theta;
        plus[k] += step;
        minus[k] -= step;
        net.set_params(plus);
        const double f_plus = net.loss_and_grad(batch, labels, head).loss;
        net.set_params(minus);
        const double f_minus = net.loss_and_grad(batch, labels, head).loss;
        grad[k] = (f_plus - f_minus) / (2.0 * step);
    }
    net.set_params(theta);
    return grad;
}

// Gradient check: relative error below rel_tol for every coordinate, with a
// small absolute floor guarding exactly-zero gradients (dead ReLU units).
inline bool gradients_match(const anchor::ParamVector& analytic, const anchor::ParamVector& numeric,
                            double rel_tol = 1e-5, double abs_floor = 1e-9) {
    if (analytic.size() != numeric.size()) return false;
    for (std::size_t k = 0; k < analytic.size(); ++k) {
        if (!close(analytic[k], numeric[k], rel_tol, abs_floor)) return false;
    }
    return true;
}

}  // namespace anchor_test

#endif  // ANCHOR_TESTS_TEST_UTIL_HPP
