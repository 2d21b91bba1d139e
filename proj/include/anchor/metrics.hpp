#ifndef ANCHOR_METRICS_HPP
#define ANCHOR_METRICS_HPP

#include <cmath>
#include <cstddef>
#include <limits>
#include <ostream>
#include <vector>

#include "anchor/format.hpp"
#include "anchor/net.hpp"
#include "anchor/tensor.hpp"

namespace anchor {

// Test accuracies collected after each training stage: acc[stage][task],
// defined for task <= stage, every entry in [0, 1].
struct AccuracyMatrix {
    std::vector<std::vector<double>> acc;

    [[nodiscard]] std::size_t stages() const { return acc.size(); }

    void append_stage(std::vector<double> row) {
        detail::check(row.size() == acc.size() + 1, "AccuracyMatrix: row must cover tasks 0..stage");
        for (double a : row) detail::check(a >= 0.0 && a <= 1.0, "AccuracyMatrix: accuracy outside [0, 1]");
        acc.push_back(std::move(row));
    }
};

// Mean test accuracy of the final model over all tasks seen so far.
[[nodiscard]] inline double average_accuracy(const AccuracyMatrix& m) {
    detail::check(!m.acc.empty(), "average_accuracy: empty matrix");
    const auto& last = m.acc.back();
    double sum = 0.0;
    for (double a : last) sum += a;
    return sum / static_cast<double>(last.size());
}

// Per task: difference between its maximum and final accuracy across the
// sequence. A task first seen at the final stage contributes zero.
[[nodiscard]] inline std::vector<double> per_task_forgetting(const AccuracyMatrix& m) {
    detail::check(!m.acc.empty(), "per_task_forgetting: empty matrix");
    const std::size_t stages = m.acc.size();
    const std::size_t tasks = m.acc.back().size();
    std::vector<double> forgetting(tasks, 0.0);
    for (std::size_t t = 0; t < tasks; ++t) {
        double peak = 0.0;
        for (std::size_t s = t; s < stages; ++s) peak = std::max(peak, m.acc[s][t]);
        forgetting[t] = peak - m.acc[stages - 1][t];
    }
    return forgetting;
}

[[nodiscard]] inline double average_forgetting(const AccuracyMatrix& m) {
    const std::vector<double> f = per_task_forgetting(m);
    double sum = 0.0;
    for (double v : f) sum += v;
    return sum / static_cast<double>(f.size());
}

inline void write_accuracy_csv(std::ostream& out, const AccuracyMatrix& m) {
    const std::size_t tasks = m.acc.empty() ? 0 : m.acc.back().size();
    out << "stage";
    for (std::size_t t = 0; t < tasks; ++t) out << ",task_" << t;
    out << "\n";
    for (std::size_t s = 0; s < m.acc.size(); ++s) {
        out << s;
        for (std::size_t t = 0; t < tasks; ++t) {
            out << ",";
            if (t < m.acc[s].size()) out << fmt_g17(m.acc[s][t]);
        }
        out << "\n";
    }
}

// ---------------------------------------------------------------------------
// Linear centered kernel alignment.
// ---------------------------------------------------------------------------

// Similarity in [0, 1] between two activation matrices on the same inputs:
//   cka(X, Y) = ||Xc' Yc||_F^2 / (||Xc' Xc||_F * ||Yc' Yc||_F)
// with column-centered Xc, Yc. A constant (zero-variance) representation has
// no direction to compare, so 0/0 is reported as NaN.
[[nodiscard]] inline double cka(const Tensor& x, const Tensor& y) {
    detail::check(x.shape().size() == 2 && y.shape().size() == 2, "cka: inputs must be rank 2");
    detail::check(x.rows() == y.rows(), "cka: row counts differ");
    detail::check(x.rows() >= 2, "cka: need at least two rows");

    auto centered = [](const Tensor& t) {
        Tensor c = t;
        const std::size_t n = c.rows();
        const std::size_t p = c.cols();
        for (std::size_t j = 0; j < p; ++j) {
            double mean = 0.0;
            for (std::size_t i = 0; i < n; ++i) mean += c(i, j);
            mean /= static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) c(i, j) -= mean;
        }
        return c;
    };

    const Tensor xc = centered(x);
    const Tensor yc = centered(y);
    const std::size_t n = xc.rows();

    auto cross_norm_sq = [n](const Tensor& a, const Tensor& b) {
        double total = 0.0;
        for (std::size_t p = 0; p < a.cols(); ++p) {
            for (std::size_t q = 0; q < b.cols(); ++q) {
                double dot = 0.0;
                for (std::size_t i = 0; i < n; ++i) dot += a(i, p) * b(i, q);
                total += dot * dot;
            }
        }
        return total;
    };

    const double numerator = cross_norm_sq(xc, yc);
    const double denominator = std::sqrt(cross_norm_sq(xc, xc)) * std::sqrt(cross_norm_sq(yc, yc));
    if (denominator == 0.0) return std::numeric_limits<double>::quiet_NaN();
    return numerator / denominator;
}

// Per-trunk-layer CKA between two nets of identical architecture, shallow to
// deep, computed from traced activations on the same probe batch.
[[nodiscard]] inline std::vector<double> cka_profile(const MultiHeadNet& net_ref, const MultiHeadNet& net_final,
                                                     const Tensor& probe_batch) {
    detail::check(net_ref.input_dim() == net_final.input_dim() &&
                      net_ref.config().hidden == net_final.config().hidden,
                  "cka_profile: architecture mismatch");
    const auto [logits_ref, trace_ref] = net_ref.forward_traced(probe_batch, 0);
    const auto [logits_fin, trace_fin] = net_final.forward_traced(probe_batch, 0);
    std::vector<double> profile;
    profile.reserve(net_ref.trunk_depth());
    for (std::size_t l = 0; l < net_ref.trunk_depth(); ++l) {
        profile.push_back(cka(trace_ref.activations[l], trace_fin.activations[l]));
    }
    return profile;
}

}  // namespace anchor

#endif  // ANCHOR_METRICS_HPP
