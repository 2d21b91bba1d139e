#ifndef ANCHOR_REGULARIZER_HPP
#define ANCHOR_REGULARIZER_HPP

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "anchor/net.hpp"
#include "anchor/tensor.hpp"

namespace anchor {

enum class Mode { plain, quadratic, emr };

[[nodiscard]] inline std::string to_string(Mode m) {
    switch (m) {
        case Mode::plain: return "plain";
        case Mode::quadratic: return "quadratic";
        case Mode::emr: return "emr";
    }
    return "?";
}

[[nodiscard]] inline Mode mode_from_string(const std::string& s) {
    if (s == "plain") return Mode::plain;
    if (s == "quadratic") return Mode::quadratic;
    if (s == "emr") return Mode::emr;
    throw std::invalid_argument("unknown mode: " + s);
}

struct RegConfig {
    double eta = 0.1;
    double lambda = 0.0;
    Mode mode = Mode::plain;

    void validate() const {
        detail::check(eta > 0.0, "RegConfig: eta must be positive");
        detail::check(lambda >= 0.0, "RegConfig: lambda must be non-negative");
    }
};

// Per-parameter averaging weights for the explicit movement update. Entries
// must lie in [0, 1]; anything outside that range destabilizes training, so
// it is rejected rather than clamped.
struct AveragingWeights {
    ParamVector values;
};

inline void validate_weights(std::span<const double> r) {
    for (double v : r) {
        detail::check(v >= 0.0 && v <= 1.0, "AveragingWeights: entry outside [0, 1]");
    }
}

// ---------------------------------------------------------------------------
// Quadratic regularization updates.
//
// The regularized SGD step decomposes into a weighted average between the
// current and previous parameter values plus the task derivative:
//   theta'_k = (1 - eta*lambda*alpha_k) * theta_k
//            + (eta*lambda*alpha_k)     * theta_star_k
//            - eta * grad_k
// ---------------------------------------------------------------------------

// Applies one quadratic-regularization step in place. Returns false when any
// updated entry is non-finite (diverged).
inline bool quad_reg_step(std::span<double> theta, std::span<const double> theta_star,
                          std::span<const double> alpha, std::span<const double> grad,
                          double eta, double lambda) {
    detail::check(theta.size() == theta_star.size() && theta.size() == alpha.size() &&
                      theta.size() == grad.size(),
                  "quad_reg_step: length mismatch");
    for (std::size_t k = 0; k < theta.size(); ++k) {
        const double w = eta * lambda * alpha[k];
        theta[k] = (1.0 - w) * theta[k] + w * theta_star[k] - eta * grad[k];
    }
    return all_finite(theta);
}

// Closed form after i steps from theta_star with recorded task gradients:
//   theta_k = theta_star_k - sum_j (1 - eta*lambda*alpha_k)^(i-j-1) * eta * g_jk
// The exponent shrinks the effective learning rate of high-importance
// parameters. An empty gradient sequence returns theta_star.
[[nodiscard]] inline ParamVector quad_unrolled(const ParamVector& theta_star,
                                               const std::vector<ParamVector>& grads,
                                               const ParamVector& alpha, double eta, double lambda) {
    const std::size_t len = theta_star.size();
    detail::check(alpha.size() == len, "quad_unrolled: alpha length mismatch");
    for (const auto& g : grads) {
        detail::check(g.size() == len, "quad_unrolled: gradient length mismatch");
    }
    const std::size_t steps = grads.size();
    ParamVector theta = theta_star;
    for (std::size_t k = 0; k < len; ++k) {
        const double base = 1.0 - eta * lambda * alpha[k];
        double sum = 0.0;
        for (std::size_t j = 0; j < steps; ++j) {
            double factor = 1.0;
            for (std::size_t p = 0; p < steps - j - 1; ++p) factor *= base;
            sum += factor * eta * grads[j][k];
        }
        theta[k] -= sum;
    }
    return theta;
}

// Largest stable regularization constant: 1 / (eta * max_k |alpha_k|).
// Returns +infinity when all scores are zero (no constraint).
[[nodiscard]] inline double lambda_upper(double eta, const ParamVector& alpha) {
    detail::check(eta > 0.0, "lambda_upper: eta must be positive");
    double max_abs = 0.0;
    for (double a : alpha) max_abs = std::max(max_abs, std::abs(a));
    if (max_abs == 0.0) return std::numeric_limits<double>::infinity();
    return 1.0 / (eta * max_abs);
}

struct ViolationCount {
    std::size_t count = 0;
    double fraction = 0.0;
};

// How many parameters break the stable-training condition eta*lambda*|alpha| < 1.
[[nodiscard]] inline ViolationCount count_violations(double eta, double lambda, const ParamVector& alpha) {
    detail::check(eta >= 0.0 && lambda >= 0.0, "count_violations: eta and lambda must be non-negative");
    ViolationCount out;
    for (double a : alpha) {
        if (eta * lambda * std::abs(a) > 1.0) out.count += 1;
    }
    out.fraction = alpha.empty() ? 0.0 : static_cast<double>(out.count) / static_cast<double>(alpha.size());
    return out;
}

// The tightest eta*lambda*|alpha_l| achievable under stable training:
// |alpha_l| / max_k |alpha_k|. Near-zero ratios mean the parameter undergoes
// negligible averaging no matter how large lambda is.
[[nodiscard]] inline double averaging_ratio(const ParamVector& alpha, std::size_t l) {
    detail::check(l < alpha.size(), "averaging_ratio: index out of range");
    double max_abs = 0.0;
    for (double a : alpha) max_abs = std::max(max_abs, std::abs(a));
    detail::check(max_abs > 0.0, "averaging_ratio: all scores are zero");
    return std::abs(alpha[l]) / max_abs;
}

// ---------------------------------------------------------------------------
// Explicit movement regularization.
// ---------------------------------------------------------------------------

// Relative importance of each parameter for previous versus current tasks:
//   R_k = sqrt(|alpha_prev_k|) / (sqrt(|alpha_task_k|) + sqrt(|alpha_prev_k|))
// R_k = 0 when both scores are zero: a parameter never marked important is
// left free to move. The result always lies in [0, 1].
[[nodiscard]] inline AveragingWeights relative_importance(const ParamVector& alpha_prev,
                                                          const ParamVector& alpha_task) {
    detail::check(alpha_prev.size() == alpha_task.size(), "relative_importance: length mismatch");
    AveragingWeights r;
    r.values.resize(alpha_prev.size());
    for (std::size_t k = 0; k < alpha_prev.size(); ++k) {
        const double prev = std::sqrt(std::abs(alpha_prev[k]));
        const double task = std::sqrt(std::abs(alpha_task[k]));
        r.values[k] = (prev + task) == 0.0 ? 0.0 : prev / (task + prev);
    }
    return r;
}

// The averaging phase on its own: theta <- (1-R).*theta + R.*theta_star.
// Returns false when any updated entry is non-finite.
inline bool weighted_average(std::span<double> theta, std::span<const double> theta_star,
                             std::span<const double> r) {
    detail::check(theta.size() == theta_star.size() && theta.size() == r.size(),
                  "weighted_average: length mismatch");
    validate_weights(r);
    for (std::size_t k = 0; k < theta.size(); ++k) {
        theta[k] = (1.0 - r[k]) * theta[k] + r[k] * theta_star[k];
    }
    return all_finite(theta);
}

// Two-phase update: (i) theta_hat = theta - eta*grad, then (ii) weighted
// average theta' = (1-R).*theta_hat + R.*theta_star. Returns false when any
// updated entry is non-finite.
inline bool emr_step(std::span<double> theta, std::span<const double> theta_star,
                     std::span<const double> grad, double eta, std::span<const double> r) {
    detail::check(theta.size() == grad.size(), "emr_step: length mismatch");
    for (std::size_t k = 0; k < theta.size(); ++k) {
        theta[k] -= eta * grad[k];
    }
    return weighted_average(theta, theta_star, r);
}

inline bool emr_step(std::span<double> theta, std::span<const double> theta_star,
                     std::span<const double> grad, double eta, const AveragingWeights& r) {
    return emr_step(theta, theta_star, grad, eta, std::span<const double>(r.values));
}

// Closed form after i steps from theta_star, one weight vector per step:
//   theta_k = theta_star_k - sum_j [ prod_{m=j}^{i-1} (1 - R_mk) ] * eta * g_jk
[[nodiscard]] inline ParamVector emr_unrolled(const ParamVector& theta_star,
                                              const std::vector<ParamVector>& grads, double eta,
                                              const std::vector<AveragingWeights>& r_seq) {
    const std::size_t len = theta_star.size();
    detail::check(grads.size() == r_seq.size(), "emr_unrolled: one weight vector per step required");
    for (const auto& g : grads) detail::check(g.size() == len, "emr_unrolled: gradient length mismatch");
    for (const auto& r : r_seq) {
        detail::check(r.values.size() == len, "emr_unrolled: weight length mismatch");
        validate_weights(r.values);
    }
    const std::size_t steps = grads.size();
    ParamVector theta = theta_star;
    for (std::size_t k = 0; k < len; ++k) {
        double sum = 0.0;
        for (std::size_t j = 0; j < steps; ++j) {
            double factor = 1.0;
            for (std::size_t m = j; m < steps; ++m) factor *= 1.0 - r_seq[m].values[k];
            sum += factor * eta * grads[j][k];
        }
        theta[k] -= sum;
    }
    return theta;
}

// The explicit average solves, per coordinate, the proximal problem
//   argmin_theta 1/2 (theta - theta_hat)^2 + 1/2 * c * (theta - theta_star)^2
// with penalty coefficient c_k = R_k / (1 - R_k). R_k = 1 maps to an
// unbounded (infinite) coefficient.
[[nodiscard]] inline ParamVector proximal_coefficients(const AveragingWeights& r) {
    validate_weights(r.values);
    ParamVector c(r.values.size());
    for (std::size_t k = 0; k < c.size(); ++k) {
        c[k] = r.values[k] == 1.0 ? std::numeric_limits<double>::infinity()
                                  : r.values[k] / (1.0 - r.values[k]);
    }
    return c;
}

// Structured stability outcome of a training run.
struct StabilityReport {
    double eta = 0.0;
    double lambda = 0.0;
    std::size_t violations = 0;  // worst eta*lambda*|alpha| < 1 violation count seen
    double fraction = 0.0;
    bool stable = true;
    long first_nonfinite_step = -1;  // global update index, -1 when stable
};

}  // namespace anchor

#endif  // ANCHOR_REGULARIZER_HPP
