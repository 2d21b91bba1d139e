#ifndef ANCHOR_IMPORTANCE_HPP
#define ANCHOR_IMPORTANCE_HPP

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <vector>

#include "anchor/net.hpp"
#include "anchor/rng.hpp"
#include "anchor/tensor.hpp"

namespace anchor {

enum class Estimator { ewc, mas, si, rwalk, vanilla, random };

[[nodiscard]] inline std::string to_string(Estimator e) {
    switch (e) {
        case Estimator::ewc: return "ewc";
        case Estimator::mas: return "mas";
        case Estimator::si: return "si";
        case Estimator::rwalk: return "rwalk";
        case Estimator::vanilla: return "vanilla";
        case Estimator::random: return "random";
    }
    return "?";
}

[[nodiscard]] inline Estimator estimator_from_string(const std::string& s) {
    if (s == "ewc") return Estimator::ewc;
    if (s == "mas") return Estimator::mas;
    if (s == "si") return Estimator::si;
    if (s == "rwalk") return Estimator::rwalk;
    if (s == "vanilla") return Estimator::vanilla;
    if (s == "random") return Estimator::random;
    throw std::invalid_argument("unknown estimator: " + s);
}

// Per-parameter importance bookkeeping across a task sequence.
//   alpha_prev — consolidated scores from all finished tasks (zeros initially)
//   alpha_task — running scores for the task in progress
//   si_path    — path accumulator for SI/RWalk
//   theta_start — parameter snapshot taken when the current task began
struct ImportanceState {
    Estimator estimator = Estimator::vanilla;
    ParamVector alpha_prev;
    ParamVector alpha_task;
    std::size_t count = 0;
    ParamVector si_path;
    ParamVector theta_start;

    explicit ImportanceState(Estimator est, std::size_t len)
        : estimator(est),
          alpha_prev(len, 0.0),
          alpha_task(len, 0.0),
          si_path(len, 0.0),
          theta_start(len, 0.0) {}

    // Resets the in-task buffers: alpha_task = 0, count = 0, path cleared.
    void begin_task(const ParamVector& theta) {
        detail::check(theta.size() == alpha_prev.size(), "ImportanceState: theta length mismatch");
        alpha_task.assign(alpha_prev.size(), 0.0);
        si_path.assign(alpha_prev.size(), 0.0);
        count = 0;
        theta_start = theta;
    }
};

[[nodiscard]] inline ParamVector vanilla_scores(std::size_t len) {
    detail::check(len > 0, "vanilla_scores: len must be positive");
    return ParamVector(len, 1.0);
}

[[nodiscard]] inline ParamVector random_scores(std::size_t len, std::uint64_t seed) {
    detail::check(len > 0, "random_scores: len must be positive");
    Rng rng(seed);
    ParamVector scores(len);
    for (double& s : scores) s = rng.uniform();
    return scores;
}

// Running mean of squared gradients: the online diagonal Fisher estimate.
// Shared by EWC and the Fisher half of RWalk.
inline void fisher_accumulate(ImportanceState& state, const ParamVector& grad) {
    detail::check(grad.size() == state.alpha_task.size(), "fisher_accumulate: length mismatch");
    detail::check(all_finite(grad), "fisher_accumulate: non-finite gradient");
    const double c = static_cast<double>(state.count);
    for (std::size_t k = 0; k < grad.size(); ++k) {
        state.alpha_task[k] = (c * state.alpha_task[k] + grad[k] * grad[k]) / (c + 1.0);
    }
    state.count += 1;
}

inline void ewc_accumulate(ImportanceState& state, const ParamVector& grad) {
    detail::check(state.estimator == Estimator::ewc, "ewc_accumulate: estimator must be ewc");
    fisher_accumulate(state, grad);
}

// Running mean of |g| where g is the gradient of half the squared L2 norm of
// the active head's logits: how sensitive the output is to each parameter.
inline void mas_accumulate(ImportanceState& state, const MultiHeadNet& net, const Tensor& batch, int head) {
    detail::check(state.estimator == Estimator::mas, "mas_accumulate: estimator must be mas");
    const ParamVector g = net.output_norm_grad(batch, head);
    detail::check(g.size() == state.alpha_task.size(), "mas_accumulate: length mismatch");
    const double c = static_cast<double>(state.count);
    for (std::size_t k = 0; k < g.size(); ++k) {
        state.alpha_task[k] = (c * state.alpha_task[k] + std::abs(g[k])) / (c + 1.0);
    }
    state.count += 1;
}

// Path contribution of the step just taken: si_path += -grad .* delta_theta.
// Positive when the parameter moved against its gradient (loss went down).
inline void si_accumulate(ImportanceState& state, const ParamVector& grad, const ParamVector& delta_theta) {
    detail::check(state.estimator == Estimator::si || state.estimator == Estimator::rwalk,
                  "si_accumulate: estimator must be si or rwalk");
    detail::check(grad.size() == state.si_path.size() && delta_theta.size() == state.si_path.size(),
                  "si_accumulate: length mismatch");
    for (std::size_t k = 0; k < grad.size(); ++k) {
        state.si_path[k] -= grad[k] * delta_theta[k];
    }
}

// scores_k = si_path_k / ((theta_end_k - theta_start_k)^2 + xi). Sign of the
// path accumulator is preserved; xi keeps unmoved parameters bounded.
[[nodiscard]] inline ParamVector si_finalize(const ImportanceState& state, const ParamVector& theta_end, double xi) {
    detail::check(state.estimator == Estimator::si || state.estimator == Estimator::rwalk,
                  "si_finalize: estimator must be si or rwalk");
    detail::check(xi > 0.0, "si_finalize: xi must be positive");
    detail::check(theta_end.size() == state.si_path.size(), "si_finalize: length mismatch");
    ParamVector scores(state.si_path.size());
    for (std::size_t k = 0; k < scores.size(); ++k) {
        const double move = theta_end[k] - state.theta_start[k];
        scores[k] = state.si_path[k] / (move * move + xi);
    }
    return scores;
}

// Fisher running mean plus the SI-style path score, elementwise.
[[nodiscard]] inline ParamVector rwalk_scores(const ImportanceState& state, const ParamVector& theta_end, double xi) {
    detail::check(state.estimator == Estimator::rwalk, "rwalk_scores: estimator must be rwalk");
    ParamVector scores = si_finalize(state, theta_end, xi);
    for (std::size_t k = 0; k < scores.size(); ++k) {
        scores[k] += state.alpha_task[k];
    }
    return scores;
}

// End-of-task merge: alpha_new = (|alpha_task| + |alpha_prev|) / 2.
[[nodiscard]] inline ParamVector consolidate(const ParamVector& alpha_prev, const ParamVector& alpha_task) {
    detail::check(alpha_prev.size() == alpha_task.size(), "consolidate: length mismatch");
    ParamVector merged(alpha_prev.size());
    for (std::size_t k = 0; k < merged.size(); ++k) {
        merged[k] = (std::abs(alpha_task[k]) + std::abs(alpha_prev[k])) / 2.0;
    }
    return merged;
}

[[nodiscard]] inline ParamVector transform_abs(ParamVector scores) {
    for (double& s : scores) s = std::abs(s);
    return scores;
}

// Keeps the sign of a seeded random subset of round(frac * len) originally
// negative entries; every other entry becomes its magnitude.
[[nodiscard]] inline ParamVector transform_keep_negative_fraction(ParamVector scores, double frac,
                                                                  std::uint64_t seed) {
    detail::check(frac >= 0.0 && frac <= 1.0, "transform_keep_negative_fraction: frac out of range");
    std::vector<std::size_t> negatives;
    for (std::size_t k = 0; k < scores.size(); ++k) {
        if (scores[k] < 0.0) negatives.push_back(k);
    }
    const auto keep = static_cast<std::size_t>(std::llround(frac * static_cast<double>(scores.size())));
    if (keep < negatives.size()) {
        Rng rng(seed);
        rng.shuffle(negatives);
        for (std::size_t i = keep; i < negatives.size(); ++i) {
            scores[negatives[i]] = std::abs(scores[negatives[i]]);
        }
    }
    return scores;
}

// Mean of |score| per layer, ordered shallow to deep.
[[nodiscard]] inline std::vector<double> layer_mean_importance(const ParamVector& scores, const LayerMap& map) {
    detail::check(scores.size() == map.param_count, "layer_mean_importance: score length mismatch");
    std::vector<double> sums(static_cast<std::size_t>(map.layer_count), 0.0);
    std::vector<std::size_t> counts(static_cast<std::size_t>(map.layer_count), 0);
    std::size_t covered = 0;
    for (const auto& seg : map.segments) {
        for (std::size_t k = seg.begin; k < seg.end; ++k) {
            sums[static_cast<std::size_t>(seg.layer_id)] += std::abs(scores[k]);
        }
        counts[static_cast<std::size_t>(seg.layer_id)] += seg.end - seg.begin;
        covered += seg.end - seg.begin;
    }
    detail::check(covered == map.param_count, "layer_mean_importance: layer map leaves indices uncovered");
    std::vector<double> means(sums.size());
    for (std::size_t l = 0; l < sums.size(); ++l) {
        means[l] = counts[l] > 0 ? sums[l] / static_cast<double>(counts[l]) : 0.0;
    }
    return means;
}

// ---------------------------------------------------------------------------
// Estimator dispatch used by the training loop.
// ---------------------------------------------------------------------------

// One accumulation event per optimizer update. `task_grad` and `delta_theta`
// refer to the task-specific phase of the update just taken.
inline void accumulate_update(ImportanceState& state, const MultiHeadNet& net, const Tensor& batch, int head,
                              const ParamVector& task_grad, const ParamVector& delta_theta,
                              std::uint64_t task_seed) {
    switch (state.estimator) {
        case Estimator::ewc:
            ewc_accumulate(state, task_grad);
            break;
        case Estimator::mas:
            mas_accumulate(state, net, batch, head);
            break;
        case Estimator::si:
            si_accumulate(state, task_grad, delta_theta);
            break;
        case Estimator::rwalk:
            fisher_accumulate(state, task_grad);
            si_accumulate(state, task_grad, delta_theta);
            break;
        case Estimator::vanilla:
            state.alpha_task = vanilla_scores(state.alpha_task.size());
            state.count += 1;
            break;
        case Estimator::random:
            state.alpha_task = random_scores(state.alpha_task.size(), task_seed);
            state.count += 1;
            break;
    }
}

// The current in-task score vector alpha_T; for path-based estimators this is
// the finalized view at the present parameters.
[[nodiscard]] inline ParamVector current_scores(const ImportanceState& state, const ParamVector& theta_now,
                                                double xi) {
    switch (state.estimator) {
        case Estimator::si:
            return si_finalize(state, theta_now, xi);
        case Estimator::rwalk:
            return rwalk_scores(state, theta_now, xi);
        default:
            return state.alpha_task;
    }
}

}  // namespace anchor

#endif  // ANCHOR_IMPORTANCE_HPP
