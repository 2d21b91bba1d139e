#ifndef ANCHOR_TRAINER_HPP
#define ANCHOR_TRAINER_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "anchor/importance.hpp"
#include "anchor/metrics.hpp"
#include "anchor/net.hpp"
#include "anchor/regularizer.hpp"
#include "anchor/rng.hpp"
#include "anchor/tasks.hpp"
#include "anchor/tensor.hpp"

namespace anchor {

enum class Augmentation { none, flip, noise };

[[nodiscard]] inline std::string to_string(Augmentation a) {
    switch (a) {
        case Augmentation::none: return "none";
        case Augmentation::flip: return "flip";
        case Augmentation::noise: return "noise";
    }
    return "?";
}

[[nodiscard]] inline Augmentation augmentation_from_string(const std::string& s) {
    if (s == "none") return Augmentation::none;
    if (s == "flip") return Augmentation::flip;
    if (s == "noise") return Augmentation::noise;
    throw std::invalid_argument("unknown augmentation: " + s);
}

struct AugmentSpec {
    Augmentation kind = Augmentation::none;
    double sigma = 0.0;
};

// Score transform applied to the consolidated importance before it feeds the
// quadratic anchor: take magnitudes, or keep the sign of a random fraction.
struct TransformSpec {
    enum class Kind { abs, keep_negative_fraction };
    Kind kind = Kind::abs;
    double frac = 0.0;
};

[[nodiscard]] inline ParamVector apply_transforms(ParamVector scores,
                                                  const std::vector<TransformSpec>& transforms,
                                                  std::uint64_t seed) {
    for (std::size_t i = 0; i < transforms.size(); ++i) {
        switch (transforms[i].kind) {
            case TransformSpec::Kind::abs:
                scores = transform_abs(std::move(scores));
                break;
            case TransformSpec::Kind::keep_negative_fraction:
                scores = transform_keep_negative_fraction(std::move(scores), transforms[i].frac,
                                                          mix_seed(seed, i));
                break;
        }
    }
    return scores;
}

// Everything a single continual-learning run needs to know about how each
// task is trained.
struct Strategy {
    Mode mode = Mode::plain;
    Estimator estimator = Estimator::vanilla;
    double eta = 0.1;
    double lambda = 0.0;
    double momentum = 0.0;
    double si_xi = 1e-3;  // damping for path-based scores
    std::size_t batch_size = 10;
    std::vector<TransformSpec> transforms;
    AugmentSpec augmentation;
    // Diagnostic override: use a constant averaging weight instead of
    // relative importance in emr mode (0 = plain fine-tuning, 1 = freeze at
    // the snapshot).
    std::optional<double> emr_fixed_r;

    void validate() const {
        detail::check(eta > 0.0, "Strategy: eta must be positive");
        detail::check(lambda >= 0.0, "Strategy: lambda must be non-negative");
        detail::check(momentum >= 0.0 && momentum < 1.0, "Strategy: momentum must be in [0, 1)");
        detail::check(si_xi > 0.0, "Strategy: si_xi must be positive");
        detail::check(batch_size > 0, "Strategy: batch_size must be positive");
        detail::check(augmentation.sigma >= 0.0, "Strategy: sigma must be non-negative");
        detail::check(!emr_fixed_r.has_value() || (*emr_fixed_r >= 0.0 && *emr_fixed_r <= 1.0),
                      "Strategy: emr_fixed_r must be in [0, 1]");
        for (const auto& t : transforms) {
            detail::check(t.frac >= 0.0 && t.frac <= 1.0, "Strategy: transform fraction out of range");
        }
    }
};

// Parameters at the end of the previous task; the anchor point of both
// regularization modes. Captured exactly once per task boundary.
struct Snapshot {
    ParamVector theta_star;
    int task_index = -1;  // index of the finished task
};

// Returns a transformed copy of the batch; the input is untouched. Flip
// reverses the width axis (requires image-shape metadata), noise adds seeded
// Gaussian perturbations.
[[nodiscard]] inline Tensor augment_batch(const Tensor& batch, const AugmentSpec& spec,
                                          const std::optional<ImageShape>& shape, std::uint64_t seed) {
    switch (spec.kind) {
        case Augmentation::none:
            return batch;
        case Augmentation::flip: {
            detail::check(shape.has_value(), "augment_batch: flip requires image-shaped inputs");
            detail::check(shape->height * shape->width == batch.cols(),
                          "augment_batch: image shape does not match feature width");
            Tensor out(batch.rows(), batch.cols());
            for (std::size_t i = 0; i < batch.rows(); ++i) {
                for (std::size_t r = 0; r < shape->height; ++r) {
                    for (std::size_t c = 0; c < shape->width; ++c) {
                        out(i, r * shape->width + c) = batch(i, r * shape->width + (shape->width - 1 - c));
                    }
                }
            }
            return out;
        }
        case Augmentation::noise: {
            Tensor out = batch;
            Rng rng(seed);
            for (double& v : out.data()) v += spec.sigma * rng.gaussian();
            return out;
        }
    }
    throw std::invalid_argument("augment_batch: unknown augmentation");
}

struct TaskRunStats {
    std::size_t steps = 0;  // task-specific (phase-1) optimizer updates
    double final_loss = 0.0;
    bool diverged = false;
    long first_nonfinite_step = -1;      // step index within this task
    std::size_t violations = 0;          // quadratic mode, checked at task start
    double violation_fraction = 0.0;
};

// Trains one epoch on a task. The head is freshly initialized, the snapshot
// is (re)captured at task start so training begins exactly at theta_star, and
// the consolidated importance is updated at task end.
//
// The first task of a sequence (empty snapshot at entry) always runs plain:
// there is no previous importance or anchor to regularize against.
inline TaskRunStats train_task(MultiHeadNet& net, const TaskSpec& task, const Strategy& strategy,
                               ImportanceState& state, std::optional<Snapshot>& snapshot,
                               std::uint64_t run_seed) {
    strategy.validate();
    detail::check(task.train_x.rows() > 0, "train_task: task has no training samples");
    const int head = task.id;
    const bool first_task = !snapshot.has_value();
    const Mode mode = first_task ? Mode::plain : strategy.mode;

    net.reinit_head(head, mix_seed(run_seed, static_cast<std::uint64_t>(task.id), 0x11));
    const ParamVector theta_start = net.params();
    snapshot = Snapshot{theta_start, task.id - 1};
    state.begin_task(theta_start);

    TaskRunStats stats;
    ParamVector alpha_anchor;
    if (mode == Mode::quadratic) {
        alpha_anchor = apply_transforms(state.alpha_prev, strategy.transforms,
                                        mix_seed(run_seed, static_cast<std::uint64_t>(task.id), 0x12));
        const ViolationCount v = count_violations(strategy.eta, strategy.lambda, alpha_anchor);
        stats.violations = v.count;
        stats.violation_fraction = v.fraction;
    }

    const std::uint64_t task_seed = mix_seed(run_seed, static_cast<std::uint64_t>(task.id), 0x13);
    Rng order_rng(mix_seed(run_seed, static_cast<std::uint64_t>(task.id), 0x14));
    Rng augment_rng(mix_seed(run_seed, static_cast<std::uint64_t>(task.id), 0x15));

    std::vector<std::size_t> order(task.train_x.rows());
    std::iota(order.begin(), order.end(), 0);
    order_rng.shuffle(order);

    const std::span<double> theta = net.raw_params();
    const ParamVector& theta_star = snapshot->theta_star;
    ParamVector velocity(net.param_count(), 0.0);
    ParamVector update(net.param_count(), 0.0);
    long step = 0;

    auto diverged_at = [&](long at) {
        stats.diverged = true;
        stats.first_nonfinite_step = at;
    };

    for (std::size_t start = 0; start < order.size() && !stats.diverged; start += strategy.batch_size) {
        const std::size_t stop = std::min(start + strategy.batch_size, order.size());
        std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                      order.begin() + static_cast<std::ptrdiff_t>(stop));
        Tensor batch = detail::gather_rows(task.train_x, rows);
        std::vector<int> labels;
        labels.reserve(rows.size());
        for (std::size_t r : rows) labels.push_back(task.train_y[r]);

        const int passes = strategy.augmentation.kind == Augmentation::none ? 1 : 2;
        for (int pass = 0; pass < passes && !stats.diverged; ++pass) {
            if (pass == 1) {
                batch = augment_batch(batch, strategy.augmentation, task.image_shape, augment_rng.next_u64());
            }
            const Tensor& x = batch;
            const LossGrad lg = net.loss_and_grad(x, labels, head);
            if (!std::isfinite(lg.loss)) {
                diverged_at(step);
                break;
            }
            const ParamVector theta_before = net.params();

            // Task-specific update. The regularizer gradient uses the current
            // parameters, so for momentum = 0 this is exactly the quadratic
            // weighted-average step. lambda = 0 takes the plain path verbatim.
            if (mode == Mode::quadratic && strategy.lambda != 0.0) {
                for (std::size_t k = 0; k < update.size(); ++k) {
                    update[k] = lg.grad[k] + strategy.lambda * alpha_anchor[k] * (theta[k] - theta_star[k]);
                }
            } else {
                update = lg.grad;
            }
            bool ok;
            if (strategy.momentum != 0.0) {
                for (std::size_t k = 0; k < velocity.size(); ++k) {
                    velocity[k] = strategy.momentum * velocity[k] + update[k];
                }
                ok = net.apply_sgd(velocity, strategy.eta);
            } else {
                ok = net.apply_sgd(update, strategy.eta);
            }
            stats.steps += 1;
            stats.final_loss = lg.loss;
            if (!ok) {
                diverged_at(step);
                break;
            }

            // Importance bookkeeping sees the task gradient and the parameter
            // change of the task-specific phase only.
            ParamVector delta(theta_before.size());
            for (std::size_t k = 0; k < delta.size(); ++k) delta[k] = theta[k] - theta_before[k];
            accumulate_update(state, net, x, head, lg.grad, delta, task_seed);

            if (mode == Mode::emr) {
                AveragingWeights r;
                if (strategy.emr_fixed_r.has_value()) {
                    r.values.assign(theta.size(), *strategy.emr_fixed_r);
                } else {
                    const ParamVector alpha_now = current_scores(state, net.params(), strategy.si_xi);
                    r = relative_importance(state.alpha_prev, alpha_now);
                }
                if (!weighted_average(theta, theta_star, r.values)) {
                    diverged_at(step);
                    break;
                }
            }
            ++step;
        }
    }

    const ParamVector task_scores = current_scores(state, net.params(), strategy.si_xi);
    state.alpha_prev = consolidate(state.alpha_prev, task_scores);
    return stats;
}

// Accuracy on the task's test split using the task's own head; argmax with
// ties resolved toward the lowest class index. Integer correct-counts keep
// the reduction order-independent.
[[nodiscard]] inline double evaluate_accuracy(const MultiHeadNet& net, const TaskSpec& task) {
    detail::check(task.test_x.rows() > 0, "evaluate_accuracy: empty test split");
    const Tensor logits = net.forward(task.test_x, task.id);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        auto row = logits.row(i);
        std::size_t best = 0;
        for (std::size_t c = 1; c < row.size(); ++c) {
            if (row[c] > row[best]) best = c;
        }
        if (static_cast<int>(best) == task.test_y[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(logits.rows());
}

struct NetOptions {
    std::vector<std::size_t> hidden{100, 100};
};

struct SeedRunResult {
    std::uint64_t seed = 0;
    AccuracyMatrix matrix;
    StabilityReport stability;
    ParamVector alpha_final;          // consolidated importance after the run
    ParamVector last_task_scores;     // in-task scores of the last trained task
    LayerMap layer_map;
    bool completed = false;
    bool rejected_for_violations = false;
    std::optional<MultiHeadNet> net_after_first;
    std::optional<MultiHeadNet> net_final;
};

struct RunOptions {
    std::size_t max_tasks = 0;           // 0 = all tasks
    bool stop_on_violation = false;      // grid-search filter
    bool keep_nets = true;               // keep copies for CKA profiling
};

// Runs one seed through the stream: train task, then evaluate every seen
// task. Aborts on divergence (the matrix keeps the completed stages) or, when
// filtering, on the first stability violation.
[[nodiscard]] inline SeedRunResult run_single(const TaskStream& stream, const Strategy& strategy,
                                              const NetOptions& net_options, std::uint64_t seed,
                                              const RunOptions& options = {}) {
    strategy.validate();
    detail::check(!stream.tasks.empty(), "run_single: empty task stream");
    const std::size_t task_count = options.max_tasks == 0
                                       ? stream.tasks.size()
                                       : std::min(options.max_tasks, stream.tasks.size());

    NetConfig net_config;
    net_config.input_dim = stream.feature_dim();
    net_config.hidden = net_options.hidden;
    for (const auto& task : stream.tasks) net_config.head_classes.push_back(task.class_count());
    net_config.seed = mix_seed(seed, 0x20);
    MultiHeadNet net(net_config);

    SeedRunResult result;
    result.seed = seed;
    result.layer_map = net.layer_map();
    result.stability.eta = strategy.eta;
    result.stability.lambda = strategy.lambda;

    ImportanceState state(strategy.estimator, net.param_count());
    std::optional<Snapshot> snapshot;
    std::size_t steps_before = 0;

    for (std::size_t n = 0; n < task_count; ++n) {
        const TaskSpec& task = stream.tasks[n];
        const TaskRunStats stats = train_task(net, task, strategy, state, snapshot, seed);
        result.stability.violations = std::max(result.stability.violations, stats.violations);
        result.stability.fraction = std::max(result.stability.fraction, stats.violation_fraction);
        result.last_task_scores = current_scores(state, net.params(), strategy.si_xi);

        if (options.stop_on_violation && stats.violations > 0) {
            result.rejected_for_violations = true;
            break;
        }
        if (stats.diverged) {
            result.stability.stable = false;
            result.stability.first_nonfinite_step =
                static_cast<long>(steps_before) + stats.first_nonfinite_step;
            break;
        }
        steps_before += stats.steps;

        std::vector<double> row;
        row.reserve(n + 1);
        for (std::size_t t = 0; t <= n; ++t) row.push_back(evaluate_accuracy(net, stream.tasks[t]));
        result.matrix.append_stage(std::move(row));

        if (n == 0 && options.keep_nets) result.net_after_first = net;
    }

    result.completed = result.stability.stable && !result.rejected_for_violations &&
                       result.matrix.stages() == task_count;
    result.alpha_final = state.alpha_prev;
    if (options.keep_nets) result.net_final = net;
    return result;
}

// One accuracy matrix per seed over a shared stream.
[[nodiscard]] inline std::vector<AccuracyMatrix> run_sequence(const TaskStream& stream,
                                                              const Strategy& strategy,
                                                              const NetOptions& net_options,
                                                              const std::vector<std::uint64_t>& seeds) {
    detail::check(!seeds.empty(), "run_sequence: at least one seed required");
    std::vector<AccuracyMatrix> matrices;
    matrices.reserve(seeds.size());
    RunOptions options;
    options.keep_nets = false;
    for (std::uint64_t seed : seeds) {
        matrices.push_back(run_single(stream, strategy, net_options, seed, options).matrix);
    }
    return matrices;
}

}  // namespace anchor

#endif  // ANCHOR_TRAINER_HPP
