#ifndef ANCHOR_EXPERIMENT_HPP
#define ANCHOR_EXPERIMENT_HPP

#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <limits>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "anchor/format.hpp"
#include "anchor/importance.hpp"
#include "anchor/metrics.hpp"
#include "anchor/regularizer.hpp"
#include "anchor/tasks.hpp"
#include "anchor/trainer.hpp"

namespace anchor {

using ordered_json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Configuration.
// ---------------------------------------------------------------------------

struct TaskSourceConfig {
    std::string kind = "blobs";  // blobs | idx | csv
    // blobs
    std::size_t num_tasks = 5;
    std::size_t classes_per_task = 2;
    std::size_t dim = 20;
    std::size_t samples_per_class = 100;
    double spread = 3.0;
    // idx / csv
    std::string images;
    std::string labels;
    std::string path;
    // shared
    std::uint64_t seed = 9001;
    double test_fraction = 0.2;
};

struct GridConfig {
    std::vector<double> etas;
    std::vector<double> lambdas;
};

struct ExperimentConfig {
    std::string name = "experiment";
    TaskSourceConfig tasks;
    NetOptions net;
    Strategy strategy;
    std::vector<std::uint64_t> seeds{1, 2, 3};
    GridConfig grid;
    std::size_t search_tasks = 0;  // 0 disables the hyperparameter search
};

// The desk-scale default: five 2-class Gaussian-blob tasks that plain
// fine-tuning measurably forgets within seconds of runtime.
[[nodiscard]] inline ExperimentConfig default_benchmark_config() {
    ExperimentConfig cfg;
    cfg.name = "blobs5";
    cfg.strategy.mode = Mode::plain;
    cfg.strategy.estimator = Estimator::vanilla;
    cfg.strategy.eta = 0.1;
    cfg.strategy.momentum = 0.9;
    cfg.strategy.batch_size = 10;
    return cfg;
}

[[nodiscard]] inline ordered_json config_to_json(const ExperimentConfig& cfg) {
    ordered_json j;
    j["name"] = cfg.name;
    ordered_json t;
    t["kind"] = cfg.tasks.kind;
    if (cfg.tasks.kind == "blobs") {
        t["num_tasks"] = cfg.tasks.num_tasks;
        t["classes_per_task"] = cfg.tasks.classes_per_task;
        t["dim"] = cfg.tasks.dim;
        t["samples_per_class"] = cfg.tasks.samples_per_class;
        t["spread"] = cfg.tasks.spread;
    } else if (cfg.tasks.kind == "idx") {
        t["images"] = cfg.tasks.images;
        t["labels"] = cfg.tasks.labels;
        t["classes_per_task"] = cfg.tasks.classes_per_task;
    } else {
        t["path"] = cfg.tasks.path;
        t["classes_per_task"] = cfg.tasks.classes_per_task;
    }
    t["seed"] = cfg.tasks.seed;
    t["test_fraction"] = cfg.tasks.test_fraction;
    j["tasks"] = t;
    j["net"] = ordered_json{{"hidden", cfg.net.hidden}};
    ordered_json s;
    s["mode"] = to_string(cfg.strategy.mode);
    s["estimator"] = to_string(cfg.strategy.estimator);
    s["eta"] = cfg.strategy.eta;
    s["lambda"] = cfg.strategy.lambda;
    s["momentum"] = cfg.strategy.momentum;
    s["si_xi"] = cfg.strategy.si_xi;
    s["batch_size"] = cfg.strategy.batch_size;
    ordered_json transforms = ordered_json::array();
    for (const auto& tr : cfg.strategy.transforms) {
        if (tr.kind == TransformSpec::Kind::abs) {
            transforms.push_back(ordered_json{{"kind", "abs"}});
        } else {
            transforms.push_back(ordered_json{{"kind", "keep_negative_fraction"}, {"frac", tr.frac}});
        }
    }
    s["transforms"] = transforms;
    s["augmentation"] = ordered_json{{"kind", to_string(cfg.strategy.augmentation.kind)},
                                     {"sigma", cfg.strategy.augmentation.sigma}};
    j["strategy"] = s;
    j["seeds"] = cfg.seeds;
    j["grid"] = ordered_json{{"etas", cfg.grid.etas}, {"lambdas", cfg.grid.lambdas}};
    j["search_tasks"] = cfg.search_tasks;
    return j;
}

[[nodiscard]] inline ExperimentConfig config_from_json(const ordered_json& j) {
    ExperimentConfig cfg = default_benchmark_config();
    cfg.name = j.value("name", cfg.name);
    if (j.contains("tasks")) {
        const auto& t = j.at("tasks");
        cfg.tasks.kind = t.value("kind", cfg.tasks.kind);
        cfg.tasks.num_tasks = t.value("num_tasks", cfg.tasks.num_tasks);
        cfg.tasks.classes_per_task = t.value("classes_per_task", cfg.tasks.classes_per_task);
        cfg.tasks.dim = t.value("dim", cfg.tasks.dim);
        cfg.tasks.samples_per_class = t.value("samples_per_class", cfg.tasks.samples_per_class);
        cfg.tasks.spread = t.value("spread", cfg.tasks.spread);
        cfg.tasks.images = t.value("images", cfg.tasks.images);
        cfg.tasks.labels = t.value("labels", cfg.tasks.labels);
        cfg.tasks.path = t.value("path", cfg.tasks.path);
        cfg.tasks.seed = t.value("seed", cfg.tasks.seed);
        cfg.tasks.test_fraction = t.value("test_fraction", cfg.tasks.test_fraction);
    }
    if (j.contains("net")) {
        cfg.net.hidden = j.at("net").value("hidden", cfg.net.hidden);
    }
    if (j.contains("strategy")) {
        const auto& s = j.at("strategy");
        cfg.strategy.mode = mode_from_string(s.value("mode", to_string(cfg.strategy.mode)));
        cfg.strategy.estimator = estimator_from_string(s.value("estimator", to_string(cfg.strategy.estimator)));
        cfg.strategy.eta = s.value("eta", cfg.strategy.eta);
        cfg.strategy.lambda = s.value("lambda", cfg.strategy.lambda);
        cfg.strategy.momentum = s.value("momentum", cfg.strategy.momentum);
        cfg.strategy.si_xi = s.value("si_xi", cfg.strategy.si_xi);
        cfg.strategy.batch_size = s.value("batch_size", cfg.strategy.batch_size);
        if (s.contains("transforms")) {
            cfg.strategy.transforms.clear();
            for (const auto& tr : s.at("transforms")) {
                const std::string kind = tr.at("kind").get<std::string>();
                if (kind == "abs") {
                    cfg.strategy.transforms.push_back({TransformSpec::Kind::abs, 0.0});
                } else if (kind == "keep_negative_fraction") {
                    cfg.strategy.transforms.push_back(
                        {TransformSpec::Kind::keep_negative_fraction, tr.at("frac").get<double>()});
                } else {
                    throw std::invalid_argument("unknown transform kind: " + kind);
                }
            }
        }
        if (s.contains("augmentation")) {
            const auto& a = s.at("augmentation");
            cfg.strategy.augmentation.kind =
                augmentation_from_string(a.value("kind", to_string(cfg.strategy.augmentation.kind)));
            cfg.strategy.augmentation.sigma = a.value("sigma", cfg.strategy.augmentation.sigma);
        }
    }
    if (j.contains("seeds")) cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (j.contains("grid")) {
        cfg.grid.etas = j.at("grid").value("etas", cfg.grid.etas);
        cfg.grid.lambdas = j.at("grid").value("lambdas", cfg.grid.lambdas);
    }
    cfg.search_tasks = j.value("search_tasks", cfg.search_tasks);
    return cfg;
}

[[nodiscard]] inline ExperimentConfig load_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path.string());
    ordered_json j;
    in >> j;
    return config_from_json(j);
}

[[nodiscard]] inline TaskStream build_stream(const TaskSourceConfig& src) {
    if (src.kind == "blobs") {
        return synth_blobs(src.num_tasks, src.classes_per_task, src.dim, src.samples_per_class, src.spread,
                           src.seed, src.test_fraction);
    }
    if (src.kind == "idx") {
        return split_by_class(load_idx(src.images, src.labels), src.classes_per_task, src.seed,
                              src.test_fraction);
    }
    if (src.kind == "csv") {
        return split_by_class(load_csv(src.path), src.classes_per_task, src.seed, src.test_fraction);
    }
    throw std::invalid_argument("unknown task source kind: " + src.kind);
}

// ---------------------------------------------------------------------------
// Small infrastructure: parallel workers and file writers.
// ---------------------------------------------------------------------------

namespace detail {

// Runs fn(0..n-1) on independent worker threads. Each index touches only its
// own output slot, so scheduling cannot change any result.
template <typename Fn>
inline void parallel_for(std::size_t n, Fn&& fn) {
    const std::size_t hw = std::max<std::size_t>(1, std::thread::hardware_concurrency());
    const std::size_t workers = std::min(hw, n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

inline void write_json_file(const std::filesystem::path& path, const ordered_json& j) {
    write_text_file(path, j.dump(2) + "\n");
}

}  // namespace detail

inline void write_scores_csv(std::ostream& out, const ParamVector& scores, const LayerMap& map) {
    out << "param_index,layer_id,score\n";
    for (std::size_t k = 0; k < scores.size(); ++k) {
        out << k << "," << map.layer_of(k) << "," << fmt_g17(scores[k]) << "\n";
    }
}

[[nodiscard]] inline ordered_json layer_means_json(const ParamVector& scores, const LayerMap& map) {
    const std::vector<double> means = layer_mean_importance(scores, map);
    ordered_json layers = ordered_json::array();
    for (std::size_t l = 0; l < means.size(); ++l) {
        layers.push_back(ordered_json{{"layer_id", l}, {"mean_abs_score", means[l]}});
    }
    return ordered_json{{"layer_means", layers}};
}

[[nodiscard]] inline ordered_json stability_json(const StabilityReport& report) {
    ordered_json j;
    j["lambda"] = report.lambda;
    j["eta"] = report.eta;
    j["violations"] = report.violations;
    j["fraction"] = report.fraction;
    j["stable"] = report.stable;
    if (report.first_nonfinite_step >= 0) {
        j["first_nonfinite_step"] = report.first_nonfinite_step;
    } else {
        j["first_nonfinite_step"] = nullptr;
    }
    return j;
}

[[nodiscard]] inline ordered_json stream_manifest_json(const TaskStream& stream) {
    ordered_json tasks = ordered_json::array();
    for (const auto& task : stream.tasks) {
        ordered_json t;
        t["id"] = task.id;
        t["classes"] = task.classes;
        t["train_count"] = task.train_x.rows();
        t["test_count"] = task.test_x.rows();
        t["dim"] = task.train_x.cols();
        if (task.image_shape.has_value()) {
            t["image_shape"] = ordered_json{{"height", task.image_shape->height},
                                            {"width", task.image_shape->width}};
        }
        tasks.push_back(t);
    }
    char hash[32];
    std::snprintf(hash, sizeof(hash), "%016llx",
                  static_cast<unsigned long long>(stream_content_hash(stream)));
    return ordered_json{{"seed", stream.seed}, {"content_hash", hash}, {"tasks", tasks}};
}

// Fixed seeded probe sample from the first task's test split, used for
// representation-similarity profiles.
[[nodiscard]] inline Tensor probe_batch(const TaskStream& stream, std::size_t max_rows = 256) {
    detail::check(!stream.tasks.empty(), "probe_batch: empty stream");
    const Tensor& test = stream.tasks.front().test_x;
    detail::check(test.rows() > 0, "probe_batch: first task has no test samples");
    std::vector<std::size_t> rows(test.rows());
    std::iota(rows.begin(), rows.end(), 0);
    Rng rng(mix_seed(stream.seed, 0xCE));
    rng.shuffle(rows);
    rows.resize(std::min(max_rows, rows.size()));
    return detail::gather_rows(test, rows);
}

// ---------------------------------------------------------------------------
// Experiment runner.
// ---------------------------------------------------------------------------

struct GridPointResult {
    double eta = 0.0;
    double lambda = 0.0;
    bool rejected = false;   // failed the violation filter
    bool unstable = false;   // diverged during search training
    std::size_t max_violations = 0;
    double mean_accuracy = std::numeric_limits<double>::quiet_NaN();
};

struct GridOutcome {
    std::vector<GridPointResult> points;
    std::optional<std::size_t> selected;
};

// Evaluates every (eta, lambda) candidate on the leading `search_tasks`
// tasks, across all seeds. Points with any stability violation or divergence
// are rejected; the winner maximizes mean average accuracy, with ties broken
// toward the smaller lambda, then the smaller eta.
[[nodiscard]] inline GridOutcome grid_search(const ExperimentConfig& cfg, const TaskStream& stream) {
    detail::check(cfg.search_tasks > 0 && cfg.search_tasks < stream.tasks.size(),
                  "grid_search: search_tasks must be positive and smaller than the task count");
    std::vector<double> etas = cfg.grid.etas.empty() ? std::vector<double>{cfg.strategy.eta} : cfg.grid.etas;
    std::vector<double> lambdas = cfg.strategy.mode == Mode::quadratic
                                      ? (cfg.grid.lambdas.empty() ? std::vector<double>{cfg.strategy.lambda}
                                                                  : cfg.grid.lambdas)
                                      : std::vector<double>{cfg.strategy.lambda};

    GridOutcome outcome;
    for (double eta : etas) {
        for (double lambda : lambdas) {
            GridPointResult p;
            p.eta = eta;
            p.lambda = lambda;
            outcome.points.push_back(p);
        }
    }

    const std::size_t n_seeds = cfg.seeds.size();
    std::vector<SeedRunResult> runs(outcome.points.size() * n_seeds);
    detail::parallel_for(runs.size(), [&](std::size_t i) {
        const GridPointResult& p = outcome.points[i / n_seeds];
        Strategy s = cfg.strategy;
        s.eta = p.eta;
        s.lambda = p.lambda;
        RunOptions options;
        options.max_tasks = cfg.search_tasks;
        options.stop_on_violation = true;
        options.keep_nets = false;
        runs[i] = run_single(stream, s, cfg.net, cfg.seeds[i % n_seeds], options);
    });

    for (std::size_t pi = 0; pi < outcome.points.size(); ++pi) {
        GridPointResult& p = outcome.points[pi];
        double acc_sum = 0.0;
        std::size_t acc_n = 0;
        for (std::size_t si = 0; si < n_seeds; ++si) {
            const SeedRunResult& r = runs[pi * n_seeds + si];
            p.max_violations = std::max(p.max_violations, r.stability.violations);
            if (r.rejected_for_violations) p.rejected = true;
            if (!r.stability.stable) p.unstable = true;
            if (r.completed) {
                acc_sum += average_accuracy(r.matrix);
                acc_n += 1;
            }
        }
        if (acc_n == n_seeds) p.mean_accuracy = acc_sum / static_cast<double>(acc_n);
    }

    for (std::size_t pi = 0; pi < outcome.points.size(); ++pi) {
        const GridPointResult& p = outcome.points[pi];
        if (p.rejected || p.unstable || std::isnan(p.mean_accuracy)) continue;
        if (!outcome.selected.has_value()) {
            outcome.selected = pi;
            continue;
        }
        const GridPointResult& best = outcome.points[*outcome.selected];
        const bool better = p.mean_accuracy > best.mean_accuracy ||
                            (p.mean_accuracy == best.mean_accuracy &&
                             (p.lambda < best.lambda ||
                              (p.lambda == best.lambda && p.eta < best.eta)));
        if (better) outcome.selected = pi;
    }
    return outcome;
}

struct ExperimentResult {
    int exit_code = 0;
    std::filesystem::path run_dir;
    Strategy strategy;  // after hyperparameter selection
    std::vector<SeedRunResult> runs;
    double mean_accuracy = std::numeric_limits<double>::quiet_NaN();
    double mean_forgetting = std::numeric_limits<double>::quiet_NaN();
};

[[nodiscard]] inline ordered_json metrics_json(const SeedRunResult& run, const TaskStream& stream) {
    ordered_json j;
    j["average_accuracy"] = average_accuracy(run.matrix);
    j["average_forgetting"] = average_forgetting(run.matrix);
    j["per_task_forgetting"] = per_task_forgetting(run.matrix);
    if (run.net_after_first.has_value() && run.net_final.has_value() &&
        run.net_final->trunk_depth() > 0) {
        j["cka_profile"] = cka_profile(*run.net_after_first, *run.net_final, probe_batch(stream));
    } else {
        j["cka_profile"] = nullptr;
    }
    return j;
}

// Runs the full experiment protocol into `run_dir`: optional grid search on
// the leading tasks, then one full run per seed, with per-seed artifacts
// (accuracy matrix, metrics, importance dumps, stability report) and a mean
// summary. Returns exit code 2 when any run is unstable or every grid point
// is rejected.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& run_dir) {
    detail::check(!cfg.seeds.empty(), "run_experiment: at least one seed required");
    cfg.strategy.validate();
    detail::check(cfg.tasks.test_fraction > 0.0, "run_experiment: test_fraction must be positive");
    const TaskStream stream = build_stream(cfg.tasks);
    detail::check(cfg.search_tasks < stream.tasks.size(),
                  "run_experiment: search_tasks must be smaller than the task count");

    std::filesystem::create_directories(run_dir);
    detail::write_json_file(run_dir / "config.json", config_to_json(cfg));
    detail::write_json_file(run_dir / "stream_manifest.json", stream_manifest_json(stream));

    ExperimentResult result;
    result.run_dir = run_dir;
    result.strategy = cfg.strategy;

    if (cfg.search_tasks > 0) {
        detail::check(!cfg.grid.etas.empty() || !cfg.grid.lambdas.empty(),
                      "run_experiment: grid must be non-empty when search_tasks > 0");
        const GridOutcome outcome = grid_search(cfg, stream);
        ordered_json points = ordered_json::array();
        for (const auto& p : outcome.points) {
            ordered_json pj;
            pj["eta"] = p.eta;
            pj["lambda"] = p.lambda;
            pj["rejected"] = p.rejected;
            pj["unstable"] = p.unstable;
            pj["violations"] = p.max_violations;
            pj["mean_accuracy"] = p.mean_accuracy;
            points.push_back(pj);
        }
        ordered_json selection;
        selection["search_tasks"] = cfg.search_tasks;
        selection["points"] = points;
        if (outcome.selected.has_value()) {
            const auto& best = outcome.points[*outcome.selected];
            selection["selected"] = ordered_json{{"eta", best.eta}, {"lambda", best.lambda}};
            result.strategy.eta = best.eta;
            result.strategy.lambda = best.lambda;
        } else {
            selection["selected"] = nullptr;
        }
        detail::write_json_file(run_dir / "selection.json", selection);
        if (!outcome.selected.has_value()) {
            result.exit_code = 2;
            return result;
        }
    }

    result.runs.resize(cfg.seeds.size());
    detail::parallel_for(cfg.seeds.size(), [&](std::size_t i) {
        result.runs[i] = run_single(stream, result.strategy, cfg.net, cfg.seeds[i]);
    });

    double acc_sum = 0.0;
    double forg_sum = 0.0;
    std::size_t completed = 0;
    ordered_json per_seed = ordered_json::array();
    for (std::size_t i = 0; i < result.runs.size(); ++i) {
        const SeedRunResult& run = result.runs[i];
        const std::filesystem::path seed_dir = run_dir / ("seed_" + std::to_string(cfg.seeds[i]));
        std::filesystem::create_directories(seed_dir);

        std::ostringstream matrix_csv;
        write_accuracy_csv(matrix_csv, run.matrix);
        detail::write_text_file(seed_dir / "accuracy_matrix.csv", matrix_csv.str());

        std::ostringstream scores_csv;
        write_scores_csv(scores_csv, run.alpha_final, run.layer_map);
        detail::write_text_file(seed_dir / "importance_scores.csv", scores_csv.str());
        detail::write_json_file(seed_dir / "importance_layers.json",
                                layer_means_json(run.alpha_final, run.layer_map));
        detail::write_json_file(seed_dir / "stability.json", stability_json(run.stability));

        ordered_json seed_summary;
        seed_summary["seed"] = cfg.seeds[i];
        seed_summary["stable"] = run.stability.stable;
        if (run.matrix.stages() > 0) {
            const ordered_json m = metrics_json(run, stream);
            detail::write_json_file(seed_dir / "metrics.json", m);
            seed_summary["average_accuracy"] = m["average_accuracy"];
            seed_summary["average_forgetting"] = m["average_forgetting"];
        }
        per_seed.push_back(seed_summary);

        if (run.completed) {
            acc_sum += average_accuracy(run.matrix);
            forg_sum += average_forgetting(run.matrix);
            completed += 1;
        } else {
            result.exit_code = 2;
        }
    }

    ordered_json mean;
    mean["strategy"] = ordered_json{{"mode", to_string(result.strategy.mode)},
                                    {"estimator", to_string(result.strategy.estimator)},
                                    {"eta", result.strategy.eta},
                                    {"lambda", result.strategy.lambda}};
    mean["completed_seeds"] = completed;
    if (completed > 0) {
        result.mean_accuracy = acc_sum / static_cast<double>(completed);
        result.mean_forgetting = forg_sum / static_cast<double>(completed);
        mean["average_accuracy"] = result.mean_accuracy;
        mean["average_forgetting"] = result.mean_forgetting;
    } else {
        mean["average_accuracy"] = nullptr;
        mean["average_forgetting"] = nullptr;
    }
    mean["per_seed"] = per_seed;
    detail::write_json_file(run_dir / "metrics_mean.json", mean);
    return result;
}

// ---------------------------------------------------------------------------
// Diagnostics.
// ---------------------------------------------------------------------------

// Case-2 sweep: how many parameters violate eta*lambda*|alpha| < 1 for each
// candidate lambda, and whether full quadratic training at that lambda stays
// stable. Alpha comes from training the first task with the configured
// estimator.
inline ordered_json diagnose_violations(const ExperimentConfig& cfg, const std::vector<double>& lambdas,
                                        const std::filesystem::path& out_dir) {
    detail::check(!lambdas.empty(), "diagnose violations: no lambda candidates");
    const TaskStream stream = build_stream(cfg.tasks);
    const std::uint64_t seed = cfg.seeds.front();

    RunOptions first_only;
    first_only.max_tasks = 1;
    first_only.keep_nets = false;
    Strategy base = cfg.strategy;
    base.mode = Mode::quadratic;
    const SeedRunResult first = run_single(stream, base, cfg.net, seed, first_only);
    // The anchor the second task would see: consolidated then transformed.
    const ParamVector alpha = apply_transforms(first.alpha_final, cfg.strategy.transforms,
                                               mix_seed(seed, 1, 0x12));

    std::vector<SeedRunResult> full(lambdas.size());
    detail::parallel_for(lambdas.size(), [&](std::size_t i) {
        Strategy s = base;
        s.lambda = lambdas[i];
        RunOptions options;
        options.keep_nets = false;
        full[i] = run_single(stream, s, cfg.net, seed, options);
    });

    std::ostringstream csv;
    csv << "lambda,count,fraction,stable\n";
    ordered_json rows = ordered_json::array();
    for (std::size_t i = 0; i < lambdas.size(); ++i) {
        const ViolationCount v = count_violations(base.eta, lambdas[i], alpha);
        const bool stable = full[i].stability.stable;
        csv << fmt_g17(lambdas[i]) << "," << v.count << "," << fmt_g17(v.fraction) << ","
            << (stable ? "true" : "false") << "\n";
        ordered_json row;
        row["lambda"] = lambdas[i];
        row["count"] = v.count;
        row["fraction"] = v.fraction;
        row["percent"] = fmt_percent(v.fraction);
        row["stable"] = stable;
        rows.push_back(row);
    }

    ordered_json report;
    report["eta"] = base.eta;
    report["estimator"] = to_string(base.estimator);
    const double bound = lambda_upper(base.eta, alpha);
    if (std::isinf(bound)) {
        report["lambda_upper"] = "unbounded";
    } else {
        report["lambda_upper"] = bound;
    }
    report["rows"] = rows;

    std::filesystem::create_directories(out_dir);
    detail::write_text_file(out_dir / "violations.csv", csv.str());
    detail::write_json_file(out_dir / "violations.json", report);
    return report;
}

// Case-3 view: per-layer mean |alpha| after training the first task with the
// configured estimator, plus the full per-parameter score dump.
inline ordered_json diagnose_layer_importance(const ExperimentConfig& cfg,
                                              const std::filesystem::path& out_dir) {
    const TaskStream stream = build_stream(cfg.tasks);
    RunOptions first_only;
    first_only.max_tasks = 1;
    first_only.keep_nets = false;
    const SeedRunResult first = run_single(stream, cfg.strategy, cfg.net, cfg.seeds.front(), first_only);

    const std::vector<double> means = layer_mean_importance(first.last_task_scores, first.layer_map);
    std::ostringstream csv;
    csv << "layer_id,mean_abs_score\n";
    for (std::size_t l = 0; l < means.size(); ++l) {
        csv << l << "," << fmt_g17(means[l]) << "\n";
    }

    std::filesystem::create_directories(out_dir);
    detail::write_text_file(out_dir / "layer_importance.csv", csv.str());
    std::ostringstream scores_csv;
    write_scores_csv(scores_csv, first.last_task_scores, first.layer_map);
    detail::write_text_file(out_dir / "importance_scores.csv", scores_csv.str());

    ordered_json report = layer_means_json(first.last_task_scores, first.layer_map);
    report["estimator"] = to_string(cfg.strategy.estimator);
    detail::write_json_file(out_dir / "layer_importance.json", report);
    return report;
}

// Per-layer CKA between the model after the first task and the model after
// the whole sequence, on a fixed probe batch from the first task.
inline ordered_json diagnose_cka(const ExperimentConfig& cfg, const std::filesystem::path& out_dir) {
    const TaskStream stream = build_stream(cfg.tasks);
    const SeedRunResult run = run_single(stream, cfg.strategy, cfg.net, cfg.seeds.front());

    ordered_json report;
    report["mode"] = to_string(cfg.strategy.mode);
    report["estimator"] = to_string(cfg.strategy.estimator);
    report["stable"] = run.stability.stable;
    std::ostringstream csv;
    csv << "layer_id,cka\n";
    if (run.completed && run.net_after_first.has_value()) {
        const std::vector<double> profile =
            cka_profile(*run.net_after_first, *run.net_final, probe_batch(stream));
        for (std::size_t l = 0; l < profile.size(); ++l) {
            csv << l << "," << fmt_g17(profile[l]) << "\n";
        }
        report["cka_profile"] = profile;
        report["average_accuracy"] = average_accuracy(run.matrix);
        report["average_forgetting"] = average_forgetting(run.matrix);
    } else {
        report["cka_profile"] = nullptr;
    }

    std::filesystem::create_directories(out_dir);
    detail::write_text_file(out_dir / "cka_profile.csv", csv.str());
    detail::write_json_file(out_dir / "cka_profile.json", report);
    return report;
}

// Case-1 grid: stability and accuracy of quadratic training across lambda for
// three score treatments: signs kept, all magnitudes, and a small seeded
// fraction of negative scores kept.
inline ordered_json diagnose_negative_scores(const ExperimentConfig& cfg, const std::vector<double>& lambdas,
                                             double frac, const std::filesystem::path& out_dir) {
    detail::check(!lambdas.empty(), "diagnose negative-scores: no lambda candidates");
    detail::check(frac >= 0.0 && frac <= 1.0, "diagnose negative-scores: frac out of range");
    const TaskStream stream = build_stream(cfg.tasks);
    const std::uint64_t seed = cfg.seeds.front();

    char frac_label[32];
    std::snprintf(frac_label, sizeof(frac_label), "%g%%-neg", frac * 100.0);
    const std::vector<std::pair<std::string, std::vector<TransformSpec>>> variants = {
        {"original", {}},
        {"all-pos", {{TransformSpec::Kind::abs, 0.0}}},
        {frac_label, {{TransformSpec::Kind::keep_negative_fraction, frac}}},
    };

    struct Cell {
        bool stable = false;
        bool completed = false;
        double accuracy = std::numeric_limits<double>::quiet_NaN();
    };
    std::vector<Cell> cells(variants.size() * lambdas.size());
    detail::parallel_for(cells.size(), [&](std::size_t i) {
        const std::size_t vi = i / lambdas.size();
        const std::size_t li = i % lambdas.size();
        Strategy s = cfg.strategy;
        s.mode = Mode::quadratic;
        s.lambda = lambdas[li];
        s.transforms = variants[vi].second;
        RunOptions options;
        options.keep_nets = false;
        const SeedRunResult run = run_single(stream, s, cfg.net, seed, options);
        cells[i].stable = run.stability.stable;
        cells[i].completed = run.completed;
        if (run.matrix.stages() > 0) cells[i].accuracy = average_accuracy(run.matrix);
    });

    std::ostringstream csv;
    csv << "variant,lambda,stable,average_accuracy\n";
    ordered_json rows = ordered_json::array();
    for (std::size_t vi = 0; vi < variants.size(); ++vi) {
        for (std::size_t li = 0; li < lambdas.size(); ++li) {
            const Cell& cell = cells[vi * lambdas.size() + li];
            csv << variants[vi].first << "," << fmt_g17(lambdas[li]) << ","
                << (cell.stable ? "true" : "false") << ",";
            if (cell.completed) csv << fmt_g17(cell.accuracy);
            csv << "\n";
            ordered_json row;
            row["variant"] = variants[vi].first;
            row["lambda"] = lambdas[li];
            row["stable"] = cell.stable;
            row["average_accuracy"] = cell.completed ? ordered_json(cell.accuracy) : ordered_json(nullptr);
            rows.push_back(row);
        }
    }

    ordered_json report;
    report["estimator"] = to_string(cfg.strategy.estimator);
    report["eta"] = cfg.strategy.eta;
    report["rows"] = rows;
    std::filesystem::create_directories(out_dir);
    detail::write_text_file(out_dir / "negative_scores.csv", csv.str());
    detail::write_json_file(out_dir / "negative_scores.json", report);
    return report;
}

}  // namespace anchor

#endif  // ANCHOR_EXPERIMENT_HPP
