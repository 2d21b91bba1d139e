// Experiment runner and diagnostics front-end.
//
// Exit codes: 0 success, 2 unstable run, 3 configuration error.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "anchor/anchor.hpp"

namespace {

struct StrategyFlags {
    std::optional<std::string> strategy;  // "mode" or "mode-estimator"
    std::optional<double> eta;
    std::optional<double> lambda;
    std::optional<double> momentum;
    std::optional<std::size_t> batch_size;
    std::optional<std::string> augment;
    std::optional<double> sigma;
    std::optional<std::string> estimator;
};

void add_strategy_flags(CLI::App* cmd, StrategyFlags& flags) {
    cmd->add_option("--strategy", flags.strategy,
                    "Strategy as mode or mode-estimator, e.g. plain, quadratic-mas, emr-vanilla");
    cmd->add_option("--eta", flags.eta, "Learning rate");
    cmd->add_option("--lambda", flags.lambda, "Regularization constant (quadratic mode)");
    cmd->add_option("--momentum", flags.momentum, "SGD momentum in [0, 1)");
    cmd->add_option("--batch-size", flags.batch_size, "Batch size");
    cmd->add_option("--augment", flags.augment, "Online augmentation: none, flip, noise");
    cmd->add_option("--sigma", flags.sigma, "Noise augmentation sigma");
    cmd->add_option("--estimator", flags.estimator, "Importance estimator: ewc, mas, si, rwalk, vanilla, random");
}

// CLI flags override values from the config file.
void apply_strategy_flags(anchor::ExperimentConfig& cfg, const StrategyFlags& flags) {
    if (flags.strategy.has_value()) {
        const std::string& s = *flags.strategy;
        const auto dash = s.find('-');
        cfg.strategy.mode = anchor::mode_from_string(s.substr(0, dash));
        if (dash != std::string::npos) {
            cfg.strategy.estimator = anchor::estimator_from_string(s.substr(dash + 1));
        }
    }
    if (flags.estimator.has_value()) cfg.strategy.estimator = anchor::estimator_from_string(*flags.estimator);
    if (flags.eta.has_value()) cfg.strategy.eta = *flags.eta;
    if (flags.lambda.has_value()) cfg.strategy.lambda = *flags.lambda;
    if (flags.momentum.has_value()) cfg.strategy.momentum = *flags.momentum;
    if (flags.batch_size.has_value()) cfg.strategy.batch_size = *flags.batch_size;
    if (flags.augment.has_value()) cfg.strategy.augmentation.kind = anchor::augmentation_from_string(*flags.augment);
    if (flags.sigma.has_value()) cfg.strategy.augmentation.sigma = *flags.sigma;
}

anchor::ExperimentConfig load_or_default(const std::string& config_path) {
    if (config_path.empty()) return anchor::default_benchmark_config();
    return anchor::load_config_file(config_path);
}

std::filesystem::path resolve_out_dir(const std::string& out, const std::string& name) {
    if (!out.empty()) return out;
    const char* root = std::getenv("ANCHOR_RUN_ROOT");
    return std::filesystem::path(root != nullptr ? root : "runs") / name;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"anchor: continual-learning experiments with quadratic and explicit movement regularization"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;

    // --- run ---
    auto* run = app.add_subcommand("run", "Train a task sequence and write metrics");
    std::string run_name;
    std::vector<std::uint64_t> seeds;
    std::vector<double> grid_etas;
    std::vector<double> grid_lambdas;
    std::optional<std::size_t> search_tasks;
    StrategyFlags run_flags;
    run->add_option("--config", config_path, "Experiment config JSON");
    run->add_option("--out", out_dir, "Output directory (default: $ANCHOR_RUN_ROOT/<name>)");
    run->add_option("--name", run_name, "Run name");
    run->add_option("--seeds", seeds, "Run seeds")->delimiter(',');
    run->add_option("--etas", grid_etas, "Grid-search learning rates")->delimiter(',');
    run->add_option("--lambdas", grid_lambdas, "Grid-search regularization constants")->delimiter(',');
    run->add_option("--search-tasks", search_tasks, "Leading tasks reserved for the grid search");
    add_strategy_flags(run, run_flags);

    // --- diagnose ---
    auto* diagnose = app.add_subcommand("diagnose", "Stability and importance diagnostics");
    diagnose->require_subcommand(1);

    std::vector<double> sweep_lambdas;
    double neg_frac = 0.001;
    StrategyFlags diag_flags;

    auto* violations = diagnose->add_subcommand("violations", "Sweep lambda and count stability violations");
    violations->add_option("--config", config_path, "Experiment config JSON");
    violations->add_option("--out", out_dir, "Output directory");
    violations->add_option("--lambdas", sweep_lambdas, "Lambda candidates")->delimiter(',')->required();
    add_strategy_flags(violations, diag_flags);

    auto* layer_imp = diagnose->add_subcommand("layer-importance", "Per-layer mean importance after the first task");
    layer_imp->add_option("--config", config_path, "Experiment config JSON");
    layer_imp->add_option("--out", out_dir, "Output directory");
    add_strategy_flags(layer_imp, diag_flags);

    auto* cka_cmd = diagnose->add_subcommand("cka", "Per-layer representation similarity: first-task model vs final model");
    cka_cmd->add_option("--config", config_path, "Experiment config JSON");
    cka_cmd->add_option("--out", out_dir, "Output directory");
    add_strategy_flags(cka_cmd, diag_flags);

    auto* neg = diagnose->add_subcommand("negative-scores", "Stability grid for original / all-positive / fraction-negative scores");
    neg->add_option("--config", config_path, "Experiment config JSON");
    neg->add_option("--out", out_dir, "Output directory");
    neg->add_option("--lambdas", sweep_lambdas, "Lambda candidates")->delimiter(',')->required();
    neg->add_option("--frac", neg_frac, "Fraction of parameters allowed to keep negative scores");
    add_strategy_flags(neg, diag_flags);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 3;
    }

    try {
        if (run->parsed()) {
            anchor::ExperimentConfig cfg = load_or_default(config_path);
            if (!run_name.empty()) cfg.name = run_name;
            if (!seeds.empty()) cfg.seeds = seeds;
            if (!grid_etas.empty()) cfg.grid.etas = grid_etas;
            if (!grid_lambdas.empty()) cfg.grid.lambdas = grid_lambdas;
            if (search_tasks.has_value()) cfg.search_tasks = *search_tasks;
            apply_strategy_flags(cfg, run_flags);

            const auto dir = resolve_out_dir(out_dir, cfg.name);
            const anchor::ExperimentResult result = anchor::run_experiment(cfg, dir);
            std::cout << "run dir: " << result.run_dir.string() << "\n";
            if (result.exit_code == 0) {
                std::cout << "average accuracy:   " << anchor::fmt_fixed(result.mean_accuracy * 100.0, 2)
                          << "%\n"
                          << "average forgetting: " << anchor::fmt_fixed(result.mean_forgetting * 100.0, 2)
                          << "%\n";
            } else {
                std::cout << "unstable run; see stability reports under the run directory\n";
            }
            return result.exit_code;
        }

        anchor::ExperimentConfig cfg = load_or_default(config_path);
        apply_strategy_flags(cfg, diag_flags);
        if (violations->parsed()) {
            const auto dir = resolve_out_dir(out_dir, "violations");
            const auto report = anchor::diagnose_violations(cfg, sweep_lambdas, dir);
            std::cout << report.dump(2) << "\n";
            return 0;
        }
        if (layer_imp->parsed()) {
            const auto dir = resolve_out_dir(out_dir, "layer-importance");
            const auto report = anchor::diagnose_layer_importance(cfg, dir);
            std::cout << report.dump(2) << "\n";
            return 0;
        }
        if (cka_cmd->parsed()) {
            const auto dir = resolve_out_dir(out_dir, "cka");
            const auto report = anchor::diagnose_cka(cfg, dir);
            std::cout << report.dump(2) << "\n";
            return 0;
        }
        if (neg->parsed()) {
            const auto dir = resolve_out_dir(out_dir, "negative-scores");
            const auto report = anchor::diagnose_negative_scores(cfg, sweep_lambdas, neg_frac, dir);
            std::cout << report.dump(2) << "\n";
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 3;
}
