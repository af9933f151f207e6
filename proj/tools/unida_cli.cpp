// Command-line front end: gen-data, train, source-only, eval, ablate.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <Eigen/Core>

#include "unida/unida.hpp"

namespace {

struct CommonOptions {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out;
    bool single_thread = false;
};

void add_common(CLI::App* cmd, CommonOptions& opts) {
    cmd->add_option("--config", opts.config_path, "Experiment config (JSON); defaults when omitted")->check(CLI::ExistingFile);
    cmd->add_option("--seed", opts.seed, "Override the config seed");
    cmd->add_option("--out", opts.out, "Output directory");
    cmd->add_flag("--single-thread", opts.single_thread, "Bit-exact single-threaded mode");
}

unida::ExperimentConfig load(const CommonOptions& opts) {
    unida::ExperimentConfig cfg = opts.config_path.empty() ? unida::ExperimentConfig{}
                                                           : unida::load_experiment_config(opts.config_path);
    if (opts.seed) cfg.seed = *opts.seed;
    if (opts.single_thread) Eigen::setNbThreads(1);
    for (const auto& w : cfg.warnings) std::cerr << "warning: " << w << '\n';
    cfg.validate();
    return cfg;
}

void print_report(const std::string& name, const unida::MetricsReport& r) {
    std::cout << name << ": ACC " << r.acc << "  AUROC " << r.auroc << "  (known " << r.known_correct << '/'
              << r.known_total << ", unknown " << r.unknown_total << ")\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Universal domain adaptation lab"};
    app.require_subcommand(1);

    CommonOptions gen_opts, train_opts, src_opts, eval_opts, ablate_opts;
    std::string checkpoint_dir;

    auto* gen = app.add_subcommand("gen-data", "Generate the synthetic dataset and write it to disk");
    add_common(gen, gen_opts);
    auto* train = app.add_subcommand("train", "Full two-stage adapted training run");
    add_common(train, train_opts);
    auto* src = app.add_subcommand("source-only", "Source-only baseline");
    add_common(src, src_opts);
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the target test split");
    add_common(eval, eval_opts);
    eval->add_option("--checkpoint", checkpoint_dir, "Checkpoint directory")->required()->check(CLI::ExistingDirectory);
    auto* ablate = app.add_subcommand("ablate", "Cumulative ablation ladder over the configured seeds");
    add_common(ablate, ablate_opts);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) {
            auto cfg = load(gen_opts);
            unida::DatasetSpec spec = cfg.dataset;
            spec.seed = cfg.seed;
            const std::filesystem::path dir = gen_opts.out.empty() ? cfg.run_dir() / "data" : std::filesystem::path(gen_opts.out);
            const auto ds = unida::generate_dataset(spec);
            unida::save_dataset(dir, spec, ds);
            std::cout << "wrote " << ds.source.size() << " source, " << ds.target_train.size() << " target_train, "
                      << ds.target_test.size() << " target_test images to " << dir.string() << '\n';
        } else if (*train) {
            auto cfg = load(train_opts);
            if (!train_opts.out.empty()) cfg.output_dir = train_opts.out;
            const auto r = unida::run_experiment(cfg);
            if (r.source_report) print_report("source_only", *r.source_report);
            print_report("adapted", r.report);
            std::cout << "artifacts in " << r.dir.string() << '\n';
        } else if (*src) {
            auto cfg = load(src_opts);
            if (!src_opts.out.empty()) cfg.output_dir = src_opts.out;
            const auto r = unida::run_source_only(cfg);
            print_report("source_only", r.report);
            std::cout << "artifacts in " << r.dir.string() << '\n';
        } else if (*eval) {
            auto cfg = load(eval_opts);
            const auto ck = unida::load_checkpoint(checkpoint_dir);
            const auto ds = unida::experiment_dataset(cfg);
            const auto ev = unida::evaluate(ck.params, ds.target_test, cfg.eval_options());
            const std::filesystem::path dir = eval_opts.out.empty() ? cfg.run_dir() / "eval" : std::filesystem::path(eval_opts.out);
            unida::write_scores_csv(dir / "scores.csv", ev.predictions, ds.target_test);
            unida::open_for_write(dir / "metrics.json") << ev.report.to_json().dump(2) << '\n';
            print_report("eval", ev.report);
        } else if (*ablate) {
            auto cfg = load(ablate_opts);
            if (!ablate_opts.out.empty()) cfg.output_dir = ablate_opts.out;
            const auto rungs = unida::run_ablation(cfg);
            std::cout << unida::ablation_csv_header() << '\n';
            for (const auto& r : rungs)
                std::cout << r.name << ',' << unida::RungResult::mean(r.acc) << ',' << unida::RungResult::stddev(r.acc)
                          << ',' << unida::RungResult::mean(r.auroc) << ',' << unida::RungResult::stddev(r.auroc) << ','
                          << r.seeds.size() << '\n';
        }
    } catch (const unida::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const unida::TrainingDiverged& e) {
        std::cerr << "training diverged: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
