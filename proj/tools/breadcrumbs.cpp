// Command-line front end for the long-tailed feature back-tracking lab.
// Verbs: generate | run | verify | report. Exit codes: 0 success,
// 1 config error, 2 runtime error, 3 verification failures present.

#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "breadcrumbs/experiment.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::vector<uint64_t> seeds;
    std::string strategy = "all";
    uint32_t n_b = 0;
    bool n_b_set = false;
    std::string out_dir;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "Experiment config file (JSON)")
        ->required();
    cmd->add_option("--seed", args.seeds, "Override the config's seed list (repeatable)");
    cmd->add_option("--strategy", args.strategy,
                    "Restrict to one sampling strategy (default: all from config)");
    cmd->add_option("--n-b", args.n_b, "Override the per-class target count n_B")
        ->each([&args](const std::string&) { args.n_b_set = true; });
    cmd->add_option("--out", args.out_dir, "Override the config's output directory");
}

breadcrumbs::ExperimentConfig load_config(const CommonArgs& args) {
    auto cfg = breadcrumbs::ExperimentConfig::from_file(args.config_path);
    if (!args.seeds.empty()) cfg.seeds = args.seeds;
    if (args.strategy != "all")
        cfg.strategies = {breadcrumbs::strategy_from_name(args.strategy)};
    if (args.n_b_set) cfg.n_b = args.n_b;
    if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
    return cfg;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Long-tailed recognition lab: feature back-tracking and breadcrumb sampling"};
    app.require_subcommand(1);

    CommonArgs gen_args, run_args, verify_args, report_args;
    bool csv_export = false;

    CLI::App* cmd_generate =
        app.add_subcommand("generate", "Generate the synthetic dataset files");
    add_common(cmd_generate, gen_args);
    cmd_generate->add_flag("--csv", csv_export, "Also export train/test CSV files");

    bool run_csv = false;
    CLI::App* cmd_run = app.add_subcommand(
        "run", "Run the full pipeline: stage 1, stage 2 per strategy, verification, report");
    add_common(cmd_run, run_args);
    cmd_run->add_flag("--csv", run_csv,
                      "Also export snapshot/trail CSVs for one exemplar class per group");

    CLI::App* cmd_verify =
        app.add_subcommand("verify", "Re-run the verification suite on an existing run");
    add_common(cmd_verify, verify_args);

    CLI::App* cmd_report =
        app.add_subcommand("report", "Rebuild the comparison table from a completed run");
    add_common(cmd_report, report_args);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (cmd_generate->parsed()) {
            const auto cfg = load_config(gen_args);
            breadcrumbs::run_generate(cfg, csv_export);
            std::printf("dataset written under %s\n",
                        breadcrumbs::resolve_out_dir(cfg).c_str());
            return 0;
        }
        if (cmd_run->parsed()) {
            const auto cfg = load_config(run_args);
            const auto outcome = breadcrumbs::run_pipeline(cfg, run_csv);
            std::printf("run complete: %zu stages, manifest at %s\n",
                        outcome.manifest.stages.size(),
                        (breadcrumbs::resolve_out_dir(cfg) / "manifest.json").c_str());
            if (outcome.verification_failures) {
                std::fprintf(stderr, "verification failures present (see verification.json)\n");
                return 3;
            }
            return 0;
        }
        if (cmd_verify->parsed()) {
            const auto cfg = load_config(verify_args);
            const bool ok = breadcrumbs::run_verify(cfg);
            if (!ok) {
                std::fprintf(stderr, "verification failures present\n");
                return 3;
            }
            std::printf("verification clean\n");
            return 0;
        }
        if (cmd_report->parsed()) {
            const auto cfg = load_config(report_args);
            breadcrumbs::run_report(cfg);
            std::printf("report written under %s\n",
                        breadcrumbs::resolve_out_dir(cfg).c_str());
            return 0;
        }
    } catch (const breadcrumbs::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
