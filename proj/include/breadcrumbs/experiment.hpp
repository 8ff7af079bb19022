#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "breadcrumbs/analysis.hpp"
#include "breadcrumbs/classifier.hpp"
#include "breadcrumbs/datagen.hpp"
#include "breadcrumbs/embedding.hpp"

namespace breadcrumbs {

/// Flat experiment configuration; one file drives the whole pipeline.
/// Unknown keys are rejected, missing required keys are named in the error.
struct ExperimentConfig {
    // dataset
    DatagenConfig data;
    uint32_t t_many = 100;
    uint32_t t_few = 20;

    // stage 1
    StageOneConfig stage1;

    // stage 2
    Stage2Config stage2;
    uint32_t n_b = 0; // 0 = ceil of mean class cardinality
    AlignMode align_mode = AlignMode::mean;
    std::vector<StrategyKind> strategies{
        StrategyKind::random, StrategyKind::class_balanced,
        StrategyKind::weak_breadcrumb, StrategyKind::strong_breadcrumb};

    // verification
    uint32_t verify_seeds = 1; // verify the first k seeds' runs
    VerifyOptions verify;
    double hard_example_threshold = 5.0;

    // run
    std::vector<uint64_t> seeds{1, 2, 3, 4, 5};
    std::string out_dir;

    static ExperimentConfig from_json(const nlohmann::json& j);
    static ExperimentConfig from_file(const std::filesystem::path& path);
    nlohmann::json to_json() const; // effective config, defaults applied
    uint64_t hash() const;
    std::string hash_hex() const;
};

uint64_t fnv1a64(std::string_view bytes);

struct StageRecord {
    std::string name;
    std::vector<std::string> files;     // relative to out_dir
    std::vector<std::string> data_refs; // per-epoch training-set references (stage 2)
    double seconds = 0.0;
    bool skipped = false;
};

struct RunManifest {
    std::string config_hash;
    std::string tool_version;
    uint32_t format_version = kFormatVersion;
    std::vector<StageRecord> stages;

    nlohmann::json to_json() const;
    static RunManifest from_json(const nlohmann::json& j);
};

struct RunOutcome {
    RunManifest manifest;
    bool verification_failures = false;
};

/// generate: dataset files + stats JSON under out_dir/dataset.
void run_generate(const ExperimentConfig& cfg, bool csv_export = false);

/// run: stage 1 per seed, stage 2 per (seed, strategy), verification for the
/// first verify_seeds seeds, metrics, report. Stages whose outputs already
/// exist under the same config hash are skipped. csv_export additionally
/// writes snapshot and trail-set CSVs for one exemplar class per group.
RunOutcome run_pipeline(const ExperimentConfig& cfg, bool csv_export = false);

/// verify: re-runs the verification suite against an existing run's stores.
bool run_verify(const ExperimentConfig& cfg);

/// report: re-reads metrics files listed by the manifest and rewrites the
/// report table + JSON. Throws on mixed config hashes or missing stages.
void run_report(const ExperimentConfig& cfg);

/// Round to 4 decimals; report floats are fixed-format for byte-stable output.
double round4(double v);

std::filesystem::path resolve_out_dir(const ExperimentConfig& cfg);

} // namespace breadcrumbs
