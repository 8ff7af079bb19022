#pragma once

// Shared fixtures for the test binaries: the small "tiny" setup for fast
// unit tests and the desk-scale reference setup the goldens were frozen on.

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "breadcrumbs/datagen.hpp"
#include "breadcrumbs/embedding.hpp"

namespace testutil {

inline breadcrumbs::DatagenConfig desk_data_config() {
    breadcrumbs::DatagenConfig cfg;
    cfg.classes = 50;
    cfg.dims = 32;
    cfg.n_max = 500;
    cfg.n_min = 5;
    cfg.cluster_spread = 1.5;
    cfg.test_per_class = 20;
    cfg.seed = 1;
    return cfg;
}

inline breadcrumbs::StageOneConfig desk_stage1_config(uint64_t seed = 1) {
    breadcrumbs::StageOneConfig cfg;
    cfg.epochs = 30;
    cfg.batch_size = 64;
    cfg.hidden = 64;
    cfg.feature_dim = 32;
    cfg.opt.base_lr = 0.025f; // desk batch is 8x smaller than the full-scale recipe
    cfg.seed = seed;
    return cfg;
}

inline breadcrumbs::DatagenConfig tiny_data_config() {
    breadcrumbs::DatagenConfig cfg;
    cfg.classes = 5;
    cfg.dims = 6;
    cfg.n_max = 40;
    cfg.n_min = 4;
    cfg.cluster_spread = 0.8;
    cfg.test_per_class = 8;
    cfg.seed = 3;
    return cfg;
}

inline breadcrumbs::StageOneConfig tiny_stage1_config(uint64_t seed = 3) {
    breadcrumbs::StageOneConfig cfg;
    cfg.epochs = 6;
    cfg.batch_size = 16;
    cfg.hidden = 16;
    cfg.feature_dim = 8;
    cfg.seed = seed;
    return cfg;
}

inline nlohmann::json load_golden() {
    const std::filesystem::path path =
        std::filesystem::path(BREADCRUMBS_GOLDEN_DIR) / "reference.json";
    std::ifstream in(path);
    if (!in) throw std::runtime_error("missing golden file: " + path.string() +
                                      " (regenerate with make_goldens)");
    return nlohmann::json::parse(in);
}

} // namespace testutil
