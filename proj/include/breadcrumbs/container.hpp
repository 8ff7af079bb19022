#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "breadcrumbs/datagen.hpp"
#include "breadcrumbs/matrix.hpp"

namespace breadcrumbs {

// Shared binary container, little-endian. Layout:
//   magic "BCTS" | version u32 | config_hash u64 | dim u32
//   snapshot record count u32
//   records: (class u32, epoch u32, rows u32, rows*dim f32)
// followed by optional tagged sections until EOF:
//   "MEAN" count u32, entries (class u32, epoch u32, dim f32)   class 0xFFFFFFFF = all-class mean
//   "CCNT" class count u32, counts u32[], last_epoch u32, policy_unlimited u32, policy_n_b u32
//   "DSET" split u32, classes u32, samples u32, labels u32[], features f32[], counts u32[]
//   "PARM" epoch u32, activation u32, tensor count u32, tensors (rows u32, cols u32, f32[])
//   "CLSF" classes u32, dim u32, w f32[], b f32[]

constexpr uint32_t kFormatVersion = 1;
constexpr uint32_t kAllClasses = 0xFFFFFFFFu;

struct SnapshotRecord {
    uint32_t class_id = 0;
    uint32_t epoch = 0;
    Matrix features;
};

struct MeanRecord {
    uint32_t class_id = 0;
    uint32_t epoch = 0;
    std::vector<float> mean;
};

struct StoreMeta {
    std::vector<uint32_t> class_counts;
    uint32_t last_epoch = 0;
    bool policy_unlimited = true;
    uint32_t policy_n_b = 0;
};

struct ParamsSection {
    uint32_t epoch = 0;
    uint32_t activation = 0;
    std::vector<Matrix> tensors; // vectors stored as 1 x n
};

struct ClassifierSection {
    Matrix w; // C x d
    std::vector<float> b;
};

struct Container {
    uint64_t config_hash = 0;
    uint32_t dim = 0;
    std::vector<SnapshotRecord> snapshots;
    std::vector<MeanRecord> means;
    std::optional<StoreMeta> store_meta;
    std::optional<Dataset> dataset;
    std::optional<ParamsSection> params;
    std::optional<ClassifierSection> classifier;

    void save(const std::filesystem::path& path) const;
    static Container load(const std::filesystem::path& path);

    /// Reads just the header hash (magic + version checked).
    static uint64_t peek_hash(const std::filesystem::path& path);
};

} // namespace breadcrumbs
