#pragma once

#include <cstdint>
#include <iosfwd>
#include <utility>
#include <vector>

#include "breadcrumbs/matrix.hpp"
#include "breadcrumbs/rng.hpp"

namespace breadcrumbs {

enum class Split : uint32_t { train = 0, test = 1 };

/// Labeled vectors with per-class cardinalities. Classes are indexed by
/// decreasing cardinality: counts[i] >= counts[j] for i < j.
struct Dataset {
    Matrix inputs;                     // N x D
    std::vector<uint32_t> labels;      // length N, values in [0, C)
    std::vector<uint32_t> class_counts; // length C, non-increasing
    Split split = Split::train;

    uint32_t num_samples() const { return inputs.rows; }
    uint32_t num_dims() const { return inputs.cols; }
    uint32_t num_classes() const { return static_cast<uint32_t>(class_counts.size()); }

    void validate() const;
};

struct DatagenConfig {
    uint32_t classes = 50;
    uint32_t dims = 32;
    uint32_t n_max = 500;
    uint32_t n_min = 5;
    // Power-law decay exponent for class cardinalities. 0 = solve it from the
    // endpoints so that class C lands exactly on n_min.
    double pareto_alpha = 0.0;
    double cluster_spread = 1.0; // per-dimension Gaussian sigma within a class
    uint32_t test_per_class = 20;
    uint64_t seed = 1;
};

/// Cardinality curve n_j = round(n_max * j^-alpha) clamped to [n_min, n_max],
/// j 1-based. Exposed separately so tests can check the curve before paying
/// for sample generation.
std::vector<uint32_t> class_cardinalities(const DatagenConfig& cfg);

/// Seeded synthetic long-tailed dataset: class means uniform in [-1,1]^D,
/// isotropic Gaussian clusters, plus a balanced test split.
std::pair<Dataset, Dataset> generate(const DatagenConfig& cfg);

enum class Group : uint32_t { many = 0, medium = 1, few = 2 };

struct GroupAssignment {
    std::vector<Group> group; // per class
    uint32_t t_many = 100;
    uint32_t t_few = 20;
};

/// many: n_j > t_many; few: n_j <= t_few; medium otherwise.
GroupAssignment assign_groups(const Dataset& train, uint32_t t_many, uint32_t t_few);

struct DatasetStats {
    std::vector<double> oversampling; // N / (C * n_j) per class
    double imbalance_ratio = 1.0;     // n_1 / n_C
};

DatasetStats stats(const Dataset& train);

/// Header row, then one line per sample: label, then D floats.
void write_csv(const Dataset& ds, std::ostream& out);

} // namespace breadcrumbs
