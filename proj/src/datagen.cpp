#include "breadcrumbs/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <span>

namespace breadcrumbs {

void Dataset::validate() const {
    if (labels.size() != inputs.rows)
        throw InvalidInputError("dataset: label count != row count");
    if (class_counts.empty()) throw InvalidInputError("dataset: no classes");
    uint64_t total = 0;
    for (size_t j = 0; j < class_counts.size(); ++j) {
        if (class_counts[j] == 0) throw InvalidInputError("dataset: empty class");
        if (j > 0 && class_counts[j] > class_counts[j - 1])
            throw InvalidInputError("dataset: class counts not sorted by decreasing cardinality");
        total += class_counts[j];
    }
    if (total != inputs.rows)
        throw InvalidInputError("dataset: class counts do not sum to sample count");
    std::vector<uint32_t> seen(class_counts.size(), 0);
    for (const uint32_t y : labels) {
        if (y >= class_counts.size()) throw InvalidInputError("dataset: label out of range");
        ++seen[y];
    }
    for (size_t j = 0; j < seen.size(); ++j)
        if (seen[j] != class_counts[j])
            throw InvalidInputError("dataset: label histogram != class counts");
    require_finite(inputs, "dataset inputs");
}

std::vector<uint32_t> class_cardinalities(const DatagenConfig& cfg) {
    if (cfg.classes < 3) throw ConfigError("datagen: need at least 3 classes");
    if (cfg.dims < 2) throw ConfigError("datagen: need at least 2 dims");
    if (cfg.n_min < 2) throw ConfigError("datagen: n_min must be >= 2");
    if (cfg.n_min > cfg.n_max) throw ConfigError("datagen: n_min > n_max is infeasible");

    // alpha = 0 requests the endpoint-solved exponent, which puts the last
    // class exactly at n_min.
    double alpha = cfg.pareto_alpha;
    if (alpha <= 0.0) {
        alpha = (cfg.n_max == cfg.n_min)
                    ? 0.0
                    : std::log(static_cast<double>(cfg.n_max) / cfg.n_min) /
                          std::log(static_cast<double>(cfg.classes));
    }

    std::vector<uint32_t> counts(cfg.classes);
    for (uint32_t j = 0; j < cfg.classes; ++j) {
        const double raw = cfg.n_max * std::pow(static_cast<double>(j + 1), -alpha);
        const auto n = static_cast<uint32_t>(std::llround(raw));
        counts[j] = std::clamp(n, cfg.n_min, cfg.n_max);
    }
    return counts;
}

std::pair<Dataset, Dataset> generate(const DatagenConfig& cfg) {
    const auto counts = class_cardinalities(cfg);
    const uint32_t C = cfg.classes;
    const uint32_t D = cfg.dims;

    Rng base(cfg.seed);
    Rng mean_rng = base.derive("class-means");
    Rng train_rng = base.derive("train-samples");
    Rng test_rng = base.derive("test-samples");

    Matrix means(C, D);
    for (uint32_t j = 0; j < C; ++j)
        for (uint32_t k = 0; k < D; ++k)
            means.at(j, k) = static_cast<float>(mean_rng.uniform(-1.0, 1.0));

    const auto fill_split = [&](Rng& rng, std::span<const uint32_t> per_class, Split tag) {
        uint64_t n_total = 0;
        for (const uint32_t n : per_class) n_total += n;
        Dataset ds;
        ds.split = tag;
        ds.inputs = Matrix(static_cast<uint32_t>(n_total), D);
        ds.labels.reserve(n_total);
        ds.class_counts.assign(per_class.begin(), per_class.end());
        uint32_t row = 0;
        for (uint32_t j = 0; j < C; ++j) {
            for (uint32_t i = 0; i < per_class[j]; ++i, ++row) {
                auto r = ds.inputs.row(row);
                for (uint32_t k = 0; k < D; ++k)
                    r[k] = static_cast<float>(
                        rng.normal(means.at(j, k), cfg.cluster_spread));
                ds.labels.push_back(j);
            }
        }
        return ds;
    };

    Dataset train = fill_split(train_rng, counts, Split::train);
    const std::vector<uint32_t> test_counts(C, cfg.test_per_class);
    Dataset test = fill_split(test_rng, test_counts, Split::test);
    train.validate();
    test.validate();
    return {std::move(train), std::move(test)};
}

GroupAssignment assign_groups(const Dataset& train, uint32_t t_many, uint32_t t_few) {
    if (t_few >= t_many) throw ConfigError("groups: t_few must be < t_many");
    GroupAssignment ga;
    ga.t_many = t_many;
    ga.t_few = t_few;
    ga.group.reserve(train.class_counts.size());
    for (const uint32_t n : train.class_counts) {
        if (n > t_many) ga.group.push_back(Group::many);
        else if (n <= t_few) ga.group.push_back(Group::few);
        else ga.group.push_back(Group::medium);
    }
    return ga;
}

DatasetStats stats(const Dataset& train) {
    train.validate();
    const double n_total = train.num_samples();
    const double c = train.num_classes();
    DatasetStats s;
    s.oversampling.reserve(train.class_counts.size());
    for (const uint32_t n : train.class_counts)
        s.oversampling.push_back(n_total / (c * n));
    s.imbalance_ratio = static_cast<double>(train.class_counts.front()) /
                        train.class_counts.back();
    return s;
}

void write_csv(const Dataset& ds, std::ostream& out) {
    out << "label";
    for (uint32_t k = 0; k < ds.num_dims(); ++k) out << ",f" << k;
    out << "\n";
    char buf[64];
    for (uint32_t i = 0; i < ds.num_samples(); ++i) {
        out << ds.labels[i];
        for (const float v : ds.inputs.row(i)) {
            std::snprintf(buf, sizeof(buf), ",%.9g", static_cast<double>(v));
            out << buf;
        }
        out << "\n";
    }
}

} // namespace breadcrumbs
