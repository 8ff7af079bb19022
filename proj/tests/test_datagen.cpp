#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "breadcrumbs/datagen.hpp"

using namespace breadcrumbs;

namespace {

DatagenConfig desk_config() {
    DatagenConfig cfg;
    cfg.classes = 50;
    cfg.dims = 32;
    cfg.n_max = 500;
    cfg.n_min = 5;
    cfg.cluster_spread = 1.0;
    cfg.test_per_class = 20;
    cfg.seed = 1;
    return cfg;
}

} // namespace

TEST_CASE("degenerate n_max == n_min gives a balanced dataset") {
    DatagenConfig cfg;
    cfg.classes = 3;
    cfg.dims = 4;
    cfg.n_max = 100;
    cfg.n_min = 100;
    const auto counts = class_cardinalities(cfg);
    for (const uint32_t n : counts) CHECK(n == 100);
}

TEST_CASE("desk cardinalities hit both endpoints and are non-increasing") {
    const auto cfg = desk_config();
    const auto counts = class_cardinalities(cfg);
    REQUIRE(counts.size() == 50);
    CHECK(counts.front() == 500);
    CHECK(counts.back() == 5);
    for (size_t j = 1; j < counts.size(); ++j) CHECK(counts[j] <= counts[j - 1]);

    // Independent evaluation of the decay curve for every class.
    const double alpha = std::log(500.0 / 5.0) / std::log(50.0);
    for (size_t j = 0; j < counts.size(); ++j) {
        const double raw = 500.0 * std::pow(static_cast<double>(j + 1), -alpha);
        const auto expected =
            std::clamp<uint32_t>(static_cast<uint32_t>(std::llround(raw)), 5u, 500u);
        CHECK(counts[j] == expected);
    }
}

TEST_CASE("explicit pareto_alpha overrides the endpoint solve") {
    auto cfg = desk_config();
    cfg.pareto_alpha = 6.0;
    const auto counts = class_cardinalities(cfg);
    CHECK(counts[0] == 500);
    // steep decay clamps the tail to n_min quickly
    CHECK(counts[2] == 5);
    CHECK(counts.back() == 5);
}

TEST_CASE("infeasible count range is a config error") {
    auto cfg = desk_config();
    cfg.n_min = 600;
    CHECK_THROWS_AS(class_cardinalities(cfg), ConfigError);
    cfg = desk_config();
    cfg.classes = 2;
    CHECK_THROWS_AS(class_cardinalities(cfg), ConfigError);
}

TEST_CASE("same seed generates bitwise-identical datasets") {
    const auto cfg = desk_config();
    const auto [train_a, test_a] = generate(cfg);
    const auto [train_b, test_b] = generate(cfg);
    CHECK(train_a.inputs == train_b.inputs);
    CHECK(train_a.labels == train_b.labels);
    CHECK(test_a.inputs == test_b.inputs);

    auto other = cfg;
    other.seed = 2;
    const auto [train_c, test_c] = generate(other);
    CHECK_FALSE(train_a.inputs == train_c.inputs);
}

TEST_CASE("test split is exactly balanced") {
    const auto [train, test] = generate(desk_config());
    for (const uint32_t n : test.class_counts) CHECK(n == 20);
    CHECK(test.num_samples() == 50 * 20);
    CHECK(test.split == Split::test);
    CHECK(train.split == Split::train);
}

TEST_CASE("group thresholds follow the half-open intervals") {
    Dataset ds;
    ds.class_counts = {101, 100, 21, 20};
    ds.labels = {};
    // counts only matter for assignment; build a consistent dataset
    ds.inputs = Matrix(242, 2, 0.0f);
    ds.labels.reserve(242);
    for (uint32_t y = 0; y < 4; ++y)
        for (uint32_t i = 0; i < ds.class_counts[y]; ++i) ds.labels.push_back(y);

    const auto ga = assign_groups(ds, 100, 20);
    CHECK(ga.group[0] == Group::many);   // 101 > 100
    CHECK(ga.group[1] == Group::medium); // exactly 100
    CHECK(ga.group[2] == Group::medium); // 21
    CHECK(ga.group[3] == Group::few);    // exactly 20
}

TEST_CASE("group assignment partitions the classes") {
    const auto [train, test] = generate(desk_config());
    const auto ga = assign_groups(train, 100, 20);
    REQUIRE(ga.group.size() == train.num_classes());
    uint32_t many = 0, medium = 0, few = 0;
    for (const Group g : ga.group) {
        if (g == Group::many) ++many;
        else if (g == Group::medium) ++medium;
        else ++few;
    }
    CHECK(many + medium + few == train.num_classes());
    // the desk configuration populates all three groups
    CHECK(many > 0);
    CHECK(medium > 0);
    CHECK(few > 0);
}

TEST_CASE("oversampling factors") {
    Dataset ds;
    ds.class_counts = {10, 10, 10, 10, 10, 10, 10, 10, 10, 10};
    ds.inputs = Matrix(100, 2, 0.0f);
    for (uint32_t y = 0; y < 10; ++y)
        for (uint32_t i = 0; i < 10; ++i) ds.labels.push_back(y);
    const auto s = stats(ds);
    for (const double r : s.oversampling) CHECK(r == doctest::Approx(1.0));
    CHECK(s.imbalance_ratio == doctest::Approx(1.0));
}

TEST_CASE("desk-scale tail classes sit in the heavy-oversampling regime") {
    const auto [train, test] = generate(desk_config());
    const auto s = stats(train);
    // smallest class: rho = N / (C * n_min), computed independently
    const double expected = static_cast<double>(train.num_samples()) /
                            (train.num_classes() * train.class_counts.back());
    CHECK(s.oversampling.back() == doctest::Approx(expected));
    CHECK(s.oversampling.back() > 5.0);
    CHECK(s.imbalance_ratio == doctest::Approx(100.0));
}

TEST_CASE("uniform sampling represents class j with probability n_j over N") {
    const auto [train, test] = generate(desk_config());
    const uint32_t n = train.num_samples();
    Rng rng(778);
    const uint32_t draws = 200000;
    std::vector<uint32_t> hits(train.num_classes(), 0);
    for (uint32_t i = 0; i < draws; ++i)
        ++hits[train.labels[rng.index(n)]];
    for (uint32_t y = 0; y < train.num_classes(); ++y) {
        const double p = static_cast<double>(train.class_counts[y]) / n;
        const double se = std::sqrt(p * (1.0 - p) / draws);
        const double observed = static_cast<double>(hits[y]) / draws;
        CHECK(std::abs(observed - p) <= 3.0 * se + 1e-12);
    }
}

TEST_CASE("csv export shape") {
    DatagenConfig cfg;
    cfg.classes = 3;
    cfg.dims = 3;
    cfg.n_max = 4;
    cfg.n_min = 2;
    cfg.test_per_class = 2;
    const auto [train, test] = generate(cfg);
    std::ostringstream os;
    write_csv(train, os);
    std::istringstream is(os.str());
    std::string header;
    std::getline(is, header);
    CHECK(header == "label,f0,f1,f2");
    size_t lines = 0;
    std::string line;
    while (std::getline(is, line)) ++lines;
    CHECK(lines == train.num_samples());
}
