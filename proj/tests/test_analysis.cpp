#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "breadcrumbs/analysis.hpp"
#include "helpers.hpp"

using namespace breadcrumbs;

namespace {

LinearClassifier random_classifier(uint32_t classes, uint32_t dim, Rng& rng) {
    LinearClassifier clf;
    clf.w = Matrix(classes, dim);
    for (auto& v : clf.w.data) v = static_cast<float>(rng.normal());
    clf.b.resize(classes);
    for (auto& v : clf.b) v = static_cast<float>(rng.normal());
    return clf;
}

Matrix random_features(uint32_t rows, uint32_t dim, Rng& rng) {
    Matrix z(rows, dim);
    for (auto& v : z.data) v = static_cast<float>(rng.normal());
    return z;
}

// Store whose features are identical at every epoch (frozen embedding).
TrailStore frozen_store(uint32_t classes, uint32_t per_class, uint32_t epochs,
                        uint32_t dim, uint64_t seed) {
    Rng rng(seed);
    std::vector<uint32_t> labels;
    for (uint32_t y = 0; y < classes; ++y)
        for (uint32_t i = 0; i < per_class; ++i) labels.push_back(y);
    Matrix features(static_cast<uint32_t>(labels.size()), dim);
    for (uint32_t i = 0; i < features.rows; ++i)
        for (uint32_t k = 0; k < dim; ++k)
            features.at(i, k) = static_cast<float>(rng.normal(labels[i] * 1.5, 0.6));
    TrailStore store(classes, dim, StorePolicy::unlimited());
    for (uint32_t e = 1; e <= epochs; ++e) store.record(e, features, labels);
    return store;
}

} // namespace

TEST_CASE("class loss under the zero classifier is log C") {
    LinearClassifier clf;
    clf.w = Matrix(4, 3, 0.0f);
    clf.b.assign(4, 0.0f);
    Rng rng(1);
    const auto z = random_features(7, 3, rng);
    CHECK(class_loss(z, 2, clf) == doctest::Approx(std::log(4.0)).epsilon(1e-9));
}

TEST_CASE("duplicating a class feature set leaves its loss unchanged") {
    Rng rng(2);
    const auto clf = random_classifier(5, 4, rng);
    const auto z = random_features(6, 4, rng);
    Matrix doubled(12, 4);
    std::copy(z.data.begin(), z.data.end(), doubled.data.begin());
    std::copy(z.data.begin(), z.data.end(), doubled.data.begin() + z.data.size());
    CHECK(class_loss(doubled, 3, clf) ==
          doctest::Approx(class_loss(z, 3, clf)).epsilon(1e-9));
}

TEST_CASE("duplication invariance holds for random triples") {
    Rng rng(3);
    for (int t = 0; t < 100; ++t) {
        const uint32_t classes = 3 + static_cast<uint32_t>(rng.index(5));
        const uint32_t dim = 2 + static_cast<uint32_t>(rng.index(6));
        const uint32_t rows = 1 + static_cast<uint32_t>(rng.index(7));
        const auto clf = random_classifier(classes, dim, rng);
        const auto z = random_features(rows, dim, rng);
        const uint32_t reps[3] = {2, 5, 10};
        const auto v = check_duplication_invariance(
            z, static_cast<uint32_t>(rng.index(classes)), clf, reps[t % 3]);
        CHECK(v.equal);
    }
}

TEST_CASE("duplication invariance covers the single-row case") {
    Rng rng(4);
    const auto clf = random_classifier(3, 2, rng);
    const auto z = random_features(1, 2, rng);
    CHECK(check_duplication_invariance(z, 1, clf, 10).equal);
    CHECK_THROWS_AS(check_duplication_invariance(z, 1, clf, 1), InvalidInputError);
}

TEST_CASE("loss report total equals the per-class sum") {
    auto store = frozen_store(4, 5, 1, 3, 9);
    Rng rng(5);
    const auto clf = to_dense(random_classifier(4, 3, rng));
    const auto rep = loss_report(store, 1, clf);
    REQUIRE(rep.per_class.size() == 4);
    // re-sum in the opposite order
    double total = 0.0;
    for (auto it = rep.per_class.rbegin(); it != rep.per_class.rend(); ++it) total += *it;
    CHECK(std::abs(total - rep.total) <= 1e-6 * std::abs(total));
}

TEST_CASE("the balanced fit reaches the gradient tolerance and is deterministic") {
    auto store = frozen_store(3, 8, 1, 4, 11);
    std::vector<Matrix> blocks;
    for (uint32_t y = 0; y < 3; ++y) blocks.push_back(store.class_snapshot(y, 1));
    FitOptions opts;
    opts.max_iters = 500;
    opts.grad_tol = 1e-6;
    const auto fit_a = fit_optimal_classifier(blocks, opts);
    const auto fit_b = fit_optimal_classifier(blocks, opts);
    CHECK(fit_a.converged);
    CHECK(fit_a.grad_norm <= 1e-6);
    CHECK(fit_a.clf.w == fit_b.clf.w);

    // optimality sanity: the fitted loss undercuts the zero classifier
    double zero_total = 3 * std::log(3.0);
    CHECK(fit_a.total_loss < zero_total);
}

TEST_CASE("the single-class fit requires a ridge term") {
    auto store = frozen_store(3, 6, 1, 4, 12);
    FitOptions opts;
    opts.ridge = 0.0;
    CHECK_THROWS_AS(fit_class_optimal(store.class_snapshot(0, 1), 0, 3, opts), ConfigError);
    opts.ridge = 1e-3;
    const auto fit = fit_class_optimal(store.class_snapshot(0, 1), 0, 3, opts);
    CHECK(fit.converged);
}

TEST_CASE("the bound check on identical epochs is satisfied with zero slack") {
    auto store = frozen_store(3, 6, 4, 4, 13);
    EpochOptima optima(store, FitOptions{800, 1e-6, 0.0}, FitOptions{800, 1e-6, 1e-3});

    // e' == e: the aligned snapshot equals the target snapshot
    const auto self_verdict = check_augmentation_bound(store, 1, 2, 2, optima, 1e-4);
    CHECK(self_verdict.satisfied);
    CHECK(std::abs(self_verdict.lhs) < 1e-9);
    CHECK(std::abs(self_verdict.rhs) < 1e-9);

    // frozen embedding: distinct epochs hold the same features
    const auto frozen_verdict = check_augmentation_bound(store, 0, 1, 3, optima, 1e-4);
    CHECK(frozen_verdict.certified);
    CHECK(frozen_verdict.satisfied);
    CHECK(std::abs(frozen_verdict.lhs) < 1e-6);
    CHECK(std::abs(frozen_verdict.rhs) < 1e-6);
}

TEST_CASE("the direction check skips pairs that fail the convergence precondition") {
    auto store = frozen_store(3, 6, 4, 4, 14);
    EpochOptima optima(store, FitOptions{800, 1e-6, 0.0}, FitOptions{800, 1e-6, 1e-3});
    std::vector<PairRef> pairs = {{0, 1, 3}, {1, 2, 4}, {2, 1, 2}};
    const auto summary = check_adversarial_direction(store, pairs, optima, 1e-4);
    CHECK(summary.pairs == 3);
    // frozen features: no pair satisfies L(e') > L(e)
    CHECK(summary.skipped == 3);
    CHECK(summary.checked == 0);
    CHECK(summary.failures.empty());
}

TEST_CASE("epoch pair sampling stays in range") {
    auto store = frozen_store(4, 5, 6, 3, 15);
    Rng rng(6);
    const auto pairs = sample_epoch_pairs(store, 200, rng);
    CHECK(pairs.size() == 200);
    for (const auto& p : pairs) {
        CHECK(p.class_id < 4);
        CHECK(p.epoch_src >= 1);
        CHECK(p.epoch_src < p.epoch_tgt);
        CHECK(p.epoch_tgt <= 6);
    }
}

TEST_CASE("evaluation on a balanced test set") {
    const auto [train, test] = generate(testutil::tiny_data_config());
    const auto groups = assign_groups(train, 20, 6);

    // identity-ish embedding: one layer passes features straight through
    EmbeddingParams params;
    const uint32_t d = train.num_dims();
    params.w1 = Matrix(d, d, 0.0f);
    params.b1.assign(d, 0.0f);
    params.w2 = Matrix(d, d, 0.0f);
    params.b2.assign(d, 0.0f);
    params.activation = Activation::relu;
    for (uint32_t k = 0; k < d; ++k) {
        params.w1.at(k, k) = 1.0f;
        params.w2.at(k, k) = 1.0f;
    }

    SUBCASE("constant prediction scores 1/C overall") {
        LinearClassifier clf;
        clf.w = Matrix(train.num_classes(), d, 0.0f);
        clf.b.assign(train.num_classes(), 0.0f);
        clf.b[2] = 10.0f; // always predicts class 2
        const auto gm = evaluate(clf, params, test, groups);
        CHECK(gm.overall == doctest::Approx(1.0 / train.num_classes()));
    }

    SUBCASE("overall accuracy equals the mean of per-class accuracies") {
        Rng rng(8);
        const auto clf = random_classifier(train.num_classes(), d, rng);
        const auto gm = evaluate(clf, params, test, groups);
        const double mean = std::accumulate(gm.per_class.begin(), gm.per_class.end(), 0.0) /
                            gm.per_class.size();
        CHECK(std::abs(gm.overall - mean) < 1e-9);
    }

    SUBCASE("unbalanced test sets are rejected") {
        Dataset skewed = test;
        skewed.class_counts.back() += 1;
        skewed.class_counts.front() -= 1;
        CHECK_THROWS_AS(evaluate(LinearClassifier{Matrix(5, d, 0.0f),
                                                  std::vector<float>(5, 0.0f)},
                                 params, skewed, groups),
                        InvalidInputError);
    }
}

TEST_CASE("a group with no classes is reported absent") {
    const auto [train, test] = generate(testutil::tiny_data_config());
    // thresholds that put every class in "many"
    const auto groups = assign_groups(train, 2, 1);
    EmbeddingParams params;
    const uint32_t d = train.num_dims();
    params.w1 = Matrix(d, d, 0.0f);
    params.b1.assign(d, 0.0f);
    params.w2 = Matrix(d, d, 0.0f);
    params.b2.assign(d, 0.0f);
    LinearClassifier clf;
    clf.w = Matrix(train.num_classes(), d, 0.0f);
    clf.b.assign(train.num_classes(), 0.0f);
    const auto gm = evaluate(clf, params, test, groups);
    CHECK(gm.many.has_value());
    CHECK_FALSE(gm.medium.has_value());
    CHECK_FALSE(gm.few.has_value());
}

TEST_CASE("hard example counting respects the threshold") {
    Rng rng(10);
    const uint32_t classes = 4, dim = 3;
    std::vector<Matrix> features = {random_features(30, dim, rng)};
    std::vector<std::vector<uint32_t>> labels(1);
    for (uint32_t i = 0; i < 30; ++i)
        labels[0].push_back(static_cast<uint32_t>(rng.index(classes)));
    std::vector<LinearClassifier> clfs = {random_classifier(classes, dim, rng)};

    const auto zero = hard_example_counts(features, labels, clfs, 0.0);
    // every sample has strictly positive loss under a generic classifier
    CHECK(zero[0] == 30);
    const auto inf = hard_example_counts(features, labels, clfs, 1e18);
    CHECK(inf[0] == 0);
}
