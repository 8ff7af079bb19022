#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "breadcrumbs/classifier.hpp"
#include "breadcrumbs/datagen.hpp"
#include "breadcrumbs/embedding.hpp"
#include "breadcrumbs/trailstore.hpp"

namespace breadcrumbs {

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Double-precision linear classifier used by the verification fits.
struct DenseClassifier {
    uint32_t classes = 0;
    uint32_t dim = 0;
    std::vector<double> w; // classes x dim, row-major
    std::vector<double> b; // classes
};

DenseClassifier to_dense(const LinearClassifier& clf);

/// Mean negative log-likelihood of the true class over one class's features.
double class_loss(const Matrix& z_y, uint32_t y, const DenseClassifier& clf);
double class_loss(const Matrix& z_y, uint32_t y, const LinearClassifier& clf);

/// Per-class losses of a full-epoch snapshot plus their sum.
struct LossReport {
    std::vector<double> per_class;
    double total = 0.0;
    std::string classifier_tag;
    std::string snapshot_tag;
};

LossReport loss_report(const TrailStore& store, uint32_t epoch, const DenseClassifier& clf,
                       std::string classifier_tag = {}, std::string snapshot_tag = {});

// ---------------------------------------------------------------------------
// Near-optimal classifier fits (convex, certified by gradient norm)
// ---------------------------------------------------------------------------

struct FitOptions {
    uint32_t max_iters = 600;
    double grad_tol = 1e-5;
    double ridge = 0.0; // 0.5 * ridge * |W|^2 added to the objective
};

struct FitResult {
    DenseClassifier clf;
    bool converged = false;
    double grad_norm = 0.0;
    uint32_t iters = 0;
    double objective = 0.0;         // final objective value (with ridge term)
    std::vector<double> class_loss; // pure CE per class at the optimum
    double total_loss = 0.0;        // sum of class losses (no ridge)
};

/// Minimizes the balanced objective sum_y mean-CE_y (+ ridge) over (W, b)
/// with L-BFGS. class_features[y] holds the n_y x d block of class y.
FitResult fit_optimal_classifier(std::span<const Matrix> class_features,
                                 const FitOptions& opts,
                                 const DenseClassifier* warm_start = nullptr);

/// Minimizes one class's mean CE (+ ridge, which must be positive for the
/// problem to be bounded) over a C-way classifier.
FitResult fit_class_optimal(const Matrix& z_y, uint32_t y, uint32_t num_classes,
                            const FitOptions& opts);

/// Lazy per-epoch cache of the near-optimal classifiers of a store.
class EpochOptima {
public:
    EpochOptima(const TrailStore& store, FitOptions shared_opts, FitOptions per_class_opts);

    const FitResult& shared(uint32_t epoch);
    const FitResult& per_class(uint32_t epoch, uint32_t class_id);

    /// Fits the shared optima for the given epochs, fanning out across
    /// threads (each fit is independent and deterministic).
    void precompute_shared(std::span<const uint32_t> epochs, uint32_t threads);

private:
    const TrailStore& store_;
    FitOptions shared_opts_;
    FitOptions per_class_opts_;
    std::map<uint32_t, FitResult> shared_;
    std::map<std::pair<uint32_t, uint32_t>, FitResult> per_class_;
};

// ---------------------------------------------------------------------------
// Structural checks
// ---------------------------------------------------------------------------

struct DuplicationVerdict {
    double loss_original = 0.0;
    double loss_duplicated = 0.0;
    double diff = 0.0;
    bool equal = false; // |diff| <= 1e-6 * (1 + |loss_original|)
};

/// Duplication invariance of the class loss: r copies of the feature set
/// leave the mean loss unchanged.
DuplicationVerdict check_duplication_invariance(const Matrix& z_y, uint32_t y,
                                                const LinearClassifier& clf,
                                                uint32_t replication);

enum class OptimalityReading : uint32_t { shared = 0, per_class = 1 };

struct BoundVerdict {
    uint32_t class_id = 0;
    uint32_t epoch_src = 0; // e' < e
    uint32_t epoch_tgt = 0; // e
    double lhs = 0.0;   // loss increase due to augmentation at epoch e
    double rhs = 0.0;   // half the training gain between e' and e
    double slack = 0.0; // lhs - rhs
    bool satisfied = false;
    bool certified = false; // all inner fits converged
    OptimalityReading mode = OptimalityReading::shared;
};

/// Augments the target class snapshot with the aligned source snapshot and
/// compares the loss increase against half the training gain, both measured
/// under near-optimal classifiers. Non-convergent fits are reported via
/// certified=false, never asserted.
BoundVerdict check_augmentation_bound(const TrailStore& store, uint32_t class_id,
                                      uint32_t epoch_src, uint32_t epoch_tgt,
                                      EpochOptima& optima, double tol,
                                      OptimalityReading mode = OptimalityReading::shared);

struct PairRef {
    uint32_t class_id = 0;
    uint32_t epoch_src = 0;
    uint32_t epoch_tgt = 0;
};

std::vector<PairRef> sample_epoch_pairs(const TrailStore& store, uint32_t count, Rng& rng);

struct DirectionFailure {
    PairRef pair;
    double loss_augmented = 0.0;
    double loss_plain = 0.0;
};

struct DirectionSummary {
    uint32_t pairs = 0;
    uint32_t skipped = 0; // convergence precondition not met
    uint32_t not_certified = 0;
    uint32_t checked = 0;
    uint32_t passed = 0;
    std::vector<DirectionFailure> failures;
};

/// For every pair meeting the per-class convergence precondition
/// L_y(e') > L_y(e), checks that augmentation raises the loss:
/// L_y(A) > L_y(Z^e) - tol. Other pairs are counted as skipped.
DirectionSummary check_adversarial_direction(const TrailStore& store,
                                             std::span<const PairRef> pairs,
                                             EpochOptima& optima, double tol);

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct GroupMetrics {
    double overall = 0.0;
    std::optional<double> many;
    std::optional<double> medium;
    std::optional<double> few;
    std::vector<double> per_class; // accuracy per class on the test set
};

/// Accuracy on the balanced test set, overall and per class group. Groups
/// with no classes are reported as absent.
GroupMetrics evaluate(const LinearClassifier& clf, const EmbeddingParams& params,
                      const Dataset& test, const GroupAssignment& groups);

/// Per-epoch counts of features whose individual CE loss exceeds the
/// threshold, under that epoch's classifier.
std::vector<uint32_t> hard_example_counts(std::span<const Matrix> epoch_features,
                                          std::span<const std::vector<uint32_t>> epoch_labels,
                                          std::span<const LinearClassifier> epoch_classifiers,
                                          double threshold);

// ---------------------------------------------------------------------------
// Whole-run verification
// ---------------------------------------------------------------------------

struct VerifyOptions {
    uint32_t pair_count = 200; // certified pairs to collect (sampling tops up)
    uint32_t duplication_count = 100;
    uint64_t seed = 7;
    double tol = 1e-4;
    FitOptions shared_fit{2000, 1e-5, 0.0};
    FitOptions per_class_fit{2000, 1e-5, 1e-3};
    uint32_t threads = 2;
    bool attribute_violations = true;
};

struct VerificationReport {
    std::vector<BoundVerdict> bound;        // shared-reading verdicts, one per pair
    std::vector<BoundVerdict> attributions; // per-class re-checks of violations
    uint32_t bound_certified = 0;
    uint32_t bound_satisfied = 0;
    double bound_pass_rate = 0.0; // satisfied / certified
    DirectionSummary direction;
    uint32_t duplication_checked = 0;
    uint32_t duplication_passed = 0;
    double seconds_bound = 0.0;
    double seconds_direction = 0.0;
    double seconds_duplication = 0.0;

    bool all_pass(double bound_rate_floor = 0.95) const;
};

/// Runs the duplication, bound and direction suites against a recorded store.
VerificationReport verify_run(const TrailStore& store, const VerifyOptions& opts);

} // namespace breadcrumbs
