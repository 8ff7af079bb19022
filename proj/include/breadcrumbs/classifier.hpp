#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "breadcrumbs/numkit.hpp"
#include "breadcrumbs/trailstore.hpp"

namespace breadcrumbs {

/// Linear softmax classifier: logits = W z + b, prediction = argmax.
struct LinearClassifier {
    Matrix w;             // C x d
    std::vector<float> b; // C

    uint32_t num_classes() const { return w.rows; }
    uint32_t dim() const { return w.cols; }
};

enum class StrategyKind : uint32_t {
    random = 0,          // uniform over samples of the final snapshot
    class_balanced = 1,  // class uniform, then uniform within class (cRT-style)
    weak_breadcrumb = 2, // trails assembled at the final epoch only
    strong_breadcrumb = 3 // epoch e trains on trails assembled at epoch e
};

const char* strategy_name(StrategyKind kind);
StrategyKind strategy_from_name(std::string_view name);

struct SamplingStrategy {
    StrategyKind kind = StrategyKind::class_balanced;
    uint32_t target_count = 0; // n_B; 0 = ceil of mean class cardinality
};

/// n_B default: ceiling of the mean class cardinality.
uint32_t default_target_count(std::span<const uint32_t> class_counts);

/// One epoch of class-balanced draws: each draw picks a class uniformly and
/// then a row uniformly within the class (with replacement across draws).
/// Returned as (class, row) pairs chunked into batches.
std::vector<std::vector<std::pair<uint32_t, uint32_t>>> class_balanced_epoch(
    std::span<const uint32_t> class_counts, uint32_t draws, uint32_t batch_size,
    Rng& rng);

struct Stage2Config {
    uint32_t epochs = 0; // 0 = match the number of recorded stage-1 epochs
    uint32_t batch_size = 64;
    SgdConfig opt;
    uint64_t seed = 1;
};

/// Optional observer of stage-2 training, for loss-curve analysis. Stores the
/// end-of-epoch classifier plus the epoch's unique training features of the
/// classes in class_filter (empty filter = all classes).
struct Stage2Trace {
    std::vector<uint32_t> class_filter;
    std::vector<LinearClassifier> epoch_classifiers;
    std::vector<Matrix> epoch_features;
    std::vector<std::vector<uint32_t>> epoch_labels;
};

/// Trains the linear classifier on stored features under the given sampling
/// strategy. strong_breadcrumb consumes one trail set per epoch and falls
/// back to class-balanced sampling over the epoch's snapshot while history is
/// too short to assemble trails.
LinearClassifier train_stage2(const TrailStore& store, const SamplingStrategy& strategy,
                              const Stage2Config& cfg, AlignMode align_mode = AlignMode::mean,
                              Stage2Trace* trace = nullptr);

/// Argmax of logits, ties broken toward the lowest class index.
std::vector<uint32_t> predict(const LinearClassifier& clf, const Matrix& z);

} // namespace breadcrumbs
