#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <vector>

#include "breadcrumbs/container.hpp"
#include "breadcrumbs/matrix.hpp"
#include "breadcrumbs/rng.hpp"

namespace breadcrumbs {

enum class AlignMode : uint32_t { mean = 0, mean_and_variance = 1, class_agnostic = 2 };

/// Feature snapshot of one class at one epoch: the n_y x d block of the
/// epoch's full training-set snapshot belonging to class y.
struct ClassSnapshot {
    uint32_t class_id = 0;
    uint32_t epoch = 0;
    Matrix features; // n_y x d
};

/// A source-epoch snapshot translated so its class mean lands on the target
/// epoch's class mean (variants can also match per-dimension spread, or use
/// the all-class mean instead).
struct AlignedSnapshot {
    uint32_t class_id = 0;
    uint32_t epoch_src = 0;
    uint32_t epoch_tgt = 0;
    Matrix features;
};

struct TrailRowOrigin {
    uint32_t epoch = 0;
    uint32_t row = 0; // row index within the source class snapshot
};

/// Assembled augmented feature set for one class at one epoch: exactly
/// target_count rows, newest epoch first, older epochs mean-aligned onto the
/// target. provenance[i] names where row i came from.
struct TrailSet {
    uint32_t class_id = 0;
    uint32_t epoch = 0;
    Matrix features; // target_count x d
    std::vector<TrailRowOrigin> provenance;
};

/// Payload retention policy. Adaptive keeps, per class, only the
/// ceil(n_B / n_j) most recent epochs of raw features (classes at or above
/// n_B keep depth 1); class means are kept for every epoch either way.
struct StorePolicy {
    static StorePolicy unlimited() { return StorePolicy{true, 0}; }
    static StorePolicy adaptive(uint32_t n_b);

    bool keep_all = true;
    uint32_t n_b = 0;

    uint32_t depth_for(uint32_t class_count) const;
};

inline uint32_t backtrack_depth(uint32_t target_count, uint32_t class_count) {
    return (target_count + class_count - 1) / class_count; // ceil
}

/// Per-epoch class snapshot store with alignment and trail assembly.
/// record() is single-writer; reads are const and safe to run concurrently
/// once recording for an epoch has returned.
class TrailStore {
public:
    TrailStore(uint32_t num_classes, uint32_t feature_dim, StorePolicy policy);

    /// Splits the epoch's full snapshot by class, caches class means (and the
    /// all-class mean), then evicts payloads that fall outside the policy
    /// window. Epochs are 1-based and must arrive strictly increasing.
    void record(uint32_t epoch, const Matrix& features, std::span<const uint32_t> labels);

    uint32_t num_classes() const { return num_classes_; }
    uint32_t feature_dim() const { return dim_; }
    uint32_t last_epoch() const { return last_epoch_; }
    const StorePolicy& policy() const { return policy_; }
    /// Per-class training cardinalities (fixed by the first record call).
    const std::vector<uint32_t>& class_counts() const { return class_counts_; }

    bool has_payload(uint32_t class_id, uint32_t epoch) const;
    const Matrix& class_snapshot(uint32_t class_id, uint32_t epoch) const;

    /// Cached arithmetic mean of the class snapshot rows (kept for all
    /// epochs, even after payload eviction). Double accumulation.
    std::vector<double> class_mean(uint32_t class_id, uint32_t epoch) const;
    std::vector<double> all_class_mean(uint32_t epoch) const;

    /// Mean alignment: row - mean(src) + mean(tgt), computed in double and
    /// rounded once to f32. Within-class deviations are preserved exactly.
    AlignedSnapshot align(uint32_t class_id, uint32_t epoch_src, uint32_t epoch_tgt) const;

    /// mean: as align(). mean_and_variance: deviations are additionally
    /// rescaled per dimension by target/source std (source std floored at
    /// 1e-8). class_agnostic: translates by all-class means instead.
    AlignedSnapshot align_variant(uint32_t class_id, uint32_t epoch_src,
                                  uint32_t epoch_tgt, AlignMode mode) const;

    /// Assembles the trail set for class j at the target epoch: the target
    /// snapshot in full, then aligned snapshots from epoch-1, epoch-2, ...;
    /// the earliest contributing epoch is sampled without replacement to hit
    /// target_count exactly. Classes at or above target_count are sampled
    /// from the target epoch alone. Throws InsufficientHistoryError when the
    /// required depth reaches past epoch 1.
    TrailSet assemble(uint32_t class_id, uint32_t epoch, uint32_t target_count,
                      Rng& rng, AlignMode mode = AlignMode::mean) const;

    /// Raw feature floats currently held (payloads only, means excluded).
    size_t payload_floats() const;
    /// Retained payload epochs for one class, ascending.
    std::vector<uint32_t> retained_epochs(uint32_t class_id) const;

    /// Full snapshot at one epoch, rows grouped by class (requires all
    /// payloads of that epoch). Labels returned alongside.
    std::pair<Matrix, std::vector<uint32_t>> full_snapshot(uint32_t epoch) const;

    void save(const std::filesystem::path& path, uint64_t config_hash) const;
    static TrailStore load(const std::filesystem::path& path);

    void export_snapshot_csv(uint32_t class_id, uint32_t epoch, std::ostream& out) const;
    static void export_trailset_csv(const TrailSet& ts, std::ostream& out);

private:
    void check_class(uint32_t class_id) const;
    const std::vector<double>& mean_ref(uint32_t class_id, uint32_t epoch) const;

    uint32_t num_classes_;
    uint32_t dim_;
    StorePolicy policy_;
    uint32_t last_epoch_ = 0;
    std::vector<uint32_t> class_counts_;                       // fixed by first record
    std::vector<std::map<uint32_t, Matrix>> payloads_;         // [class][epoch]
    std::vector<std::map<uint32_t, std::vector<double>>> means_; // [class][epoch], all epochs
    std::map<uint32_t, std::vector<double>> global_means_;     // [epoch]
};

} // namespace breadcrumbs
