#include "breadcrumbs/classifier.hpp"

#include <algorithm>
#include <string>

namespace breadcrumbs {

const char* strategy_name(StrategyKind kind) {
    switch (kind) {
        case StrategyKind::random: return "random";
        case StrategyKind::class_balanced: return "class_balanced";
        case StrategyKind::weak_breadcrumb: return "weak_breadcrumb";
        case StrategyKind::strong_breadcrumb: return "strong_breadcrumb";
    }
    throw InvalidInputError("unknown strategy kind");
}

StrategyKind strategy_from_name(std::string_view name) {
    if (name == "random") return StrategyKind::random;
    if (name == "class_balanced") return StrategyKind::class_balanced;
    if (name == "weak_breadcrumb") return StrategyKind::weak_breadcrumb;
    if (name == "strong_breadcrumb") return StrategyKind::strong_breadcrumb;
    throw ConfigError("unknown strategy: " + std::string(name));
}

uint32_t default_target_count(std::span<const uint32_t> class_counts) {
    if (class_counts.empty()) throw InvalidInputError("default_target_count: no classes");
    uint64_t total = 0;
    for (const uint32_t n : class_counts) total += n;
    return static_cast<uint32_t>((total + class_counts.size() - 1) / class_counts.size());
}

std::vector<std::vector<std::pair<uint32_t, uint32_t>>> class_balanced_epoch(
    std::span<const uint32_t> class_counts, uint32_t draws, uint32_t batch_size,
    Rng& rng) {
    if (batch_size == 0) throw InvalidInputError("class_balanced_epoch: batch_size 0");
    for (const uint32_t n : class_counts)
        if (n == 0) throw InvalidInputError("class_balanced_epoch: empty class");

    std::vector<std::vector<std::pair<uint32_t, uint32_t>>> batches;
    std::vector<std::pair<uint32_t, uint32_t>> cur;
    cur.reserve(batch_size);
    for (uint32_t i = 0; i < draws; ++i) {
        const auto y = static_cast<uint32_t>(rng.index(class_counts.size()));
        const auto row = static_cast<uint32_t>(rng.index(class_counts[y]));
        cur.emplace_back(y, row);
        if (cur.size() == batch_size) {
            batches.push_back(std::move(cur));
            cur.clear();
            cur.reserve(batch_size);
        }
    }
    if (!cur.empty()) batches.push_back(std::move(cur));
    return batches;
}

namespace {

// Epoch training sets, one Matrix + labels per epoch view. Built lazily per
// epoch to keep peak memory at one epoch's worth of features.
struct EpochSet {
    Matrix features;
    std::vector<uint32_t> labels;
};

EpochSet gather_class_balanced(const TrailStore& store, uint32_t snapshot_epoch,
                               uint32_t draws, Rng& rng) {
    const auto& counts = store.class_counts();
    const auto pair_batches = class_balanced_epoch(counts, draws, draws, rng);
    EpochSet set;
    set.features = Matrix(draws, store.feature_dim());
    set.labels.reserve(draws);
    uint32_t row = 0;
    for (const auto& [y, r] : pair_batches.front()) {
        const auto src = store.class_snapshot(y, snapshot_epoch).row(r);
        std::copy(src.begin(), src.end(), set.features.row(row++).begin());
        set.labels.push_back(y);
    }
    return set;
}

EpochSet gather_trails(const TrailStore& store, uint32_t epoch, uint32_t n_b,
                       AlignMode mode, Rng& rng) {
    const uint32_t classes = store.num_classes();
    EpochSet set;
    set.features = Matrix(classes * n_b, store.feature_dim());
    set.labels.reserve(static_cast<size_t>(classes) * n_b);
    uint32_t row = 0;
    for (uint32_t y = 0; y < classes; ++y) {
        const TrailSet ts = store.assemble(y, epoch, n_b, rng, mode);
        for (uint32_t i = 0; i < ts.features.rows; ++i, ++row) {
            const auto src = ts.features.row(i);
            std::copy(src.begin(), src.end(), set.features.row(row).begin());
            set.labels.push_back(y);
        }
    }
    return set;
}

// Unique features of the filtered classes within the epoch's snapshot.
EpochSet gather_filtered_snapshot(const TrailStore& store, uint32_t epoch,
                                  std::span<const uint32_t> filter) {
    EpochSet set;
    uint32_t total = 0;
    for (const uint32_t y : filter) total += store.class_counts()[y];
    set.features = Matrix(total, store.feature_dim());
    set.labels.reserve(total);
    uint32_t row = 0;
    for (const uint32_t y : filter) {
        const Matrix& snap = store.class_snapshot(y, epoch);
        for (uint32_t i = 0; i < snap.rows; ++i, ++row) {
            const auto src = snap.row(i);
            std::copy(src.begin(), src.end(), set.features.row(row).begin());
            set.labels.push_back(y);
        }
    }
    return set;
}

EpochSet filter_set(const EpochSet& set, std::span<const uint32_t> filter) {
    std::vector<char> keep_class(1 + *std::max_element(set.labels.begin(), set.labels.end()), 0);
    for (const uint32_t y : filter)
        if (y < keep_class.size()) keep_class[y] = 1;
    uint32_t total = 0;
    for (const uint32_t y : set.labels) total += keep_class[y];
    EpochSet out;
    out.features = Matrix(total, set.features.cols);
    out.labels.reserve(total);
    uint32_t row = 0;
    for (uint32_t i = 0; i < set.features.rows; ++i) {
        if (!keep_class[set.labels[i]]) continue;
        const auto src = set.features.row(i);
        std::copy(src.begin(), src.end(), out.features.row(row++).begin());
        out.labels.push_back(set.labels[i]);
    }
    return out;
}

void sgd_epoch(const EpochSet& set, LinearClassifier& clf, SgdState& sgd,
               uint32_t slot_w, uint32_t slot_b, uint32_t batch_size,
               double epoch_fraction, Rng& rng) {
    const auto perm = rng.permutation(set.features.rows);
    Matrix batch;
    std::vector<uint32_t> batch_labels;
    for (uint32_t start = 0; start < perm.size(); start += batch_size) {
        const uint32_t n = std::min<uint32_t>(batch_size,
                                              static_cast<uint32_t>(perm.size()) - start);
        batch = Matrix(n, set.features.cols);
        batch_labels.resize(n);
        for (uint32_t i = 0; i < n; ++i) {
            const auto src = set.features.row(perm[start + i]);
            std::copy(src.begin(), src.end(), batch.row(i).begin());
            batch_labels[i] = set.labels[perm[start + i]];
        }
        const CeResult ce = ce_loss_and_grad(clf.w, clf.b, batch, batch_labels);
        sgd.step(slot_w, clf.w.data, ce.grad_w.data, epoch_fraction);
        sgd.step(slot_b, clf.b, ce.grad_b, epoch_fraction);
    }
}

} // namespace

LinearClassifier train_stage2(const TrailStore& store, const SamplingStrategy& strategy,
                              const Stage2Config& cfg, AlignMode align_mode,
                              Stage2Trace* trace) {
    if (store.last_epoch() == 0) throw StateError("train_stage2: store is empty");
    const uint32_t stage1_epochs = store.last_epoch();
    const uint32_t classes = store.num_classes();
    const uint32_t d = store.feature_dim();
    const uint32_t n_b = strategy.target_count > 0
                             ? strategy.target_count
                             : default_target_count(store.class_counts());
    uint32_t epochs = cfg.epochs > 0 ? cfg.epochs : stage1_epochs;
    if (strategy.kind == StrategyKind::strong_breadcrumb && epochs != stage1_epochs)
        throw ConfigError("strong_breadcrumb: stage-2 epochs must equal recorded epochs");

    // Fallback horizon for strong sampling: trails exist for every class once
    // the epoch index reaches the deepest required back-tracking depth.
    uint32_t depth_max = 1;
    for (const uint32_t n : store.class_counts())
        depth_max = std::max(depth_max, n >= n_b ? 1u : backtrack_depth(n_b, n));

    Rng rng = Rng(cfg.seed).derive("stage2");
    Rng sample_rng = rng.derive("sampler");

    LinearClassifier clf;
    clf.w = Matrix(classes, d, 0.0f);
    clf.b.assign(classes, 0.0f);
    SgdState sgd(cfg.opt);
    const uint32_t slot_w = sgd.add_param(clf.w.size(), true);
    const uint32_t slot_b = sgd.add_param(clf.b.size(), cfg.opt.decay_bias);

    EpochSet fixed; // weak trails / final snapshot, reused across epochs
    switch (strategy.kind) {
        case StrategyKind::weak_breadcrumb:
            fixed = gather_trails(store, stage1_epochs, n_b, align_mode, sample_rng);
            break;
        case StrategyKind::random: {
            auto [features, labels] = store.full_snapshot(stage1_epochs);
            fixed.features = std::move(features);
            fixed.labels = std::move(labels);
            break;
        }
        default: break;
    }

    for (uint32_t e = 1; e <= epochs; ++e) {
        const double fraction = static_cast<double>(e - 1) / epochs;
        const EpochSet* epoch_set = &fixed;
        EpochSet scratch;
        switch (strategy.kind) {
            case StrategyKind::random:
            case StrategyKind::weak_breadcrumb:
                break;
            case StrategyKind::class_balanced:
                scratch = gather_class_balanced(store, stage1_epochs,
                                                classes * n_b, sample_rng);
                epoch_set = &scratch;
                break;
            case StrategyKind::strong_breadcrumb:
                if (e < depth_max)
                    scratch = gather_class_balanced(store, e, classes * n_b, sample_rng);
                else
                    scratch = gather_trails(store, e, n_b, align_mode, sample_rng);
                epoch_set = &scratch;
                break;
        }
        sgd_epoch(*epoch_set, clf, sgd, slot_w, slot_b, cfg.batch_size, fraction, rng);

        if (trace) {
            trace->epoch_classifiers.push_back(clf);
            std::vector<uint32_t> filter = trace->class_filter;
            if (filter.empty()) {
                filter.resize(classes);
                for (uint32_t y = 0; y < classes; ++y) filter[y] = y;
            }
            // Resampling strategies train on duplicated snapshot rows; the
            // unique features of such an epoch are the snapshot itself.
            const bool resampled =
                strategy.kind == StrategyKind::class_balanced ||
                strategy.kind == StrategyKind::random ||
                (strategy.kind == StrategyKind::strong_breadcrumb && e < depth_max);
            EpochSet snap;
            if (resampled) {
                const uint32_t snap_epoch =
                    strategy.kind == StrategyKind::strong_breadcrumb ? e : stage1_epochs;
                snap = gather_filtered_snapshot(store, snap_epoch, filter);
            } else {
                snap = filter_set(*epoch_set, filter);
            }
            trace->epoch_features.push_back(std::move(snap.features));
            trace->epoch_labels.push_back(std::move(snap.labels));
        }
    }
    return clf;
}

std::vector<uint32_t> predict(const LinearClassifier& clf, const Matrix& z) {
    if (z.cols != clf.w.cols) throw ShapeError("predict: feature dim mismatch");
    std::vector<uint32_t> out;
    out.reserve(z.rows);
    const uint32_t classes = clf.w.rows;
    std::vector<double> logits(classes);
    for (uint32_t i = 0; i < z.rows; ++i) {
        const auto zrow = z.row(i);
        for (uint32_t c = 0; c < classes; ++c) {
            const float* wr = clf.w.data.data() + static_cast<size_t>(c) * clf.w.cols;
            double acc = clf.b[c];
            for (uint32_t k = 0; k < clf.w.cols; ++k)
                acc += static_cast<double>(wr[k]) * zrow[k];
            logits[c] = acc;
        }
        uint32_t best = 0;
        for (uint32_t c = 1; c < classes; ++c)
            if (logits[c] > logits[best]) best = c; // ties keep the lower index
        out.push_back(best);
    }
    return out;
}

} // namespace breadcrumbs
