#include "breadcrumbs/trailstore.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

namespace breadcrumbs {

StorePolicy StorePolicy::adaptive(uint32_t n_b) {
    if (n_b == 0) throw ConfigError("store policy: n_b must be >= 1");
    return StorePolicy{false, n_b};
}

uint32_t StorePolicy::depth_for(uint32_t class_count) const {
    if (keep_all) return 0xFFFFFFFFu;
    if (class_count >= n_b) return 1;
    return backtrack_depth(n_b, class_count);
}

TrailStore::TrailStore(uint32_t num_classes, uint32_t feature_dim, StorePolicy policy)
    : num_classes_(num_classes), dim_(feature_dim), policy_(policy),
      payloads_(num_classes), means_(num_classes) {
    if (num_classes == 0 || feature_dim == 0)
        throw ConfigError("trail store: classes and feature dim must be nonzero");
}

void TrailStore::check_class(uint32_t class_id) const {
    if (class_id >= num_classes_)
        throw InvalidInputError("trail store: class " + std::to_string(class_id) +
                                " out of range");
}

void TrailStore::record(uint32_t epoch, const Matrix& features,
                        std::span<const uint32_t> labels) {
    if (epoch == 0) throw InvalidInputError("record: epochs are 1-based");
    if (epoch <= last_epoch_)
        throw StateError("record: epoch " + std::to_string(epoch) +
                         " not after " + std::to_string(last_epoch_));
    if (features.cols != dim_) throw ShapeError("record: feature dim mismatch");
    if (labels.size() != features.rows) throw ShapeError("record: label count mismatch");
    require_finite(features, "record: features");

    std::vector<uint32_t> counts(num_classes_, 0);
    for (const uint32_t y : labels) {
        if (y >= num_classes_) throw InvalidInputError("record: label out of range");
        ++counts[y];
    }
    if (class_counts_.empty()) {
        for (const uint32_t c : counts)
            if (c == 0) throw InvalidInputError("record: every class must be nonempty");
        class_counts_ = counts;
    } else if (counts != class_counts_) {
        throw InvalidInputError("record: class cardinalities changed across epochs");
    }

    // Split by class, preserving within-class sample order.
    std::vector<Matrix> split(num_classes_);
    std::vector<uint32_t> next_row(num_classes_, 0);
    for (uint32_t y = 0; y < num_classes_; ++y) split[y] = Matrix(counts[y], dim_);
    for (uint32_t i = 0; i < features.rows; ++i) {
        const uint32_t y = labels[i];
        auto dst = split[y].row(next_row[y]++);
        const auto src = features.row(i);
        std::copy(src.begin(), src.end(), dst.begin());
    }

    std::vector<double> global(dim_, 0.0);
    for (uint32_t y = 0; y < num_classes_; ++y) {
        std::vector<double> mean(dim_, 0.0);
        for (uint32_t i = 0; i < split[y].rows; ++i) {
            const auto r = split[y].row(i);
            for (uint32_t k = 0; k < dim_; ++k) mean[k] += r[k];
        }
        for (uint32_t k = 0; k < dim_; ++k) {
            global[k] += mean[k];
            mean[k] /= counts[y];
        }
        means_[y][epoch] = std::move(mean);
        payloads_[y][epoch] = std::move(split[y]);
    }
    for (uint32_t k = 0; k < dim_; ++k) global[k] /= features.rows;
    global_means_[epoch] = std::move(global);
    last_epoch_ = epoch;

    // Evict payloads outside the per-class retention window. Means stay.
    if (!policy_.keep_all) {
        for (uint32_t y = 0; y < num_classes_; ++y) {
            const uint32_t depth = policy_.depth_for(class_counts_[y]);
            if (epoch <= depth) continue;
            const uint32_t oldest_kept = epoch - depth + 1;
            auto& per_epoch = payloads_[y];
            per_epoch.erase(per_epoch.begin(), per_epoch.lower_bound(oldest_kept));
        }
    }
}

bool TrailStore::has_payload(uint32_t class_id, uint32_t epoch) const {
    check_class(class_id);
    const auto& per_epoch = payloads_[class_id];
    return per_epoch.find(epoch) != per_epoch.end();
}

const Matrix& TrailStore::class_snapshot(uint32_t class_id, uint32_t epoch) const {
    check_class(class_id);
    const auto& per_epoch = payloads_[class_id];
    const auto it = per_epoch.find(epoch);
    if (it == per_epoch.end())
        throw NotFoundError("snapshot payload for class " + std::to_string(class_id) +
                            " epoch " + std::to_string(epoch) + " not retained");
    return it->second;
}

const std::vector<double>& TrailStore::mean_ref(uint32_t class_id, uint32_t epoch) const {
    check_class(class_id);
    const auto& per_epoch = means_[class_id];
    const auto it = per_epoch.find(epoch);
    if (it == per_epoch.end())
        throw NotFoundError("class mean for class " + std::to_string(class_id) +
                            " epoch " + std::to_string(epoch) + " not recorded");
    return it->second;
}

std::vector<double> TrailStore::class_mean(uint32_t class_id, uint32_t epoch) const {
    return mean_ref(class_id, epoch);
}

std::vector<double> TrailStore::all_class_mean(uint32_t epoch) const {
    const auto it = global_means_.find(epoch);
    if (it == global_means_.end())
        throw NotFoundError("all-class mean for epoch " + std::to_string(epoch) +
                            " not recorded");
    return it->second;
}

AlignedSnapshot TrailStore::align(uint32_t class_id, uint32_t epoch_src,
                                  uint32_t epoch_tgt) const {
    return align_variant(class_id, epoch_src, epoch_tgt, AlignMode::mean);
}

AlignedSnapshot TrailStore::align_variant(uint32_t class_id, uint32_t epoch_src,
                                          uint32_t epoch_tgt, AlignMode mode) const {
    const Matrix& src = class_snapshot(class_id, epoch_src);

    AlignedSnapshot out;
    out.class_id = class_id;
    out.epoch_src = epoch_src;
    out.epoch_tgt = epoch_tgt;

    if (epoch_src == epoch_tgt) {
        out.features = src; // identity transfer, rows copied verbatim
        return out;
    }

    std::vector<double> mu_src, mu_tgt;
    if (mode == AlignMode::class_agnostic) {
        mu_src = all_class_mean(epoch_src);
        mu_tgt = all_class_mean(epoch_tgt);
    } else {
        mu_src = mean_ref(class_id, epoch_src);
        mu_tgt = mean_ref(class_id, epoch_tgt);
    }

    std::vector<double> scale;
    if (mode == AlignMode::mean_and_variance) {
        // Per-dimension population std of source and target payloads.
        const Matrix& tgt = class_snapshot(class_id, epoch_tgt);
        std::vector<double> var_src(dim_, 0.0), var_tgt(dim_, 0.0);
        for (uint32_t i = 0; i < src.rows; ++i) {
            const auto r = src.row(i);
            for (uint32_t k = 0; k < dim_; ++k) {
                const double dvk = r[k] - mu_src[k];
                var_src[k] += dvk * dvk;
            }
        }
        const auto mu_t = mean_ref(class_id, epoch_tgt);
        for (uint32_t i = 0; i < tgt.rows; ++i) {
            const auto r = tgt.row(i);
            for (uint32_t k = 0; k < dim_; ++k) {
                const double dvk = r[k] - mu_t[k];
                var_tgt[k] += dvk * dvk;
            }
        }
        scale.resize(dim_);
        for (uint32_t k = 0; k < dim_; ++k) {
            const double sd_src = std::sqrt(var_src[k] / src.rows);
            const double sd_tgt = std::sqrt(var_tgt[k] / tgt.rows);
            scale[k] = sd_tgt / std::max(sd_src, 1e-8);
        }
    }

    out.features = Matrix(src.rows, dim_);
    for (uint32_t i = 0; i < src.rows; ++i) {
        const auto r = src.row(i);
        auto o = out.features.row(i);
        for (uint32_t k = 0; k < dim_; ++k) {
            const double dev = r[k] - mu_src[k];
            const double moved = scale.empty() ? dev : dev * scale[k];
            o[k] = static_cast<float>(mu_tgt[k] + moved);
        }
    }
    return out;
}

TrailSet TrailStore::assemble(uint32_t class_id, uint32_t epoch, uint32_t target_count,
                              Rng& rng, AlignMode mode) const {
    check_class(class_id);
    if (target_count == 0) throw InvalidInputError("assemble: target_count must be >= 1");
    if (epoch == 0 || epoch > last_epoch_)
        throw InvalidInputError("assemble: epoch " + std::to_string(epoch) + " not recorded");
    const uint32_t n_j = class_counts_.at(class_id);

    TrailSet ts;
    ts.class_id = class_id;
    ts.epoch = epoch;
    ts.features = Matrix(target_count, dim_);
    ts.provenance.reserve(target_count);

    if (n_j >= target_count) {
        // No back-tracking: sample target_count rows from the target epoch.
        const Matrix& snap = class_snapshot(class_id, epoch);
        const auto pick = rng.sample_without_replacement(n_j, target_count);
        for (uint32_t i = 0; i < target_count; ++i) {
            const auto src = snap.row(pick[i]);
            std::copy(src.begin(), src.end(), ts.features.row(i).begin());
            ts.provenance.push_back({epoch, pick[i]});
        }
        return ts;
    }

    const uint32_t depth = backtrack_depth(target_count, n_j);
    if (epoch < depth)
        throw InsufficientHistoryError(
            "assemble: class " + std::to_string(class_id) + " needs " +
            std::to_string(depth) + " epochs of history at epoch " + std::to_string(epoch));

    // Full snapshots from the target epoch back through depth-1 epochs, then
    // top up from the earliest epoch with a without-replacement sample.
    uint32_t row = 0;
    for (uint32_t k = 0; k + 1 < depth; ++k) {
        const uint32_t e_src = epoch - k;
        const AlignedSnapshot aligned = align_variant(class_id, e_src, epoch, mode);
        for (uint32_t i = 0; i < n_j; ++i, ++row) {
            const auto src = aligned.features.row(i);
            std::copy(src.begin(), src.end(), ts.features.row(row).begin());
            ts.provenance.push_back({e_src, i});
        }
    }
    const uint32_t residual = target_count - (depth - 1) * n_j;
    const uint32_t e_last = epoch - depth + 1;
    const AlignedSnapshot aligned = align_variant(class_id, e_last, epoch, mode);
    const auto pick = rng.sample_without_replacement(n_j, residual);
    for (uint32_t i = 0; i < residual; ++i, ++row) {
        const auto src = aligned.features.row(pick[i]);
        std::copy(src.begin(), src.end(), ts.features.row(row).begin());
        ts.provenance.push_back({e_last, pick[i]});
    }
    return ts;
}

size_t TrailStore::payload_floats() const {
    size_t total = 0;
    for (const auto& per_epoch : payloads_)
        for (const auto& [e, m] : per_epoch) total += m.size();
    return total;
}

std::vector<uint32_t> TrailStore::retained_epochs(uint32_t class_id) const {
    check_class(class_id);
    std::vector<uint32_t> epochs;
    for (const auto& [e, m] : payloads_[class_id]) epochs.push_back(e);
    return epochs;
}

std::pair<Matrix, std::vector<uint32_t>> TrailStore::full_snapshot(uint32_t epoch) const {
    uint32_t total = 0;
    for (uint32_t y = 0; y < num_classes_; ++y) total += class_snapshot(y, epoch).rows;
    Matrix out(total, dim_);
    std::vector<uint32_t> labels;
    labels.reserve(total);
    uint32_t row = 0;
    for (uint32_t y = 0; y < num_classes_; ++y) {
        const Matrix& snap = class_snapshot(y, epoch);
        for (uint32_t i = 0; i < snap.rows; ++i, ++row) {
            const auto src = snap.row(i);
            std::copy(src.begin(), src.end(), out.row(row).begin());
            labels.push_back(y);
        }
    }
    return {std::move(out), std::move(labels)};
}

void TrailStore::save(const std::filesystem::path& path, uint64_t config_hash) const {
    Container c;
    c.config_hash = config_hash;
    c.dim = dim_;
    for (uint32_t y = 0; y < num_classes_; ++y)
        for (const auto& [e, m] : payloads_[y])
            c.snapshots.push_back(SnapshotRecord{y, e, m});
    for (uint32_t y = 0; y < num_classes_; ++y) {
        for (const auto& [e, mean] : means_[y]) {
            MeanRecord rec;
            rec.class_id = y;
            rec.epoch = e;
            rec.mean.assign(mean.begin(), mean.end());
            c.means.push_back(std::move(rec));
        }
    }
    for (const auto& [e, mean] : global_means_) {
        MeanRecord rec;
        rec.class_id = kAllClasses;
        rec.epoch = e;
        rec.mean.assign(mean.begin(), mean.end());
        c.means.push_back(std::move(rec));
    }
    StoreMeta meta;
    meta.class_counts = class_counts_;
    meta.last_epoch = last_epoch_;
    meta.policy_unlimited = policy_.keep_all;
    meta.policy_n_b = policy_.n_b;
    c.store_meta = meta;
    c.save(path);
}

TrailStore TrailStore::load(const std::filesystem::path& path) {
    const Container c = Container::load(path);
    if (!c.store_meta) throw IoError("store file missing metadata section: " + path.string());
    const auto& meta = *c.store_meta;
    const auto num_classes = static_cast<uint32_t>(meta.class_counts.size());
    TrailStore store(num_classes, c.dim,
                     meta.policy_unlimited ? StorePolicy::unlimited()
                                           : StorePolicy::adaptive(meta.policy_n_b));
    store.class_counts_ = meta.class_counts;
    store.last_epoch_ = meta.last_epoch;
    for (const auto& rec : c.snapshots) {
        if (rec.class_id >= num_classes) throw IoError("store file: class out of range");
        store.payloads_[rec.class_id][rec.epoch] = rec.features;
    }
    for (const auto& rec : c.means) {
        std::vector<double> mean(rec.mean.begin(), rec.mean.end());
        if (rec.class_id == kAllClasses) store.global_means_[rec.epoch] = std::move(mean);
        else if (rec.class_id < num_classes)
            store.means_[rec.class_id][rec.epoch] = std::move(mean);
        else throw IoError("store file: mean class out of range");
    }
    return store;
}

void TrailStore::export_snapshot_csv(uint32_t class_id, uint32_t epoch,
                                     std::ostream& out) const {
    const Matrix& snap = class_snapshot(class_id, epoch);
    out << "class,epoch,row";
    for (uint32_t k = 0; k < dim_; ++k) out << ",f" << k;
    out << "\n";
    char buf[64];
    for (uint32_t i = 0; i < snap.rows; ++i) {
        out << class_id << ',' << epoch << ',' << i;
        for (const float v : snap.row(i)) {
            std::snprintf(buf, sizeof(buf), ",%.9g", static_cast<double>(v));
            out << buf;
        }
        out << "\n";
    }
}

void TrailStore::export_trailset_csv(const TrailSet& ts, std::ostream& out) {
    out << "class,target_epoch,src_epoch,src_row";
    for (uint32_t k = 0; k < ts.features.cols; ++k) out << ",f" << k;
    out << "\n";
    char buf[64];
    for (uint32_t i = 0; i < ts.features.rows; ++i) {
        out << ts.class_id << ',' << ts.epoch << ',' << ts.provenance[i].epoch << ','
            << ts.provenance[i].row;
        for (const float v : ts.features.row(i)) {
            std::snprintf(buf, sizeof(buf), ",%.9g", static_cast<double>(v));
            out << buf;
        }
        out << "\n";
    }
}

} // namespace breadcrumbs
