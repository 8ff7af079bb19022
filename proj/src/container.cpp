#include "breadcrumbs/container.hpp"

#include <array>
#include <cstring>
#include <fstream>

namespace breadcrumbs {

namespace {

constexpr std::array<char, 4> kMagic = {'B', 'C', 'T', 'S'};

void put_u32(std::ostream& out, uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}
void put_u64(std::ostream& out, uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}
void put_f32(std::ostream& out, const float* data, size_t n) {
    out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(float)));
}
void put_tag(std::ostream& out, const char tag[4]) { out.write(tag, 4); }

uint32_t get_u32(std::istream& in) {
    uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw IoError("container: truncated file (u32)");
    return v;
}
uint64_t get_u64(std::istream& in) {
    uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw IoError("container: truncated file (u64)");
    return v;
}
void get_f32(std::istream& in, float* data, size_t n) {
    in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * sizeof(float)));
    if (!in) throw IoError("container: truncated file (f32 payload)");
}

void put_matrix(std::ostream& out, const Matrix& m) {
    put_u32(out, m.rows);
    put_u32(out, m.cols);
    put_f32(out, m.data.data(), m.data.size());
}

Matrix get_matrix(std::istream& in) {
    const uint32_t rows = get_u32(in);
    const uint32_t cols = get_u32(in);
    Matrix m(rows, cols);
    get_f32(in, m.data.data(), m.data.size());
    return m;
}

void read_header(std::istream& in, const std::filesystem::path& path,
                 uint64_t& hash, uint32_t& dim) {
    std::array<char, 4> magic{};
    in.read(magic.data(), 4);
    if (!in || magic != kMagic)
        throw IoError("container: bad magic in " + path.string());
    const uint32_t version = get_u32(in);
    if (version != kFormatVersion)
        throw IoError("container: unsupported format version " + std::to_string(version));
    hash = get_u64(in);
    dim = get_u32(in);
}

} // namespace

void Container::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("container: cannot open for write: " + path.string());

    out.write(kMagic.data(), 4);
    put_u32(out, kFormatVersion);
    put_u64(out, config_hash);
    put_u32(out, dim);

    put_u32(out, static_cast<uint32_t>(snapshots.size()));
    for (const auto& rec : snapshots) {
        put_u32(out, rec.class_id);
        put_u32(out, rec.epoch);
        put_u32(out, rec.features.rows);
        put_f32(out, rec.features.data.data(), rec.features.data.size());
    }

    if (!means.empty()) {
        put_tag(out, "MEAN");
        put_u32(out, static_cast<uint32_t>(means.size()));
        for (const auto& m : means) {
            put_u32(out, m.class_id);
            put_u32(out, m.epoch);
            put_f32(out, m.mean.data(), m.mean.size());
        }
    }

    if (store_meta) {
        put_tag(out, "CCNT");
        put_u32(out, static_cast<uint32_t>(store_meta->class_counts.size()));
        for (const uint32_t c : store_meta->class_counts) put_u32(out, c);
        put_u32(out, store_meta->last_epoch);
        put_u32(out, store_meta->policy_unlimited ? 1u : 0u);
        put_u32(out, store_meta->policy_n_b);
    }

    if (dataset) {
        put_tag(out, "DSET");
        put_u32(out, static_cast<uint32_t>(dataset->split));
        put_u32(out, dataset->num_classes());
        put_u32(out, dataset->num_samples());
        for (const uint32_t y : dataset->labels) put_u32(out, y);
        put_f32(out, dataset->inputs.data.data(), dataset->inputs.data.size());
        for (const uint32_t c : dataset->class_counts) put_u32(out, c);
    }

    if (params) {
        put_tag(out, "PARM");
        put_u32(out, params->epoch);
        put_u32(out, params->activation);
        put_u32(out, static_cast<uint32_t>(params->tensors.size()));
        for (const auto& t : params->tensors) put_matrix(out, t);
    }

    if (classifier) {
        put_tag(out, "CLSF");
        put_u32(out, classifier->w.rows);
        put_u32(out, classifier->w.cols);
        put_f32(out, classifier->w.data.data(), classifier->w.data.size());
        put_f32(out, classifier->b.data(), classifier->b.size());
    }

    if (!out) throw IoError("container: write failed: " + path.string());
}

Container Container::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("container: cannot open: " + path.string());

    Container c;
    read_header(in, path, c.config_hash, c.dim);

    const uint32_t snap_count = get_u32(in);
    c.snapshots.reserve(snap_count);
    for (uint32_t i = 0; i < snap_count; ++i) {
        SnapshotRecord rec;
        rec.class_id = get_u32(in);
        rec.epoch = get_u32(in);
        const uint32_t rows = get_u32(in);
        rec.features = Matrix(rows, c.dim);
        get_f32(in, rec.features.data.data(), rec.features.data.size());
        c.snapshots.push_back(std::move(rec));
    }

    char tag[4];
    while (in.read(tag, 4)) {
        if (std::memcmp(tag, "MEAN", 4) == 0) {
            const uint32_t count = get_u32(in);
            c.means.reserve(count);
            for (uint32_t i = 0; i < count; ++i) {
                MeanRecord m;
                m.class_id = get_u32(in);
                m.epoch = get_u32(in);
                m.mean.resize(c.dim);
                get_f32(in, m.mean.data(), m.mean.size());
                c.means.push_back(std::move(m));
            }
        } else if (std::memcmp(tag, "CCNT", 4) == 0) {
            StoreMeta meta;
            const uint32_t classes = get_u32(in);
            meta.class_counts.resize(classes);
            for (auto& v : meta.class_counts) v = get_u32(in);
            meta.last_epoch = get_u32(in);
            meta.policy_unlimited = get_u32(in) != 0;
            meta.policy_n_b = get_u32(in);
            c.store_meta = std::move(meta);
        } else if (std::memcmp(tag, "DSET", 4) == 0) {
            Dataset ds;
            ds.split = static_cast<Split>(get_u32(in));
            const uint32_t classes = get_u32(in);
            const uint32_t samples = get_u32(in);
            ds.labels.resize(samples);
            for (auto& y : ds.labels) y = get_u32(in);
            ds.inputs = Matrix(samples, c.dim);
            get_f32(in, ds.inputs.data.data(), ds.inputs.data.size());
            ds.class_counts.resize(classes);
            for (auto& v : ds.class_counts) v = get_u32(in);
            c.dataset = std::move(ds);
        } else if (std::memcmp(tag, "PARM", 4) == 0) {
            ParamsSection p;
            p.epoch = get_u32(in);
            p.activation = get_u32(in);
            const uint32_t n_tensors = get_u32(in);
            p.tensors.reserve(n_tensors);
            for (uint32_t i = 0; i < n_tensors; ++i) p.tensors.push_back(get_matrix(in));
            c.params = std::move(p);
        } else if (std::memcmp(tag, "CLSF", 4) == 0) {
            ClassifierSection s;
            const uint32_t classes = get_u32(in);
            const uint32_t dim = get_u32(in);
            s.w = Matrix(classes, dim);
            get_f32(in, s.w.data.data(), s.w.data.size());
            s.b.resize(classes);
            get_f32(in, s.b.data(), s.b.size());
            c.classifier = std::move(s);
        } else {
            throw IoError("container: unknown section tag in " + path.string());
        }
    }
    return c;
}

uint64_t Container::peek_hash(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("container: cannot open: " + path.string());
    uint64_t hash = 0;
    uint32_t dim = 0;
    read_header(in, path, hash, dim);
    return hash;
}

} // namespace breadcrumbs
