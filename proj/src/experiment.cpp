#include "breadcrumbs/experiment.hpp"

#include <array>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

namespace breadcrumbs {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kToolVersion = "0.1.0";

double now_seconds() {
    using namespace std::chrono;
    return duration<double>(steady_clock::now().time_since_epoch()).count();
}

const char* align_mode_name(AlignMode m) {
    switch (m) {
        case AlignMode::mean: return "mean";
        case AlignMode::mean_and_variance: return "mean_and_variance";
        case AlignMode::class_agnostic: return "class_agnostic";
    }
    throw ConfigError("unknown align mode");
}

AlignMode align_mode_from_name(const std::string& s) {
    if (s == "mean") return AlignMode::mean;
    if (s == "mean_and_variance") return AlignMode::mean_and_variance;
    if (s == "class_agnostic") return AlignMode::class_agnostic;
    throw ConfigError("unknown align_mode: " + s);
}

const char* activation_name(Activation a) {
    return a == Activation::tanh_fn ? "tanh" : "relu";
}

Activation activation_from_name(const std::string& s) {
    if (s == "tanh") return Activation::tanh_fn;
    if (s == "relu") return Activation::relu;
    throw ConfigError("unknown activation: " + s);
}

std::string hex64(uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

// Pulls a key out of the config object, tracking which keys were consumed so
// typos can be rejected.
struct KeyReader {
    const json& j;
    std::set<std::string> seen;

    template <typename T>
    T get(const std::string& key, const T& fallback) {
        seen.insert(key);
        if (!j.contains(key)) return fallback;
        try {
            return j.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError("config key '" + key + "': " + e.what());
        }
    }

    template <typename T>
    T require(const std::string& key) {
        seen.insert(key);
        if (!j.contains(key)) throw ConfigError("config: missing required key '" + key + "'");
        try {
            return j.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError("config key '" + key + "': " + e.what());
        }
    }

    void reject_unknown() const {
        for (const auto& [key, value] : j.items())
            if (seen.find(key) == seen.end())
                throw ConfigError("config: unknown key '" + key + "'");
    }
};

void write_text(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("write failed: " + path.string());
}

void write_json_file(const fs::path& path, const json& j) {
    write_text(path, j.dump(2) + "\n");
}

json read_json_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw IoError("bad JSON in " + path.string() + ": " + e.what());
    }
}

} // namespace

uint64_t fnv1a64(std::string_view bytes) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (const char c : bytes) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ull;
    }
    return h;
}

double round4(double v) { return std::round(v * 1e4) / 1e4; }

ExperimentConfig ExperimentConfig::from_file(const fs::path& path) {
    return from_json(read_json_file(path));
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("config: top level must be an object");
    KeyReader r{j, {}};
    ExperimentConfig cfg;

    cfg.seeds = r.require<std::vector<uint64_t>>("seeds");
    if (cfg.seeds.empty()) throw ConfigError("config: 'seeds' must be nonempty");
    cfg.out_dir = r.require<std::string>("out_dir");
    if (cfg.out_dir.empty()) throw ConfigError("config: 'out_dir' must be nonempty");

    cfg.data.classes = r.get<uint32_t>("classes", 50);
    cfg.data.dims = r.get<uint32_t>("dims", 32);
    cfg.data.n_max = r.get<uint32_t>("n_max", 500);
    cfg.data.n_min = r.get<uint32_t>("n_min", 5);
    cfg.data.pareto_alpha = r.get<double>("pareto_alpha", 0.0);
    cfg.data.cluster_spread = r.get<double>("cluster_spread", 1.5);
    cfg.data.test_per_class = r.get<uint32_t>("test_per_class", 20);
    cfg.data.seed = r.get<uint64_t>("dataset_seed", 1);
    cfg.t_many = r.get<uint32_t>("t_many", 100);
    cfg.t_few = r.get<uint32_t>("t_few", 20);

    cfg.stage1.epochs = r.get<uint32_t>("stage1_epochs", 30);
    cfg.stage1.batch_size = r.get<uint32_t>("stage1_batch", 64);
    cfg.stage1.hidden = r.get<uint32_t>("hidden", 64);
    cfg.stage1.feature_dim = r.get<uint32_t>("feature_dim", 32);
    cfg.stage1.activation = activation_from_name(r.get<std::string>("activation", "tanh"));

    SgdConfig opt;
    // scaled for the desk batch size (full-scale recipe is 0.2 at batch 512)
    opt.base_lr = r.get<float>("base_lr", 0.025f);
    opt.momentum = r.get<float>("momentum", 0.9f);
    opt.weight_decay = r.get<float>("weight_decay", 5e-4f);
    opt.decay_bias = r.get<bool>("decay_bias", false);
    opt.total_epochs = cfg.stage1.epochs;
    cfg.stage1.opt = opt;

    cfg.stage2.epochs = r.get<uint32_t>("stage2_epochs", 0);
    cfg.stage2.batch_size = r.get<uint32_t>("stage2_batch", 64);
    cfg.stage2.opt = opt;
    cfg.stage2.opt.total_epochs = cfg.stage2.epochs > 0 ? cfg.stage2.epochs : cfg.stage1.epochs;

    cfg.n_b = r.get<uint32_t>("n_b", 0);
    cfg.align_mode = align_mode_from_name(r.get<std::string>("align_mode", "mean"));

    const auto strategy_names = r.get<std::vector<std::string>>(
        "strategies",
        {"random", "class_balanced", "weak_breadcrumb", "strong_breadcrumb"});
    if (strategy_names.empty()) throw ConfigError("config: 'strategies' must be nonempty");
    cfg.strategies.clear();
    for (const auto& name : strategy_names) cfg.strategies.push_back(strategy_from_name(name));

    cfg.verify_seeds = r.get<uint32_t>("verify_seeds", 1);
    cfg.verify.pair_count = r.get<uint32_t>("verify_pairs", 200);
    cfg.verify.duplication_count = r.get<uint32_t>("duplication_checks", 100);
    cfg.verify.seed = r.get<uint64_t>("verify_pair_seed", 7);
    cfg.verify.tol = r.get<double>("verify_tol", 1e-4);
    cfg.verify.shared_fit.max_iters = r.get<uint32_t>("fit_max_iters", 2000);
    cfg.verify.shared_fit.grad_tol = r.get<double>("fit_grad_tol", 1e-5);
    cfg.verify.shared_fit.ridge = r.get<double>("fit_ridge", 0.0);
    cfg.verify.per_class_fit.max_iters = cfg.verify.shared_fit.max_iters;
    cfg.verify.per_class_fit.grad_tol = cfg.verify.shared_fit.grad_tol;
    cfg.verify.per_class_fit.ridge = r.get<double>("per_class_ridge", 1e-3);
    cfg.verify.threads = r.get<uint32_t>("verify_threads", 2);
    cfg.hard_example_threshold = r.get<double>("hard_example_threshold", 5.0);

    r.reject_unknown();
    return cfg;
}

json ExperimentConfig::to_json() const {
    json j;
    j["seeds"] = seeds;
    j["out_dir"] = out_dir;
    j["classes"] = data.classes;
    j["dims"] = data.dims;
    j["n_max"] = data.n_max;
    j["n_min"] = data.n_min;
    j["pareto_alpha"] = data.pareto_alpha;
    j["cluster_spread"] = data.cluster_spread;
    j["test_per_class"] = data.test_per_class;
    j["dataset_seed"] = data.seed;
    j["t_many"] = t_many;
    j["t_few"] = t_few;
    j["stage1_epochs"] = stage1.epochs;
    j["stage1_batch"] = stage1.batch_size;
    j["hidden"] = stage1.hidden;
    j["feature_dim"] = stage1.feature_dim;
    j["activation"] = activation_name(stage1.activation);
    j["base_lr"] = stage1.opt.base_lr;
    j["momentum"] = stage1.opt.momentum;
    j["weight_decay"] = stage1.opt.weight_decay;
    j["decay_bias"] = stage1.opt.decay_bias;
    j["stage2_epochs"] = stage2.epochs;
    j["stage2_batch"] = stage2.batch_size;
    j["n_b"] = n_b;
    j["align_mode"] = align_mode_name(align_mode);
    std::vector<std::string> names;
    for (const auto s : strategies) names.emplace_back(strategy_name(s));
    j["strategies"] = names;
    j["verify_seeds"] = verify_seeds;
    j["verify_pairs"] = verify.pair_count;
    j["duplication_checks"] = verify.duplication_count;
    j["verify_pair_seed"] = verify.seed;
    j["verify_tol"] = verify.tol;
    j["fit_max_iters"] = verify.shared_fit.max_iters;
    j["fit_grad_tol"] = verify.shared_fit.grad_tol;
    j["fit_ridge"] = verify.shared_fit.ridge;
    j["per_class_ridge"] = verify.per_class_fit.ridge;
    j["verify_threads"] = verify.threads;
    j["hard_example_threshold"] = hard_example_threshold;
    return j;
}

// The hash covers the science knobs, not the output location: moving a run
// directory must not invalidate its artifacts.
uint64_t ExperimentConfig::hash() const {
    json j = to_json();
    j.erase("out_dir");
    j.erase("verify_threads");
    return fnv1a64(j.dump());
}

std::string ExperimentConfig::hash_hex() const { return hex64(hash()); }

fs::path resolve_out_dir(const ExperimentConfig& cfg) {
    fs::path out(cfg.out_dir);
    if (const char* root = std::getenv("BREADCRUMBS_OUT_ROOT"); root && *root)
        if (out.is_relative()) out = fs::path(root) / out;
    return out;
}

json RunManifest::to_json() const {
    json j;
    j["config_hash"] = config_hash;
    j["tool_version"] = tool_version;
    j["format_version"] = format_version;
    json stages_json = json::array();
    for (const auto& s : stages) {
        json e;
        e["name"] = s.name;
        e["files"] = s.files;
        if (!s.data_refs.empty()) e["data"] = s.data_refs;
        e["seconds"] = s.seconds;
        e["skipped"] = s.skipped;
        stages_json.push_back(e);
    }
    j["stages"] = stages_json;
    return j;
}

RunManifest RunManifest::from_json(const json& j) {
    RunManifest m;
    m.config_hash = j.at("config_hash").get<std::string>();
    m.tool_version = j.at("tool_version").get<std::string>();
    m.format_version = j.at("format_version").get<uint32_t>();
    for (const auto& e : j.at("stages")) {
        StageRecord s;
        s.name = e.at("name").get<std::string>();
        s.files = e.at("files").get<std::vector<std::string>>();
        if (e.contains("data")) s.data_refs = e.at("data").get<std::vector<std::string>>();
        s.seconds = e.at("seconds").get<double>();
        s.skipped = e.value("skipped", false);
        m.stages.push_back(std::move(s));
    }
    return m;
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

namespace {

struct Paths {
    fs::path out;
    explicit Paths(const ExperimentConfig& cfg) : out(resolve_out_dir(cfg)) {}

    fs::path dataset_dir() const { return out / "dataset"; }
    fs::path train_file() const { return dataset_dir() / "train.bcts"; }
    fs::path test_file() const { return dataset_dir() / "test.bcts"; }
    fs::path stats_file() const { return dataset_dir() / "stats.json"; }
    fs::path train_csv() const { return dataset_dir() / "train.csv"; }
    fs::path test_csv() const { return dataset_dir() / "test.csv"; }

    fs::path seed_dir(uint64_t seed) const { return out / ("seed_" + std::to_string(seed)); }
    fs::path store_file(uint64_t seed) const { return seed_dir(seed) / "store.bcts"; }
    fs::path stage1_file(uint64_t seed) const { return seed_dir(seed) / "stage1.json"; }
    fs::path checkpoint_file(uint64_t seed, uint32_t epoch) const {
        char name[32];
        std::snprintf(name, sizeof name, "epoch_%03u.bcts", epoch);
        return seed_dir(seed) / "checkpoints" / name;
    }
    fs::path classifier_file(uint64_t seed, StrategyKind s) const {
        return seed_dir(seed) / (std::string("classifier_") + strategy_name(s) + ".bcts");
    }
    fs::path metrics_file(uint64_t seed, StrategyKind s) const {
        return seed_dir(seed) / (std::string("metrics_") + strategy_name(s) + ".json");
    }
    fs::path hard_csv(uint64_t seed, StrategyKind s) const {
        return seed_dir(seed) / (std::string("hard_examples_") + strategy_name(s) + ".csv");
    }
    fs::path verify_file(uint64_t seed) const { return seed_dir(seed) / "verification.json"; }
    fs::path manifest_file() const { return out / "manifest.json"; }
    fs::path report_json() const { return out / "report.json"; }
    fs::path report_txt() const { return out / "report.txt"; }

    std::string rel(const fs::path& p) const {
        return fs::relative(p, out).generic_string();
    }
};

bool bcts_matches(const fs::path& p, uint64_t hash) {
    if (!fs::exists(p)) return false;
    try {
        return Container::peek_hash(p) == hash;
    } catch (const IoError&) {
        return false;
    }
}

bool json_matches(const fs::path& p, const std::string& hash_hex) {
    if (!fs::exists(p)) return false;
    try {
        const json j = read_json_file(p);
        return j.value("config_hash", std::string()) == hash_hex;
    } catch (const IoError&) {
        return false;
    }
}

bool csv_matches(const fs::path& p, const std::string& hash_hex) {
    if (!fs::exists(p)) return false;
    std::ifstream in(p);
    std::string line;
    if (!std::getline(in, line)) return false;
    return line == "# config_hash=" + hash_hex;
}

Dataset dataset_from_file(const fs::path& p, uint64_t expected_hash) {
    const Container c = Container::load(p);
    if (c.config_hash != expected_hash)
        throw IoError("dataset file hash mismatch: " + p.string());
    if (!c.dataset) throw IoError("no dataset section in " + p.string());
    Dataset ds = *c.dataset;
    ds.validate();
    return ds;
}

void save_dataset(const fs::path& p, const Dataset& ds, uint64_t hash) {
    Container c;
    c.config_hash = hash;
    c.dim = ds.num_dims();
    c.dataset = ds;
    fs::create_directories(p.parent_path());
    c.save(p);
}

void save_params(const fs::path& p, const EmbeddingParams& params, uint64_t hash) {
    Container c;
    c.config_hash = hash;
    c.dim = params.feature_dim();
    ParamsSection sec;
    sec.epoch = params.epoch;
    sec.activation = static_cast<uint32_t>(params.activation);
    sec.tensors.push_back(params.w1);
    Matrix b1(1, static_cast<uint32_t>(params.b1.size()));
    b1.data = params.b1;
    sec.tensors.push_back(b1);
    sec.tensors.push_back(params.w2);
    Matrix b2(1, static_cast<uint32_t>(params.b2.size()));
    b2.data = params.b2;
    sec.tensors.push_back(b2);
    c.params = std::move(sec);
    fs::create_directories(p.parent_path());
    c.save(p);
}

EmbeddingParams load_params(const fs::path& p, uint64_t expected_hash) {
    const Container c = Container::load(p);
    if (c.config_hash != expected_hash) throw IoError("checkpoint hash mismatch: " + p.string());
    if (!c.params || c.params->tensors.size() != 4)
        throw IoError("bad params section in " + p.string());
    EmbeddingParams params;
    params.epoch = c.params->epoch;
    params.activation = static_cast<Activation>(c.params->activation);
    params.w1 = c.params->tensors[0];
    params.b1 = c.params->tensors[1].data;
    params.w2 = c.params->tensors[2];
    params.b2 = c.params->tensors[3].data;
    return params;
}

void save_classifier(const fs::path& p, const LinearClassifier& clf, uint64_t hash) {
    Container c;
    c.config_hash = hash;
    c.dim = clf.dim();
    ClassifierSection sec;
    sec.w = clf.w;
    sec.b = clf.b;
    c.classifier = std::move(sec);
    fs::create_directories(p.parent_path());
    c.save(p);
}

json group_metrics_json(const GroupMetrics& gm) {
    json j;
    j["overall"] = gm.overall;
    if (gm.many) j["many"] = *gm.many;
    if (gm.medium) j["medium"] = *gm.medium;
    if (gm.few) j["few"] = *gm.few;
    j["per_class"] = gm.per_class;
    return j;
}

json verification_json(const VerificationReport& rep, const std::string& hash_hex,
                       uint64_t seed) {
    json j;
    j["config_hash"] = hash_hex;
    j["seed"] = seed;
    json bound;
    bound["pairs"] = rep.bound.size();
    bound["certified"] = rep.bound_certified;
    bound["satisfied"] = rep.bound_satisfied;
    bound["pass_rate"] = rep.bound_pass_rate;

    json verdicts = json::array();
    for (const auto& v : rep.bound) {
        json e;
        e["class"] = v.class_id;
        e["epoch_src"] = v.epoch_src;
        e["epoch_tgt"] = v.epoch_tgt;
        e["certified"] = v.certified;
        if (v.certified) {
            e["lhs"] = v.lhs;
            e["rhs"] = v.rhs;
            e["slack"] = v.slack;
            e["satisfied"] = v.satisfied;
        }
        verdicts.push_back(e);
    }
    bound["verdicts"] = verdicts;

    // slack distribution over certified pairs, log-ish bins around zero
    {
        const double edges[] = {-0.1, -0.01, -1e-3, -1e-4, 0.0, 1e-4, 1e-3, 0.01, 0.1};
        std::array<uint32_t, 10> bins{};
        for (const auto& v : rep.bound) {
            if (!v.certified) continue;
            size_t bin = 0;
            while (bin < 9 && v.slack >= edges[bin]) ++bin;
            ++bins[bin];
        }
        json hist;
        hist["edges"] = std::vector<double>(std::begin(edges), std::end(edges));
        hist["counts"] = bins;
        bound["slack_histogram"] = hist;
    }

    json violations = json::array();
    size_t attr_idx = 0;
    for (const auto& v : rep.bound) {
        if (!v.certified || v.satisfied) continue;
        json e;
        e["class"] = v.class_id;
        e["epoch_src"] = v.epoch_src;
        e["epoch_tgt"] = v.epoch_tgt;
        e["lhs"] = v.lhs;
        e["rhs"] = v.rhs;
        e["slack"] = v.slack;
        if (attr_idx < rep.attributions.size()) {
            const auto& a = rep.attributions[attr_idx++];
            e["per_class_reading_satisfied"] = a.satisfied;
            e["per_class_slack"] = a.slack;
        }
        violations.push_back(e);
    }
    bound["violations"] = violations;
    bound["seconds"] = rep.seconds_bound;
    j["augmentation_bound"] = bound;

    json direction;
    direction["pairs"] = rep.direction.pairs;
    direction["skipped"] = rep.direction.skipped;
    direction["not_certified"] = rep.direction.not_certified;
    direction["checked"] = rep.direction.checked;
    direction["passed"] = rep.direction.passed;
    json failures = json::array();
    for (const auto& f : rep.direction.failures) {
        json e;
        e["class"] = f.pair.class_id;
        e["epoch_src"] = f.pair.epoch_src;
        e["epoch_tgt"] = f.pair.epoch_tgt;
        e["loss_augmented"] = f.loss_augmented;
        e["loss_plain"] = f.loss_plain;
        failures.push_back(e);
    }
    direction["failures"] = failures;
    direction["seconds"] = rep.seconds_direction;
    j["adversarial_direction"] = direction;

    json duplication;
    duplication["checked"] = rep.duplication_checked;
    duplication["passed"] = rep.duplication_passed;
    duplication["seconds"] = rep.seconds_duplication;
    j["duplication_invariance"] = duplication;
    return j;
}

std::vector<uint32_t> few_shot_classes(const GroupAssignment& groups) {
    std::vector<uint32_t> out;
    for (uint32_t y = 0; y < groups.group.size(); ++y)
        if (groups.group[y] == Group::few) out.push_back(y);
    return out;
}

void write_hard_csv(const fs::path& p, std::span<const uint32_t> counts,
                    const std::string& hash_hex) {
    std::ostringstream os;
    os << "# config_hash=" << hash_hex << "\n";
    os << "epoch,count\n";
    for (size_t e = 0; e < counts.size(); ++e) os << (e + 1) << ',' << counts[e] << "\n";
    write_text(p, os.str());
}

double hard_csv_mean(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw IoError("cannot open " + p.string());
    std::string line;
    std::getline(in, line); // hash comment
    std::getline(in, line); // header
    double sum = 0.0;
    size_t n = 0;
    while (std::getline(in, line)) {
        const auto comma = line.find(',');
        if (comma == std::string::npos) continue;
        sum += std::stod(line.substr(comma + 1));
        ++n;
    }
    return n > 0 ? sum / n : 0.0;
}

struct MetricsByStrategy {
    // strategy -> per-seed metrics (overall/many/medium/few), absent groups NaN
    std::map<std::string, std::vector<json>> per_seed;
};

json aggregate_stat(const std::vector<double>& values, bool with_std) {
    double mean = 0.0;
    for (const double v : values) mean += v;
    mean /= values.size();
    json j;
    j["mean"] = round4(mean);
    if (with_std && values.size() > 1) {
        double var = 0.0;
        for (const double v : values) var += (v - mean) * (v - mean);
        var /= (values.size() - 1);
        j["std"] = round4(std::sqrt(var));
    }
    return j;
}

// Builds report.json + report.txt from the per-seed metrics files.
void build_report(const ExperimentConfig& cfg, const Paths& paths,
                  std::vector<StageRecord>& stages) {
    const std::string hash_hex = cfg.hash_hex();
    const double t0 = now_seconds();

    json strategies_json;
    std::ostringstream table;
    const bool multi_seed = cfg.seeds.size() > 1;
    table << "strategy            ";
    for (const char* col : {"overall", "many", "medium", "few"}) {
        char cell[24];
        std::snprintf(cell, sizeof cell, "  %-15s", col);
        table << cell;
    }
    table << "\n";

    for (const StrategyKind kind : cfg.strategies) {
        const std::string name = strategy_name(kind);
        std::map<std::string, std::vector<double>> columns;
        for (const uint64_t seed : cfg.seeds) {
            const json m = read_json_file(paths.metrics_file(seed, kind));
            if (m.value("config_hash", std::string()) != hash_hex)
                throw IoError("metrics file hash mismatch for strategy " + name);
            for (const char* col : {"overall", "many", "medium", "few"})
                if (m.contains(col)) columns[col].push_back(m.at(col).get<double>());
        }
        json row;
        for (const auto& [col, values] : columns)
            row[col] = aggregate_stat(values, multi_seed);
        strategies_json[name] = row;

        table << name;
        for (size_t pad = name.size(); pad < 20; ++pad) table << ' ';
        for (const char* col : {"overall", "many", "medium", "few"}) {
            char value[32];
            if (!row.contains(col)) {
                std::snprintf(value, sizeof value, "absent");
            } else if (row[col].contains("std")) {
                std::snprintf(value, sizeof value, "%.4f+-%.4f",
                              row[col]["mean"].get<double>(), row[col]["std"].get<double>());
            } else {
                std::snprintf(value, sizeof value, "%.4f", row[col]["mean"].get<double>());
            }
            char cell[40];
            std::snprintf(cell, sizeof cell, "  %-15s", value);
            table << cell;
        }
        table << "\n";
    }
    if (multi_seed) {
        table << "\nvalues are mean+-std over " << cfg.seeds.size() << " seeds\n";
    }

    json report;
    report["config_hash"] = hash_hex;
    report["seeds"] = cfg.seeds;
    report["strategies"] = strategies_json;

    // Hard-example means for the first seed, when breadcrumb traces exist.
    json hard;
    for (const StrategyKind kind : {StrategyKind::weak_breadcrumb, StrategyKind::strong_breadcrumb}) {
        const fs::path csv = paths.hard_csv(cfg.seeds.front(), kind);
        if (fs::exists(csv))
            hard[strategy_name(kind)] = round4(hard_csv_mean(csv));
    }
    if (!hard.empty()) report["hard_examples_mean"] = hard;

    // Verification summaries.
    json verif = json::array();
    for (uint32_t i = 0; i < cfg.verify_seeds && i < cfg.seeds.size(); ++i) {
        const fs::path vf = paths.verify_file(cfg.seeds[i]);
        if (!fs::exists(vf)) continue;
        const json v = read_json_file(vf);
        json e;
        e["seed"] = cfg.seeds[i];
        e["bound_pass_rate"] = round4(v.at("augmentation_bound").at("pass_rate").get<double>());
        e["bound_certified"] = v.at("augmentation_bound").at("certified");
        e["direction_checked"] = v.at("adversarial_direction").at("checked");
        e["direction_passed"] = v.at("adversarial_direction").at("passed");
        e["direction_skipped"] = v.at("adversarial_direction").at("skipped");
        e["duplication_passed"] = v.at("duplication_invariance").at("passed");
        e["duplication_checked"] = v.at("duplication_invariance").at("checked");
        verif.push_back(e);
    }
    if (!verif.empty()) report["verification"] = verif;

    write_json_file(paths.report_json(), report);
    write_text(paths.report_txt(), table.str());

    StageRecord rec;
    rec.name = "report";
    rec.files = {paths.rel(paths.report_json()), paths.rel(paths.report_txt())};
    rec.seconds = now_seconds() - t0;
    stages.push_back(rec);
}

void check_manifest_files(const Paths& paths, const RunManifest& manifest) {
    for (const auto& stage : manifest.stages)
        for (const auto& rel : stage.files)
            if (!fs::exists(paths.out / rel))
                throw IoError("manifest lists missing file: " + rel);
}

json dataset_stats_json(const ExperimentConfig& cfg, const Dataset& train) {
    const DatasetStats st = stats(train);
    const GroupAssignment groups = assign_groups(train, cfg.t_many, cfg.t_few);
    json j;
    j["config_hash"] = cfg.hash_hex();
    j["class_counts"] = train.class_counts;
    j["samples"] = train.num_samples();
    j["oversampling"] = st.oversampling;
    j["imbalance_ratio"] = st.imbalance_ratio;
    j["n_b_default"] = default_target_count(train.class_counts);
    uint32_t many = 0, medium = 0, few = 0;
    for (const Group g : groups.group) {
        if (g == Group::many) ++many;
        else if (g == Group::medium) ++medium;
        else ++few;
    }
    j["groups"] = {{"many", many}, {"medium", medium}, {"few", few}};
    return j;
}

} // namespace

void run_generate(const ExperimentConfig& cfg, bool csv_export) {
    const Paths paths(cfg);
    const uint64_t hash = cfg.hash();
    auto [train, test] = generate(cfg.data);
    save_dataset(paths.train_file(), train, hash);
    save_dataset(paths.test_file(), test, hash);
    write_json_file(paths.stats_file(), dataset_stats_json(cfg, train));
    if (csv_export) {
        std::ostringstream os_train, os_test;
        write_csv(train, os_train);
        write_csv(test, os_test);
        write_text(paths.train_csv(), os_train.str());
        write_text(paths.test_csv(), os_test.str());
    }
}

RunOutcome run_pipeline(const ExperimentConfig& cfg, bool csv_export) {
    const Paths paths(cfg);
    const uint64_t hash = cfg.hash();
    const std::string hash_hex = cfg.hash_hex();

    RunOutcome outcome;
    outcome.manifest.config_hash = hash_hex;
    outcome.manifest.tool_version = kToolVersion;
    auto& stages = outcome.manifest.stages;

    // Dataset (shared across seeds).
    {
        StageRecord rec;
        rec.name = "dataset";
        rec.files = {paths.rel(paths.train_file()), paths.rel(paths.test_file()),
                     paths.rel(paths.stats_file())};
        if (bcts_matches(paths.train_file(), hash) && bcts_matches(paths.test_file(), hash) &&
            json_matches(paths.stats_file(), hash_hex)) {
            rec.skipped = true;
        } else {
            const double t0 = now_seconds();
            run_generate(cfg);
            rec.seconds = now_seconds() - t0;
        }
        stages.push_back(rec);
    }

    Dataset train = dataset_from_file(paths.train_file(), hash);
    Dataset test = dataset_from_file(paths.test_file(), hash);
    const GroupAssignment groups = assign_groups(train, cfg.t_many, cfg.t_few);
    const std::vector<uint32_t> few_filter = few_shot_classes(groups);

    for (size_t seed_idx = 0; seed_idx < cfg.seeds.size(); ++seed_idx) {
        const uint64_t seed = cfg.seeds[seed_idx];

        // --- Stage 1 ---
        StageOneConfig s1 = cfg.stage1;
        s1.seed = seed;
        StageRecord s1_rec;
        s1_rec.name = "stage1/seed_" + std::to_string(seed);
        s1_rec.files = {paths.rel(paths.store_file(seed)), paths.rel(paths.stage1_file(seed))};
        for (uint32_t e = 1; e <= s1.epochs; ++e)
            s1_rec.files.push_back(paths.rel(paths.checkpoint_file(seed, e)));

        bool have_stage1 = bcts_matches(paths.store_file(seed), hash) &&
                           json_matches(paths.stage1_file(seed), hash_hex);
        if (have_stage1)
            for (uint32_t e = 1; e <= s1.epochs; ++e)
                have_stage1 = have_stage1 && bcts_matches(paths.checkpoint_file(seed, e), hash);

        TrailStore store(train.num_classes(), s1.feature_dim, StorePolicy::unlimited());
        EmbeddingParams final_params;
        if (have_stage1) {
            s1_rec.skipped = true;
            store = TrailStore::load(paths.store_file(seed));
            final_params = load_params(paths.checkpoint_file(seed, s1.epochs), hash);
        } else {
            const double t0 = now_seconds();
            Stage1Result result = train_stage1(train, s1, store);
            fs::create_directories(paths.seed_dir(seed));
            store.save(paths.store_file(seed), hash);
            for (const auto& params : result.epoch_params)
                save_params(paths.checkpoint_file(seed, params.epoch), params, hash);
            json sj;
            sj["config_hash"] = hash_hex;
            sj["seed"] = seed;
            sj["epoch_loss"] = result.epoch_loss;
            write_json_file(paths.stage1_file(seed), sj);
            final_params = result.epoch_params.back();
            s1_rec.seconds = now_seconds() - t0;
        }
        stages.push_back(s1_rec);

        // --- Stage 2 per strategy ---
        const uint32_t n_b_effective =
            cfg.n_b > 0 ? cfg.n_b : default_target_count(store.class_counts());
        uint32_t depth_max = 1;
        for (const uint32_t n : store.class_counts())
            depth_max = std::max(depth_max,
                                 n >= n_b_effective ? 1u : backtrack_depth(n_b_effective, n));
        for (const StrategyKind kind : cfg.strategies) {
            const bool breadcrumb = kind == StrategyKind::weak_breadcrumb ||
                                    kind == StrategyKind::strong_breadcrumb;
            StageRecord rec;
            rec.name = std::string("stage2/seed_") + std::to_string(seed) + "/" +
                       strategy_name(kind);
            rec.files = {paths.rel(paths.classifier_file(seed, kind)),
                         paths.rel(paths.metrics_file(seed, kind))};
            if (breadcrumb) rec.files.push_back(paths.rel(paths.hard_csv(seed, kind)));
            // training-set provenance, one reference per consumed trail set
            switch (kind) {
                case StrategyKind::strong_breadcrumb:
                    for (uint32_t e = 1; e <= s1.epochs; ++e)
                        rec.data_refs.push_back(
                            e < depth_max ? "snapshot@epoch_" + std::to_string(e)
                                          : "trails@epoch_" + std::to_string(e));
                    break;
                case StrategyKind::weak_breadcrumb:
                    rec.data_refs.push_back("trails@epoch_" + std::to_string(s1.epochs));
                    break;
                default:
                    rec.data_refs.push_back("snapshot@epoch_" + std::to_string(s1.epochs));
                    break;
            }

            bool done = bcts_matches(paths.classifier_file(seed, kind), hash) &&
                        json_matches(paths.metrics_file(seed, kind), hash_hex);
            if (breadcrumb) done = done && csv_matches(paths.hard_csv(seed, kind), hash_hex);
            if (done) {
                rec.skipped = true;
                stages.push_back(rec);
                continue;
            }

            const double t0 = now_seconds();
            Stage2Config s2 = cfg.stage2;
            s2.seed = seed;
            SamplingStrategy strategy{kind, cfg.n_b};
            Stage2Trace trace;
            trace.class_filter = few_filter;
            LinearClassifier clf =
                train_stage2(store, strategy, s2, cfg.align_mode,
                             breadcrumb ? &trace : nullptr);
            save_classifier(paths.classifier_file(seed, kind), clf, hash);

            const GroupMetrics gm = evaluate(clf, final_params, test, groups);
            json mj = group_metrics_json(gm);
            mj["config_hash"] = hash_hex;
            mj["seed"] = seed;
            mj["strategy"] = strategy_name(kind);
            write_json_file(paths.metrics_file(seed, kind), mj);

            if (breadcrumb) {
                const auto counts =
                    hard_example_counts(trace.epoch_features, trace.epoch_labels,
                                        trace.epoch_classifiers, cfg.hard_example_threshold);
                write_hard_csv(paths.hard_csv(seed, kind), counts, hash_hex);
            }
            rec.seconds = now_seconds() - t0;
            stages.push_back(rec);
        }

        // --- Verification ---
        if (seed_idx < cfg.verify_seeds) {
            StageRecord rec;
            rec.name = "verify/seed_" + std::to_string(seed);
            rec.files = {paths.rel(paths.verify_file(seed))};
            if (json_matches(paths.verify_file(seed), hash_hex)) {
                rec.skipped = true;
                const json v = read_json_file(paths.verify_file(seed));
                const double rate = v.at("augmentation_bound").at("pass_rate").get<double>();
                const auto failures = v.at("adversarial_direction").at("failures").size();
                const bool cor_ok = v.at("duplication_invariance").at("passed") == v.at("duplication_invariance").at("checked");
                if (rate < 0.95 || failures > 0 || !cor_ok)
                    outcome.verification_failures = true;
            } else {
                const double t0 = now_seconds();
                const VerificationReport rep = verify_run(store, cfg.verify);
                write_json_file(paths.verify_file(seed), verification_json(rep, hash_hex, seed));
                if (!rep.all_pass()) outcome.verification_failures = true;
                rec.seconds = now_seconds() - t0;
            }
            stages.push_back(rec);
        }
    }

    if (csv_export) {
        const uint64_t seed = cfg.seeds.front();
        const TrailStore store = TrailStore::load(paths.store_file(seed));
        StageRecord rec;
        rec.name = "export/seed_" + std::to_string(seed);
        const double t0 = now_seconds();
        const uint32_t n_b = cfg.n_b > 0 ? cfg.n_b : default_target_count(store.class_counts());
        // one exemplar class per populated group
        std::array<int64_t, 3> exemplar{-1, -1, -1};
        for (uint32_t y = 0; y < groups.group.size(); ++y) {
            auto& slot = exemplar[static_cast<size_t>(groups.group[y])];
            if (slot < 0) slot = y;
        }
        for (const int64_t y_signed : exemplar) {
            if (y_signed < 0) continue;
            const auto y = static_cast<uint32_t>(y_signed);
            const uint32_t e = store.last_epoch();
            const auto tag = "class" + std::to_string(y) + "_epoch" + std::to_string(e);
            {
                std::ostringstream os;
                os << "# config_hash=" << hash_hex << "\n";
                store.export_snapshot_csv(y, e, os);
                const fs::path f = paths.seed_dir(seed) / ("snapshot_" + tag + ".csv");
                write_text(f, os.str());
                rec.files.push_back(paths.rel(f));
            }
            {
                Rng rng(cfg.verify.seed);
                const TrailSet ts = store.assemble(y, e, n_b, rng, cfg.align_mode);
                std::ostringstream os;
                os << "# config_hash=" << hash_hex << "\n";
                TrailStore::export_trailset_csv(ts, os);
                const fs::path f = paths.seed_dir(seed) / ("trails_" + tag + ".csv");
                write_text(f, os.str());
                rec.files.push_back(paths.rel(f));
            }
        }
        rec.seconds = now_seconds() - t0;
        stages.push_back(rec);
    }

    build_report(cfg, paths, stages);
    check_manifest_files(paths, outcome.manifest);
    write_json_file(paths.manifest_file(), outcome.manifest.to_json());
    return outcome;
}

bool run_verify(const ExperimentConfig& cfg) {
    const Paths paths(cfg);
    const uint64_t hash = cfg.hash();
    const std::string hash_hex = cfg.hash_hex();
    bool all_ok = true;
    for (uint32_t i = 0; i < cfg.verify_seeds && i < cfg.seeds.size(); ++i) {
        const uint64_t seed = cfg.seeds[i];
        if (!bcts_matches(paths.store_file(seed), hash))
            throw IoError("verify: store missing or hash mismatch for seed " +
                          std::to_string(seed) + " (run the pipeline first)");
        const TrailStore store = TrailStore::load(paths.store_file(seed));
        const VerificationReport rep = verify_run(store, cfg.verify);
        write_json_file(paths.verify_file(seed), verification_json(rep, hash_hex, seed));
        all_ok = all_ok && rep.all_pass();
    }
    return all_ok;
}

void run_report(const ExperimentConfig& cfg) {
    const Paths paths(cfg);
    if (!fs::exists(paths.manifest_file()))
        throw IoError("report: no manifest at " + paths.manifest_file().string());
    const RunManifest manifest = RunManifest::from_json(read_json_file(paths.manifest_file()));
    if (manifest.config_hash != cfg.hash_hex())
        throw IoError("report: manifest hash " + manifest.config_hash +
                      " does not match config " + cfg.hash_hex());

    // Refuse mixed-hash inputs and incomplete runs up front.
    std::vector<std::string> missing;
    for (const StrategyKind kind : cfg.strategies)
        for (const uint64_t seed : cfg.seeds) {
            const fs::path mf = paths.metrics_file(seed, kind);
            if (!json_matches(mf, cfg.hash_hex()))
                missing.push_back(paths.rel(mf));
        }
    if (!missing.empty()) {
        std::string msg = "report: missing or mismatched stage outputs:";
        for (const auto& m : missing) msg += " " + m;
        throw IoError(msg);
    }

    std::vector<StageRecord> stages;
    build_report(cfg, paths, stages);
}

} // namespace breadcrumbs
