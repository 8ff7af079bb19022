// Regenerates tests/golden/reference.json. Not a test; run manually after an
// intentional change to training numerics, then review the diff.

#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "breadcrumbs/embedding.hpp"
#include "breadcrumbs/classifier.hpp"
#include "helpers.hpp"

using namespace breadcrumbs;
using nlohmann::json;

int main(int argc, char** argv) {
    const std::string out_path =
        argc > 1 ? argv[1] : std::string(BREADCRUMBS_GOLDEN_DIR) + "/reference.json";
    json golden;

    // Desk-scale stage-1 loss curve, seed 1.
    {
        const auto [train, test] = generate(testutil::desk_data_config());
        const auto cfg = testutil::desk_stage1_config(1);
        TrailStore store(train.num_classes(), cfg.feature_dim, StorePolicy::unlimited());
        const auto result = train_stage1(train, cfg, store);
        golden["stage1_desk"] = {{"seed", 1}, {"epoch_loss", result.epoch_loss}};
        std::printf("stage1 desk: first %.6f last %.6f\n", result.epoch_loss.front(),
                    result.epoch_loss.back());
    }

    // Small fixed forward pass.
    {
        const uint64_t seed = 2024;
        Rng rng(seed);
        EmbeddingParams p;
        p.w1 = Matrix(8, 6);
        p.b1.resize(8);
        p.w2 = Matrix(4, 8);
        p.b2.resize(4);
        for (auto& v : p.w1.data) v = static_cast<float>(rng.normal() * 0.3);
        for (auto& v : p.b1) v = static_cast<float>(rng.normal() * 0.1);
        for (auto& v : p.w2.data) v = static_cast<float>(rng.normal() * 0.3);
        for (auto& v : p.b2) v = static_cast<float>(rng.normal() * 0.1);
        Matrix x(1, 6);
        for (auto& v : x.data) v = static_cast<float>(rng.normal());
        const auto z = embed(p, x);
        std::vector<double> features(z.data.begin(), z.data.end());
        golden["embed"] = {{"seed", seed}, {"features", features}};
    }

    // Tiny end-to-end classifier and its predictions on the test split.
    {
        const auto [train, test] = generate(testutil::tiny_data_config());
        const auto cfg = testutil::tiny_stage1_config();
        TrailStore store(train.num_classes(), cfg.feature_dim, StorePolicy::unlimited());
        const auto s1 = train_stage1(train, cfg, store);

        Stage2Config s2;
        s2.epochs = cfg.epochs;
        s2.batch_size = 16;
        s2.seed = 3;
        const auto clf = train_stage2(store, {StrategyKind::strong_breadcrumb, 0}, s2);
        const auto z_test = embed(s1.epoch_params.back(), test.inputs);
        const auto labels = predict(clf, z_test);
        golden["predict_tiny"] = {{"labels", labels}};
        std::printf("predict tiny: %zu labels\n", labels.size());
    }

    std::ofstream out(out_path);
    out << golden.dump(2) << "\n";
    std::printf("wrote %s\n", out_path.c_str());
    return 0;
}
