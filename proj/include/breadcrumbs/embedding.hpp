#pragma once

#include <cstdint>
#include <vector>

#include "breadcrumbs/classifier.hpp"
#include "breadcrumbs/datagen.hpp"
#include "breadcrumbs/numkit.hpp"
#include "breadcrumbs/trailstore.hpp"

namespace breadcrumbs {

enum class Activation : uint32_t { tanh_fn = 0, relu = 1 };

/// Two-layer MLP embedding: input D -> hidden H -> feature d.
struct EmbeddingParams {
    Matrix w1;             // H x D
    std::vector<float> b1; // H
    Matrix w2;             // d x H
    std::vector<float> b2; // d
    Activation activation = Activation::tanh_fn;
    uint32_t epoch = 0;

    uint32_t input_dim() const { return w1.cols; }
    uint32_t hidden_dim() const { return w1.rows; }
    uint32_t feature_dim() const { return w2.rows; }
};

struct StageOneConfig {
    uint32_t epochs = 30;
    uint32_t batch_size = 64;
    uint32_t hidden = 64;
    uint32_t feature_dim = 32;
    Activation activation = Activation::tanh_fn;
    SgdConfig opt;
    uint64_t seed = 1;
};

/// One epoch of image-balanced batches: a seeded permutation of all N
/// indices, chunked; the last short chunk is kept. Consecutive calls on the
/// same stream give fresh permutations.
std::vector<std::vector<uint32_t>> image_balanced_epoch(uint32_t num_samples,
                                                        uint32_t batch_size, Rng& rng);

struct Stage1Result {
    std::vector<EmbeddingParams> epoch_params; // one per epoch, final last
    std::vector<double> epoch_loss;            // mean sample CE per epoch
    LinearClassifier head;                     // temporary stage-1 linear head
};

/// End-to-end stage-1 training with uniform (image-balanced) sampling.
/// After each epoch's final optimizer step the full training set is embedded
/// in index order and recorded into the sink. Throws TrainingError (with the
/// epoch index) if the loss goes non-finite.
Stage1Result train_stage1(const Dataset& train, const StageOneConfig& cfg,
                          TrailStore& sink);

/// Deterministic forward pass, n x D -> n x d.
Matrix embed(const EmbeddingParams& params, const Matrix& x);

} // namespace breadcrumbs
