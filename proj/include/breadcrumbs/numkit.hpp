#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "breadcrumbs/matrix.hpp"

namespace breadcrumbs {

/// Numerically stable softmax (max-subtraction). Throws InvalidInputError on
/// non-finite logits. Output is nonnegative and sums to 1 within 1e-6.
std::vector<float> softmax(std::span<const float> logits);

/// Double-precision softmax, used by the verification paths.
std::vector<double> softmax_d(std::span<const double> logits);

struct CeResult {
    double loss = 0.0;          // mean of -log p_true over the batch
    Matrix grad_w;              // dLoss/dW, C x d
    std::vector<float> grad_b;  // dLoss/db, C
};

/// Softmax cross-entropy over a feature batch under a linear classifier.
/// w is C x d, b has C entries, z is n x d, labels are in [0, C).
/// Loss and gradients are the exact analytic mean-batch quantities;
/// accumulation runs in double.
CeResult ce_loss_and_grad(const Matrix& w, std::span<const float> b,
                          const Matrix& z, std::span<const uint32_t> labels);

/// Loss only (same reduction, no gradient buffers).
double ce_loss(const Matrix& w, std::span<const float> b,
               const Matrix& z, std::span<const uint32_t> labels);

/// Cosine decay: base_lr * 0.5 * (1 + cos(pi * epoch_fraction)),
/// epoch_fraction in [0, 1].
double cosine_lr(double base_lr, double epoch_fraction);

struct SgdConfig {
    float momentum = 0.9f;
    float weight_decay = 5e-4f;
    float base_lr = 0.2f;
    uint32_t total_epochs = 30;
    bool decay_bias = false; // decay applies to weight matrices only by default
};

/// Momentum SGD with the decay folded into the gradient before the velocity
/// update:  g += wd*p;  v = mu*v + g;  p -= lr*v.
/// One velocity buffer per registered parameter tensor.
class SgdState {
public:
    explicit SgdState(const SgdConfig& cfg);

    /// Registers a parameter tensor of n entries; returns its slot id.
    uint32_t add_param(size_t n, bool apply_decay);

    /// Applies one update at the given cosine schedule position.
    void step(uint32_t slot, std::span<float> params, std::span<const float> grads,
              double epoch_fraction);

    double lr_at(double epoch_fraction) const;
    const SgdConfig& config() const { return cfg_; }

private:
    struct Slot {
        std::vector<float> velocity;
        bool decay;
    };
    SgdConfig cfg_;
    std::vector<Slot> slots_;
};

} // namespace breadcrumbs
