#include "breadcrumbs/numkit.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace breadcrumbs {

std::vector<float> softmax(std::span<const float> logits) {
    if (logits.empty()) throw InvalidInputError("softmax: empty logits");
    float max_logit = logits[0];
    for (const float v : logits) {
        if (!std::isfinite(v)) throw InvalidInputError("softmax: non-finite logit");
        max_logit = std::max(max_logit, v);
    }
    std::vector<float> out(logits.size());
    double sum = 0.0;
    for (size_t i = 0; i < logits.size(); ++i) {
        const double e = std::exp(static_cast<double>(logits[i]) - max_logit);
        out[i] = static_cast<float>(e);
        sum += e;
    }
    const double inv = 1.0 / sum;
    for (auto& v : out) v = static_cast<float>(v * inv);
    return out;
}

std::vector<double> softmax_d(std::span<const double> logits) {
    if (logits.empty()) throw InvalidInputError("softmax: empty logits");
    double max_logit = logits[0];
    for (const double v : logits) {
        if (!std::isfinite(v)) throw InvalidInputError("softmax: non-finite logit");
        max_logit = std::max(max_logit, v);
    }
    std::vector<double> out(logits.size());
    double sum = 0.0;
    for (size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - max_logit);
        sum += out[i];
    }
    const double inv = 1.0 / sum;
    for (auto& v : out) v *= inv;
    return out;
}

namespace {

void check_ce_shapes(const Matrix& w, std::span<const float> b,
                     const Matrix& z, std::span<const uint32_t> labels) {
    if (z.cols != w.cols)
        throw ShapeError("ce: feature dim " + std::to_string(z.cols) +
                         " != classifier dim " + std::to_string(w.cols));
    if (b.size() != w.rows) throw ShapeError("ce: bias length != class count");
    if (labels.size() != z.rows) throw ShapeError("ce: label count != batch rows");
    if (z.rows == 0) throw InvalidInputError("ce: empty batch");
    for (const uint32_t y : labels)
        if (y >= w.rows) throw InvalidInputError("ce: label out of range");
}

// Per-row logits, accumulated in double.
void row_logits(const Matrix& w, std::span<const float> b,
                std::span<const float> zrow, std::vector<double>& out) {
    const uint32_t classes = w.rows;
    const uint32_t d = w.cols;
    for (uint32_t c = 0; c < classes; ++c) {
        const float* wr = w.data.data() + static_cast<size_t>(c) * d;
        double acc = b[c];
        for (uint32_t k = 0; k < d; ++k) acc += static_cast<double>(wr[k]) * zrow[k];
        out[c] = acc;
    }
}

} // namespace

CeResult ce_loss_and_grad(const Matrix& w, std::span<const float> b,
                          const Matrix& z, std::span<const uint32_t> labels) {
    check_ce_shapes(w, b, z, labels);
    require_finite(w, "ce: weights");
    require_finite(z, "ce: features");

    const uint32_t classes = w.rows;
    const uint32_t d = w.cols;
    const uint32_t n = z.rows;

    std::vector<double> gw(static_cast<size_t>(classes) * d, 0.0);
    std::vector<double> gb(classes, 0.0);
    std::vector<double> logits(classes);
    double loss_sum = 0.0;

    for (uint32_t i = 0; i < n; ++i) {
        const auto zrow = z.row(i);
        row_logits(w, b, zrow, logits);
        const auto p = softmax_d(logits);
        loss_sum += -std::log(std::max(p[labels[i]], 1e-300));
        for (uint32_t c = 0; c < classes; ++c) {
            const double g = p[c] - (c == labels[i] ? 1.0 : 0.0);
            gb[c] += g;
            double* gwr = gw.data() + static_cast<size_t>(c) * d;
            for (uint32_t k = 0; k < d; ++k) gwr[k] += g * zrow[k];
        }
    }

    const double inv_n = 1.0 / n;
    CeResult res;
    res.loss = loss_sum * inv_n;
    res.grad_w = Matrix(classes, d);
    res.grad_b.resize(classes);
    for (size_t i = 0; i < gw.size(); ++i)
        res.grad_w.data[i] = static_cast<float>(gw[i] * inv_n);
    for (uint32_t c = 0; c < classes; ++c)
        res.grad_b[c] = static_cast<float>(gb[c] * inv_n);
    return res;
}

double ce_loss(const Matrix& w, std::span<const float> b,
               const Matrix& z, std::span<const uint32_t> labels) {
    check_ce_shapes(w, b, z, labels);
    require_finite(w, "ce: weights");
    require_finite(z, "ce: features");

    std::vector<double> logits(w.rows);
    double loss_sum = 0.0;
    for (uint32_t i = 0; i < z.rows; ++i) {
        row_logits(w, b, z.row(i), logits);
        const auto p = softmax_d(logits);
        loss_sum += -std::log(std::max(p[labels[i]], 1e-300));
    }
    return loss_sum / z.rows;
}

double cosine_lr(double base_lr, double epoch_fraction) {
    if (epoch_fraction < 0.0 || epoch_fraction > 1.0)
        throw InvalidInputError("cosine_lr: epoch_fraction outside [0,1]");
    return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * epoch_fraction));
}

SgdState::SgdState(const SgdConfig& cfg) : cfg_(cfg) {
    if (cfg.momentum < 0.0f || cfg.momentum >= 1.0f)
        throw ConfigError("sgd: momentum must be in [0,1)");
    if (cfg.weight_decay < 0.0f) throw ConfigError("sgd: weight_decay must be >= 0");
    if (cfg.base_lr <= 0.0f) throw ConfigError("sgd: base_lr must be > 0");
}

uint32_t SgdState::add_param(size_t n, bool apply_decay) {
    slots_.push_back(Slot{std::vector<float>(n, 0.0f), apply_decay});
    return static_cast<uint32_t>(slots_.size() - 1);
}

double SgdState::lr_at(double epoch_fraction) const {
    return cosine_lr(cfg_.base_lr, epoch_fraction);
}

void SgdState::step(uint32_t slot, std::span<float> params,
                    std::span<const float> grads, double epoch_fraction) {
    Slot& s = slots_.at(slot);
    if (params.size() != s.velocity.size() || grads.size() != s.velocity.size())
        throw ShapeError("sgd: parameter/gradient size mismatch");
    const float lr = static_cast<float>(lr_at(epoch_fraction));
    const float wd = s.decay ? cfg_.weight_decay : 0.0f;
    const float mu = cfg_.momentum;
    for (size_t i = 0; i < params.size(); ++i) {
        const float g = grads[i] + wd * params[i];
        s.velocity[i] = mu * s.velocity[i] + g;
        params[i] -= lr * s.velocity[i];
    }
}

} // namespace breadcrumbs
