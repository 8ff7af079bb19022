#include "breadcrumbs/embedding.hpp"

#include <algorithm>
#include <cmath>

namespace breadcrumbs {

std::vector<std::vector<uint32_t>> image_balanced_epoch(uint32_t num_samples,
                                                        uint32_t batch_size, Rng& rng) {
    if (batch_size == 0) throw InvalidInputError("image_balanced_epoch: batch_size 0");
    if (batch_size > num_samples)
        throw InvalidInputError("image_balanced_epoch: batch_size > sample count");
    const auto perm = rng.permutation(num_samples);
    std::vector<std::vector<uint32_t>> batches;
    for (uint32_t start = 0; start < num_samples; start += batch_size) {
        const uint32_t n = std::min(batch_size, num_samples - start);
        batches.emplace_back(perm.begin() + start, perm.begin() + start + n);
    }
    return batches;
}

namespace {

float activate(float x, Activation a) {
    return a == Activation::tanh_fn ? std::tanh(x) : std::max(x, 0.0f);
}

// dActivation/dx expressed through the activation output t.
float activate_grad(float t, Activation a) {
    return a == Activation::tanh_fn ? 1.0f - t * t : (t > 0.0f ? 1.0f : 0.0f);
}

// x (n x in) times w^T (out x in) plus bias -> (n x out)
Matrix affine(const Matrix& x, const Matrix& w, std::span<const float> b) {
    Matrix out(x.rows, w.rows);
    for (uint32_t i = 0; i < x.rows; ++i) {
        const auto xr = x.row(i);
        auto or_ = out.row(i);
        for (uint32_t j = 0; j < w.rows; ++j) {
            const float* wr = w.data.data() + static_cast<size_t>(j) * w.cols;
            double acc = b[j];
            for (uint32_t k = 0; k < w.cols; ++k)
                acc += static_cast<double>(wr[k]) * xr[k];
            or_[j] = static_cast<float>(acc);
        }
    }
    return out;
}

EmbeddingParams init_params(const StageOneConfig& cfg, uint32_t input_dim, Rng& rng) {
    EmbeddingParams p;
    p.activation = cfg.activation;
    p.w1 = Matrix(cfg.hidden, input_dim);
    p.b1.assign(cfg.hidden, 0.0f);
    p.w2 = Matrix(cfg.feature_dim, cfg.hidden);
    p.b2.assign(cfg.feature_dim, 0.0f);
    const auto xavier = [&rng](Matrix& w) {
        const double bound = std::sqrt(6.0 / (w.rows + w.cols));
        for (auto& v : w.data) v = static_cast<float>(rng.uniform(-bound, bound));
    };
    xavier(p.w1);
    xavier(p.w2);
    return p;
}

LinearClassifier init_head(uint32_t classes, uint32_t d, Rng& rng) {
    LinearClassifier head;
    head.w = Matrix(classes, d);
    head.b.assign(classes, 0.0f);
    const double bound = std::sqrt(6.0 / (classes + d));
    for (auto& v : head.w.data) v = static_cast<float>(rng.uniform(-bound, bound));
    return head;
}

} // namespace

Matrix embed(const EmbeddingParams& params, const Matrix& x) {
    if (x.cols != params.input_dim()) throw ShapeError("embed: input dim mismatch");
    Matrix hidden = affine(x, params.w1, params.b1);
    for (auto& v : hidden.data) v = activate(v, params.activation);
    return affine(hidden, params.w2, params.b2);
}

Stage1Result train_stage1(const Dataset& train, const StageOneConfig& cfg,
                          TrailStore& sink) {
    if (cfg.epochs < 2) throw ConfigError("stage1: need at least 2 epochs");
    if (cfg.batch_size == 0) throw ConfigError("stage1: batch_size must be >= 1");
    train.validate();
    const uint32_t n = train.num_samples();
    const uint32_t classes = train.num_classes();

    Rng base(cfg.seed);
    Rng init_rng = base.derive("stage1-init");
    Rng batch_rng = base.derive("stage1-batches");

    EmbeddingParams params = init_params(cfg, train.num_dims(), init_rng);
    LinearClassifier head = init_head(classes, cfg.feature_dim, init_rng);

    SgdState sgd(cfg.opt);
    const uint32_t s_w1 = sgd.add_param(params.w1.size(), true);
    const uint32_t s_b1 = sgd.add_param(params.b1.size(), cfg.opt.decay_bias);
    const uint32_t s_w2 = sgd.add_param(params.w2.size(), true);
    const uint32_t s_b2 = sgd.add_param(params.b2.size(), cfg.opt.decay_bias);
    const uint32_t s_hw = sgd.add_param(head.w.size(), true);
    const uint32_t s_hb = sgd.add_param(head.b.size(), cfg.opt.decay_bias);

    Stage1Result result;
    result.epoch_params.reserve(cfg.epochs);
    result.epoch_loss.reserve(cfg.epochs);

    const uint32_t hidden_dim = cfg.hidden;
    const uint32_t d = cfg.feature_dim;

    for (uint32_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        // Schedule held constant within an epoch; fraction (e-1)/E so the
        // final epoch still takes steps.
        const double fraction = static_cast<double>(epoch - 1) / cfg.epochs;
        double loss_sum = 0.0;

        try {
        for (const auto& batch_idx : image_balanced_epoch(n, cfg.batch_size, batch_rng)) {
            const auto bn = static_cast<uint32_t>(batch_idx.size());
            Matrix x(bn, train.num_dims());
            std::vector<uint32_t> y(bn);
            for (uint32_t i = 0; i < bn; ++i) {
                const auto src = train.inputs.row(batch_idx[i]);
                std::copy(src.begin(), src.end(), x.row(i).begin());
                y[i] = train.labels[batch_idx[i]];
            }

            // Forward
            Matrix hidden = affine(x, params.w1, params.b1);
            for (auto& v : hidden.data) v = activate(v, params.activation);
            Matrix z = affine(hidden, params.w2, params.b2);
            const CeResult head_ce = ce_loss_and_grad(head.w, head.b, z, y);
            loss_sum += head_ce.loss * bn;

            // Backward through the head into the feature layer:
            // dZ = dLogits * W_head, with dLogits implied by the head grads.
            // Recompute dLogits = (softmax - onehot)/bn row by row.
            Matrix dz(bn, d, 0.0f);
            {
                std::vector<double> logits(classes);
                for (uint32_t i = 0; i < bn; ++i) {
                    const auto zr = z.row(i);
                    for (uint32_t c = 0; c < classes; ++c) {
                        const float* wr = head.w.data.data() + static_cast<size_t>(c) * d;
                        double acc = head.b[c];
                        for (uint32_t k = 0; k < d; ++k)
                            acc += static_cast<double>(wr[k]) * zr[k];
                        logits[c] = acc;
                    }
                    const auto p = softmax_d(logits);
                    auto dzr = dz.row(i);
                    for (uint32_t c = 0; c < classes; ++c) {
                        const double g = (p[c] - (c == y[i] ? 1.0 : 0.0)) / bn;
                        const float* wr = head.w.data.data() + static_cast<size_t>(c) * d;
                        for (uint32_t k = 0; k < d; ++k)
                            dzr[k] += static_cast<float>(g * wr[k]);
                    }
                }
            }

            // Feature layer: z = hidden * w2^T + b2
            Matrix gw2(d, hidden_dim);
            std::vector<float> gb2(d, 0.0f);
            {
                std::vector<double> acc(static_cast<size_t>(d) * hidden_dim, 0.0);
                std::vector<double> accb(d, 0.0);
                for (uint32_t i = 0; i < bn; ++i) {
                    const auto dzr = dz.row(i);
                    const auto hr = hidden.row(i);
                    for (uint32_t j = 0; j < d; ++j) {
                        const double g = dzr[j];
                        accb[j] += g;
                        double* a = acc.data() + static_cast<size_t>(j) * hidden_dim;
                        for (uint32_t k = 0; k < hidden_dim; ++k) a[k] += g * hr[k];
                    }
                }
                for (size_t i = 0; i < acc.size(); ++i)
                    gw2.data[i] = static_cast<float>(acc[i]);
                for (uint32_t j = 0; j < d; ++j) gb2[j] = static_cast<float>(accb[j]);
            }

            // Hidden layer: dHidden = dZ * w2, through the activation.
            Matrix gw1(hidden_dim, train.num_dims());
            std::vector<float> gb1(hidden_dim, 0.0f);
            {
                std::vector<double> acc(static_cast<size_t>(hidden_dim) * train.num_dims(), 0.0);
                std::vector<double> accb(hidden_dim, 0.0);
                std::vector<double> dh(hidden_dim);
                for (uint32_t i = 0; i < bn; ++i) {
                    const auto dzr = dz.row(i);
                    const auto hr = hidden.row(i);
                    const auto xr = x.row(i);
                    for (uint32_t k = 0; k < hidden_dim; ++k) {
                        double g = 0.0;
                        for (uint32_t j = 0; j < d; ++j)
                            g += static_cast<double>(dzr[j]) * params.w2.at(j, k);
                        g *= activate_grad(hr[k], params.activation);
                        dh[k] = g;
                        accb[k] += g;
                    }
                    for (uint32_t k = 0; k < hidden_dim; ++k) {
                        double* a = acc.data() + static_cast<size_t>(k) * train.num_dims();
                        const double g = dh[k];
                        for (uint32_t m = 0; m < train.num_dims(); ++m) a[m] += g * xr[m];
                    }
                }
                for (size_t i = 0; i < acc.size(); ++i)
                    gw1.data[i] = static_cast<float>(acc[i]);
                for (uint32_t k = 0; k < hidden_dim; ++k) gb1[k] = static_cast<float>(accb[k]);
            }

            sgd.step(s_w1, params.w1.data, gw1.data, fraction);
            sgd.step(s_b1, params.b1, gb1, fraction);
            sgd.step(s_w2, params.w2.data, gw2.data, fraction);
            sgd.step(s_b2, params.b2, gb2, fraction);
            sgd.step(s_hw, head.w.data, head_ce.grad_w.data, fraction);
            sgd.step(s_hb, head.b, head_ce.grad_b, fraction);
        }
        } catch (const InvalidInputError&) {
            // inputs were validated up front, so non-finite values here mean
            // the optimization blew up
            throw TrainingError("stage1 diverged (non-finite values)", epoch);
        }

        const double epoch_loss = loss_sum / n;
        if (!std::isfinite(epoch_loss))
            throw TrainingError("stage1 diverged (non-finite loss)", epoch);
        result.epoch_loss.push_back(epoch_loss);

        // Snapshot after the epoch's last step, in training-set index order.
        params.epoch = epoch;
        sink.record(epoch, embed(params, train.inputs), train.labels);
        result.epoch_params.push_back(params);
    }

    result.head = std::move(head);
    return result;
}

} // namespace breadcrumbs
