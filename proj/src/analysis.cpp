#include "breadcrumbs/analysis.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstdio>
#include <future>

namespace breadcrumbs {

namespace {

double now_seconds() {
    using namespace std::chrono;
    return duration<double>(steady_clock::now().time_since_epoch()).count();
}

// Mean CE of one class block under a double classifier, accumulating the
// per-row -log p in double.
double class_loss_impl(const Matrix& z_y, uint32_t y, const DenseClassifier& clf) {
    if (z_y.rows == 0) throw InvalidInputError("class_loss: empty feature set");
    if (z_y.cols != clf.dim) throw ShapeError("class_loss: feature dim mismatch");
    if (y >= clf.classes) throw InvalidInputError("class_loss: class out of range");

    std::vector<double> logits(clf.classes);
    double sum = 0.0;
    for (uint32_t i = 0; i < z_y.rows; ++i) {
        const auto zr = z_y.row(i);
        for (uint32_t c = 0; c < clf.classes; ++c) {
            const double* wr = clf.w.data() + static_cast<size_t>(c) * clf.dim;
            double acc = clf.b[c];
            for (uint32_t k = 0; k < clf.dim; ++k) acc += wr[k] * zr[k];
            logits[c] = acc;
        }
        const auto p = softmax_d(logits);
        sum += -std::log(std::max(p[y], 1e-300));
    }
    return sum / z_y.rows;
}

} // namespace

DenseClassifier to_dense(const LinearClassifier& clf) {
    DenseClassifier d;
    d.classes = clf.num_classes();
    d.dim = clf.dim();
    d.w.assign(clf.w.data.begin(), clf.w.data.end());
    d.b.assign(clf.b.begin(), clf.b.end());
    return d;
}

double class_loss(const Matrix& z_y, uint32_t y, const DenseClassifier& clf) {
    return class_loss_impl(z_y, y, clf);
}

double class_loss(const Matrix& z_y, uint32_t y, const LinearClassifier& clf) {
    return class_loss_impl(z_y, y, to_dense(clf));
}

LossReport loss_report(const TrailStore& store, uint32_t epoch, const DenseClassifier& clf,
                       std::string classifier_tag, std::string snapshot_tag) {
    LossReport rep;
    rep.classifier_tag = std::move(classifier_tag);
    rep.snapshot_tag = std::move(snapshot_tag);
    rep.per_class.reserve(store.num_classes());
    double total = 0.0;
    for (uint32_t y = 0; y < store.num_classes(); ++y) {
        const double ly = class_loss_impl(store.class_snapshot(y, epoch), y, clf);
        rep.per_class.push_back(ly);
        total += ly;
    }
    rep.total = total;
    return rep;
}

// ---------------------------------------------------------------------------
// L-BFGS fit of the balanced (or single-class) objective
// ---------------------------------------------------------------------------

namespace {

struct Objective {
    // weight per class block: 1/n_y for classes in the objective, 0 otherwise
    std::span<const Matrix> blocks;
    std::vector<double> block_weight;
    uint32_t classes = 0;
    uint32_t dim = 0;
    double ridge = 0.0;

    size_t num_params() const { return static_cast<size_t>(classes) * dim + classes; }

    // Returns the objective and writes the gradient.
    double eval(std::span<const double> theta, std::span<double> grad) const {
        std::fill(grad.begin(), grad.end(), 0.0);
        const double* w = theta.data();
        const double* b = theta.data() + static_cast<size_t>(classes) * dim;
        double* gw = grad.data();
        double* gb = grad.data() + static_cast<size_t>(classes) * dim;

        double loss = 0.0;
        std::vector<double> logits(classes);
        for (uint32_t y = 0; y < blocks.size(); ++y) {
            const double wy = block_weight[y];
            if (wy == 0.0) continue;
            const Matrix& z = blocks[y];
            for (uint32_t i = 0; i < z.rows; ++i) {
                const auto zr = z.row(i);
                for (uint32_t c = 0; c < classes; ++c) {
                    const double* wr = w + static_cast<size_t>(c) * dim;
                    double acc = b[c];
                    for (uint32_t k = 0; k < dim; ++k) acc += wr[k] * zr[k];
                    logits[c] = acc;
                }
                const auto p = softmax_d(logits);
                loss += -wy * std::log(std::max(p[y], 1e-300));
                for (uint32_t c = 0; c < classes; ++c) {
                    const double g = wy * (p[c] - (c == y ? 1.0 : 0.0));
                    gb[c] += g;
                    double* gr = gw + static_cast<size_t>(c) * dim;
                    for (uint32_t k = 0; k < dim; ++k) gr[k] += g * zr[k];
                }
            }
        }
        if (ridge > 0.0) {
            const size_t nw = static_cast<size_t>(classes) * dim;
            double sq = 0.0;
            for (size_t i = 0; i < nw; ++i) {
                sq += w[i] * w[i];
                gw[i] += ridge * w[i];
            }
            loss += 0.5 * ridge * sq;
        }
        return loss;
    }
};

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

// Limited-memory BFGS with a strong-Wolfe line search (bracket + bisection
// zoom). The objective is smooth and convex; the Wolfe curvature condition
// keeps s.y > 0 so the inverse-Hessian model stays positive definite, which
// matters on the badly conditioned early-epoch fits.
FitResult lbfgs_fit(const Objective& obj, const FitOptions& opts,
                    std::span<const double> x0 = {}) {
    const size_t n = obj.num_params();
    constexpr size_t kMemory = 16;
    constexpr double c1 = 1e-4;
    constexpr double c2 = 0.9;

    std::vector<double> x(n, 0.0), g(n), x_try(n), g_try(n), dir(n);
    if (!x0.empty()) std::copy(x0.begin(), x0.end(), x.begin());
    std::vector<std::vector<double>> s_hist, y_hist;
    std::vector<double> rho_hist;

    double f = obj.eval(x, g);
    double gnorm = norm2(g);
    uint32_t iter = 0;

    // Stall detector: if the gradient norm hasn't meaningfully improved over
    // a window, hand the fit back (the caller may refine with Newton).
    double best_gnorm = gnorm;
    uint32_t best_iter = 0;
    constexpr uint32_t kStallWindow = 80;

    const auto phi = [&](double t, double& dphi) {
        for (size_t k = 0; k < n; ++k) x_try[k] = x[k] + t * dir[k];
        const double val = obj.eval(x_try, g_try);
        dphi = dot(g_try, dir);
        return val;
    };

    for (; iter < opts.max_iters && gnorm > opts.grad_tol; ++iter) {
        // Two-loop recursion.
        std::copy(g.begin(), g.end(), dir.begin());
        const size_t m = s_hist.size();
        std::vector<double> alpha(m);
        for (size_t i = m; i-- > 0;) {
            alpha[i] = rho_hist[i] * dot(s_hist[i], dir);
            for (size_t k = 0; k < n; ++k) dir[k] -= alpha[i] * y_hist[i][k];
        }
        if (m > 0) {
            const double gamma = dot(s_hist[m - 1], y_hist[m - 1]) /
                                 std::max(dot(y_hist[m - 1], y_hist[m - 1]), 1e-300);
            for (auto& v : dir) v *= gamma;
        } else {
            for (auto& v : dir) v /= std::max(gnorm, 1.0);
        }
        for (size_t i = 0; i < m; ++i) {
            const double beta = rho_hist[i] * dot(y_hist[i], dir);
            for (size_t k = 0; k < n; ++k) dir[k] += (alpha[i] - beta) * s_hist[i][k];
        }
        for (auto& v : dir) v = -v;

        double slope = dot(g, dir);
        if (slope >= 0.0) { // model went bad; restart from steepest descent
            for (size_t k = 0; k < n; ++k) dir[k] = -g[k] / std::max(gnorm, 1.0);
            slope = dot(g, dir);
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
        }

        // Strong-Wolfe search: bracket then zoom.
        double t_accept = -1.0;
        {
            double t_lo = 0.0, f_lo = f;
            double t_hi = -1.0;
            double t = 1.0, f_prev = f, t_prev = 0.0;
            bool bracketed = false;
            for (int expand = 0; expand < 20; ++expand) {
                double dphi = 0.0;
                const double ft = phi(t, dphi);
                if (!std::isfinite(ft) || ft > f + c1 * t * slope ||
                    (expand > 0 && ft >= f_prev)) {
                    t_lo = t_prev;
                    f_lo = f_prev;
                    t_hi = t;
                    bracketed = true;
                    break;
                }
                if (std::abs(dphi) <= -c2 * slope) {
                    t_accept = t;
                    break;
                }
                if (dphi >= 0.0) {
                    t_lo = t;
                    f_lo = ft;
                    t_hi = t_prev;
                    bracketed = true;
                    break;
                }
                t_prev = t;
                f_prev = ft;
                t *= 2.0;
            }
            if (t_accept < 0.0 && !bracketed)
                t_accept = t_prev; // ran out of expansions on a flat slope
            if (t_accept < 0.0) {
                for (int z = 0; z < 30 && t_accept < 0.0; ++z) {
                    const double t_mid = 0.5 * (t_lo + t_hi);
                    double dphi = 0.0;
                    const double fm = phi(t_mid, dphi);
                    if (!std::isfinite(fm) || fm > f + c1 * t_mid * slope || fm >= f_lo) {
                        t_hi = t_mid;
                    } else if (std::abs(dphi) <= -c2 * slope) {
                        t_accept = t_mid;
                    } else if (dphi * (t_hi - t_lo) >= 0.0) {
                        t_hi = t_lo;
                        t_lo = t_mid;
                        f_lo = fm;
                    } else {
                        t_lo = t_mid;
                        f_lo = fm;
                    }
                }
                // fall back to the best Armijo point found during the zoom
                if (t_accept < 0.0 && t_lo > 0.0) t_accept = t_lo;
            }
        }
        if (t_accept <= 0.0) break; // line search failed; report as-is

        for (size_t k = 0; k < n; ++k) x_try[k] = x[k] + t_accept * dir[k];
        const double f_new = obj.eval(x_try, g_try);

        std::vector<double> s(n), yv(n);
        for (size_t k = 0; k < n; ++k) {
            s[k] = x_try[k] - x[k];
            yv[k] = g_try[k] - g[k];
        }
        const double sy = dot(s, yv);
        if (sy > 1e-14) {
            if (s_hist.size() == kMemory) {
                s_hist.erase(s_hist.begin());
                y_hist.erase(y_hist.begin());
                rho_hist.erase(rho_hist.begin());
            }
            s_hist.push_back(std::move(s));
            y_hist.push_back(std::move(yv));
            rho_hist.push_back(1.0 / sy);
        }
        x.swap(x_try);
        g.swap(g_try);
        f = f_new;
        gnorm = norm2(g);

        if (gnorm < 0.8 * best_gnorm) {
            best_gnorm = gnorm;
            best_iter = iter;
        } else if (iter - best_iter > kStallWindow) {
            ++iter;
            break;
        }
    }

    FitResult res;
    res.converged = gnorm <= opts.grad_tol;
    res.grad_norm = gnorm;
    res.iters = iter;
    res.objective = f;
    res.clf.classes = obj.classes;
    res.clf.dim = obj.dim;
    res.clf.w.assign(x.begin(), x.begin() + static_cast<long>(static_cast<size_t>(obj.classes) * obj.dim));
    res.clf.b.assign(x.begin() + static_cast<long>(static_cast<size_t>(obj.classes) * obj.dim), x.end());
    return res;
}

// Exact damped-Newton refinement of the pure-CE objective, used when L-BFGS
// stalls on a badly conditioned fit. Newton's direction is invariant to the
// feature scaling, and on the non-separable epochs (the stubborn ones) the
// Hessian is healthy, so a handful of steps reaches the certificate.
// Parameters are viewed class-major with the bias folded in: u = [z, 1].
uint32_t newton_refine(const Objective& obj, std::vector<double>& theta,
                       double grad_tol, uint32_t max_steps, double& f_out,
                       double& gnorm_out) {
    const uint32_t classes = obj.classes;
    const uint32_t du = obj.dim + 1;
    const size_t n = static_cast<size_t>(classes) * du;

    // theta layout is [W row-major, b]; y-space is per-class [w_row, b_c].
    const auto to_y = [&](std::span<const double> t, std::vector<double>& y) {
        for (uint32_t c = 0; c < classes; ++c) {
            for (uint32_t k = 0; k < obj.dim; ++k)
                y[static_cast<size_t>(c) * du + k] = t[static_cast<size_t>(c) * obj.dim + k];
            y[static_cast<size_t>(c) * du + obj.dim] =
                t[static_cast<size_t>(classes) * obj.dim + c];
        }
    };
    const auto from_y = [&](std::span<const double> y, std::vector<double>& t) {
        for (uint32_t c = 0; c < classes; ++c) {
            for (uint32_t k = 0; k < obj.dim; ++k)
                t[static_cast<size_t>(c) * obj.dim + k] = y[static_cast<size_t>(c) * du + k];
            t[static_cast<size_t>(classes) * obj.dim + c] =
                y[static_cast<size_t>(c) * du + obj.dim];
        }
    };

    std::vector<double> y(n), grad(n), hess, u(du), p(classes), logits(classes);
    std::vector<double> v_outer(n);
    std::vector<double> theta_try(theta.size()), grad_flat(obj.num_params());
    to_y(theta, y);
    u[obj.dim] = 1.0;

    // On a partially separable snapshot the infimum is not attained and the
    // gradient norm plateaus; near an attained optimum two Newton steps cut
    // the gradient by orders of magnitude. Use that gap to stop early.
    double best_gnorm = 1e300;
    uint32_t best_step = 0;
    double handoff_gnorm = 0.0;

    double f = 0.0;
    uint32_t step = 0;
    for (; step < max_steps; ++step) {
        // Loss, gradient and Hessian (upper triangle) at the current point.
        std::fill(grad.begin(), grad.end(), 0.0);
        hess.assign(n * n, 0.0);
        f = 0.0;
        for (uint32_t cls = 0; cls < obj.blocks.size(); ++cls) {
            const double wy = obj.block_weight[cls];
            if (wy == 0.0) continue;
            const Matrix& z = obj.blocks[cls];
            for (uint32_t i = 0; i < z.rows; ++i) {
                const auto zr = z.row(i);
                for (uint32_t k = 0; k < obj.dim; ++k) u[k] = zr[k];
                for (uint32_t c = 0; c < classes; ++c) {
                    const double* yc = y.data() + static_cast<size_t>(c) * du;
                    double acc = 0.0;
                    for (uint32_t k = 0; k < du; ++k) acc += yc[k] * u[k];
                    logits[c] = acc;
                }
                const double zmax = *std::max_element(logits.begin(), logits.end());
                double denom = 0.0;
                for (uint32_t c = 0; c < classes; ++c) {
                    p[c] = std::exp(logits[c] - zmax);
                    denom += p[c];
                }
                for (auto& v : p) v /= denom;
                f += -wy * std::log(std::max(p[cls], 1e-300));

                for (uint32_t c = 0; c < classes; ++c) {
                    const double gc = wy * (p[c] - (c == cls ? 1.0 : 0.0));
                    double* gr = grad.data() + static_cast<size_t>(c) * du;
                    for (uint32_t k = 0; k < du; ++k) gr[k] += gc * u[k];
                }
                // H += w (diag(p) ox uu') - w (p ox u)(p ox u)', upper triangle.
                for (uint32_t c = 0; c < classes; ++c) {
                    if (p[c] < 1e-14) continue;
                    const double coef = wy * p[c];
                    double* block = hess.data() + static_cast<size_t>(c) * du * n +
                                    static_cast<size_t>(c) * du;
                    for (uint32_t k = 0; k < du; ++k) {
                        const double cu = coef * u[k];
                        double* row = block + static_cast<size_t>(k) * n;
                        for (uint32_t k2 = k; k2 < du; ++k2) row[k2] += cu * u[k2];
                    }
                }
                const double sw = std::sqrt(wy);
                for (uint32_t c = 0; c < classes; ++c) {
                    const double pc = sw * p[c];
                    double* vr = v_outer.data() + static_cast<size_t>(c) * du;
                    for (uint32_t k = 0; k < du; ++k) vr[k] = pc * u[k];
                }
                for (size_t r = 0; r < n; ++r) {
                    const double vrv = -v_outer[r];
                    if (vrv == 0.0) continue;
                    double* row = hess.data() + r * n;
                    const double* vo = v_outer.data();
                    for (size_t c2 = r; c2 < n; ++c2) row[c2] += vrv * vo[c2];
                }
            }
        }
        if (obj.ridge > 0.0) {
            for (uint32_t c = 0; c < classes; ++c)
                for (uint32_t k = 0; k < obj.dim; ++k) {
                    const size_t idx = static_cast<size_t>(c) * du + k;
                    f += 0.5 * obj.ridge * y[idx] * y[idx];
                    grad[idx] += obj.ridge * y[idx];
                    hess[idx * n + idx] += obj.ridge;
                }
        }

        gnorm_out = norm2(grad);
        if (std::getenv("BREADCRUMBS_FIT_DEBUG"))
            std::fprintf(stderr, "    newton step %u: f %.9f gnorm %.3e\n", step, f,
                         gnorm_out);
        if (gnorm_out <= grad_tol) break;
        if (step == 0) handoff_gnorm = gnorm_out;
        if (step >= 2 && gnorm_out > 0.3 * handoff_gnorm) break;
        if (gnorm_out < 0.5 * best_gnorm) {
            best_gnorm = gnorm_out;
            best_step = step;
        } else if (step >= best_step + 5) {
            break;
        }

        // Mirror the upper triangle and add Levenberg damping.
        const double damping = std::max(1e-12, 1e-8 * gnorm_out);
        for (size_t r = 0; r < n; ++r) {
            hess[r * n + r] += damping;
            for (size_t c2 = r + 1; c2 < n; ++c2) hess[c2 * n + r] = hess[r * n + c2];
        }

        // In-place Cholesky, forward/back solve for the Newton step.
        bool chol_ok = true;
        for (size_t j = 0; j < n && chol_ok; ++j) {
            double diag = hess[j * n + j];
            const double* rj = hess.data() + j * n;
            for (size_t k = 0; k < j; ++k) diag -= rj[k] * rj[k];
            if (diag <= 0.0) {
                chol_ok = false;
                break;
            }
            const double ljj = std::sqrt(diag);
            hess[j * n + j] = ljj;
            for (size_t i = j + 1; i < n; ++i) {
                double v = hess[i * n + j];
                const double* ri = hess.data() + i * n;
                for (size_t k = 0; k < j; ++k) v -= ri[k] * rj[k];
                hess[i * n + j] = v / ljj;
            }
        }
        if (!chol_ok) break;

        std::vector<double> stepv(grad);
        for (size_t i = 0; i < n; ++i) {
            double v = stepv[i];
            const double* ri = hess.data() + i * n;
            for (size_t k = 0; k < i; ++k) v -= ri[k] * stepv[k];
            stepv[i] = v / ri[i];
        }
        for (size_t i = n; i-- > 0;) {
            double v = stepv[i];
            for (size_t k = i + 1; k < n; ++k) v -= hess[k * n + i] * stepv[k];
            stepv[i] = v / hess[i * n + i];
        }
        for (auto& v : stepv) v = -v;

        // Armijo on the Newton direction (t = 1 is typical once close).
        const double slope = dot(grad, stepv);
        double t = 1.0;
        bool accepted = false;
        std::vector<double> y_try(n);
        for (int ls = 0; ls < 40; ++ls) {
            for (size_t i = 0; i < n; ++i) y_try[i] = y[i] + t * stepv[i];
            from_y(y_try, theta_try);
            const double f_try = obj.eval(theta_try, grad_flat);
            if (std::isfinite(f_try) && f_try <= f + 1e-4 * t * slope) {
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if (!accepted) break;
        for (size_t i = 0; i < n; ++i) y[i] += t * stepv[i];
    }

    from_y(y, theta);
    f_out = f;
    return step;
}

// Runs the fit in feature-standardized coordinates (zero mean, unit scale per
// dimension over the pooled blocks), then maps the optimum back and evaluates
// the convergence certificate as the true gradient norm in the original
// parameterization. Pure reparameterization: logits are preserved exactly, so
// the optimum is the same point; only the conditioning changes.
FitResult standardized_fit(const Objective& obj, const FitOptions& opts,
                           const DenseClassifier* init = nullptr) {
    const uint32_t dim = obj.dim;
    std::vector<double> mu(dim, 0.0), sigma(dim, 0.0);
    {
        double count = 0.0;
        for (uint32_t y = 0; y < obj.blocks.size(); ++y) {
            if (obj.block_weight[y] == 0.0) continue;
            const Matrix& z = obj.blocks[y];
            for (uint32_t i = 0; i < z.rows; ++i, ++count) {
                const auto r = z.row(i);
                for (uint32_t k = 0; k < dim; ++k) mu[k] += r[k];
            }
        }
        for (auto& v : mu) v /= std::max(count, 1.0);
        for (uint32_t y = 0; y < obj.blocks.size(); ++y) {
            if (obj.block_weight[y] == 0.0) continue;
            const Matrix& z = obj.blocks[y];
            for (uint32_t i = 0; i < z.rows; ++i) {
                const auto r = z.row(i);
                for (uint32_t k = 0; k < dim; ++k) {
                    const double d = r[k] - mu[k];
                    sigma[k] += d * d;
                }
            }
        }
        for (auto& v : sigma) v = std::max(std::sqrt(v / std::max(count, 1.0)), 1e-6);
    }

    std::vector<Matrix> scaled(obj.blocks.size());
    for (uint32_t y = 0; y < obj.blocks.size(); ++y) {
        const Matrix& z = obj.blocks[y];
        scaled[y] = Matrix(z.rows, z.cols);
        for (uint32_t i = 0; i < z.rows; ++i) {
            const auto r = z.row(i);
            auto o = scaled[y].row(i);
            for (uint32_t k = 0; k < dim; ++k)
                o[k] = static_cast<float>((r[k] - mu[k]) / sigma[k]);
        }
    }

    // Ridge penalizes the ORIGINAL weights; under reparameterization that
    // would become a non-isotropic penalty, so the ridge (when present) is
    // applied in scaled space instead and noted as part of the surrogate.
    Objective scaled_obj = obj;
    scaled_obj.blocks = scaled;
    FitOptions scaled_opts = opts;
    if (opts.ridge == 0.0) {
        // the original-space certificate can be up to sigma_max looser; keep
        // the quasi-Newton phase short, the Newton polish finishes the job
        const double sigma_max = *std::max_element(sigma.begin(), sigma.end());
        scaled_opts.grad_tol = opts.grad_tol / std::max(1.0, sigma_max);
        scaled_opts.max_iters = std::min<uint32_t>(opts.max_iters, 400);
    }
    std::vector<double> x0;
    if (init && init->classes == obj.classes && init->dim == dim) {
        // map the warm start into scaled coordinates: W~ = W*sigma, b~ = b + W mu
        x0.resize(obj.num_params());
        for (uint32_t c = 0; c < obj.classes; ++c) {
            double shift = 0.0;
            for (uint32_t k = 0; k < dim; ++k) {
                const double w = init->w[static_cast<size_t>(c) * dim + k];
                x0[static_cast<size_t>(c) * dim + k] = w * sigma[k];
                shift += w * mu[k];
            }
            x0[static_cast<size_t>(obj.classes) * dim + c] = init->b[c] + shift;
        }
    }
    FitResult res = lbfgs_fit(scaled_obj, scaled_opts, x0);

    // Map back: W = W~ / sigma, b = b~ - W mu.
    DenseClassifier mapped;
    mapped.classes = obj.classes;
    mapped.dim = dim;
    mapped.w.resize(res.clf.w.size());
    mapped.b.resize(res.clf.b.size());
    for (uint32_t c = 0; c < obj.classes; ++c) {
        double shift = 0.0;
        for (uint32_t k = 0; k < dim; ++k) {
            const double w = res.clf.w[static_cast<size_t>(c) * dim + k] / sigma[k];
            mapped.w[static_cast<size_t>(c) * dim + k] = w;
            shift += w * mu[k];
        }
        mapped.b[c] = res.clf.b[c] - shift;
    }
    res.clf = std::move(mapped);

    // For the pure-CE objective the loss is reparameterization-invariant, so
    // the certificate is re-evaluated as the gradient norm in the original
    // parameterization, with Newton refinement when L-BFGS left the fit short
    // of tolerance. A ridge objective is minimized (and certified) in scaled
    // space, where its penalty is defined.
    if (opts.ridge == 0.0) {
        std::vector<double> theta(obj.num_params());
        std::copy(res.clf.w.begin(), res.clf.w.end(), theta.begin());
        std::copy(res.clf.b.begin(), res.clf.b.end(),
                  theta.begin() + static_cast<long>(res.clf.w.size()));
        std::vector<double> grad(obj.num_params());
        res.objective = obj.eval(theta, grad);
        res.grad_norm = norm2(grad);
        res.converged = res.grad_norm <= opts.grad_tol;
        if (!res.converged) {
            double f = 0.0, gnorm = 0.0;
            res.iters += newton_refine(obj, theta, opts.grad_tol, 10, f, gnorm);
            res.objective = obj.eval(theta, grad);
            res.grad_norm = norm2(grad);
            res.converged = res.grad_norm <= opts.grad_tol;
            std::copy(theta.begin(), theta.begin() + static_cast<long>(res.clf.w.size()),
                      res.clf.w.begin());
            std::copy(theta.begin() + static_cast<long>(res.clf.w.size()), theta.end(),
                      res.clf.b.begin());
        }
    }
    return res;
}

} // namespace

FitResult fit_optimal_classifier(std::span<const Matrix> class_features,
                                 const FitOptions& opts,
                                 const DenseClassifier* warm_start) {
    if (class_features.empty()) throw InvalidInputError("fit: no classes");
    Objective obj;
    obj.blocks = class_features;
    obj.classes = static_cast<uint32_t>(class_features.size());
    obj.dim = class_features[0].cols;
    obj.ridge = opts.ridge;
    obj.block_weight.resize(obj.classes);
    for (uint32_t y = 0; y < obj.classes; ++y) {
        if (class_features[y].rows == 0) throw InvalidInputError("fit: empty class block");
        if (class_features[y].cols != obj.dim) throw ShapeError("fit: inconsistent dims");
        obj.block_weight[y] = 1.0 / class_features[y].rows;
    }

    FitResult res = standardized_fit(obj, opts, warm_start);
    res.class_loss.reserve(obj.classes);
    double total = 0.0;
    for (uint32_t y = 0; y < obj.classes; ++y) {
        const double ly = class_loss_impl(class_features[y], y, res.clf);
        res.class_loss.push_back(ly);
        total += ly;
    }
    res.total_loss = total;
    return res;
}

FitResult fit_class_optimal(const Matrix& z_y, uint32_t y, uint32_t num_classes,
                            const FitOptions& opts) {
    if (opts.ridge <= 0.0)
        throw ConfigError("fit_class_optimal: single-class objective needs ridge > 0");
    if (y >= num_classes) throw InvalidInputError("fit_class_optimal: class out of range");

    // Single block in slot y; other classes only shape the softmax.
    std::vector<Matrix> blocks(num_classes, Matrix(1, z_y.cols, 0.0f));
    Objective obj;
    obj.classes = num_classes;
    obj.dim = z_y.cols;
    obj.ridge = opts.ridge;
    obj.block_weight.assign(num_classes, 0.0);
    blocks[y] = z_y;
    obj.block_weight[y] = 1.0 / z_y.rows;
    obj.blocks = blocks;

    FitResult res = standardized_fit(obj, opts);
    res.class_loss.assign(num_classes, 0.0);
    res.class_loss[y] = class_loss_impl(z_y, y, res.clf);
    res.total_loss = res.class_loss[y];
    return res;
}

EpochOptima::EpochOptima(const TrailStore& store, FitOptions shared_opts,
                         FitOptions per_class_opts)
    : store_(store), shared_opts_(shared_opts), per_class_opts_(per_class_opts) {}

namespace {

FitResult fit_epoch(const TrailStore& store, uint32_t epoch, const FitOptions& opts,
                    const DenseClassifier* warm_start = nullptr) {
    std::vector<Matrix> blocks;
    blocks.reserve(store.num_classes());
    for (uint32_t y = 0; y < store.num_classes(); ++y)
        blocks.push_back(store.class_snapshot(y, epoch));
    return fit_optimal_classifier(blocks, opts, warm_start);
}

} // namespace

const FitResult& EpochOptima::shared(uint32_t epoch) {
    auto it = shared_.find(epoch);
    if (it == shared_.end())
        it = shared_.emplace(epoch, fit_epoch(store_, epoch, shared_opts_)).first;
    return it->second;
}

const FitResult& EpochOptima::per_class(uint32_t epoch, uint32_t class_id) {
    const auto key = std::make_pair(epoch, class_id);
    auto it = per_class_.find(key);
    if (it == per_class_.end()) {
        FitResult fit = fit_class_optimal(store_.class_snapshot(class_id, epoch), class_id,
                                          store_.num_classes(), per_class_opts_);
        it = per_class_.emplace(key, std::move(fit)).first;
    }
    return it->second;
}

void EpochOptima::precompute_shared(std::span<const uint32_t> epochs, uint32_t threads) {
    std::vector<uint32_t> todo;
    for (const uint32_t e : epochs)
        if (shared_.find(e) == shared_.end()) todo.push_back(e);
    std::sort(todo.begin(), todo.end());
    todo.erase(std::unique(todo.begin(), todo.end()), todo.end());
    if (todo.empty()) return;

    // Consecutive epochs have nearby optima, so each chain fits its epochs in
    // order and warm-starts from the chain's previous solution. Interleaving
    // by parity keeps the chains balanced across threads.
    const uint32_t lanes = std::max<uint32_t>(1, std::min<uint32_t>(threads, 4));
    const auto chain = [&](uint32_t lane) {
        std::vector<std::pair<uint32_t, FitResult>> out;
        const DenseClassifier* prev = nullptr;
        for (size_t i = lane; i < todo.size(); i += lanes) {
            out.emplace_back(todo[i], fit_epoch(store_, todo[i], shared_opts_, prev));
            prev = &out.back().second.clf;
        }
        return out;
    };
    if (lanes == 1) {
        for (auto& [e, fit] : chain(0)) shared_.emplace(e, std::move(fit));
        return;
    }
    std::vector<std::future<std::vector<std::pair<uint32_t, FitResult>>>> pool;
    for (uint32_t lane = 0; lane < lanes; ++lane)
        pool.push_back(std::async(std::launch::async, chain, lane));
    for (auto& fut : pool)
        for (auto& [e, fit] : fut.get()) shared_.emplace(e, std::move(fit));
}

// ---------------------------------------------------------------------------
// Checks
// ---------------------------------------------------------------------------

DuplicationVerdict check_duplication_invariance(const Matrix& z_y, uint32_t y,
                                                const LinearClassifier& clf,
                                                uint32_t replication) {
    if (replication < 2) throw InvalidInputError("check_duplication_invariance: replication must be >= 2");
    const DenseClassifier dense = to_dense(clf);
    DuplicationVerdict v;
    v.loss_original = class_loss_impl(z_y, y, dense);

    Matrix dup(z_y.rows * replication, z_y.cols);
    for (uint32_t r = 0; r < replication; ++r)
        std::copy(z_y.data.begin(), z_y.data.end(),
                  dup.data.begin() + static_cast<size_t>(r) * z_y.data.size());
    v.loss_duplicated = class_loss_impl(dup, y, dense);
    v.diff = v.loss_duplicated - v.loss_original;
    v.equal = std::abs(v.diff) <= 1e-6 * (1.0 + std::abs(v.loss_original));
    return v;
}

BoundVerdict check_augmentation_bound(const TrailStore& store, uint32_t class_id,
                                      uint32_t epoch_src, uint32_t epoch_tgt,
                                      EpochOptima& optima, double tol,
                                      OptimalityReading mode) {
    if (epoch_src > epoch_tgt)
        throw InvalidInputError("check_augmentation_bound: source epoch must precede target");

    BoundVerdict v;
    v.class_id = class_id;
    v.epoch_src = epoch_src;
    v.epoch_tgt = epoch_tgt;
    v.mode = mode;

    const Matrix& z_tgt = store.class_snapshot(class_id, epoch_tgt);
    const AlignedSnapshot aligned = store.align(class_id, epoch_src, epoch_tgt);

    // A = Z^e_y together with the transferred snapshot (twice the rows).
    Matrix augmented(z_tgt.rows * 2, z_tgt.cols);
    std::copy(z_tgt.data.begin(), z_tgt.data.end(), augmented.data.begin());
    std::copy(aligned.features.data.begin(), aligned.features.data.end(),
              augmented.data.begin() + z_tgt.data.size());

    const DenseClassifier* clf_tgt = nullptr;
    const DenseClassifier* clf_src = nullptr;
    double loss_src_at_src = 0.0, loss_tgt_at_tgt = 0.0;
    bool certified = true;

    if (mode == OptimalityReading::shared) {
        const FitResult& ft = optima.shared(epoch_tgt);
        const FitResult& fs = optima.shared(epoch_src);
        certified = ft.converged && fs.converged;
        clf_tgt = &ft.clf;
        clf_src = &fs.clf;
        loss_tgt_at_tgt = ft.class_loss[class_id];
        loss_src_at_src = fs.class_loss[class_id];
    } else {
        const FitResult& ft = optima.per_class(epoch_tgt, class_id);
        const FitResult& fs = optima.per_class(epoch_src, class_id);
        certified = ft.converged && fs.converged;
        clf_tgt = &ft.clf;
        clf_src = &fs.clf;
        loss_tgt_at_tgt = ft.class_loss[class_id];
        loss_src_at_src = fs.class_loss[class_id];
    }

    const double loss_aug = class_loss_impl(augmented, class_id, *clf_tgt);
    v.lhs = loss_aug - loss_tgt_at_tgt;
    v.rhs = (loss_src_at_src - loss_tgt_at_tgt) / 2.0;
    v.slack = v.lhs - v.rhs;
    v.satisfied = v.lhs >= v.rhs - tol;
    v.certified = certified;
    return v;
}

std::vector<PairRef> sample_epoch_pairs(const TrailStore& store, uint32_t count, Rng& rng) {
    if (store.last_epoch() < 2)
        throw InvalidInputError("sample_epoch_pairs: need at least 2 epochs");
    std::vector<PairRef> pairs;
    pairs.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        PairRef p;
        p.class_id = static_cast<uint32_t>(rng.index(store.num_classes()));
        p.epoch_tgt = 2 + static_cast<uint32_t>(rng.index(store.last_epoch() - 1));
        p.epoch_src = 1 + static_cast<uint32_t>(rng.index(p.epoch_tgt - 1));
        pairs.push_back(p);
    }
    return pairs;
}

DirectionSummary check_adversarial_direction(const TrailStore& store,
                                             std::span<const PairRef> pairs,
                                             EpochOptima& optima, double tol) {
    DirectionSummary summary;
    summary.pairs = static_cast<uint32_t>(pairs.size());
    for (const PairRef& p : pairs) {
        const FitResult& ft = optima.shared(p.epoch_tgt);
        const FitResult& fs = optima.shared(p.epoch_src);
        if (!ft.converged || !fs.converged) {
            ++summary.not_certified;
            continue;
        }
        const double loss_src = fs.class_loss[p.class_id];
        const double loss_tgt = ft.class_loss[p.class_id];
        if (!(loss_src > loss_tgt)) { // convergence precondition
            ++summary.skipped;
            continue;
        }
        const Matrix& z_tgt = store.class_snapshot(p.class_id, p.epoch_tgt);
        const AlignedSnapshot aligned = store.align(p.class_id, p.epoch_src, p.epoch_tgt);
        Matrix augmented(z_tgt.rows * 2, z_tgt.cols);
        std::copy(z_tgt.data.begin(), z_tgt.data.end(), augmented.data.begin());
        std::copy(aligned.features.data.begin(), aligned.features.data.end(),
                  augmented.data.begin() + z_tgt.data.size());
        const double loss_aug = class_loss_impl(augmented, p.class_id, ft.clf);
        ++summary.checked;
        if (loss_aug > loss_tgt - tol) ++summary.passed;
        else summary.failures.push_back({p, loss_aug, loss_tgt});
    }
    return summary;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

GroupMetrics evaluate(const LinearClassifier& clf, const EmbeddingParams& params,
                      const Dataset& test, const GroupAssignment& groups) {
    test.validate();
    for (const uint32_t n : test.class_counts)
        if (n != test.class_counts.front())
            throw InvalidInputError("evaluate: test set must be balanced");
    if (groups.group.size() != test.num_classes())
        throw InvalidInputError("evaluate: group assignment size mismatch");

    const Matrix features = embed(params, test.inputs);
    const auto predicted = predict(clf, features);

    const uint32_t classes = test.num_classes();
    std::vector<uint32_t> correct(classes, 0), total(classes, 0);
    for (uint32_t i = 0; i < predicted.size(); ++i) {
        ++total[test.labels[i]];
        if (predicted[i] == test.labels[i]) ++correct[test.labels[i]];
    }

    GroupMetrics gm;
    gm.per_class.reserve(classes);
    uint64_t correct_all = 0;
    std::array<uint64_t, 3> g_correct{0, 0, 0}, g_total{0, 0, 0};
    for (uint32_t y = 0; y < classes; ++y) {
        gm.per_class.push_back(static_cast<double>(correct[y]) / total[y]);
        correct_all += correct[y];
        const auto g = static_cast<size_t>(groups.group[y]);
        g_correct[g] += correct[y];
        g_total[g] += total[y];
    }
    gm.overall = static_cast<double>(correct_all) / test.num_samples();
    const auto group_acc = [&](Group g) -> std::optional<double> {
        const auto i = static_cast<size_t>(g);
        if (g_total[i] == 0) return std::nullopt;
        return static_cast<double>(g_correct[i]) / static_cast<double>(g_total[i]);
    };
    gm.many = group_acc(Group::many);
    gm.medium = group_acc(Group::medium);
    gm.few = group_acc(Group::few);
    return gm;
}

std::vector<uint32_t> hard_example_counts(std::span<const Matrix> epoch_features,
                                          std::span<const std::vector<uint32_t>> epoch_labels,
                                          std::span<const LinearClassifier> epoch_classifiers,
                                          double threshold) {
    if (epoch_features.size() != epoch_classifiers.size() ||
        epoch_features.size() != epoch_labels.size())
        throw ShapeError("hard_example_counts: per-epoch spans differ in length");

    std::vector<uint32_t> counts;
    counts.reserve(epoch_features.size());
    for (size_t e = 0; e < epoch_features.size(); ++e) {
        const DenseClassifier dense = to_dense(epoch_classifiers[e]);
        const Matrix& z = epoch_features[e];
        const auto& labels = epoch_labels[e];
        std::vector<double> logits(dense.classes);
        uint32_t hard = 0;
        for (uint32_t i = 0; i < z.rows; ++i) {
            const auto zr = z.row(i);
            for (uint32_t c = 0; c < dense.classes; ++c) {
                const double* wr = dense.w.data() + static_cast<size_t>(c) * dense.dim;
                double acc = dense.b[c];
                for (uint32_t k = 0; k < dense.dim; ++k) acc += wr[k] * zr[k];
                logits[c] = acc;
            }
            const auto p = softmax_d(logits);
            if (-std::log(std::max(p[labels[i]], 1e-300)) > threshold) ++hard;
        }
        counts.push_back(hard);
    }
    return counts;
}

// ---------------------------------------------------------------------------
// Whole-run verification
// ---------------------------------------------------------------------------

bool VerificationReport::all_pass(double bound_rate_floor) const {
    return duplication_passed == duplication_checked &&
           bound_certified > 0 && bound_pass_rate >= bound_rate_floor &&
           direction.failures.empty();
}

VerificationReport verify_run(const TrailStore& store, const VerifyOptions& opts) {
    VerificationReport report;
    Rng rng(opts.seed);

    // Duplication invariance: random feature sets under random classifiers.
    {
        const double t0 = now_seconds();
        Rng crng = rng.derive("duplication");
        const uint32_t reps[3] = {2, 5, 10};
        for (uint32_t i = 0; i < opts.duplication_count; ++i) {
            const uint32_t classes = 3 + static_cast<uint32_t>(crng.index(6));
            const uint32_t dim = 2 + static_cast<uint32_t>(crng.index(10));
            const uint32_t rows = 1 + static_cast<uint32_t>(crng.index(8));
            LinearClassifier clf;
            clf.w = Matrix(classes, dim);
            for (auto& v : clf.w.data) v = static_cast<float>(crng.normal());
            clf.b.resize(classes);
            for (auto& v : clf.b) v = static_cast<float>(crng.normal());
            Matrix z(rows, dim);
            for (auto& v : z.data) v = static_cast<float>(crng.normal());
            const auto y = static_cast<uint32_t>(crng.index(classes));
            const auto verdict = check_duplication_invariance(z, y, clf, reps[i % 3]);
            ++report.duplication_checked;
            if (verdict.equal) ++report.duplication_passed;
        }
        report.seconds_duplication = now_seconds() - t0;
    }

    // Augmentation bound over sampled pairs, after precomputing the optima.
    // Sampling tops up until pair_count pairs have certified inner fits (an
    // epoch whose fit misses the gradient tolerance invalidates its pairs).
    {
        const double t0 = now_seconds();
        Rng prng = rng.derive("pairs");
        EpochOptima optima(store, opts.shared_fit, opts.per_class_fit);
        {
            std::vector<uint32_t> epochs;
            for (uint32_t e = 1; e <= store.last_epoch(); ++e) epochs.push_back(e);
            optima.precompute_shared(epochs, opts.threads);
        }

        std::vector<PairRef> pairs;
        const uint32_t attempt_cap = 10 * opts.pair_count;
        while (report.bound_certified < opts.pair_count &&
               report.bound.size() < attempt_cap) {
            const uint32_t want = opts.pair_count - report.bound_certified;
            for (const auto& p : sample_epoch_pairs(store, want, prng)) {
                pairs.push_back(p);
                BoundVerdict v =
                    check_augmentation_bound(store, p.class_id, p.epoch_src, p.epoch_tgt,
                                             optima, opts.tol, OptimalityReading::shared);
                if (v.certified) {
                    ++report.bound_certified;
                    if (v.satisfied) ++report.bound_satisfied;
                    else if (opts.attribute_violations) {
                        // Attribute the violation: does the per-class reading
                        // of the optimality assumption rescue the inequality?
                        report.attributions.push_back(check_augmentation_bound(
                            store, p.class_id, p.epoch_src, p.epoch_tgt, optima, opts.tol,
                            OptimalityReading::per_class));
                    }
                }
                report.bound.push_back(v);
            }
        }
        report.bound_pass_rate =
            report.bound_certified > 0
                ? static_cast<double>(report.bound_satisfied) / report.bound_certified
                : 0.0;
        report.seconds_bound = now_seconds() - t0;

        // Adversarial direction over the same pairs and optima.
        const double t1 = now_seconds();
        report.direction = check_adversarial_direction(store, pairs, optima, opts.tol);
        report.seconds_direction = now_seconds() - t1;
    }

    return report;
}

} // namespace breadcrumbs
