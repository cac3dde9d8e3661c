#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dsslab/error.hpp"
#include "dsslab/tensor.hpp"
#include "dsslab/weight_norm.hpp"

namespace dsslab {

/// How a parameter participates in suppression.
///   plain       - ordinary SGD on the raw weight
///   dss         - SGD on the gradient with its projection onto the weight
///                 direction subtracted (scaled by lambda)
///   weight_norm - the forward pass uses weight/||weight||; the raw weight is
///                 stepped plainly and the layer backward supplies the
///                 normalization-aware gradient
enum class WeightMode { plain, dss, weight_norm };

inline const char* to_string(WeightMode m) {
    switch (m) {
        case WeightMode::plain: return "plain";
        case WeightMode::dss: return "dss";
        case WeightMode::weight_norm: return "weight-norm";
    }
    return "?";
}

/// One trainable parameter: raw weight, accumulated gradient, mode, and the
/// Frobenius norm cached at the start of the most recent step.
struct ParamState {
    Tensor weight;
    Tensor grad;
    WeightMode mode = WeightMode::plain;
    double cached_norm = 0.0;
    long zero_norm_fallbacks = 0;

    ParamState() = default;
    explicit ParamState(Tensor w, WeightMode m = WeightMode::plain)
        : weight(std::move(w)), grad(weight.shape()), mode(m) {}
};

struct DssConfig {
    double lambda = 1.0;
    double lr = 0.01;

    DssConfig() = default;
    DssConfig(double lambda_, double lr_) : lambda(lambda_), lr(lr_) { validate(); }

    void validate() const {
        if (!(lr > 0.0)) throw std::invalid_argument("DssConfig: lr must be positive");
        if (!(lambda >= 0.0 && lambda <= 1.0))
            throw std::invalid_argument("DssConfig: lambda must be in [0, 1]");
    }
};

/// Projection of g onto the direction of w: <g, w> w / ||w||^2.
inline Tensor project_onto_weight(const Tensor& g, const Tensor& w) {
    if (!g.same_shape(w)) throw std::invalid_argument("project_onto_weight: shape mismatch");
    const double norm = frobenius_norm(w);
    if (norm == 0.0) throw NumericError("project_onto_weight: zero-norm weight");
    const double coeff = inner_product(g, w) / (norm * norm);
    Tensor out = w;
    out *= coeff;
    return out;
}

/// weight <- weight - lr * grad; grad is zeroed afterwards.
inline void sgd_step(ParamState& p, double lr) {
    if (!p.grad.all_finite()) throw NumericError("sgd_step: non-finite gradient");
    p.cached_norm = frobenius_norm(p.weight);
    p.weight.axpy(-lr, p.grad);
    p.grad.fill(0.0);
}

/// Suppressed update: weight <- weight - lr * (g - lambda * proj_w(g)), with
/// the projection taken against the pre-update weight. A zero-norm weight
/// falls back to a plain SGD step and bumps the fallback counter, so a
/// zero-initialized parameter can still move.
inline void dss_step(ParamState& p, const DssConfig& cfg) {
    cfg.validate();
    if (!p.grad.all_finite()) throw NumericError("dss_step: non-finite gradient");
    p.cached_norm = frobenius_norm(p.weight);
    if (cfg.lambda == 0.0) {
        // identical arithmetic to sgd_step, bit for bit
        p.weight.axpy(-cfg.lr, p.grad);
        p.grad.fill(0.0);
        return;
    }
    if (p.cached_norm == 0.0) {
        ++p.zero_norm_fallbacks;
        p.weight.axpy(-cfg.lr, p.grad);
        p.grad.fill(0.0);
        return;
    }
    const double coeff = cfg.lambda * inner_product(p.grad, p.weight) /
                         (p.cached_norm * p.cached_norm);
    if (!std::isfinite(coeff)) throw NumericError("dss_step: non-finite projection");
    auto& wd = p.weight.data();
    const auto& gd = p.grad.data();
    std::vector<double> w_before(wd);
    for (std::size_t i = 0; i < wd.size(); ++i)
        wd[i] -= cfg.lr * (gd[i] - coeff * w_before[i]);
    p.grad.fill(0.0);
}

/// The adaptive rate of the weight-norm special case: lr / ||omega||^2.
inline double effective_lr(double lr, double omega_norm) {
    if (!(omega_norm > 0.0)) throw std::invalid_argument("effective_lr: omega_norm must be positive");
    return lr / (omega_norm * omega_norm);
}

/// Angle between two nonzero tensors, stable near zero.
inline double angle_between(const Tensor& a, const Tensor& b) {
    const double na = frobenius_norm(a), nb = frobenius_norm(b);
    if (na == 0.0 || nb == 0.0) throw NumericError("angle_between: zero-norm input");
    double dist2 = 0.0;
    const auto& ad = a.data();
    const auto& bd = b.data();
    for (std::size_t i = 0; i < ad.size(); ++i) {
        const double d = ad[i] / na - bd[i] / nb;
        dist2 += d * d;
    }
    double half = 0.5 * std::sqrt(dist2);
    if (half > 1.0) half = 1.0;
    return 2.0 * std::asin(half);
}

/// Gradient of a probe loss evaluated at the effective (forward) weight.
using GradFn = std::function<Tensor(const Tensor&)>;

struct EquivalenceReport {
    double max_direction_deviation = 0.0;  // radians
    std::vector<double> norm_drift;        // per step, relative, run A
    bool assumption_violated = false;      // any drift above threshold
};

/// Runs two trainings from the same initial weight and measures how far the
/// trajectories separate:
///   A: the raw weight is stepped plainly while the forward weight is its
///      unit normalization (the gradient w.r.t. the raw weight follows from
///      wn-style backprop, applied inline here);
///   B: explicit suppression with lambda = 1 on a unit-normalized weight,
///      stepped with the adaptive rate lr / ||omega_A||^2.
/// Reports the max angle between A's weight direction and B's weight across
/// steps, plus A's per-step relative norm change, which monitors the
/// norm-stability assumption the equivalence rests on.
inline EquivalenceReport equivalence_trace(const Tensor& init_weight, const GradFn& grad_stream,
                                           int steps, double lr, double drift_threshold = 0.05) {
    if (steps < 1) throw std::invalid_argument("equivalence_trace: steps must be >= 1");
    double norm_a = frobenius_norm(init_weight);
    if (norm_a == 0.0) throw NumericError("equivalence_trace: zero-norm initial weight");

    Tensor omega = init_weight;
    Tensor w_b = init_weight * (1.0 / norm_a);

    EquivalenceReport report;
    report.norm_drift.reserve(static_cast<std::size_t>(steps));
    for (int t = 0; t < steps; ++t) {
        const double eta_hat = effective_lr(lr, norm_a);

        // Run A: gradient w.r.t. omega from the unit-normalized forward weight.
        Tensor omega_dir = omega * (1.0 / norm_a);
        Tensor g_eff = grad_stream(omega_dir);
        Tensor g_omega = wn_backward(omega, g_eff);
        omega.axpy(-lr, g_omega);
        const double norm_next = frobenius_norm(omega);
        if (!omega.all_finite() || !std::isfinite(norm_next) || norm_next == 0.0)
            throw NumericError("equivalence_trace: run A diverged at step " + std::to_string(t));

        report.norm_drift.push_back(std::abs(norm_next - norm_a) / norm_a);
        norm_a = norm_next;

        // Run B: explicit suppression, lambda = 1, adaptive rate.
        Tensor g_b = grad_stream(w_b);
        Tensor update = g_b - project_onto_weight(g_b, w_b);
        w_b.axpy(-eta_hat, update);
        const double norm_b = frobenius_norm(w_b);
        if (!w_b.all_finite() || !std::isfinite(norm_b) || norm_b == 0.0)
            throw NumericError("equivalence_trace: run B diverged at step " + std::to_string(t));

        Tensor dir_a = omega * (1.0 / norm_a);
        const double dev = angle_between(dir_a, w_b);
        if (dev > report.max_direction_deviation) report.max_direction_deviation = dev;
    }
    for (double d : report.norm_drift)
        if (d > drift_threshold) report.assumption_violated = true;
    return report;
}

}  // namespace dsslab
