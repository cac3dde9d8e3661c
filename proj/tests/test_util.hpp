#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "dsslab/rng.hpp"
#include "dsslab/tensor.hpp"

namespace testutil {

using dsslab::Rng;
using dsslab::Tensor;

inline Tensor random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = rng.normal() * scale;
    return t;
}

/// Central finite differences of a scalar loss, independent of any analytic
/// backward path. Step is relative to the entry magnitude.
inline Tensor finite_diff_grad(const std::function<double(const Tensor&)>& loss, const Tensor& x,
                               double eps = 1e-6) {
    Tensor grad(x.shape());
    Tensor probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double h = eps * std::max(1.0, std::abs(x[i]));
        const double orig = probe[i];
        probe[i] = orig + h;
        const double up = loss(probe);
        probe[i] = orig - h;
        const double down = loss(probe);
        probe[i] = orig;
        grad[i] = (up - down) / (2.0 * h);
    }
    return grad;
}

/// Max-norm error relative to the largest reference entry; near-zero entries
/// of an otherwise O(1) gradient carry finite-difference noise that a
/// per-entry ratio would blow up.
inline double max_rel_err(const Tensor& got, const Tensor& want) {
    double scale = 1.0;
    for (std::size_t i = 0; i < want.size(); ++i) scale = std::max(scale, std::abs(want[i]));
    double worst = 0.0;
    for (std::size_t i = 0; i < got.size(); ++i)
        worst = std::max(worst, std::abs(got[i] - want[i]) / scale);
    return worst;
}

inline double max_abs_err(const Tensor& got, const Tensor& want) {
    double worst = 0.0;
    for (std::size_t i = 0; i < got.size(); ++i)
        worst = std::max(worst, std::abs(got[i] - want[i]));
    return worst;
}

}  // namespace testutil
