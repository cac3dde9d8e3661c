#pragma once

#include "dsslab/error.hpp"
#include "dsslab/tensor.hpp"

namespace dsslab {

/// omega / ||omega||; the weight actually used in a weight-norm forward pass.
inline Tensor wn_effective_weight(const Tensor& omega) {
    const double norm = frobenius_norm(omega);
    if (norm == 0.0) throw NumericError("wn_effective_weight: zero-norm weight");
    return omega * (1.0 / norm);
}

/// Backward through the Frobenius normalization: given the gradient w.r.t.
/// the effective weight, returns
///   (1/||omega||) * (g - omega_dir * <g, omega_dir>),
/// which is exactly orthogonal to omega.
inline Tensor wn_backward(const Tensor& omega, const Tensor& grad_wrt_effective) {
    if (!omega.same_shape(grad_wrt_effective))
        throw std::invalid_argument("wn_backward: shape mismatch");
    const double norm = frobenius_norm(omega);
    if (norm == 0.0) throw NumericError("wn_backward: zero-norm weight");
    const double inv = 1.0 / norm;
    const double radial = inner_product(grad_wrt_effective, omega) * inv;
    Tensor out = grad_wrt_effective;
    out.axpy(-radial * inv, omega);
    out *= inv;
    return out;
}

}  // namespace dsslab
