#pragma once

#include <stdexcept>
#include <utility>

#include "dsslab/tensor.hpp"

namespace dsslab {

struct ConvGrads {
    Tensor grad_input;
    Tensor grad_kernel;
};

namespace detail {

inline void check_conv_args(const Tensor& input, const Tensor& kernel,
                            int stride, int padding) {
    if (input.rank() != 4) throw std::invalid_argument("conv2d: input must be NCHW");
    if (kernel.rank() != 4) throw std::invalid_argument("conv2d: kernel must be OIKhKw");
    if (stride < 1) throw std::invalid_argument("conv2d: stride must be positive");
    if (padding < 0) throw std::invalid_argument("conv2d: padding must be non-negative");
    if (input.extent(1) != kernel.extent(1))
        throw std::invalid_argument("conv2d: channel count mismatch");
}

inline std::pair<int, int> conv_output_extents(const Tensor& input, const Tensor& kernel,
                                               int stride, int padding) {
    const int h = input.extent(2), w = input.extent(3);
    const int kh = kernel.extent(2), kw = kernel.extent(3);
    const int hn = h + 2 * padding - kh;
    const int wn = w + 2 * padding - kw;
    if (hn < 0 || wn < 0 || hn % stride != 0 || wn % stride != 0)
        throw std::invalid_argument("conv2d: output extent is not a positive integer");
    return {hn / stride + 1, wn / stride + 1};
}

}  // namespace detail

/// Cross-correlation of NCHW input with OIKhKw kernel, zero padding.
/// Fixed loop order keeps summation deterministic.
inline Tensor conv2d_forward(const Tensor& input, const Tensor& kernel,
                             int stride, int padding) {
    detail::check_conv_args(input, kernel, stride, padding);
    const auto [oh, ow] = detail::conv_output_extents(input, kernel, stride, padding);
    const int n = input.extent(0), ic = input.extent(1);
    const int h = input.extent(2), w = input.extent(3);
    const int oc = kernel.extent(0), kh = kernel.extent(2), kw = kernel.extent(3);

    Tensor out({n, oc, oh, ow});
    for (int b = 0; b < n; ++b)
        for (int o = 0; o < oc; ++o)
            for (int y = 0; y < oh; ++y)
                for (int x = 0; x < ow; ++x) {
                    double acc = 0.0;
                    for (int c = 0; c < ic; ++c)
                        for (int dy = 0; dy < kh; ++dy)
                            for (int dx = 0; dx < kw; ++dx) {
                                const int iy = y * stride - padding + dy;
                                const int ix = x * stride - padding + dx;
                                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                                acc += input.at4(b, c, iy, ix) * kernel.at4(o, c, dy, dx);
                            }
                    out.at4(b, o, y, x) = acc;
                }
    return out;
}

/// Exact adjoints of conv2d_forward with respect to input and kernel,
/// accumulated over the same index tuples the forward pass visits.
inline ConvGrads conv2d_backward(const Tensor& input, const Tensor& kernel,
                                 const Tensor& grad_out, int stride, int padding) {
    detail::check_conv_args(input, kernel, stride, padding);
    const auto [oh, ow] = detail::conv_output_extents(input, kernel, stride, padding);
    const int n = input.extent(0), ic = input.extent(1);
    const int h = input.extent(2), w = input.extent(3);
    const int oc = kernel.extent(0), kh = kernel.extent(2), kw = kernel.extent(3);
    if (grad_out.shape() != std::vector<int>{n, oc, oh, ow})
        throw std::invalid_argument("conv2d_backward: grad_out shape mismatch");

    ConvGrads g{Tensor(input.shape()), Tensor(kernel.shape())};
    for (int b = 0; b < n; ++b)
        for (int o = 0; o < oc; ++o)
            for (int y = 0; y < oh; ++y)
                for (int x = 0; x < ow; ++x) {
                    const double go = grad_out.at4(b, o, y, x);
                    for (int c = 0; c < ic; ++c)
                        for (int dy = 0; dy < kh; ++dy)
                            for (int dx = 0; dx < kw; ++dx) {
                                const int iy = y * stride - padding + dy;
                                const int ix = x * stride - padding + dx;
                                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                                g.grad_input.at4(b, c, iy, ix) += go * kernel.at4(o, c, dy, dx);
                                g.grad_kernel.at4(o, c, dy, dx) += go * input.at4(b, c, iy, ix);
                            }
                }
    return g;
}

}  // namespace dsslab
