#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dsslab/conv.hpp"
#include "dsslab/error.hpp"
#include "dsslab/optimizer.hpp"
#include "dsslab/rng.hpp"
#include "dsslab/tensor.hpp"
#include "dsslab/weight_norm.hpp"

namespace dsslab {

enum class LayerKind { linear, conv2d, batchnorm, relu, gradient_reversal, flatten };

inline const char* to_string(LayerKind k) {
    switch (k) {
        case LayerKind::linear: return "linear";
        case LayerKind::conv2d: return "conv2d";
        case LayerKind::batchnorm: return "batchnorm";
        case LayerKind::relu: return "relu";
        case LayerKind::gradient_reversal: return "gradient-reversal";
        case LayerKind::flatten: return "flatten";
    }
    return "?";
}

constexpr double kBatchNormEps = 1e-5;
constexpr double kBatchNormMomentum = 0.1;

struct LayerSpec {
    LayerKind kind = LayerKind::relu;
    std::string name;

    int in_features = 0, out_features = 0;                            // linear
    int in_channels = 0, out_channels = 0;                            // conv2d
    int kernel_size = 0, stride = 1, padding = 0;                     // conv2d
    int channels = 0;                                                 // batchnorm
    bool with_bias = true;
    WeightMode weight_mode = WeightMode::plain;
    double grl_alpha = 1.0;

    static LayerSpec linear(std::string name, int in, int out,
                            WeightMode mode = WeightMode::plain, bool bias = true) {
        LayerSpec s;
        s.kind = LayerKind::linear;
        s.name = std::move(name);
        s.in_features = in;
        s.out_features = out;
        s.weight_mode = mode;
        s.with_bias = bias;
        return s;
    }
    static LayerSpec conv2d(std::string name, int in_ch, int out_ch, int kernel,
                            int stride, int padding, WeightMode mode = WeightMode::plain,
                            bool bias = false) {
        LayerSpec s;
        s.kind = LayerKind::conv2d;
        s.name = std::move(name);
        s.in_channels = in_ch;
        s.out_channels = out_ch;
        s.kernel_size = kernel;
        s.stride = stride;
        s.padding = padding;
        s.weight_mode = mode;
        s.with_bias = bias;
        return s;
    }
    static LayerSpec batchnorm(std::string name, int channels) {
        LayerSpec s;
        s.kind = LayerKind::batchnorm;
        s.name = std::move(name);
        s.channels = channels;
        return s;
    }
    static LayerSpec relu(std::string name) {
        LayerSpec s;
        s.kind = LayerKind::relu;
        s.name = std::move(name);
        return s;
    }
    static LayerSpec flatten(std::string name) {
        LayerSpec s;
        s.kind = LayerKind::flatten;
        s.name = std::move(name);
        return s;
    }
    static LayerSpec gradient_reversal(std::string name, double alpha) {
        LayerSpec s;
        s.kind = LayerKind::gradient_reversal;
        s.name = std::move(name);
        s.grl_alpha = alpha;
        return s;
    }

    bool weight_bearing() const {
        return kind == LayerKind::linear || kind == LayerKind::conv2d;
    }

    void validate() const {
        if (!weight_bearing() && weight_mode != WeightMode::plain)
            throw std::invalid_argument("LayerSpec: weight_mode only applies to linear/conv2d");
        if (kind == LayerKind::gradient_reversal && grl_alpha < 0.0)
            throw std::invalid_argument("LayerSpec: grl_alpha must be >= 0");
        if (kind == LayerKind::linear && (in_features <= 0 || out_features <= 0))
            throw std::invalid_argument("LayerSpec: linear extents must be positive");
        if (kind == LayerKind::conv2d &&
            (in_channels <= 0 || out_channels <= 0 || kernel_size <= 0 || stride <= 0 || padding < 0))
            throw std::invalid_argument("LayerSpec: bad conv2d geometry");
        if (kind == LayerKind::batchnorm && channels <= 0)
            throw std::invalid_argument("LayerSpec: batchnorm channels must be positive");
    }
};

/// Per-forward activation record; frames stack so a second forward cannot
/// corrupt a pending backward.
struct CacheFrame {
    Tensor input;                  // linear/conv/relu
    std::vector<int> input_shape;  // flatten
    Tensor x_hat;                  // batchnorm
    std::vector<double> inv_std;   // batchnorm, per channel
};

struct LayerState {
    std::optional<ParamState> weight;
    std::optional<ParamState> bias;
    Tensor bn_running_mean, bn_running_var;
    std::vector<CacheFrame> cache;
    double grl_scale = 1.0;  // warm-up multiplier on grl_alpha, set by the harness
};

inline LayerState init_layer_state(const LayerSpec& spec, Rng& rng) {
    spec.validate();
    LayerState st;
    switch (spec.kind) {
        case LayerKind::linear: {
            Tensor w({spec.out_features, spec.in_features});
            const double scale = std::sqrt(2.0 / spec.in_features);
            for (double& v : w.data()) v = rng.normal() * scale;
            st.weight.emplace(std::move(w), spec.weight_mode);
            if (spec.with_bias) st.bias.emplace(Tensor({spec.out_features}), WeightMode::plain);
            break;
        }
        case LayerKind::conv2d: {
            Tensor w({spec.out_channels, spec.in_channels, spec.kernel_size, spec.kernel_size});
            const double fan_in = spec.in_channels * spec.kernel_size * spec.kernel_size;
            const double scale = std::sqrt(2.0 / fan_in);
            for (double& v : w.data()) v = rng.normal() * scale;
            st.weight.emplace(std::move(w), spec.weight_mode);
            if (spec.with_bias) st.bias.emplace(Tensor({spec.out_channels}), WeightMode::plain);
            break;
        }
        case LayerKind::batchnorm: {
            st.weight.emplace(Tensor::full({spec.channels}, 1.0), WeightMode::plain);
            st.bias.emplace(Tensor({spec.channels}), WeightMode::plain);
            st.bn_running_mean = Tensor({spec.channels});
            st.bn_running_var = Tensor::full({spec.channels}, 1.0);
            break;
        }
        default:
            break;
    }
    return st;
}

/// Identity forward; backward scales by -alpha.
inline Tensor grl_backward(double alpha, const Tensor& grad_out) {
    if (alpha < 0.0) throw std::invalid_argument("grl_backward: alpha must be >= 0");
    return grad_out * (-alpha);
}

struct LossResult {
    double loss = 0.0;
    Tensor grad_logits;
};

/// Mean negative log-softmax of the true class over the batch.
inline LossResult softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.rank() != 2) throw std::invalid_argument("softmax_cross_entropy: logits must be N x K");
    const int n = logits.extent(0), k = logits.extent(1);
    if (static_cast<int>(labels.size()) != n)
        throw std::invalid_argument("softmax_cross_entropy: label count mismatch");
    LossResult res;
    res.grad_logits = Tensor(logits.shape());
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        const int label = labels[static_cast<std::size_t>(i)];
        if (label < 0 || label >= k)
            throw std::invalid_argument("softmax_cross_entropy: label out of range");
        double maxv = logits.at2(i, 0);
        for (int j = 1; j < k; ++j) maxv = std::max(maxv, logits.at2(i, j));
        double sum = 0.0;
        for (int j = 0; j < k; ++j) sum += std::exp(logits.at2(i, j) - maxv);
        const double lse = maxv + std::log(sum);
        total += lse - logits.at2(i, label);
        for (int j = 0; j < k; ++j) {
            const double p = std::exp(logits.at2(i, j) - lse);
            res.grad_logits.at2(i, j) = (p - (j == label ? 1.0 : 0.0)) / n;
        }
    }
    res.loss = total / n;
    return res;
}

namespace detail {

inline const Tensor forward_weight(const LayerState& state) {
    const ParamState& p = *state.weight;
    if (p.mode == WeightMode::weight_norm) return wn_effective_weight(p.weight);
    return p.weight;
}

inline void store_weight_grad(LayerState& state, const Tensor& grad_wrt_forward_weight) {
    ParamState& p = *state.weight;
    if (p.mode == WeightMode::weight_norm)
        p.grad += wn_backward(p.weight, grad_wrt_forward_weight);
    else
        p.grad += grad_wrt_forward_weight;
}

// Per-channel reduction extents for batchnorm on N x C or N x C x H x W.
inline std::pair<int, std::size_t> bn_geometry(const LayerSpec& spec, const Tensor& x) {
    if (x.rank() != 2 && x.rank() != 4)
        throw std::invalid_argument("batchnorm: input must be rank 2 or 4");
    if (x.extent(1) != spec.channels)
        throw std::invalid_argument("batchnorm: channel count mismatch");
    const int spatial = x.rank() == 4 ? x.extent(2) * x.extent(3) : 1;
    return {spatial, static_cast<std::size_t>(x.extent(0)) * spatial};
}

template <typename Fn>
inline void bn_for_each(const Tensor& x, int channel, int spatial, Fn&& fn) {
    const int n = x.extent(0);
    const int c_count = x.extent(1);
    for (int b = 0; b < n; ++b) {
        const std::size_t base = (static_cast<std::size_t>(b) * c_count + channel) * spatial;
        for (int s = 0; s < spatial; ++s) fn(base + s);
    }
}

}  // namespace detail

inline Tensor batchnorm_forward(const LayerSpec& spec, LayerState& state, const Tensor& input,
                                bool training) {
    const auto [spatial, m] = detail::bn_geometry(spec, input);
    if (training && input.extent(0) < 2)
        throw std::invalid_argument("batchnorm: training forward needs batch size >= 2");

    const Tensor& gamma = state.weight->weight;
    const Tensor& beta = state.bias->weight;
    Tensor out(input.shape());

    if (!training) {
        for (int c = 0; c < spec.channels; ++c) {
            const double inv = 1.0 / std::sqrt(state.bn_running_var[static_cast<std::size_t>(c)] + kBatchNormEps);
            const double mean = state.bn_running_mean[static_cast<std::size_t>(c)];
            detail::bn_for_each(input, c, spatial, [&](std::size_t i) {
                out.data()[i] = gamma[static_cast<std::size_t>(c)] * (input.data()[i] - mean) * inv +
                                beta[static_cast<std::size_t>(c)];
            });
        }
        return out;
    }

    CacheFrame frame;
    frame.x_hat = Tensor(input.shape());
    frame.inv_std.resize(static_cast<std::size_t>(spec.channels));
    for (int c = 0; c < spec.channels; ++c) {
        double sum = 0.0;
        detail::bn_for_each(input, c, spatial, [&](std::size_t i) { sum += input.data()[i]; });
        const double mean = sum / static_cast<double>(m);
        double var_acc = 0.0;
        detail::bn_for_each(input, c, spatial, [&](std::size_t i) {
            const double d = input.data()[i] - mean;
            var_acc += d * d;
        });
        const double var = var_acc / static_cast<double>(m);
        const double inv = 1.0 / std::sqrt(var + kBatchNormEps);
        frame.inv_std[static_cast<std::size_t>(c)] = inv;
        detail::bn_for_each(input, c, spatial, [&](std::size_t i) {
            const double xh = (input.data()[i] - mean) * inv;
            frame.x_hat.data()[i] = xh;
            out.data()[i] = gamma[static_cast<std::size_t>(c)] * xh + beta[static_cast<std::size_t>(c)];
        });
        auto ci = static_cast<std::size_t>(c);
        state.bn_running_mean[ci] = (1.0 - kBatchNormMomentum) * state.bn_running_mean[ci] +
                                    kBatchNormMomentum * mean;
        state.bn_running_var[ci] = (1.0 - kBatchNormMomentum) * state.bn_running_var[ci] +
                                   kBatchNormMomentum * var;
    }
    state.cache.push_back(std::move(frame));
    return out;
}

inline Tensor layer_forward(const LayerSpec& spec, LayerState& state, const Tensor& input,
                            bool training) {
    switch (spec.kind) {
        case LayerKind::linear: {
            if (input.rank() != 2 || input.extent(1) != spec.in_features)
                throw std::invalid_argument("linear: input shape mismatch");
            const Tensor w = detail::forward_weight(state);
            const int n = input.extent(0);
            Tensor out({n, spec.out_features});
            for (int b = 0; b < n; ++b)
                for (int o = 0; o < spec.out_features; ++o) {
                    double acc = 0.0;
                    for (int i = 0; i < spec.in_features; ++i)
                        acc += w.at2(o, i) * input.at2(b, i);
                    if (state.bias) acc += state.bias->weight[static_cast<std::size_t>(o)];
                    out.at2(b, o) = acc;
                }
            if (training) {
                CacheFrame frame;
                frame.input = input;
                state.cache.push_back(std::move(frame));
            }
            return out;
        }
        case LayerKind::conv2d: {
            const Tensor w = detail::forward_weight(state);
            Tensor out = conv2d_forward(input, w, spec.stride, spec.padding);
            if (state.bias) {
                const int n = out.extent(0), oh = out.extent(2), ow = out.extent(3);
                for (int b = 0; b < n; ++b)
                    for (int o = 0; o < spec.out_channels; ++o) {
                        const double bo = state.bias->weight[static_cast<std::size_t>(o)];
                        for (int y = 0; y < oh; ++y)
                            for (int x = 0; x < ow; ++x) out.at4(b, o, y, x) += bo;
                    }
            }
            if (training) {
                CacheFrame frame;
                frame.input = input;
                state.cache.push_back(std::move(frame));
            }
            return out;
        }
        case LayerKind::batchnorm:
            return batchnorm_forward(spec, state, input, training);
        case LayerKind::relu: {
            Tensor out = input;
            for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
            if (training) {
                CacheFrame frame;
                frame.input = input;
                state.cache.push_back(std::move(frame));
            }
            return out;
        }
        case LayerKind::gradient_reversal: {
            if (training) state.cache.push_back(CacheFrame{});
            return input;
        }
        case LayerKind::flatten: {
            if (input.rank() < 2) throw std::invalid_argument("flatten: input must have rank >= 2");
            const int n = input.extent(0);
            const int rest = static_cast<int>(input.size()) / n;
            if (training) {
                CacheFrame frame;
                frame.input_shape = input.shape();
                state.cache.push_back(std::move(frame));
            }
            return input.reshaped({n, rest});
        }
    }
    throw std::invalid_argument("layer_forward: unknown kind");
}

inline Tensor layer_backward(const LayerSpec& spec, LayerState& state, const Tensor& grad_out) {
    if (state.cache.empty())
        throw StateError("layer_backward: no cached forward for layer '" + spec.name + "'");
    CacheFrame frame = std::move(state.cache.back());
    state.cache.pop_back();

    switch (spec.kind) {
        case LayerKind::linear: {
            const Tensor& x = frame.input;
            if (grad_out.rank() != 2 || grad_out.extent(0) != x.extent(0) ||
                grad_out.extent(1) != spec.out_features)
                throw std::invalid_argument("linear backward: grad shape mismatch");
            const Tensor w = detail::forward_weight(state);
            const int n = x.extent(0);
            Tensor gw({spec.out_features, spec.in_features});
            for (int o = 0; o < spec.out_features; ++o)
                for (int i = 0; i < spec.in_features; ++i) {
                    double acc = 0.0;
                    for (int b = 0; b < n; ++b) acc += grad_out.at2(b, o) * x.at2(b, i);
                    gw.at2(o, i) = acc;
                }
            detail::store_weight_grad(state, gw);
            if (state.bias) {
                auto& gb = state.bias->grad;
                for (int o = 0; o < spec.out_features; ++o) {
                    double acc = 0.0;
                    for (int b = 0; b < n; ++b) acc += grad_out.at2(b, o);
                    gb[static_cast<std::size_t>(o)] += acc;
                }
            }
            Tensor gin({n, spec.in_features});
            for (int b = 0; b < n; ++b)
                for (int i = 0; i < spec.in_features; ++i) {
                    double acc = 0.0;
                    for (int o = 0; o < spec.out_features; ++o)
                        acc += grad_out.at2(b, o) * w.at2(o, i);
                    gin.at2(b, i) = acc;
                }
            return gin;
        }
        case LayerKind::conv2d: {
            const Tensor w = detail::forward_weight(state);
            ConvGrads cg = conv2d_backward(frame.input, w, grad_out, spec.stride, spec.padding);
            detail::store_weight_grad(state, cg.grad_kernel);
            if (state.bias) {
                auto& gb = state.bias->grad;
                const int n = grad_out.extent(0), oh = grad_out.extent(2), ow = grad_out.extent(3);
                for (int o = 0; o < spec.out_channels; ++o) {
                    double acc = 0.0;
                    for (int b = 0; b < n; ++b)
                        for (int y = 0; y < oh; ++y)
                            for (int x = 0; x < ow; ++x) acc += grad_out.at4(b, o, y, x);
                    gb[static_cast<std::size_t>(o)] += acc;
                }
            }
            return std::move(cg.grad_input);
        }
        case LayerKind::batchnorm: {
            const Tensor& x_hat = frame.x_hat;
            if (!grad_out.same_shape(x_hat))
                throw std::invalid_argument("batchnorm backward: grad shape mismatch");
            const auto [spatial, m] = detail::bn_geometry(spec, x_hat);
            const Tensor& gamma = state.weight->weight;
            Tensor gin(grad_out.shape());
            for (int c = 0; c < spec.channels; ++c) {
                double sum_g = 0.0, sum_gx = 0.0;
                detail::bn_for_each(grad_out, c, spatial, [&](std::size_t i) {
                    sum_g += grad_out.data()[i];
                    sum_gx += grad_out.data()[i] * x_hat.data()[i];
                });
                auto ci = static_cast<std::size_t>(c);
                state.weight->grad[ci] += sum_gx;
                state.bias->grad[ci] += sum_g;
                const double inv = frame.inv_std[ci];
                const double mean_g = sum_g / static_cast<double>(m);
                const double mean_gx = sum_gx / static_cast<double>(m);
                detail::bn_for_each(grad_out, c, spatial, [&](std::size_t i) {
                    gin.data()[i] = gamma[ci] * inv *
                                    (grad_out.data()[i] - mean_g - x_hat.data()[i] * mean_gx);
                });
            }
            return gin;
        }
        case LayerKind::relu: {
            if (!grad_out.same_shape(frame.input))
                throw std::invalid_argument("relu backward: grad shape mismatch");
            Tensor gin = grad_out;
            for (std::size_t i = 0; i < gin.size(); ++i)
                if (frame.input[i] <= 0.0) gin[i] = 0.0;
            return gin;
        }
        case LayerKind::gradient_reversal:
            return grl_backward(spec.grl_alpha * state.grl_scale, grad_out);
        case LayerKind::flatten:
            return grad_out.reshaped(frame.input_shape);
    }
    throw std::invalid_argument("layer_backward: unknown kind");
}

}  // namespace dsslab
