#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dsslab/layers.hpp"
#include "dsslab/rng.hpp"

namespace dsslab {

/// A plain stack of layers. Forward in training mode pushes one cache frame
/// per layer; backward pops in LIFO order, so several forwards may be pending
/// at once (the adaptation loop backprops the target batch before the source
/// batch).
class Network {
public:
    Network() = default;

    Network(std::vector<LayerSpec> specs, Rng& rng) : specs_(std::move(specs)) {
        states_.reserve(specs_.size());
        for (const auto& spec : specs_) states_.push_back(init_layer_state(spec, rng));
    }

    Tensor forward(const Tensor& input, bool training) {
        Tensor x = input;
        for (std::size_t i = 0; i < specs_.size(); ++i)
            x = layer_forward(specs_[i], states_[i], x, training);
        return x;
    }

    Tensor backward(const Tensor& grad_out) {
        Tensor g = grad_out;
        for (std::size_t i = specs_.size(); i-- > 0;)
            g = layer_backward(specs_[i], states_[i], g);
        grads_populated_ = true;
        return g;
    }

    void zero_grads() {
        for (auto& st : states_) {
            if (st.weight) st.weight->grad.fill(0.0);
            if (st.bias) st.bias->grad.fill(0.0);
        }
        grads_populated_ = false;
    }

    /// Warm-up multiplier applied to every gradient-reversal layer's alpha.
    void set_grl_progress(double p) {
        if (p < 0.0) throw std::invalid_argument("set_grl_progress: negative progress");
        for (std::size_t i = 0; i < specs_.size(); ++i)
            if (specs_[i].kind == LayerKind::gradient_reversal) states_[i].grl_scale = p;
    }

    bool grads_populated() const { return grads_populated_; }

    template <typename Fn>
    void for_each_param(Fn&& fn) {
        for (std::size_t i = 0; i < specs_.size(); ++i) {
            if (states_[i].weight) fn(specs_[i].name + ".weight", *states_[i].weight);
            if (states_[i].bias) fn(specs_[i].name + ".bias", *states_[i].bias);
        }
    }

    /// Main weights of conv/linear layers, in depth order; the surface the
    /// gradient study and direction traces observe.
    std::vector<std::pair<std::string, const ParamState*>> main_weights() const {
        std::vector<std::pair<std::string, const ParamState*>> out;
        for (std::size_t i = 0; i < specs_.size(); ++i)
            if (specs_[i].weight_bearing()) out.emplace_back(specs_[i].name, &*states_[i].weight);
        return out;
    }

    std::size_t layer_count() const { return specs_.size(); }
    const std::vector<LayerSpec>& specs() const { return specs_; }
    LayerState& state(std::size_t i) { return states_[i]; }
    const LayerState& state(std::size_t i) const { return states_[i]; }

private:
    std::vector<LayerSpec> specs_;
    std::vector<LayerState> states_;
    bool grads_populated_ = false;
};

}  // namespace dsslab
