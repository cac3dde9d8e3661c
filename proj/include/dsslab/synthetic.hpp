#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dsslab/rng.hpp"
#include "dsslab/tensor.hpp"

namespace dsslab {

enum class Domain { source, target };

inline const char* to_string(Domain d) { return d == Domain::source ? "source" : "target"; }

struct DomainSample {
    Tensor image;  // C x H x W
    std::optional<int> label;
    Domain domain = Domain::source;
};

struct ShiftSpec {
    double brightness_offset = 0.0;
    double contrast_scale = 1.0;
    double noise_std = 0.0;
    double hue_rotation = 0.0;  // radians around the gray axis

    bool is_identity() const {
        return brightness_offset == 0.0 && contrast_scale == 1.0 && noise_std == 0.0 &&
               hue_rotation == 0.0;
    }
};

struct SyntheticDomainSpec {
    int num_classes = 4;
    int samples_per_class = 24;
    int channels = 3;
    int height = 16;
    int width = 16;
    ShiftSpec shift;
    std::uint64_t seed = 7;

    void validate() const {
        if (num_classes < 1 || samples_per_class < 1)
            throw std::invalid_argument("SyntheticDomainSpec: counts must be positive");
        if (channels != 3) throw std::invalid_argument("SyntheticDomainSpec: channels must be 3");
        if (height < 4 || width < 4)
            throw std::invalid_argument("SyntheticDomainSpec: image too small");
        if (!(std::isfinite(shift.brightness_offset) && std::isfinite(shift.contrast_scale) &&
              std::isfinite(shift.noise_std) && std::isfinite(shift.hue_rotation)))
            throw std::invalid_argument("SyntheticDomainSpec: non-finite shift");
        if (!(shift.contrast_scale > 0.0))
            throw std::invalid_argument("SyntheticDomainSpec: contrast_scale must be positive");
        if (shift.noise_std < 0.0)
            throw std::invalid_argument("SyntheticDomainSpec: noise_std must be >= 0");
    }
};

namespace detail {

// Rotation of RGB vectors around the (1,1,1)/sqrt(3) axis (Rodrigues form).
struct HueMatrix {
    double m[3][3];

    explicit HueMatrix(double angle) {
        const double c = std::cos(angle), s = std::sin(angle);
        const double k = 1.0 / std::sqrt(3.0);
        const double one_c = 1.0 - c;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) m[i][j] = k * k * one_c + (i == j ? c : 0.0);
        // cross-product terms: axis components are all k
        m[0][1] -= k * s; m[0][2] += k * s;
        m[1][0] += k * s; m[1][2] -= k * s;
        m[2][0] -= k * s; m[2][1] += k * s;
    }
};

// Grayscale prototype mask in [0, 1] for one class instance. Class identity
// lives in the geometry; per-sample jitter comes from the generator.
inline void render_pattern(int cls, int h, int w, Rng& rng, std::vector<double>& mask) {
    mask.assign(static_cast<std::size_t>(h) * w, 0.0);
    switch (cls % 4) {
        case 0: {  // horizontal stripes
            const double phase = rng.uniform(0.0, 4.0);
            for (int y = 0; y < h; ++y) {
                const double v = 0.5 + 0.5 * std::sin(2.0 * M_PI * (y + phase) / 4.0);
                for (int x = 0; x < w; ++x) mask[static_cast<std::size_t>(y) * w + x] = v;
            }
            break;
        }
        case 1: {  // vertical stripes
            const double phase = rng.uniform(0.0, 4.0);
            for (int x = 0; x < w; ++x) {
                const double v = 0.5 + 0.5 * std::sin(2.0 * M_PI * (x + phase) / 4.0);
                for (int y = 0; y < h; ++y) mask[static_cast<std::size_t>(y) * w + x] = v;
            }
            break;
        }
        case 2: {  // checkerboard with random parity
            const int parity = static_cast<int>(rng.below(2));
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    mask[static_cast<std::size_t>(y) * w + x] =
                        ((y / 4 + x / 4 + parity) % 2 == 0) ? 1.0 : 0.0;
            break;
        }
        default: {  // filled disc with jittered center and radius
            const double cy = h / 2.0 + rng.uniform(-2.0, 2.0);
            const double cx = w / 2.0 + rng.uniform(-2.0, 2.0);
            const double r = rng.uniform(3.0, std::min(h, w) / 2.5);
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    const double d = std::hypot(y - cy, x - cx);
                    mask[static_cast<std::size_t>(y) * w + x] = d <= r ? 1.0 : 0.0;
                }
        }
    }
}

// Class hue on the RGB color wheel; a perfect shortcut feature on the source
// domain that hue rotation corrupts on the target.
inline void class_color(int cls, int num_classes, double saturation, double rgb[3]) {
    const double angle = 2.0 * M_PI * cls / num_classes;
    rgb[0] = 0.5 + 0.5 * saturation * std::cos(angle);
    rgb[1] = 0.5 + 0.5 * saturation * std::cos(angle - 2.0 * M_PI / 3.0);
    rgb[2] = 0.5 + 0.5 * saturation * std::cos(angle + 2.0 * M_PI / 3.0);
}

}  // namespace detail

/// Renders the class-conditional dataset once, then derives the target copy
/// by applying the shift. Identical seed gives bit-identical output; labels
/// match across domains by construction.
inline std::pair<std::vector<DomainSample>, std::vector<DomainSample>>
generate_domains(const SyntheticDomainSpec& spec) {
    spec.validate();
    Rng pattern_rng(spec.seed, "patterns");
    Rng noise_rng(spec.seed, "target-noise");
    const detail::HueMatrix hue(spec.shift.hue_rotation);

    std::vector<DomainSample> source, target;
    source.reserve(static_cast<std::size_t>(spec.num_classes) * spec.samples_per_class);
    target.reserve(source.capacity());

    std::vector<double> mask;
    for (int cls = 0; cls < spec.num_classes; ++cls) {
        for (int i = 0; i < spec.samples_per_class; ++i) {
            detail::render_pattern(cls, spec.height, spec.width, pattern_rng, mask);
            double fg[3], bg = pattern_rng.uniform(0.1, 0.3);
            detail::class_color(cls, spec.num_classes, pattern_rng.uniform(0.6, 1.0), fg);
            const double amp = pattern_rng.uniform(0.7, 1.0);

            Tensor img({spec.channels, spec.height, spec.width});
            const std::size_t plane = static_cast<std::size_t>(spec.height) * spec.width;
            for (int c = 0; c < 3; ++c)
                for (std::size_t p = 0; p < plane; ++p)
                    img[static_cast<std::size_t>(c) * plane + p] =
                        bg + amp * mask[p] * (fg[c] - bg);

            Tensor shifted = img;
            if (spec.shift.contrast_scale != 1.0)
                for (double& v : shifted.data()) v = (v - 0.5) * spec.shift.contrast_scale + 0.5;
            if (spec.shift.brightness_offset != 0.0)
                for (double& v : shifted.data()) v += spec.shift.brightness_offset;
            if (spec.shift.hue_rotation != 0.0) {
                for (std::size_t p = 0; p < plane; ++p) {
                    const double r = shifted[p], g = shifted[plane + p], b = shifted[2 * plane + p];
                    shifted[p] = hue.m[0][0] * r + hue.m[0][1] * g + hue.m[0][2] * b;
                    shifted[plane + p] = hue.m[1][0] * r + hue.m[1][1] * g + hue.m[1][2] * b;
                    shifted[2 * plane + p] = hue.m[2][0] * r + hue.m[2][1] * g + hue.m[2][2] * b;
                }
            }
            if (spec.shift.noise_std > 0.0)
                for (double& v : shifted.data()) v += spec.shift.noise_std * noise_rng.normal();

            source.push_back(DomainSample{std::move(img), cls, Domain::source});
            target.push_back(DomainSample{std::move(shifted), cls, Domain::target});
        }
    }
    return {std::move(source), std::move(target)};
}

}  // namespace dsslab
