#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "dsslab/error.hpp"
#include "dsslab/network.hpp"
#include "dsslab/optimizer.hpp"
#include "dsslab/svd.hpp"
#include "dsslab/tensor.hpp"

namespace dsslab {

struct Histogram {
    std::vector<double> edges;  // num_bins + 1, strictly increasing
    std::vector<long> counts;   // num_bins, sums to the input size
};

/// Uniform bins over [lo, hi]; out-of-range values are clipped into the end
/// bins so counts always conserve the input size.
inline Histogram build_histogram(const std::vector<double>& values, int num_bins, double lo,
                                 double hi) {
    if (num_bins < 1) throw std::invalid_argument("build_histogram: num_bins must be >= 1");
    if (!(lo < hi)) throw std::invalid_argument("build_histogram: range min must be < max");
    Histogram h;
    h.edges.resize(static_cast<std::size_t>(num_bins) + 1);
    const double width = (hi - lo) / num_bins;
    for (int i = 0; i <= num_bins; ++i) h.edges[static_cast<std::size_t>(i)] = lo + width * i;
    h.edges.back() = hi;
    h.counts.assign(static_cast<std::size_t>(num_bins), 0);
    for (double v : values) {
        int idx = static_cast<int>(std::floor((v - lo) / width));
        idx = std::clamp(idx, 0, num_bins - 1);
        ++h.counts[static_cast<std::size_t>(idx)];
    }
    return h;
}

/// Per-layer, per-step gradient statistics for the gradient study.
struct GradStatsRecord {
    std::string layer;
    int step = 0;
    std::vector<double> bin_edges;
    std::vector<long> counts;
    double stddev = 0.0;
    double l2_norm = 0.0;
};

namespace detail {

inline double population_std(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double acc = 0.0;
    for (double x : v) acc += (x - mean) * (x - mean);
    return std::sqrt(acc / static_cast<double>(v.size()));
}

}  // namespace detail

/// Observes main-weight gradients of a network after each backward, without
/// perturbing them. Histogram ranges are symmetric at +-4x a reference std
/// per layer: the paired baseline run's epoch-averaged std when supplied,
/// otherwise the layer's own first recorded std.
class GradRecorder {
public:
    explicit GradRecorder(int num_bins = 60, std::map<std::string, double> reference_std = {})
        : num_bins_(num_bins), reference_std_(std::move(reference_std)) {
        if (num_bins_ < 1) throw std::invalid_argument("GradRecorder: num_bins must be >= 1");
    }

    void record(const Network& backbone, int step) {
        if (!backbone.grads_populated())
            throw StateError("GradRecorder::record: no backward pass has populated gradients");
        for (const auto& [name, param] : backbone.main_weights()) {
            const std::vector<double>& g = param->grad.data();
            GradStatsRecord rec;
            rec.layer = name;
            rec.step = step;
            rec.stddev = detail::population_std(g);
            rec.l2_norm = frobenius_norm(param->grad);

            auto it = half_range_.find(name);
            if (it == half_range_.end()) {
                auto ref = reference_std_.find(name);
                double base = ref != reference_std_.end() ? ref->second : rec.stddev;
                if (base <= 0.0) base = 0.25;  // degenerate all-zero start
                it = half_range_.emplace(name, 4.0 * base).first;
            }
            Histogram h = build_histogram(g, num_bins_, -it->second, it->second);
            rec.bin_edges = std::move(h.edges);
            rec.counts = std::move(h.counts);
            records_.push_back(std::move(rec));
        }
    }

    const std::vector<GradStatsRecord>& records() const { return records_; }
    std::vector<GradStatsRecord> take_records() { return std::move(records_); }

    /// Mean recorded std per layer; the reference a paired suppressed run
    /// bins against.
    std::map<std::string, double> mean_std_by_layer() const {
        std::map<std::string, double> sums;
        std::map<std::string, long> counts;
        for (const auto& r : records_) {
            sums[r.layer] += r.stddev;
            ++counts[r.layer];
        }
        for (auto& [k, v] : sums) v /= static_cast<double>(counts[k]);
        return sums;
    }

private:
    int num_bins_;
    std::map<std::string, double> reference_std_;
    std::map<std::string, double> half_range_;
    std::vector<GradStatsRecord> records_;
};

/// Ratio of epoch-averaged gradient std dev (suppressed / baseline) for one
/// layer; > 1 indicates amplification.
inline double amplification_ratio(const std::vector<GradStatsRecord>& run_dss,
                                  const std::vector<GradStatsRecord>& run_base,
                                  const std::string& layer) {
    double dss_sum = 0.0, base_sum = 0.0;
    long dss_n = 0, base_n = 0;
    std::vector<int> dss_steps, base_steps;
    for (const auto& r : run_dss)
        if (r.layer == layer) {
            dss_sum += r.stddev;
            ++dss_n;
            dss_steps.push_back(r.step);
        }
    for (const auto& r : run_base)
        if (r.layer == layer) {
            base_sum += r.stddev;
            ++base_n;
            base_steps.push_back(r.step);
        }
    if (dss_n == 0 || base_n == 0)
        throw std::invalid_argument("amplification_ratio: layer missing from a stream");
    if (dss_steps != base_steps)
        throw std::invalid_argument("amplification_ratio: streams cover different steps");
    if (base_sum == 0.0)
        throw UndefinedRatioError("amplification_ratio: baseline std is zero for " + layer);
    return (dss_sum / dss_n) / (base_sum / base_n);
}

struct DirectionTrace {
    std::string layer;
    std::vector<double> cosine_to_init;  // one per snapshot
    std::vector<double> step_angle;      // one per consecutive pair
};

/// Cosine to the initial weight and angle between consecutive snapshots;
/// scale-invariant by construction.
inline DirectionTrace direction_drift(const std::vector<Tensor>& snapshots) {
    if (snapshots.size() < 2)
        throw std::invalid_argument("direction_drift: need at least 2 snapshots");
    for (const auto& s : snapshots) {
        if (!s.same_shape(snapshots.front()))
            throw std::invalid_argument("direction_drift: inconsistent snapshot shapes");
        if (frobenius_norm(s) == 0.0)
            throw NumericError("direction_drift: zero-norm snapshot");
    }
    DirectionTrace trace;
    const double norm0 = frobenius_norm(snapshots.front());
    for (std::size_t t = 0; t < snapshots.size(); ++t) {
        const double c = inner_product(snapshots[t], snapshots.front()) /
                         (frobenius_norm(snapshots[t]) * norm0);
        trace.cosine_to_init.push_back(std::clamp(c, -1.0, 1.0));
        if (t + 1 < snapshots.size())
            trace.step_angle.push_back(angle_between(snapshots[t], snapshots[t + 1]));
    }
    return trace;
}

/// Descending singular values of the weight reshaped to rows x cols.
inline std::vector<double> svd_spectrum_report(const Tensor& weight, int rows, int cols) {
    if (rows < 1 || cols < 1 || static_cast<std::size_t>(rows) * cols != weight.size())
        throw std::invalid_argument("svd_spectrum_report: incompatible reshape");
    if (rows > 16 || cols > 16)
        throw std::invalid_argument("svd_spectrum_report: dimensions capped at 16");
    return svd_small(weight.reshaped({rows, cols})).sigma;
}

}  // namespace dsslab
