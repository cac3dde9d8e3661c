#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dsslab/analysis.hpp"
#include "dsslab/error.hpp"
#include "dsslab/layers.hpp"
#include "dsslab/network.hpp"
#include "dsslab/optimizer.hpp"
#include "dsslab/rng.hpp"
#include "dsslab/synthetic.hpp"

namespace dsslab {

struct ModelSpec {
    std::vector<int> conv_channels = {8, 12, 16};
    int feature_dim = 32;
    int disc_hidden = 16;
};

struct GrlSettings {
    double alpha_max = 1.0;
    bool warmup = true;  // alpha ramps linearly over adaptation progress
};

struct DssSettings {
    double lambda = 1.0;
    WeightMode mode = WeightMode::weight_norm;  // mode used by suppressed conditions
    bool apply_during_pretrain = true;
};

struct TrainSettings {
    int batch_size_per_domain = 2;
    int pretrain_epochs = 6;
    int adapt_epochs = 14;
    double lr = 0.02;
    double adv_loss_weight = 1.0;
    DssSettings dss;
    GrlSettings grl;
};

/// One cell of the condition grid.
struct Condition {
    std::string name;
    bool use_uda = false;
    bool use_dss = false;
};

inline Condition parse_condition(const std::string& name) {
    if (name == "source_only") return {name, false, false};
    if (name == "source_only_dss") return {name, false, true};
    if (name == "uda") return {name, true, false};
    if (name == "uda_dss") return {name, true, true};
    throw std::invalid_argument("unknown condition: " + name);
}

/// Baseline condition a suppressed run is compared against, if any.
inline std::optional<std::string> baseline_of(const std::string& condition) {
    const std::string suffix = "_dss";
    if (condition.size() > suffix.size() &&
        condition.compare(condition.size() - suffix.size(), suffix.size(), suffix) == 0)
        return condition.substr(0, condition.size() - suffix.size());
    return std::nullopt;
}

struct AnalysisSettings {
    bool record_gradients = true;
    bool record_direction = true;
    int histogram_bins = 60;
};

struct ExperimentConfig {
    SyntheticDomainSpec data;      // data.samples_per_class = training samples per class
    int eval_per_class = 8;
    ModelSpec model;
    TrainSettings train;
    std::vector<std::string> conditions = {"source_only", "source_only_dss", "uda", "uda_dss"};
    std::vector<std::uint64_t> seeds = {1, 2, 3};
    AnalysisSettings analysis;

    void validate() const {
        data.validate();
        if (eval_per_class < 1)
            throw std::invalid_argument("ExperimentConfig: eval_per_class must be >= 1");
        if (train.batch_size_per_domain < 2)
            throw std::invalid_argument("ExperimentConfig: batch size must be >= 2");
        if (seeds.empty()) throw std::invalid_argument("ExperimentConfig: need at least one seed");
        if (train.pretrain_epochs < 0 || train.adapt_epochs < 0 ||
            train.pretrain_epochs + train.adapt_epochs < 1)
            throw std::invalid_argument("ExperimentConfig: need at least one epoch");
        if (!(train.lr > 0.0)) throw std::invalid_argument("ExperimentConfig: lr must be positive");
        if (!(train.dss.lambda >= 0.0 && train.dss.lambda <= 1.0))
            throw std::invalid_argument("ExperimentConfig: lambda must be in [0, 1]");
        if (train.grl.alpha_max < 0.0)
            throw std::invalid_argument("ExperimentConfig: alpha_max must be >= 0");
        if (train.adv_loss_weight < 0.0)
            throw std::invalid_argument("ExperimentConfig: adv_loss_weight must be >= 0");
        if (model.conv_channels.empty() || model.feature_dim < 1 || model.disc_hidden < 1)
            throw std::invalid_argument("ExperimentConfig: bad model spec");
        const int factor = 1 << (model.conv_channels.size() - 1);  // stride-2 from block 2 on
        if (data.height % factor != 0 || data.width % factor != 0 || data.height / factor < 1)
            throw std::invalid_argument(
                "ExperimentConfig: image extents must divide by the conv stack downsampling");
        if (analysis.histogram_bins < 1)
            throw std::invalid_argument("ExperimentConfig: histogram_bins must be >= 1");
        for (const auto& c : conditions) parse_condition(c);
    }
};

/// FNV-1a over a canonical flat dump of every field; stamped into reports so
/// overrides are visible downstream.
inline std::string config_digest(const ExperimentConfig& cfg) {
    std::ostringstream os;
    os.precision(17);
    os << "nc=" << cfg.data.num_classes << ";spc=" << cfg.data.samples_per_class
       << ";ch=" << cfg.data.channels << ";h=" << cfg.data.height << ";w=" << cfg.data.width
       << ";bo=" << cfg.data.shift.brightness_offset << ";cs=" << cfg.data.shift.contrast_scale
       << ";ns=" << cfg.data.shift.noise_std << ";hr=" << cfg.data.shift.hue_rotation
       << ";ds=" << cfg.data.seed << ";epc=" << cfg.eval_per_class << ";convs=";
    for (int c : cfg.model.conv_channels) os << c << ",";
    os << ";fd=" << cfg.model.feature_dim << ";dh=" << cfg.model.disc_hidden
       << ";bs=" << cfg.train.batch_size_per_domain << ";pe=" << cfg.train.pretrain_epochs
       << ";ae=" << cfg.train.adapt_epochs << ";lr=" << cfg.train.lr
       << ";advw=" << cfg.train.adv_loss_weight << ";lam=" << cfg.train.dss.lambda
       << ";mode=" << to_string(cfg.train.dss.mode)
       << ";pre=" << cfg.train.dss.apply_during_pretrain << ";am=" << cfg.train.grl.alpha_max
       << ";wu=" << cfg.train.grl.warmup << ";conds=";
    for (const auto& c : cfg.conditions) os << c << ",";
    os << ";seeds=";
    for (auto s : cfg.seeds) os << s << ",";
    os << ";rg=" << cfg.analysis.record_gradients << ";rd=" << cfg.analysis.record_direction
       << ";hb=" << cfg.analysis.histogram_bins;
    const std::uint64_t h = detail::fnv1a64(os.str());
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

struct UdaModel {
    Network backbone;
    Network head;
    Network discriminator;

    template <typename Fn>
    void for_each_param(Fn&& fn) {
        backbone.for_each_param(fn);
        head.for_each_param(fn);
        discriminator.for_each_param(fn);
    }
};

/// Backbone conv/linear layers carry the requested weight mode; the head and
/// discriminator always stay plain.
inline UdaModel build_model(const ExperimentConfig& cfg, WeightMode backbone_mode, Rng& rng) {
    const auto& ch = cfg.model.conv_channels;
    std::vector<LayerSpec> backbone;
    int in_ch = cfg.data.channels;
    for (std::size_t i = 0; i < ch.size(); ++i) {
        const std::string id = "conv" + std::to_string(i + 1);
        // block 1 keeps resolution (3x3, stride 1); later blocks halve it
        // exactly (4x4, stride 2, pad 1)
        if (i == 0)
            backbone.push_back(LayerSpec::conv2d(id, in_ch, ch[i], 3, 1, 1, backbone_mode, false));
        else
            backbone.push_back(LayerSpec::conv2d(id, in_ch, ch[i], 4, 2, 1, backbone_mode, false));
        backbone.push_back(LayerSpec::batchnorm(id + "_bn", ch[i]));
        backbone.push_back(LayerSpec::relu(id + "_relu"));
        in_ch = ch[i];
    }
    const int factor = 1 << (ch.size() - 1);  // block 1 keeps resolution, later blocks halve
    const int spatial = (cfg.data.height / factor) * (cfg.data.width / factor);
    const int flat = in_ch * spatial;
    backbone.push_back(LayerSpec::flatten("flat"));
    backbone.push_back(LayerSpec::linear("fc", flat, cfg.model.feature_dim, backbone_mode, true));

    std::vector<LayerSpec> head = {
        LayerSpec::linear("head_fc", cfg.model.feature_dim, cfg.data.num_classes)};

    std::vector<LayerSpec> disc = {
        LayerSpec::gradient_reversal("grl", cfg.train.grl.alpha_max),
        LayerSpec::linear("disc_fc1", cfg.model.feature_dim, cfg.model.disc_hidden),
        LayerSpec::relu("disc_relu"),
        LayerSpec::linear("disc_fc2", cfg.model.disc_hidden, 2)};

    return UdaModel{Network(backbone, rng), Network(head, rng), Network(disc, rng)};
}

/// Retags backbone conv/linear main weights; biases and batchnorm stay plain.
inline void set_backbone_mode(UdaModel& model, WeightMode mode) {
    for (std::size_t i = 0; i < model.backbone.layer_count(); ++i)
        if (model.backbone.specs()[i].weight_bearing())
            model.backbone.state(i).weight->mode = mode;
}

struct EpochStats {
    double task_loss = 0.0;
    double domain_loss = 0.0;
    double source_accuracy = 0.0;
    double target_accuracy = 0.0;
};

struct TrainReport {
    std::string condition;
    std::uint64_t seed = 0;
    std::string config_digest;
    std::vector<EpochStats> epochs;
    double final_source_accuracy = 0.0;
    double final_target_accuracy = 0.0;
    long zero_norm_fallbacks = 0;
};

using PredictFn = std::function<Tensor(const Tensor&)>;  // batch -> logits

/// Fraction of argmax-correct predictions; ties resolve to the lowest index.
inline double evaluate_accuracy(const PredictFn& predict, const std::vector<DomainSample>& samples) {
    if (samples.empty()) throw std::invalid_argument("evaluate_accuracy: empty sample list");
    constexpr int kChunk = 64;
    long correct = 0;
    for (std::size_t begin = 0; begin < samples.size(); begin += kChunk) {
        const std::size_t end = std::min(samples.size(), begin + kChunk);
        std::vector<int> img_shape = samples[begin].image.shape();
        std::vector<int> batch_shape = {static_cast<int>(end - begin)};
        batch_shape.insert(batch_shape.end(), img_shape.begin(), img_shape.end());
        Tensor batch(batch_shape);
        const std::size_t sample_size = samples[begin].image.size();
        for (std::size_t i = begin; i < end; ++i) {
            if (!samples[i].label) throw std::invalid_argument("evaluate_accuracy: unlabeled sample");
            std::copy(samples[i].image.data().begin(), samples[i].image.data().end(),
                      batch.data().begin() + static_cast<std::ptrdiff_t>((i - begin) * sample_size));
        }
        Tensor logits = predict(batch);
        const int k = logits.extent(1);
        for (std::size_t i = begin; i < end; ++i) {
            int best = 0;
            for (int j = 1; j < k; ++j)
                if (logits.at2(static_cast<int>(i - begin), j) >
                    logits.at2(static_cast<int>(i - begin), best))
                    best = j;
            if (best == *samples[i].label) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(samples.size());
}

inline double evaluate_accuracy(UdaModel& model, const std::vector<DomainSample>& samples) {
    return evaluate_accuracy(
        [&](const Tensor& batch) {
            return model.head.forward(model.backbone.forward(batch, false), false);
        },
        samples);
}

enum class TrainMode { source_only, uda };

/// Everything one seed's training shares across epochs.
struct TrainContext {
    Rng source_shuffle;
    Rng target_shuffle;
    DssConfig dss_cfg;
    double lr = 0.0;
    double adv_loss_weight = 1.0;
    bool grl_warmup = true;
    long adapt_steps_total = 0;  // for the warm-up schedule
    long adapt_steps_done = 0;
    int global_step = 0;
    GradRecorder* recorder = nullptr;

    TrainContext(std::uint64_t seed, const TrainSettings& ts)
        : source_shuffle(seed, "shuffle-source"),
          target_shuffle(seed, "shuffle-target"),
          dss_cfg(ts.dss.lambda, ts.lr),
          lr(ts.lr),
          adv_loss_weight(ts.adv_loss_weight),
          grl_warmup(ts.grl.warmup) {}
};

namespace detail {

inline Tensor make_batch(const std::vector<DomainSample>& data, const std::vector<std::size_t>& order,
                         std::size_t begin, int batch, std::vector<int>* labels) {
    std::vector<int> shape = {batch};
    const auto& img_shape = data[order[begin]].image.shape();
    shape.insert(shape.end(), img_shape.begin(), img_shape.end());
    Tensor out(shape);
    const std::size_t sample_size = data[order[begin]].image.size();
    for (int i = 0; i < batch; ++i) {
        const DomainSample& s = data[order[begin + static_cast<std::size_t>(i)]];
        std::copy(s.image.data().begin(), s.image.data().end(),
                  out.data().begin() + static_cast<std::ptrdiff_t>(i * sample_size));
        if (labels) {
            if (!s.label) throw std::invalid_argument("make_batch: missing label");
            labels->push_back(*s.label);
        }
    }
    return out;
}

inline void apply_updates(UdaModel& model, const TrainContext& ctx, long* fallbacks) {
    auto step = [&](const std::string&, ParamState& p) {
        switch (p.mode) {
            case WeightMode::plain:
            case WeightMode::weight_norm:
                sgd_step(p, ctx.lr);
                break;
            case WeightMode::dss: {
                const long before = p.zero_norm_fallbacks;
                dss_step(p, ctx.dss_cfg);
                if (fallbacks) *fallbacks += p.zero_norm_fallbacks - before;
                break;
            }
        }
    };
    model.for_each_param(step);
    model.backbone.zero_grads();
    model.head.zero_grads();
    model.discriminator.zero_grads();
}

}  // namespace detail

/// One pass over the training data. In uda mode each step pairs one source
/// batch with one target batch; the target contributes only to the domain
/// loss, behind gradient reversal. Returns (mean task loss, mean domain loss).
inline std::pair<double, double> train_epoch(UdaModel& model,
                                             const std::vector<DomainSample>& source,
                                             const std::vector<DomainSample>& target,
                                             const ExperimentConfig& cfg, TrainMode mode,
                                             TrainContext& ctx, long* fallbacks = nullptr) {
    if (source.empty() || (mode == TrainMode::uda && target.empty()))
        throw std::invalid_argument("train_epoch: empty training data");
    const int batch = cfg.train.batch_size_per_domain;

    std::vector<std::size_t> source_order(source.size());
    for (std::size_t i = 0; i < source_order.size(); ++i) source_order[i] = i;
    ctx.source_shuffle.shuffle(source_order);

    std::vector<std::size_t> target_order;
    if (mode == TrainMode::uda) {
        target_order.resize(target.size());
        for (std::size_t i = 0; i < target_order.size(); ++i) target_order[i] = i;
        ctx.target_shuffle.shuffle(target_order);
    }

    std::size_t steps = source.size() / static_cast<std::size_t>(batch);
    if (mode == TrainMode::uda)
        steps = std::min(steps, target.size() / static_cast<std::size_t>(batch));
    if (steps == 0) throw std::invalid_argument("train_epoch: batch size exceeds data");

    double task_sum = 0.0, domain_sum = 0.0;
    for (std::size_t s = 0; s < steps; ++s) {
        std::vector<int> labels;
        Tensor xb_s = detail::make_batch(source, source_order, s * batch, batch, &labels);

        Tensor feat_s = model.backbone.forward(xb_s, true);
        Tensor grad_feat_s;
        {
            Tensor logits = model.head.forward(feat_s, true);
            LossResult task = softmax_cross_entropy(logits, labels);
            if (!std::isfinite(task.loss))
                throw NumericError("train_epoch: non-finite task loss at batch " + std::to_string(s));
            task_sum += task.loss;
            grad_feat_s = model.head.backward(task.grad_logits);
        }

        if (mode == TrainMode::uda) {
            Tensor xb_t = detail::make_batch(target, target_order, s * batch, batch, nullptr);
            Tensor feat_t = model.backbone.forward(xb_t, true);

            const double progress =
                ctx.grl_warmup && ctx.adapt_steps_total > 0
                    ? static_cast<double>(ctx.adapt_steps_done) / ctx.adapt_steps_total
                    : 1.0;
            model.discriminator.set_grl_progress(progress);
            ++ctx.adapt_steps_done;

            Tensor dom_in = concat_axis0(feat_s, feat_t);
            Tensor dom_logits = model.discriminator.forward(dom_in, true);
            std::vector<int> dom_labels(static_cast<std::size_t>(2 * batch), 0);
            for (int i = 0; i < batch; ++i) dom_labels[static_cast<std::size_t>(batch + i)] = 1;
            LossResult dom = softmax_cross_entropy(dom_logits, dom_labels);
            if (!std::isfinite(dom.loss))
                throw NumericError("train_epoch: non-finite domain loss at batch " +
                                   std::to_string(s));
            domain_sum += dom.loss;

            Tensor grad_dom = model.discriminator.backward(dom.grad_logits * ctx.adv_loss_weight);
            Tensor grad_dom_t = slice_axis0(grad_dom, batch, 2 * batch);
            model.backbone.backward(grad_dom_t);  // pops the target frame
            grad_feat_s += slice_axis0(grad_dom, 0, batch);
        }

        model.backbone.backward(grad_feat_s);
        if (ctx.recorder) ctx.recorder->record(model.backbone, ctx.global_step);
        detail::apply_updates(model, ctx, fallbacks);
        ++ctx.global_step;
    }
    return {task_sum / static_cast<double>(steps),
            mode == TrainMode::uda ? domain_sum / static_cast<double>(steps) : 0.0};
}

struct DatasetSplit {
    std::vector<DomainSample> source_train, target_train;  // target_train unlabeled
    std::vector<DomainSample> source_eval, target_eval;    // labeled
    SyntheticDomainSpec generated_spec;                    // spec actually passed to the generator
};

/// Renders train+eval samples in one deterministic pass and strips labels
/// from the target training split, so training can never read them.
inline DatasetSplit prepare_dataset(const ExperimentConfig& cfg, std::uint64_t run_seed) {
    SyntheticDomainSpec spec = cfg.data;
    spec.samples_per_class = cfg.data.samples_per_class + cfg.eval_per_class;
    spec.seed = detail::splitmix64(cfg.data.seed ^ detail::splitmix64(run_seed));
    auto [source, target] = generate_domains(spec);

    DatasetSplit split;
    split.generated_spec = spec;
    const int per_class = spec.samples_per_class;
    for (int cls = 0; cls < spec.num_classes; ++cls)
        for (int i = 0; i < per_class; ++i) {
            const std::size_t idx = static_cast<std::size_t>(cls) * per_class + i;
            if (i < cfg.data.samples_per_class) {
                split.source_train.push_back(source[idx]);
                DomainSample t = target[idx];
                t.label.reset();
                split.target_train.push_back(std::move(t));
            } else {
                split.source_eval.push_back(source[idx]);
                split.target_eval.push_back(target[idx]);
            }
        }
    return split;
}

struct RunResult {
    TrainReport report;
    std::vector<GradStatsRecord> grad_records;
    std::vector<DirectionTrace> direction_traces;
    std::vector<std::pair<std::string, Tensor>> final_weights;  // backbone main weights
};

/// Trains one (condition, seed) cell. reference_std, when supplied, pins the
/// gradient-histogram ranges to the paired baseline run.
inline RunResult run_single(const ExperimentConfig& cfg, const Condition& cond,
                            std::uint64_t seed,
                            const std::map<std::string, double>& reference_std = {}) {
    cfg.validate();
    DatasetSplit data = prepare_dataset(cfg, seed);

    Rng init_rng(seed, "init");
    const WeightMode dss_mode = cfg.train.dss.mode;
    UdaModel model = build_model(cfg, cond.use_dss ? dss_mode : WeightMode::plain, init_rng);
    if (cond.use_dss && !cfg.train.dss.apply_during_pretrain && cfg.train.pretrain_epochs > 0)
        set_backbone_mode(model, WeightMode::plain);

    TrainContext ctx(seed, cfg.train);
    const std::size_t steps_per_epoch =
        std::min(data.source_train.size(), data.target_train.size()) /
        static_cast<std::size_t>(cfg.train.batch_size_per_domain);
    ctx.adapt_steps_total =
        cond.use_uda ? static_cast<long>(steps_per_epoch) * cfg.train.adapt_epochs : 0;

    GradRecorder recorder(cfg.analysis.histogram_bins, reference_std);
    if (cfg.analysis.record_gradients) ctx.recorder = &recorder;

    std::map<std::string, std::vector<Tensor>> snapshots;
    auto snapshot = [&]() {
        if (!cfg.analysis.record_direction) return;
        for (const auto& [name, param] : model.backbone.main_weights())
            snapshots[name].push_back(param->weight);
    };
    snapshot();

    RunResult result;
    result.report.condition = cond.name;
    result.report.seed = seed;
    result.report.config_digest = config_digest(cfg);

    const int total_epochs = cfg.train.pretrain_epochs + cfg.train.adapt_epochs;
    for (int epoch = 0; epoch < total_epochs; ++epoch) {
        const bool adapt_phase = cond.use_uda && epoch >= cfg.train.pretrain_epochs;
        if (cond.use_dss && !cfg.train.dss.apply_during_pretrain &&
            epoch == cfg.train.pretrain_epochs)
            set_backbone_mode(model, dss_mode);

        auto [task_loss, domain_loss] =
            train_epoch(model, data.source_train, data.target_train, cfg,
                        adapt_phase ? TrainMode::uda : TrainMode::source_only, ctx,
                        &result.report.zero_norm_fallbacks);

        EpochStats stats;
        stats.task_loss = task_loss;
        stats.domain_loss = domain_loss;
        stats.source_accuracy = evaluate_accuracy(model, data.source_eval);
        stats.target_accuracy = evaluate_accuracy(model, data.target_eval);
        result.report.epochs.push_back(stats);
        snapshot();
    }

    result.report.final_source_accuracy = result.report.epochs.back().source_accuracy;
    result.report.final_target_accuracy = result.report.epochs.back().target_accuracy;
    if (cfg.analysis.record_gradients) result.grad_records = recorder.take_records();
    for (auto& [name, snaps] : snapshots) {
        DirectionTrace trace = direction_drift(snaps);
        trace.layer = name;
        result.direction_traces.push_back(std::move(trace));
    }
    for (const auto& [name, param] : model.backbone.main_weights())
        result.final_weights.emplace_back(name, param->weight);
    return result;
}

/// The full condition x seed grid, in declaration order. Baseline conditions
/// run before their suppressed twins so histogram ranges can be paired.
inline std::vector<RunResult> run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    std::vector<RunResult> results;
    for (std::uint64_t seed : cfg.seeds) {
        // per-seed cache of baseline per-layer mean gradient std
        std::map<std::string, std::map<std::string, double>> baseline_std;
        for (const auto& cond_name : cfg.conditions) {
            const Condition cond = parse_condition(cond_name);
            std::map<std::string, double> ref;
            if (auto base = baseline_of(cond_name)) {
                auto it = baseline_std.find(*base);
                if (it != baseline_std.end()) ref = it->second;
            }
            RunResult r;
            try {
                r = run_single(cfg, cond, seed, ref);
            } catch (const NumericError& e) {
                throw NumericError("run " + cond_name + "/seed_" + std::to_string(seed) + ": " +
                                   e.what());
            }
            if (cfg.analysis.record_gradients) {
                std::map<std::string, double> sums;
                std::map<std::string, long> counts;
                for (const auto& rec : r.grad_records) {
                    sums[rec.layer] += rec.stddev;
                    ++counts[rec.layer];
                }
                for (auto& [k, v] : sums) v /= static_cast<double>(counts[k]);
                baseline_std[cond_name] = std::move(sums);
            }
            results.push_back(std::move(r));
        }
    }
    return results;
}

}  // namespace dsslab
