#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "dsslab/analysis.hpp"
#include "dsslab/harness.hpp"
#include "dsslab/optimizer.hpp"
#include "dsslab/synthetic.hpp"

namespace dsslab {

using json = nlohmann::json;

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace io_detail {

inline void require_keys(const json& obj, const std::string& path,
                         const std::vector<std::string>& known) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool ok = false;
        for (const auto& k : known)
            if (it.key() == k) { ok = true; break; }
        if (!ok)
            throw ConfigError("unknown key '" + path + it.key() + "'");
    }
}

template <typename T>
inline void read_field(const json& obj, const std::string& path, const std::string& key, T& out) {
    if (!obj.contains(key)) return;
    try {
        out = obj.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError("bad value for '" + path + key + "': " + e.what());
    }
}

inline std::string line_of_offset(const std::string& text, std::size_t byte) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
        if (text[i] == '\n') { ++line; col = 1; }
        else ++col;
    }
    return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

}  // namespace io_detail

inline WeightMode weight_mode_from_string(const std::string& s) {
    if (s == "plain") return WeightMode::plain;
    if (s == "dss") return WeightMode::dss;
    if (s == "weight-norm") return WeightMode::weight_norm;
    throw ConfigError("unknown weight mode '" + s + "'");
}

/// Parses an experiment config document; unknown keys anywhere are rejected.
inline ExperimentConfig parse_experiment_config(const json& doc) {
    ExperimentConfig cfg;
    io_detail::require_keys(doc, "", {"data", "eval_per_class", "model", "train", "conditions",
                                      "seeds", "analysis", "output_dir"});
    if (doc.contains("data")) {
        const json& d = doc.at("data");
        io_detail::require_keys(d, "data.", {"num_classes", "samples_per_class", "channels",
                                             "height", "width", "shift", "seed"});
        io_detail::read_field(d, "data.", "num_classes", cfg.data.num_classes);
        io_detail::read_field(d, "data.", "samples_per_class", cfg.data.samples_per_class);
        io_detail::read_field(d, "data.", "channels", cfg.data.channels);
        io_detail::read_field(d, "data.", "height", cfg.data.height);
        io_detail::read_field(d, "data.", "width", cfg.data.width);
        io_detail::read_field(d, "data.", "seed", cfg.data.seed);
        if (d.contains("shift")) {
            const json& s = d.at("shift");
            io_detail::require_keys(s, "data.shift.", {"brightness_offset", "contrast_scale",
                                                       "noise_std", "hue_rotation"});
            io_detail::read_field(s, "data.shift.", "brightness_offset",
                                  cfg.data.shift.brightness_offset);
            io_detail::read_field(s, "data.shift.", "contrast_scale", cfg.data.shift.contrast_scale);
            io_detail::read_field(s, "data.shift.", "noise_std", cfg.data.shift.noise_std);
            io_detail::read_field(s, "data.shift.", "hue_rotation", cfg.data.shift.hue_rotation);
        }
    }
    io_detail::read_field(doc, "", "eval_per_class", cfg.eval_per_class);
    if (doc.contains("model")) {
        const json& m = doc.at("model");
        io_detail::require_keys(m, "model.", {"conv_channels", "feature_dim", "disc_hidden"});
        io_detail::read_field(m, "model.", "conv_channels", cfg.model.conv_channels);
        io_detail::read_field(m, "model.", "feature_dim", cfg.model.feature_dim);
        io_detail::read_field(m, "model.", "disc_hidden", cfg.model.disc_hidden);
    }
    if (doc.contains("train")) {
        const json& t = doc.at("train");
        io_detail::require_keys(t, "train.",
                                {"batch_size_per_domain", "pretrain_epochs", "adapt_epochs", "lr",
                                 "adv_loss_weight", "dss", "grl"});
        io_detail::read_field(t, "train.", "batch_size_per_domain", cfg.train.batch_size_per_domain);
        io_detail::read_field(t, "train.", "pretrain_epochs", cfg.train.pretrain_epochs);
        io_detail::read_field(t, "train.", "adapt_epochs", cfg.train.adapt_epochs);
        io_detail::read_field(t, "train.", "lr", cfg.train.lr);
        io_detail::read_field(t, "train.", "adv_loss_weight", cfg.train.adv_loss_weight);
        if (t.contains("dss")) {
            const json& d = t.at("dss");
            io_detail::require_keys(d, "train.dss.", {"lambda", "mode", "apply_during_pretrain"});
            io_detail::read_field(d, "train.dss.", "lambda", cfg.train.dss.lambda);
            std::string mode = to_string(cfg.train.dss.mode);
            io_detail::read_field(d, "train.dss.", "mode", mode);
            cfg.train.dss.mode = weight_mode_from_string(mode);
            io_detail::read_field(d, "train.dss.", "apply_during_pretrain",
                                  cfg.train.dss.apply_during_pretrain);
        }
        if (t.contains("grl")) {
            const json& g = t.at("grl");
            io_detail::require_keys(g, "train.grl.", {"alpha_max", "warmup"});
            io_detail::read_field(g, "train.grl.", "alpha_max", cfg.train.grl.alpha_max);
            io_detail::read_field(g, "train.grl.", "warmup", cfg.train.grl.warmup);
        }
    }
    io_detail::read_field(doc, "", "conditions", cfg.conditions);
    io_detail::read_field(doc, "", "seeds", cfg.seeds);
    if (doc.contains("analysis")) {
        const json& a = doc.at("analysis");
        io_detail::require_keys(a, "analysis.",
                                {"record_gradients", "record_direction", "histogram_bins"});
        io_detail::read_field(a, "analysis.", "record_gradients", cfg.analysis.record_gradients);
        io_detail::read_field(a, "analysis.", "record_direction", cfg.analysis.record_direction);
        io_detail::read_field(a, "analysis.", "histogram_bins", cfg.analysis.histogram_bins);
    }
    try {
        cfg.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    return cfg;
}

/// Parses a config file; syntax errors report line/column, semantic errors the
/// offending key path. output_dir resolves relative to the config file.
inline std::pair<ExperimentConfig, std::filesystem::path> load_config_file(
    const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    const std::string text = buf.str();
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError("config parse error at " + io_detail::line_of_offset(text, e.byte) + ": " +
                          e.what());
    }
    std::string out_dir = "runs";
    io_detail::read_field(doc, "", "output_dir", out_dir);
    ExperimentConfig cfg = parse_experiment_config(doc);
    std::filesystem::path out = path.parent_path() / out_dir;
    return {cfg, out};
}

inline json to_json(const ExperimentConfig& cfg) {
    return json{
        {"data",
         {{"num_classes", cfg.data.num_classes},
          {"samples_per_class", cfg.data.samples_per_class},
          {"channels", cfg.data.channels},
          {"height", cfg.data.height},
          {"width", cfg.data.width},
          {"seed", cfg.data.seed},
          {"shift",
           {{"brightness_offset", cfg.data.shift.brightness_offset},
            {"contrast_scale", cfg.data.shift.contrast_scale},
            {"noise_std", cfg.data.shift.noise_std},
            {"hue_rotation", cfg.data.shift.hue_rotation}}}}},
        {"eval_per_class", cfg.eval_per_class},
        {"model",
         {{"conv_channels", cfg.model.conv_channels},
          {"feature_dim", cfg.model.feature_dim},
          {"disc_hidden", cfg.model.disc_hidden}}},
        {"train",
         {{"batch_size_per_domain", cfg.train.batch_size_per_domain},
          {"pretrain_epochs", cfg.train.pretrain_epochs},
          {"adapt_epochs", cfg.train.adapt_epochs},
          {"lr", cfg.train.lr},
          {"adv_loss_weight", cfg.train.adv_loss_weight},
          {"dss",
           {{"lambda", cfg.train.dss.lambda},
            {"mode", to_string(cfg.train.dss.mode)},
            {"apply_during_pretrain", cfg.train.dss.apply_during_pretrain}}},
          {"grl", {{"alpha_max", cfg.train.grl.alpha_max}, {"warmup", cfg.train.grl.warmup}}}}},
        {"conditions", cfg.conditions},
        {"seeds", cfg.seeds},
        {"analysis",
         {{"record_gradients", cfg.analysis.record_gradients},
          {"record_direction", cfg.analysis.record_direction},
          {"histogram_bins", cfg.analysis.histogram_bins}}}};
}

inline json to_json(const TrainReport& r) {
    json epochs = json::array();
    for (const auto& e : r.epochs)
        epochs.push_back({{"task_loss", e.task_loss},
                          {"domain_loss", e.domain_loss},
                          {"source_accuracy", e.source_accuracy},
                          {"target_accuracy", e.target_accuracy}});
    return json{{"condition", r.condition},
                {"seed", r.seed},
                {"config_digest", r.config_digest},
                {"metric", "classification_accuracy"},
                {"epochs", epochs},
                {"final_source_accuracy", r.final_source_accuracy},
                {"final_target_accuracy", r.final_target_accuracy},
                {"zero_norm_fallbacks", r.zero_norm_fallbacks}};
}

inline json to_json(const EquivalenceReport& r) {
    return json{{"max_direction_deviation", r.max_direction_deviation},
                {"norm_drift", r.norm_drift},
                {"assumption_violated", r.assumption_violated}};
}

inline json to_json(const DirectionTrace& t) {
    return json{{"layer", t.layer},
                {"cosine_to_init", t.cosine_to_init},
                {"step_angle", t.step_angle}};
}

/// CSV stream: one row per bin per record.
inline std::string grad_records_csv(const std::vector<GradStatsRecord>& records) {
    std::ostringstream os;
    os.precision(17);
    os << "layer,step,bin_left,bin_right,count\n";
    for (const auto& r : records)
        for (std::size_t b = 0; b < r.counts.size(); ++b)
            os << r.layer << ',' << r.step << ',' << r.bin_edges[b] << ',' << r.bin_edges[b + 1]
               << ',' << r.counts[b] << '\n';
    return os.str();
}

inline json grad_records_summary(const std::vector<GradStatsRecord>& records) {
    json arr = json::array();
    for (const auto& r : records)
        arr.push_back(
            {{"layer", r.layer}, {"step", r.step}, {"std", r.stddev}, {"norm", r.l2_norm}});
    return arr;
}

// --- dataset export/import: flat little-endian doubles plus a JSON sidecar ---

namespace io_detail {

inline void write_le_double(std::ostream& os, double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) os.put(static_cast<char>((bits >> (8 * i)) & 0xff));
}

inline double read_le_double(std::istream& is) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) {
        const int c = is.get();
        if (c == EOF) throw std::runtime_error("dataset binary truncated");
        bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
    }
    return std::bit_cast<double>(bits);
}

}  // namespace io_detail

inline void save_domain_data(const std::filesystem::path& base,
                             const std::vector<DomainSample>& samples,
                             const SyntheticDomainSpec& spec, Domain domain) {
    if (samples.empty()) throw std::invalid_argument("save_domain_data: empty dataset");
    std::ofstream bin(base.string() + ".bin", std::ios::binary);
    if (!bin) throw std::runtime_error("cannot write " + base.string() + ".bin");
    for (const auto& s : samples)
        for (double v : s.image.data()) io_detail::write_le_double(bin, v);

    json labels = json::array();
    for (const auto& s : samples) {
        if (s.label) labels.push_back(*s.label);
        else labels.push_back(nullptr);
    }
    const auto& img = samples.front().image.shape();
    json sidecar{{"count", samples.size()},
                 {"image_shape", img},
                 {"labels", labels},
                 {"domain", to_string(domain)},
                 {"seed", spec.seed},
                 {"spec",
                  {{"num_classes", spec.num_classes},
                   {"samples_per_class", spec.samples_per_class},
                   {"channels", spec.channels},
                   {"height", spec.height},
                   {"width", spec.width},
                   {"shift",
                    {{"brightness_offset", spec.shift.brightness_offset},
                     {"contrast_scale", spec.shift.contrast_scale},
                     {"noise_std", spec.shift.noise_std},
                     {"hue_rotation", spec.shift.hue_rotation}}}}}};
    std::ofstream side(base.string() + ".json");
    side << sidecar.dump(2) << '\n';
}

inline std::vector<DomainSample> load_domain_data(const std::filesystem::path& base) {
    std::ifstream side(base.string() + ".json");
    if (!side) throw std::runtime_error("cannot open " + base.string() + ".json");
    json sidecar = json::parse(side);
    const std::size_t count = sidecar.at("count").get<std::size_t>();
    const std::vector<int> shape = sidecar.at("image_shape").get<std::vector<int>>();
    const Domain domain =
        sidecar.at("domain").get<std::string>() == "source" ? Domain::source : Domain::target;

    std::ifstream bin(base.string() + ".bin", std::ios::binary);
    if (!bin) throw std::runtime_error("cannot open " + base.string() + ".bin");
    std::vector<DomainSample> samples;
    samples.reserve(count);
    std::size_t per_image = 1;
    for (int e : shape) per_image *= static_cast<std::size_t>(e);
    const json& labels = sidecar.at("labels");
    for (std::size_t i = 0; i < count; ++i) {
        std::vector<double> data(per_image);
        for (double& v : data) v = io_detail::read_le_double(bin);
        DomainSample s;
        s.image = Tensor(shape, std::move(data));
        s.domain = domain;
        if (!labels.at(i).is_null()) s.label = labels.at(i).get<int>();
        samples.push_back(std::move(s));
    }
    return samples;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << content;
}

}  // namespace dsslab
