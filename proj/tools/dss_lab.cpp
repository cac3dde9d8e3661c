// Laboratory driver: runs the condition grid, the property verification
// suite, and the post-hoc analysis modes over recorded runs.
//
// Exit codes: 0 success, 1 property failure, 2 usage/config error,
// 3 numeric failure mid-run.

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "dsslab/analysis.hpp"
#include "dsslab/harness.hpp"
#include "dsslab/io.hpp"
#include "dsslab/verify.hpp"

namespace fs = std::filesystem;
using dsslab::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitPropertyFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

// "a.b.c=value" applied onto the config document before validation.
void apply_override(json& doc, const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0)
        throw dsslab::ConfigError("override must look like key.path=value: " + kv);
    const std::string path = kv.substr(0, eq);
    const std::string raw = kv.substr(eq + 1);

    json* node = &doc;
    std::size_t begin = 0;
    while (true) {
        const std::size_t dot = path.find('.', begin);
        const std::string key = path.substr(begin, dot == std::string::npos ? dot : dot - begin);
        if (key.empty()) throw dsslab::ConfigError("bad override path: " + path);
        if (dot == std::string::npos) {
            json value;
            try {
                value = json::parse(raw);
            } catch (const json::parse_error&) {
                value = raw;  // bare strings stay strings
            }
            (*node)[key] = value;
            return;
        }
        node = &(*node)[key];
        begin = dot + 1;
    }
}

std::string format_acc(double v) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

void write_json_file(const fs::path& path, const json& doc) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << doc.dump(2) << '\n';
}

fs::path run_dir(const fs::path& out, const std::string& condition, std::uint64_t seed) {
    return out / condition / ("seed_" + std::to_string(seed));
}

void write_run_outputs(const fs::path& out, const dsslab::RunResult& r) {
    const fs::path dir = run_dir(out, r.report.condition, r.report.seed);
    fs::create_directories(dir);
    write_json_file(dir / "report.json", dsslab::to_json(r.report));
    dsslab::write_text_file(dir / "gradstats.csv", dsslab::grad_records_csv(r.grad_records));
    write_json_file(dir / "gradstats_summary.json", dsslab::grad_records_summary(r.grad_records));
    json traces = json::array();
    for (const auto& t : r.direction_traces) traces.push_back(dsslab::to_json(t));
    write_json_file(dir / "direction_traces.json", traces);
    json weights = json::array();
    for (const auto& [name, w] : r.final_weights)
        weights.push_back({{"layer", name}, {"shape", w.shape()}, {"data", w.data()}});
    write_json_file(dir / "weights.json", weights);
}

int cmd_run(const std::string& config_path, const std::vector<std::string>& overrides,
            const std::string& out_override, const std::string& seeds_csv, int jobs) {
    dsslab::ExperimentConfig cfg;
    fs::path out;
    try {
        std::ifstream in(config_path);
        if (!in) throw dsslab::ConfigError("cannot open config file: " + config_path);
        std::stringstream buf;
        buf << in.rdbuf();
        const std::string text = buf.str();
        json doc;
        try {
            doc = json::parse(text);
        } catch (const json::parse_error& e) {
            throw dsslab::ConfigError("config parse error at " +
                                      dsslab::io_detail::line_of_offset(text, e.byte) + ": " +
                                      e.what());
        }
        for (const auto& kv : overrides) apply_override(doc, kv);
        if (!seeds_csv.empty()) {
            json seeds = json::array();
            std::stringstream ss(seeds_csv);
            std::string tok;
            while (std::getline(ss, tok, ',')) seeds.push_back(std::stoull(tok));
            doc["seeds"] = seeds;
        }
        std::string out_dir = "runs";
        dsslab::io_detail::read_field(doc, "", "output_dir", out_dir);
        cfg = dsslab::parse_experiment_config(doc);
        out = out_override.empty() ? fs::path(config_path).parent_path() / out_dir
                                   : fs::path(out_override);
    } catch (const dsslab::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    }

    try {
        fs::create_directories(out);
        write_json_file(out / "config.json", dsslab::to_json(cfg));

        // Datasets are per seed and shared by every condition.
        for (std::uint64_t seed : cfg.seeds) {
            auto split = dsslab::prepare_dataset(cfg, seed);
            const fs::path ds = out / "datasets" / ("seed_" + std::to_string(seed));
            fs::create_directories(ds);
            auto full = dsslab::generate_domains(split.generated_spec);
            dsslab::save_domain_data(ds / "source", full.first, split.generated_spec,
                                     dsslab::Domain::source);
            dsslab::save_domain_data(ds / "target", full.second, split.generated_spec,
                                     dsslab::Domain::target);
        }

        // One seed is an independent unit of work; conditions within a seed
        // stay ordered so suppressed runs can reuse baseline histogram ranges.
        // Worker exceptions are captured and rethrown after the join.
        std::vector<std::vector<dsslab::RunResult>> per_seed(cfg.seeds.size());
        std::vector<std::exception_ptr> failures(cfg.seeds.size());
        auto run_seed = [&](std::size_t idx) {
            try {
                dsslab::ExperimentConfig one = cfg;
                one.seeds = {cfg.seeds[idx]};
                per_seed[idx] = dsslab::run_experiment(one);
            } catch (...) {
                failures[idx] = std::current_exception();
            }
        };
        if (jobs <= 1 || cfg.seeds.size() == 1) {
            for (std::size_t i = 0; i < cfg.seeds.size(); ++i) run_seed(i);
        } else {
            std::vector<std::thread> pool;
            const std::size_t width = std::min<std::size_t>(jobs, cfg.seeds.size());
            for (std::size_t t = 0; t < width; ++t)
                pool.emplace_back([&, t]() {
                    for (std::size_t i = t; i < cfg.seeds.size(); i += width) run_seed(i);
                });
            for (auto& th : pool) th.join();
        }
        for (const auto& failure : failures)
            if (failure) std::rethrow_exception(failure);

        std::vector<dsslab::RunResult> results;
        for (auto& batch : per_seed)
            for (auto& r : batch) results.push_back(std::move(r));
        for (const auto& r : results) write_run_outputs(out, r);

        // condition x seed summary
        std::printf("%-18s", "condition");
        for (std::uint64_t s : cfg.seeds) std::printf("  seed %llu (src/tgt)", (unsigned long long)s);
        std::printf("  mean tgt\n");
        for (const auto& cond : cfg.conditions) {
            std::printf("%-18s", cond.c_str());
            double mean_tgt = 0.0;
            int n = 0;
            for (std::uint64_t s : cfg.seeds)
                for (const auto& r : results)
                    if (r.report.condition == cond && r.report.seed == s) {
                        std::printf("  %s/%s", format_acc(r.report.final_source_accuracy).c_str(),
                                    format_acc(r.report.final_target_accuracy).c_str());
                        mean_tgt += r.report.final_target_accuracy;
                        ++n;
                    }
            std::printf("       %s\n", format_acc(mean_tgt / std::max(1, n)).c_str());
        }
        std::printf("reports written under %s\n", out.string().c_str());
        return kExitOk;
    } catch (const dsslab::NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitConfig;
    }
}

int cmd_verify(const std::vector<std::string>& overrides, double lambda) {
    dsslab::VerifyOptions opts;
    opts.lambda = lambda;
    try {
        for (const auto& kv : overrides) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos)
                throw dsslab::ConfigError("tolerance override must look like name=value: " + kv);
            opts.tolerance_overrides[kv.substr(0, eq)] = std::stod(kv.substr(eq + 1));
        }
    } catch (const std::exception& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return kExitConfig;
    }

    bool all_pass = true;
    for (const auto& r : dsslab::run_verification(opts)) {
        std::printf("[%s] %-26s observed=%-12.3e tolerance=%-12.3e %s\n", r.pass ? "PASS" : "FAIL",
                    r.name.c_str(), r.observed, r.tolerance, r.detail.c_str());
        all_pass = all_pass && r.pass;
    }
    return all_pass ? kExitOk : kExitPropertyFailure;
}

struct RunRef {
    std::string condition;
    std::uint64_t seed;
    fs::path dir;
};

std::vector<RunRef> discover_runs(const fs::path& dir) {
    std::vector<RunRef> runs;
    if (!fs::exists(dir)) return runs;
    for (const auto& cond_entry : fs::directory_iterator(dir)) {
        if (!cond_entry.is_directory()) continue;
        const std::string cond = cond_entry.path().filename().string();
        if (cond == "datasets" || cond == "analysis") continue;
        for (const auto& seed_entry : fs::directory_iterator(cond_entry.path())) {
            const std::string name = seed_entry.path().filename().string();
            if (name.rfind("seed_", 0) != 0) continue;
            const std::string digits = name.substr(5);
            if (digits.empty() ||
                digits.find_first_not_of("0123456789") != std::string::npos)
                continue;
            if (!fs::exists(seed_entry.path() / "report.json")) continue;
            runs.push_back({cond, std::stoull(digits), seed_entry.path()});
        }
    }
    std::sort(runs.begin(), runs.end(), [](const RunRef& a, const RunRef& b) {
        return std::tie(a.condition, a.seed) < std::tie(b.condition, b.seed);
    });
    return runs;
}

std::vector<dsslab::GradStatsRecord> load_summary(const fs::path& dir) {
    std::ifstream in(dir / "gradstats_summary.json");
    if (!in) return {};
    json doc = json::parse(in);
    std::vector<dsslab::GradStatsRecord> records;
    for (const auto& item : doc) {
        dsslab::GradStatsRecord r;
        r.layer = item.at("layer").get<std::string>();
        r.step = item.at("step").get<int>();
        r.stddev = item.at("std").get<double>();
        r.l2_norm = item.at("norm").get<double>();
        records.push_back(std::move(r));
    }
    return records;
}

int cmd_analyze(const std::string& dir_str, const std::string& mode, const std::string& out_str) {
    const fs::path dir(dir_str);
    const fs::path out = out_str.empty() ? dir / "analysis" : fs::path(out_str);
    auto runs = discover_runs(dir);
    if (runs.empty()) {
        std::cerr << "no recorded runs under " << dir << '\n';
        return kExitConfig;
    }
    try {
        fs::create_directories(out);
        if (mode == "histograms") {
            bool any = false;
            for (const auto& r : runs) {
                std::ifstream in(r.dir / "gradstats.csv");
                if (!in) continue;
                std::stringstream buf;
                buf << in.rdbuf();
                if (buf.str().find('\n') == buf.str().rfind('\n')) continue;  // header only
                dsslab::write_text_file(
                    out / ("histograms_" + r.condition + "_seed" + std::to_string(r.seed) + ".csv"),
                    buf.str());
                any = true;
            }
            if (!any) {
                std::cerr << "no gradient records found\n";
                return kExitConfig;
            }
            std::printf("histogram CSVs written under %s\n", out.string().c_str());
        } else if (mode == "ratios") {
            json report = json::array();
            std::map<std::string, std::vector<double>> by_layer;  // dss-vs-baseline per seed
            bool any = false;
            for (const auto& r : runs) {
                auto base_name = dsslab::baseline_of(r.condition);
                if (!base_name) continue;
                auto base_it = std::find_if(runs.begin(), runs.end(), [&](const RunRef& b) {
                    return b.condition == *base_name && b.seed == r.seed;
                });
                if (base_it == runs.end()) continue;
                auto dss_records = load_summary(r.dir);
                auto base_records = load_summary(base_it->dir);
                if (dss_records.empty() || base_records.empty()) continue;
                std::vector<std::string> layers;
                for (const auto& rec : dss_records)
                    if (layers.empty() || layers.back() != rec.layer) {
                        if (std::find(layers.begin(), layers.end(), rec.layer) == layers.end())
                            layers.push_back(rec.layer);
                    }
                json entry{{"condition", r.condition},
                           {"baseline", *base_name},
                           {"seed", r.seed},
                           {"ratios", json::object()}};
                for (const auto& layer : layers) {
                    const double ratio =
                        dsslab::amplification_ratio(dss_records, base_records, layer);
                    entry["ratios"][layer] = ratio;
                    by_layer[r.condition + "/" + layer].push_back(ratio);
                    any = true;
                }
                report.push_back(std::move(entry));
            }
            if (!any) {
                std::cerr << "no paired dss/baseline records found\n";
                return kExitConfig;
            }
            write_json_file(out / "ratios.json", report);
            std::printf("%-34s %s\n", "condition/layer", "std ratio (dss/baseline) per seed");
            for (const auto& [key, ratios] : by_layer) {
                std::printf("%-34s", key.c_str());
                for (double v : ratios) std::printf(" %.3f", v);
                std::printf("\n");
            }
            // shallow/deep summary over the conv stack, per suppressed condition
            std::map<std::string, std::pair<std::string, std::string>> span;  // cond -> (first, last conv)
            for (const auto& [key, ratios] : by_layer) {
                const auto slash = key.find('/');
                const std::string cond = key.substr(0, slash);
                const std::string layer = key.substr(slash + 1);
                if (layer.rfind("conv", 0) != 0) continue;
                auto& [lo, hi] = span[cond];
                if (lo.empty() || layer < lo) lo = layer;
                if (hi.empty() || layer > hi) hi = layer;
            }
            for (const auto& [cond, pair] : span) {
                auto mean_of = [&](const std::string& layer) {
                    const auto& v = by_layer.at(cond + "/" + layer);
                    double s = 0.0;
                    for (double x : v) s += x;
                    return s / static_cast<double>(v.size());
                };
                const double shallow = mean_of(pair.first);
                const double deep = mean_of(pair.second);
                std::printf("%s: shallow %s mean ratio %.3f (%s), deep %s mean ratio %.3f (%s)\n",
                            cond.c_str(), pair.first.c_str(), shallow,
                            shallow > 1.0 ? "amplified" : "suppressed", pair.second.c_str(), deep,
                            deep < 1.0 ? "suppressed" : "amplified");
            }
            std::printf("ratio report written to %s\n", (out / "ratios.json").string().c_str());
        } else if (mode == "drift") {
            json merged = json::array();
            for (const auto& r : runs) {
                std::ifstream in(r.dir / "direction_traces.json");
                if (!in) continue;
                json traces = json::parse(in);
                merged.push_back(
                    {{"condition", r.condition}, {"seed", r.seed}, {"traces", traces}});
            }
            if (merged.empty()) {
                std::cerr << "no direction traces found\n";
                return kExitConfig;
            }
            write_json_file(out / "drift.json", merged);
            std::printf("direction drift report written to %s\n",
                        (out / "drift.json").string().c_str());
        } else if (mode == "svd") {
            json report = json::array();
            for (const auto& r : runs) {
                std::ifstream in(r.dir / "weights.json");
                if (!in) continue;
                json weights = json::parse(in);
                json entry{{"condition", r.condition}, {"seed", r.seed}, {"spectra", json::array()}};
                for (const auto& w : weights) {
                    const std::vector<int> shape = w.at("shape").get<std::vector<int>>();
                    const std::vector<double> data = w.at("data").get<std::vector<double>>();
                    dsslab::Tensor weight(shape, data);
                    json spec_entry{{"layer", w.at("layer")}};
                    if (shape.size() == 2 && shape[0] <= 16 && shape[1] <= 16) {
                        spec_entry["sigma"] =
                            dsslab::svd_spectrum_report(weight, shape[0], shape[1]);
                    } else if (shape.size() == 4 && shape[1] <= 16 &&
                               shape[2] * shape[3] <= 16) {
                        // per-output-channel slices (in_channels x kernel area)
                        json slices = json::array();
                        const int per = shape[1] * shape[2] * shape[3];
                        for (int o = 0; o < shape[0]; ++o) {
                            std::vector<double> slice(
                                data.begin() + static_cast<std::ptrdiff_t>(o) * per,
                                data.begin() + static_cast<std::ptrdiff_t>(o + 1) * per);
                            dsslab::Tensor st({shape[1], shape[2] * shape[3]}, std::move(slice));
                            slices.push_back(dsslab::svd_spectrum_report(st, shape[1],
                                                                         shape[2] * shape[3]));
                        }
                        spec_entry["sigma_per_output_channel"] = slices;
                    } else {
                        spec_entry["skipped"] = "weight exceeds the 16x16 analysis cap";
                    }
                    entry["spectra"].push_back(std::move(spec_entry));
                }
                report.push_back(std::move(entry));
            }
            if (report.empty()) {
                std::cerr << "no weight snapshots found\n";
                return kExitConfig;
            }
            write_json_file(out / "svd.json", report);
            std::printf("singular value report written to %s\n",
                        (out / "svd.json").string().c_str());
        } else {
            std::cerr << "unknown analyze mode: " << mode << '\n';
            return kExitConfig;
        }
        return kExitOk;
    } catch (const dsslab::NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitConfig;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "domain-specific suppression laboratory\n"
        "DSS_LAB_DETERMINISTIC=1 (default) pins each run to one thread; every run in\n"
        "this build is single-threaded, and --jobs only parallelizes whole runs."};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;
    std::string out_dir;
    std::string seeds_csv;
    int jobs = 1;

    auto* run = app.add_subcommand("run", "run the condition grid from a config file");
    run->add_option("--config", config_path, "experiment config JSON")->required();
    run->add_option("--set", overrides, "override config values (key.path=value, repeatable)");
    run->add_option("--out", out_dir, "output directory (default: config's output_dir)");
    run->add_option("--seeds", seeds_csv, "comma-separated seed list override");
    run->add_option("--jobs", jobs, "parallel seeds (runs stay single-threaded)");

    double lambda = 1.0;
    std::vector<std::string> tol_overrides;
    auto* verify = app.add_subcommand("verify", "run the property verification suite");
    verify->add_option("--set", tol_overrides, "tolerance override (name=value, repeatable)");
    verify->add_option("--lambda", lambda,
                       "suppression coefficient for the orthogonality property (0 = negative control)");

    std::string analyze_dir;
    std::string mode = "ratios";
    std::string analyze_out;
    auto* analyze = app.add_subcommand("analyze", "emit analysis artifacts from recorded runs");
    analyze->add_option("dir", analyze_dir, "run directory written by `run`")->required();
    analyze->add_option("--mode", mode, "histograms | ratios | drift | svd");
    analyze->add_option("--out", analyze_out, "analysis output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return kExitConfig;
    }

    if (run->parsed()) return cmd_run(config_path, overrides, out_dir, seeds_csv, jobs);
    if (verify->parsed()) return cmd_verify(tol_overrides, lambda);
    if (analyze->parsed()) return cmd_analyze(analyze_dir, mode, analyze_out);
    return kExitConfig;
}
