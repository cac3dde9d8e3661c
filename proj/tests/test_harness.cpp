#include <gtest/gtest.h>

#include <cmath>

#include "dsslab/harness.hpp"
#include "test_util.hpp"

using dsslab::build_model;
using dsslab::Condition;
using dsslab::DomainSample;
using dsslab::evaluate_accuracy;
using dsslab::ExperimentConfig;
using dsslab::parse_condition;
using dsslab::prepare_dataset;
using dsslab::run_experiment;
using dsslab::run_single;
using dsslab::Tensor;
using dsslab::TrainReport;
using dsslab::WeightMode;

namespace {

// Small, fast config for structural checks; accuracy-level checks live in the
// acceptance suite.
ExperimentConfig tiny_config() {
    ExperimentConfig cfg;
    cfg.data.num_classes = 4;
    cfg.data.samples_per_class = 8;
    cfg.data.height = 8;
    cfg.data.width = 8;
    cfg.data.seed = 5;
    cfg.eval_per_class = 4;
    cfg.model.conv_channels = {4, 6, 8};
    cfg.model.feature_dim = 12;
    cfg.model.disc_hidden = 8;
    cfg.train.batch_size_per_domain = 2;
    cfg.train.pretrain_epochs = 1;
    cfg.train.adapt_epochs = 2;
    cfg.train.lr = 0.02;
    cfg.seeds = {1};
    cfg.conditions = {"source_only", "uda"};
    return cfg;
}

std::vector<DomainSample> labeled_constant_samples(int num_classes, int per_class) {
    std::vector<DomainSample> out;
    for (int c = 0; c < num_classes; ++c)
        for (int i = 0; i < per_class; ++i)
            out.push_back(DomainSample{Tensor::full({1, 2, 2}, static_cast<double>(c)), c,
                                       dsslab::Domain::source});
    return out;
}

}  // namespace

TEST(EvaluateAccuracy, OraclePredictorScoresOne) {
    auto samples = labeled_constant_samples(4, 3);
    auto oracle = [](const Tensor& batch) {
        const int n = batch.extent(0);
        Tensor logits({n, 4});
        for (int i = 0; i < n; ++i) {
            const int cls = static_cast<int>(std::lround(batch.at4(i, 0, 0, 0)));
            logits.at2(i, cls) = 1.0;
        }
        return logits;
    };
    EXPECT_DOUBLE_EQ(evaluate_accuracy(oracle, samples), 1.0);
}

TEST(EvaluateAccuracy, ConstantPredictorScoresMarginal) {
    auto samples = labeled_constant_samples(4, 5);
    auto constant = [](const Tensor& batch) { return Tensor({batch.extent(0), 4}); };
    EXPECT_DOUBLE_EQ(evaluate_accuracy(constant, samples), 0.25);
}

TEST(EvaluateAccuracy, EmptyListRejected) {
    auto constant = [](const Tensor& batch) { return Tensor({batch.extent(0), 4}); };
    EXPECT_THROW(evaluate_accuracy(constant, {}), std::invalid_argument);
}

TEST(EvaluateAccuracy, UntrainedModelNearChance) {
    ExperimentConfig cfg = tiny_config();
    cfg.eval_per_class = 16;
    double acc_sum = 0.0;
    for (std::uint64_t seed : {11u, 12u, 13u, 14u, 15u}) {
        auto data = prepare_dataset(cfg, seed);
        dsslab::Rng rng(seed, "init");
        auto model = build_model(cfg, WeightMode::plain, rng);
        acc_sum += evaluate_accuracy(model, data.source_eval);
    }
    EXPECT_NEAR(acc_sum / 5.0, 0.25, 0.1);
}

TEST(PrepareDataset, TargetTrainingSamplesCarryNoLabel) {
    ExperimentConfig cfg = tiny_config();
    auto data = prepare_dataset(cfg, 1);
    EXPECT_EQ(data.source_train.size(), 32u);
    EXPECT_EQ(data.target_train.size(), 32u);
    EXPECT_EQ(data.source_eval.size(), 16u);
    for (const auto& s : data.target_train) EXPECT_FALSE(s.label.has_value());
    for (const auto& s : data.source_train) EXPECT_TRUE(s.label.has_value());
    for (const auto& s : data.target_eval) EXPECT_TRUE(s.label.has_value());
}

TEST(Conditions, ParseAndBaseline) {
    EXPECT_TRUE(parse_condition("uda_dss").use_uda);
    EXPECT_TRUE(parse_condition("uda_dss").use_dss);
    EXPECT_FALSE(parse_condition("source_only").use_uda);
    EXPECT_THROW(parse_condition("bogus"), std::invalid_argument);
    EXPECT_EQ(dsslab::baseline_of("uda_dss").value(), "uda");
    EXPECT_EQ(dsslab::baseline_of("source_only_dss").value(), "source_only");
    EXPECT_FALSE(dsslab::baseline_of("uda").has_value());
}

// With the adversarial path disabled (alpha = 0) and plain weights, the uda
// loop must retrace the source-only loop exactly: same task losses, same
// backbone and head weights.
TEST(Harness, DisabledUdaReproducesSourceOnly) {
    ExperimentConfig cfg = tiny_config();
    cfg.train.grl.alpha_max = 0.0;
    cfg.train.grl.warmup = false;
    cfg.train.pretrain_epochs = 0;
    cfg.train.adapt_epochs = 3;

    auto source_only = run_single(cfg, parse_condition("source_only"), 7);
    auto uda_off = run_single(cfg, parse_condition("uda"), 7);

    ASSERT_EQ(source_only.report.epochs.size(), uda_off.report.epochs.size());
    for (std::size_t e = 0; e < source_only.report.epochs.size(); ++e)
        EXPECT_DOUBLE_EQ(source_only.report.epochs[e].task_loss,
                         uda_off.report.epochs[e].task_loss);

    ASSERT_EQ(source_only.final_weights.size(), uda_off.final_weights.size());
    for (std::size_t i = 0; i < source_only.final_weights.size(); ++i) {
        EXPECT_EQ(source_only.final_weights[i].first, uda_off.final_weights[i].first);
        EXPECT_TRUE(source_only.final_weights[i].second == uda_off.final_weights[i].second);
    }
}

// Suppression with lambda = 0 in dss mode is plain SGD bit for bit, so the
// whole trajectory matches the plain uda run.
TEST(Harness, DssLambdaZeroMatchesPlainTrajectory) {
    ExperimentConfig cfg = tiny_config();
    cfg.train.dss.lambda = 0.0;
    cfg.train.dss.mode = WeightMode::dss;
    cfg.conditions = {"uda", "uda_dss"};

    auto plain = run_single(cfg, parse_condition("uda"), 3);
    auto dss0 = run_single(cfg, parse_condition("uda_dss"), 3);
    for (std::size_t e = 0; e < plain.report.epochs.size(); ++e) {
        EXPECT_DOUBLE_EQ(plain.report.epochs[e].task_loss, dss0.report.epochs[e].task_loss);
        EXPECT_DOUBLE_EQ(plain.report.epochs[e].domain_loss, dss0.report.epochs[e].domain_loss);
    }
    for (std::size_t i = 0; i < plain.final_weights.size(); ++i)
        EXPECT_TRUE(plain.final_weights[i].second == dss0.final_weights[i].second);
}

TEST(Harness, IdenticalSeedGivesIdenticalRun) {
    ExperimentConfig cfg = tiny_config();
    auto a = run_single(cfg, parse_condition("uda_dss"), 9);
    auto b = run_single(cfg, parse_condition("uda_dss"), 9);
    ASSERT_EQ(a.report.epochs.size(), b.report.epochs.size());
    for (std::size_t e = 0; e < a.report.epochs.size(); ++e) {
        EXPECT_DOUBLE_EQ(a.report.epochs[e].task_loss, b.report.epochs[e].task_loss);
        EXPECT_DOUBLE_EQ(a.report.epochs[e].source_accuracy, b.report.epochs[e].source_accuracy);
        EXPECT_DOUBLE_EQ(a.report.epochs[e].target_accuracy, b.report.epochs[e].target_accuracy);
    }
    ASSERT_EQ(a.grad_records.size(), b.grad_records.size());
    for (std::size_t i = 0; i < a.grad_records.size(); ++i) {
        EXPECT_DOUBLE_EQ(a.grad_records[i].stddev, b.grad_records[i].stddev);
        EXPECT_EQ(a.grad_records[i].counts, b.grad_records[i].counts);
    }
    for (std::size_t i = 0; i < a.final_weights.size(); ++i)
        EXPECT_TRUE(a.final_weights[i].second == b.final_weights[i].second);
}

TEST(Harness, RecordingDoesNotPerturbTraining) {
    ExperimentConfig cfg = tiny_config();
    cfg.analysis.record_gradients = true;
    cfg.analysis.record_direction = true;
    auto with_rec = run_single(cfg, parse_condition("uda"), 4);

    cfg.analysis.record_gradients = false;
    cfg.analysis.record_direction = false;
    auto without = run_single(cfg, parse_condition("uda"), 4);

    for (std::size_t i = 0; i < with_rec.final_weights.size(); ++i)
        EXPECT_TRUE(with_rec.final_weights[i].second == without.final_weights[i].second);
}

TEST(Harness, ShiftFreeDomainsScoreEqually) {
    ExperimentConfig cfg = tiny_config();
    cfg.data.shift = dsslab::ShiftSpec{};  // identity
    auto r = run_single(cfg, parse_condition("source_only"), 2);
    EXPECT_DOUBLE_EQ(r.report.final_source_accuracy, r.report.final_target_accuracy);
}

TEST(Harness, TaskLossDecreasesOverTraining) {
    ExperimentConfig cfg = tiny_config();
    cfg.train.pretrain_epochs = 10;
    cfg.train.adapt_epochs = 0;
    cfg.conditions = {"source_only"};
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        auto r = run_single(cfg, parse_condition("source_only"), seed);
        EXPECT_LT(r.report.epochs[9].task_loss, r.report.epochs[0].task_loss);
    }
}

TEST(RunExperiment, GridShapeAndDigest) {
    ExperimentConfig cfg = tiny_config();
    cfg.seeds = {1, 2};
    cfg.conditions = {"source_only", "uda"};
    auto results = run_experiment(cfg);
    ASSERT_EQ(results.size(), 4u);
    EXPECT_EQ(results[0].report.condition, "source_only");
    EXPECT_EQ(results[0].report.seed, 1u);
    EXPECT_EQ(results[1].report.condition, "uda");
    EXPECT_EQ(results[3].report.seed, 2u);
    const std::string digest = dsslab::config_digest(cfg);
    for (const auto& r : results) EXPECT_EQ(r.report.config_digest, digest);

    ExperimentConfig changed = cfg;
    changed.train.dss.lambda = 0.5;
    EXPECT_NE(dsslab::config_digest(changed), digest);
}

TEST(TrainEpoch, EmptyDataRejected) {
    ExperimentConfig cfg = tiny_config();
    dsslab::Rng rng(21, "init");
    auto model = build_model(cfg, WeightMode::plain, rng);
    dsslab::TrainContext ctx(21, cfg.train);
    auto data = prepare_dataset(cfg, 21);

    EXPECT_THROW(dsslab::train_epoch(model, {}, data.target_train, cfg,
                                     dsslab::TrainMode::source_only, ctx),
                 std::invalid_argument);
    EXPECT_THROW(
        dsslab::train_epoch(model, data.source_train, {}, cfg, dsslab::TrainMode::uda, ctx),
        std::invalid_argument);

    // batch larger than the dataset leaves zero full steps
    ExperimentConfig big = tiny_config();
    big.train.batch_size_per_domain = 64;
    dsslab::TrainContext ctx2(21, big.train);
    EXPECT_THROW(dsslab::train_epoch(model, data.source_train, data.target_train, big,
                                     dsslab::TrainMode::source_only, ctx2),
                 std::invalid_argument);
}

TEST(RunExperiment, ReportsCarryEpochCurves) {
    ExperimentConfig cfg = tiny_config();
    auto results = run_experiment(cfg);
    for (const auto& r : results) {
        EXPECT_EQ(r.report.epochs.size(), 3u);
        for (const auto& e : r.report.epochs) {
            EXPECT_GE(e.source_accuracy, 0.0);
            EXPECT_LE(e.source_accuracy, 1.0);
            EXPECT_GE(e.target_accuracy, 0.0);
            EXPECT_LE(e.target_accuracy, 1.0);
            EXPECT_TRUE(std::isfinite(e.task_loss));
        }
        EXPECT_FALSE(r.direction_traces.empty());
        EXPECT_FALSE(r.final_weights.empty());
    }
}
