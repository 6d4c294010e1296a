#pragma once

// Train-on-synthetic, evaluate-on-held-out runs and the loss-toggle and
// regression-mode ablation grids built from them.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "centerface/decoder.hpp"
#include "centerface/evaluator.hpp"
#include "centerface/trainer.hpp"

namespace centerface {

struct ExperimentConfig {
    SceneSpec scenes;
    int n_train = 300;
    int n_test = 100;
    ModelConfig model;
    LossWeights weights;
    TrainConfig train;
    DecodeConfig decode;
    double iou_threshold = 0.5;

    void validate() const;
};

struct ExperimentResult {
    EvalReport report;  // best-model parameters on the test split
    TrainResult training;
    double seconds = 0;
};

/// The seed drives data, initialization and mining (scenes.seed and
/// train.seed are overwritten). The test split is images n_train .. n_train + n_test
/// of the same generator.
ExperimentResult run_experiment(ExperimentConfig cfg, std::uint64_t seed, const StepCallback& on_step = {});

EvalReport evaluate_model(const ModelParams& params, std::span<const Sample> samples, const GridConfig& grid,
                          const DecodeConfig& decode, double iou_threshold);

struct AblationRow {
    std::string name;
    bool triplet = false;
    bool consistency = false;
    RegressionMode regression = RegressionMode::L1;
    std::vector<std::uint64_t> seeds;
    std::vector<EvalReport> reports;  // one per seed

    double mean_f1() const;
    double mean_precision(int class_id) const;
    double mean_recall(int class_id) const;
};

using AblationProgress = std::function<void(const AblationRow& row, std::uint64_t seed, const ExperimentResult&)>;

/// center-only, +triplet, +consistency, +both.
std::vector<AblationRow> run_loss_ablation(const ExperimentConfig& base, std::span<const std::uint64_t> seeds,
                                           const AblationProgress& progress = {});

/// Full objective with L1 and with SmoothL1 regression; nothing else differs.
std::vector<AblationRow> run_regression_ablation(const ExperimentConfig& base,
                                                 std::span<const std::uint64_t> seeds,
                                                 const AblationProgress& progress = {});

std::string ablation_table(std::span<const AblationRow> rows);
std::string ablation_json(std::span<const AblationRow> rows);

}  // namespace centerface
