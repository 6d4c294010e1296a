#include "centerface/experiment.hpp"

#include <chrono>
#include <cstdio>
#include <json.hpp>
#include <sstream>

namespace centerface {

void ExperimentConfig::validate() const {
    scenes.validate();
    model.validate();
    weights.validate();
    train.validate();
    decode.validate();
    if (n_train < 1 || n_test < 1) throw InputError("train and test splits need at least one image");
    if (!(iou_threshold > 0 && iou_threshold <= 1)) throw InputError("IoU threshold must lie in (0, 1]");
    if (scenes.stride != model.stride()) {
        throw InputError("scene stride " + std::to_string(scenes.stride) + " differs from model stride " +
                         std::to_string(model.stride()));
    }
}

EvalReport evaluate_model(const ModelParams& params, std::span<const Sample> samples, const GridConfig& grid,
                          const DecodeConfig& decode_cfg, double iou_threshold) {
    MatchCounts counts(grid.num_classes);
    for (const Sample& s : samples) {
        counts += match_detections(decode(predict(params, s.image), decode_cfg, grid), s.boxes, iou_threshold,
                                   grid.num_classes);
    }
    return precision_recall(counts, iou_threshold);
}

ExperimentResult run_experiment(ExperimentConfig cfg, std::uint64_t seed, const StepCallback& on_step) {
    cfg.scenes.seed = seed;
    cfg.train.seed = seed;
    cfg.validate();

    const auto start = std::chrono::steady_clock::now();
    std::vector<Sample> all = generate_dataset(cfg.scenes, cfg.n_train + cfg.n_test);
    const std::vector<Sample> train_set(all.begin(), all.begin() + cfg.n_train);
    const std::span<const Sample> test_set(all.data() + cfg.n_train, cfg.n_test);

    ExperimentResult r;
    const GridConfig grid = cfg.scenes.grid();
    r.training = train(train_set, grid, cfg.model, cfg.weights, cfg.train, on_step);
    r.report = evaluate_model(r.training.best, test_set, grid, cfg.decode, cfg.iou_threshold);
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return r;
}

double AblationRow::mean_f1() const {
    if (reports.empty()) return 0;
    double s = 0;
    for (const EvalReport& r : reports) s += r.mean_f1();
    return s / reports.size();
}

double AblationRow::mean_precision(int class_id) const {
    if (reports.empty()) return 0;
    double s = 0;
    for (const EvalReport& r : reports) s += r.per_class.at(class_id).precision;
    return s / reports.size();
}

double AblationRow::mean_recall(int class_id) const {
    if (reports.empty()) return 0;
    double s = 0;
    for (const EvalReport& r : reports) s += r.per_class.at(class_id).recall;
    return s / reports.size();
}

namespace {

void run_rows(std::vector<AblationRow>& rows, const ExperimentConfig& base, std::span<const std::uint64_t> seeds,
              const AblationProgress& progress) {
    for (AblationRow& row : rows) {
        ExperimentConfig cfg = base;
        cfg.train.enable_triplet = row.triplet;
        cfg.train.enable_consistency = row.consistency;
        cfg.weights.regression = row.regression;
        for (std::uint64_t seed : seeds) {
            const ExperimentResult r = run_experiment(cfg, seed);
            row.seeds.push_back(seed);
            row.reports.push_back(r.report);
            if (progress) progress(row, seed, r);
        }
    }
}

}  // namespace

std::vector<AblationRow> run_loss_ablation(const ExperimentConfig& base, std::span<const std::uint64_t> seeds,
                                           const AblationProgress& progress) {
    const RegressionMode m = base.weights.regression;
    std::vector<AblationRow> rows{
        {"center-only", false, false, m},
        {"+triplet", true, false, m},
        {"+consistency", false, true, m},
        {"+triplet+consistency", true, true, m},
    };
    run_rows(rows, base, seeds, progress);
    return rows;
}

std::vector<AblationRow> run_regression_ablation(const ExperimentConfig& base,
                                                 std::span<const std::uint64_t> seeds,
                                                 const AblationProgress& progress) {
    std::vector<AblationRow> rows{
        {"L1", base.train.enable_triplet, base.train.enable_consistency, RegressionMode::L1},
        {"SmoothL1", base.train.enable_triplet, base.train.enable_consistency, RegressionMode::SmoothL1},
    };
    run_rows(rows, base, seeds, progress);
    return rows;
}

std::string ablation_table(std::span<const AblationRow> rows) {
    std::ostringstream os;
    char line[200];
    std::snprintf(line, sizeof line, "%-22s %8s %8s %8s %8s %8s\n", "configuration", "face P", "face R",
                  "mask P", "mask R", "mean F1");
    os << line;
    for (const AblationRow& r : rows) {
        std::snprintf(line, sizeof line, "%-22s %8.3f %8.3f %8.3f %8.3f %8.4f\n", r.name.c_str(),
                      r.mean_precision(0), r.mean_recall(0), r.mean_precision(1), r.mean_recall(1), r.mean_f1());
        os << line;
    }
    return os.str();
}

std::string ablation_json(std::span<const AblationRow> rows) {
    nlohmann::json out = nlohmann::json::array();
    for (const AblationRow& r : rows) {
        nlohmann::json runs = nlohmann::json::array();
        for (std::size_t k = 0; k < r.reports.size(); ++k) {
            nlohmann::json classes = nlohmann::json::array();
            for (const ClassMetrics& c : r.reports[k].per_class) {
                classes.push_back({{"tp", c.counts.tp}, {"fp", c.counts.fp}, {"fn", c.counts.fn},
                                   {"precision", c.precision}, {"recall", c.recall}});
            }
            runs.push_back({{"seed", r.seeds[k]}, {"mean_f1", r.reports[k].mean_f1()}, {"classes", classes}});
        }
        out.push_back({{"configuration", r.name},
                       {"triplet", r.triplet},
                       {"consistency", r.consistency},
                       {"regression", r.regression == RegressionMode::L1 ? "l1" : "smoothl1"},
                       {"mean_f1", r.mean_f1()},
                       {"runs", runs}});
    }
    return out.dump(2);
}

}  // namespace centerface
