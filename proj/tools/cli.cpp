#include "cli.hpp"

#include <algorithm>
#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>

#include "centerface/experiment.hpp"
#include "centerface/gradcheck.hpp"
#include "centerface/io.hpp"

namespace centerface::cli {

namespace fs = std::filesystem;

namespace {

// Flag groups shared by several subcommands. Each binds straight into the
// library config structs, so defaults shown by --help are the real defaults.

void add_scene_flags(CLI::App& app, SceneSpec& s) {
    app.add_option("--height", s.height, "Image height in pixels")->capture_default_str();
    app.add_option("--width", s.width, "Image width in pixels")->capture_default_str();
    app.add_option("--stride", s.stride, "Output stride s of the heatmap grid (reference value 4)")->capture_default_str();
    app.add_option("--min-objects", s.min_objects, "Fewest objects per image")->capture_default_str();
    app.add_option("--max-objects", s.max_objects, "Most objects per image")->capture_default_str();
    app.add_option("--min-size", s.min_size, "Smallest face width in pixels")->capture_default_str();
    app.add_option("--max-size", s.max_size, "Largest face width in pixels")->capture_default_str();
    app.add_option("--masked-prob", s.masked_probability, "Chance that a face wears a mask")
        ->capture_default_str();
    app.add_option("--confuser-prob", s.confuser_probability,
                   "Chance that an unmasked face gets a hand-like occluder")
        ->capture_default_str();
    app.add_option("--noise", s.noise, "Amplitude of additive uniform pixel noise")->capture_default_str();
}

void add_loss_flags(CLI::App& app, LossWeights& w) {
    app.add_option("--alpha", w.alpha, "Focal exponent alpha (reference value 2)")->capture_default_str();
    app.add_option("--beta", w.beta, "Focal shoulder exponent beta (reference value 4)")->capture_default_str();
    app.add_option("--lambda-pix", w.lambda_pix, "Heatmap loss weight (reference value 1)")->capture_default_str();
    app.add_option("--lambda-off", w.lambda_off, "Offset loss weight (reference value 1)")->capture_default_str();
    app.add_option("--lambda-s", w.lambda_s, "Size loss weight (reference value 0.01)")->capture_default_str();
    app.add_option("--lambda-tri", w.lambda_tri, "Triplet loss weight (reference value 1)")->capture_default_str();
    app.add_option("--lambda-con", w.lambda_con, "Consistency loss weight (reference value 100)")->capture_default_str();
    app.add_option("--margin", w.margin, "Triplet margin epsilon")->capture_default_str();
    app.add_option("--regression", w.regression, "Offset/size penalty: l1 or smoothl1")
        ->transform(CLI::CheckedTransformer(
            std::map<std::string, RegressionMode>{{"l1", RegressionMode::L1}, {"smoothl1", RegressionMode::SmoothL1}},
            CLI::ignore_case))
        ->default_str("l1");
    app.add_option("--smooth-l1-beta", w.smooth_l1_beta, "SmoothL1 quadratic/linear threshold")
        ->capture_default_str();
    app.add_option("--consistency", w.consistency,
                   "Heatmap consistency: l2 (masked L2 over object cells) or jsd (per-class Bernoulli JSD)")
        ->transform(CLI::CheckedTransformer(
            std::map<std::string, ConsistencyMode>{{"l2", ConsistencyMode::L2}, {"jsd", ConsistencyMode::JSD}},
            CLI::ignore_case))
        ->default_str("l2");
}

void add_model_flags(CLI::App& app, ModelConfig& m) {
    app.add_option("--cbam", m.cbam, "Attention order: cs (channel then spatial), sc, or off")
        ->transform(CLI::CheckedTransformer(
            std::map<std::string, CbamOrder>{{"cs", CbamOrder::ChannelThenSpatial},
                                             {"sc", CbamOrder::SpatialThenChannel},
                                             {"off", CbamOrder::Off}},
            CLI::ignore_case))
        ->default_str(to_string(m.cbam));
    app.add_option("--embedding-dim", m.embedding_dim, "Embedding head width")->capture_default_str();
}

void add_train_flags(CLI::App& app, TrainConfig& t) {
    app.add_option("--iterations", t.iterations, "Optimizer steps")->capture_default_str();
    app.add_option("--batch-size", t.batch_size, "Images per step")->capture_default_str();
    app.add_option("--lr", t.learning_rate, "Adam base learning rate")->capture_default_str();
    app.add_option("--lr-milestones", t.lr_milestones, "Fractions of the run at which the rate drops")
        ->capture_default_str()
        ->expected(0, -1);
    app.add_option("--lr-drop", t.lr_drop, "Multiplier applied at each milestone (reference value 0.1)")
        ->capture_default_str();
    app.add_flag("!--no-triplet", t.enable_triplet, "Disable the triplet term");
    app.add_flag("!--no-consistency", t.enable_consistency, "Disable the flip-consistency term");
    app.add_flag("--loc-consistency,!--no-loc-consistency", t.localization_consistency,
                 "Add the offset/size agreement term to the consistency loss (off by default)");
    app.add_option("--consistency-warmup", t.consistency_warmup,
                   "Fraction of the run over which lambda-con ramps up from 0")
        ->capture_default_str();
}

void add_decode_flags(CLI::App& app, DecodeConfig& d) {
    app.add_option("--score-threshold", d.score_threshold, "Minimum peak score")->capture_default_str();
    app.add_option("--topk", d.top_k, "Most detections per image")->capture_default_str();
    app.add_option("--peak-window", d.peak_window, "Odd neighborhood size for peak extraction")
        ->capture_default_str();
}

struct Dataset {
    std::vector<AnnotationRecord> records;
    std::vector<Sample> samples;
};

fs::path resolve(const fs::path& annotations, const std::string& image) {
    const fs::path p(image);
    return p.is_absolute() ? p : annotations.parent_path() / p;
}

Dataset load_dataset(const fs::path& annotations) {
    Dataset d;
    d.records = read_annotations(annotations);
    for (const AnnotationRecord& r : d.records) {
        Sample s;
        s.image = read_ppm(resolve(annotations, r.image));
        s.boxes = r.boxes;
        s.occluded.assign(r.boxes.size(), false);
        d.samples.push_back(std::move(s));
    }
    return d;
}

GridConfig grid_of(const ImageTensor& image, int stride) {
    GridConfig g{image.height, image.width, stride, kDefaultNumClasses};
    g.validate();
    return g;
}

void write_lines(const fs::path& path, const std::vector<std::string>& lines) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    for (const std::string& l : lines) out << l << '\n';
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Anchor-free face / masked-face detector on synthetic scenes", "centerface"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Help for every subcommand");

    std::uint64_t seed = 0;
    auto add_seed = [&](CLI::App* sub) {
        sub->add_option("--seed", seed, "Run seed; data, init and mining streams derive from it")
            ->capture_default_str();
    };

    // synth
    SceneSpec scenes;
    int n_images = 100;
    fs::path synth_out;
    CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic dataset (PPM images + annotations.jsonl)");
    add_scene_flags(*synth, scenes);
    add_seed(synth);
    synth->add_option("-n,--images", n_images, "Number of images")->capture_default_str();
    synth->add_option("-o,--out", synth_out, "Output directory")->required();

    // encode
    fs::path encode_ann, encode_out;
    int encode_stride = kDefaultStride;
    EncoderOptions enc;
    CLI::App* encode = app.add_subcommand("encode", "Dump encoded training targets as JSON lines");
    encode->add_option("--annotations", encode_ann, "Annotation JSONL")->required()->check(CLI::ExistingFile);
    encode->add_option("-o,--out", encode_out, "Output JSONL (stdout if omitted)");
    encode->add_option("--stride", encode_stride, "Output stride s (reference value 4)")->capture_default_str();
    encode->add_option("--min-overlap", enc.min_overlap, "IoU kept by the Gaussian radius")->capture_default_str();
    encode->add_option("--mask-dilation", enc.mask_dilation, "Grow the consistency mask by this many cells")
        ->capture_default_str();

    // gradcheck
    GradCheckOptions gc;
    CLI::App* gradcheck =
        app.add_subcommand("gradcheck", "Compare tape gradients with finite differences for every loss");
    add_seed(gradcheck);
    gradcheck->add_option("--instances", gc.instances, "Random instances per loss")->capture_default_str();
    gradcheck->add_option("--step", gc.step, "Central-difference step")->capture_default_str();

    // train
    ExperimentConfig ex;
    fs::path train_data, train_ckpt = "model.json", train_log;
    CLI::App* train_cmd = app.add_subcommand(
        "train", "Train the detector; synthesizes data unless --annotations is given");
    add_scene_flags(*train_cmd, ex.scenes);
    add_loss_flags(*train_cmd, ex.weights);
    add_model_flags(*train_cmd, ex.model);
    add_train_flags(*train_cmd, ex.train);
    add_seed(train_cmd);
    train_cmd->add_option("--annotations", train_data, "Annotation JSONL with images beside it")
        ->check(CLI::ExistingFile);
    train_cmd->add_option("--n-train", ex.n_train, "Synthetic training images")->capture_default_str();
    train_cmd->add_option("-o,--checkpoint", train_ckpt, "Checkpoint to write")->capture_default_str();
    train_cmd->add_option("--log", train_log, "Per-step loss log (JSONL)");
    bool save_last = false;
    train_cmd->add_flag("--save-last", save_last, "Save the final parameters instead of the best-loss ones");

    // detect
    fs::path det_ckpt, det_ann, det_out;
    std::vector<fs::path> det_images;
    DecodeConfig dec;
    CLI::App* detect = app.add_subcommand("detect", "Run the detector and write detections as JSON lines");
    detect->add_option("--checkpoint", det_ckpt, "Trained checkpoint")->required()->check(CLI::ExistingFile);
    detect->add_option("--annotations", det_ann, "Take the image list from this annotation JSONL")
        ->check(CLI::ExistingFile);
    detect->add_option("images", det_images, "PPM images")->check(CLI::ExistingFile);
    detect->add_option("-o,--out", det_out, "Output JSONL (stdout if omitted)");
    add_decode_flags(*detect, dec);

    // eval
    fs::path eval_det, eval_ann, eval_json;
    double eval_iou = 0.5;
    CLI::App* eval = app.add_subcommand("eval", "Per-class precision and recall of detections");
    eval->add_option("--detections", eval_det, "Detection JSONL")->required()->check(CLI::ExistingFile);
    eval->add_option("--annotations", eval_ann, "Groundtruth JSONL")->required()->check(CLI::ExistingFile);
    eval->add_option("--iou-threshold", eval_iou, "Match threshold")->capture_default_str();
    eval->add_option("--json", eval_json, "Also write the report as JSON");

    // ablate
    ExperimentConfig ab;
    std::vector<std::uint64_t> ab_seeds{1, 2, 3};
    bool ab_regression = false, ab_only_regression = false;
    fs::path ab_json;
    CLI::App* ablate = app.add_subcommand(
        "ablate", "Loss-toggle grid (center-only, +triplet, +consistency, +both) and L1/SmoothL1 comparison");
    add_scene_flags(*ablate, ab.scenes);
    add_loss_flags(*ablate, ab.weights);
    add_model_flags(*ablate, ab.model);
    add_train_flags(*ablate, ab.train);
    add_decode_flags(*ablate, ab.decode);
    ablate->add_option("--seeds", ab_seeds, "Seeds averaged per configuration")->capture_default_str();
    ablate->add_option("--n-train", ab.n_train, "Training images per run")->capture_default_str();
    ablate->add_option("--n-test", ab.n_test, "Held-out images per run")->capture_default_str();
    ablate->add_option("--iou-threshold", ab.iou_threshold, "Match threshold")->capture_default_str();
    ablate->add_flag("--regression-grid", ab_regression, "Also run the L1 vs SmoothL1 comparison");
    ablate->add_flag("--only-regression-grid", ab_only_regression, "Run only the L1 vs SmoothL1 comparison");
    ablate->add_option("--json", ab_json, "Write per-run results as JSON");
    bool quiet = false;
    ablate->add_flag("-q,--quiet", quiet, "No per-run progress lines");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        const int status = app.exit(e, out, err);
        err << app.help();
        return status;
    }

    try {
        if (*synth) {
            scenes.seed = seed;
            const std::vector<Sample> data = generate_dataset(scenes, n_images);
            fs::create_directories(synth_out / "images");
            std::vector<AnnotationRecord> records;
            for (std::size_t k = 0; k < data.size(); ++k) {
                char name[32];
                std::snprintf(name, sizeof name, "images/%05zu.ppm", k);
                write_ppm(synth_out / name, data[k].image);
                records.push_back({name, data[k].boxes});
            }
            write_annotations(synth_out / "annotations.jsonl", records);
            out << "wrote " << data.size() << " images to " << synth_out.string() << "\n";
            return 0;
        }

        if (*encode) {
            std::vector<std::string> lines;
            for (const AnnotationRecord& r : read_annotations(encode_ann)) {
                const GridConfig g = grid_of(read_ppm(resolve(encode_ann, r.image)), encode_stride);
                lines.push_back(target_pack_json(encode_targets(r.boxes, g, enc), r.image));
            }
            if (encode_out.empty()) {
                for (const std::string& l : lines) out << l << '\n';
            } else {
                write_lines(encode_out, lines);
            }
            return 0;
        }

        if (*gradcheck) {
            gc.seed = seed;
            bool ok = true;
            char line[160];
            std::snprintf(line, sizeof line, "%-22s %12s %10s %10s  %s\n", "loss", "max rel err", "tolerance",
                          "checked", "result");
            out << line;
            for (const GradCheckEntry& e : run_gradient_suite(gc)) {
                std::snprintf(line, sizeof line, "%-22s %12.3e %10.0e %10lld  %s\n", e.name.c_str(), e.max_error,
                              e.tolerance, e.checked, e.passed() ? "PASS" : "FAIL");
                out << line;
                ok = ok && e.passed();
            }
            return ok ? 0 : 1;
        }

        if (*train_cmd) {
            ex.scenes.seed = seed;
            ex.train.seed = seed;
            ex.model.validate();
            std::vector<Sample> data;
            GridConfig grid = ex.scenes.grid();
            if (!train_data.empty()) {
                data = load_dataset(train_data).samples;
                if (data.empty()) throw InputError("annotation file has no images");
                grid = grid_of(data.front().image, ex.model.stride());
            } else {
                data = generate_dataset(ex.scenes, ex.n_train);
            }
            std::ofstream log;
            if (!train_log.empty()) {
                log.open(train_log);
                if (!log) throw std::runtime_error("cannot open '" + train_log.string() + "' for writing");
            }
            const TrainResult r = train(data, grid, ex.model, ex.weights, ex.train, [&](const StepRecord& s) {
                if (log.is_open()) log << step_log_line(s) << '\n';
            });
            save_checkpoint(save_last ? r.last : r.best, train_ckpt);
            out << "trained " << ex.train.iterations << " iterations";
            if (!r.log.empty()) out << ", best total loss " << r.log[r.best_iteration].loss.total << " at " << r.best_iteration;
            out << "; checkpoint " << train_ckpt.string() << "\n";
            return 0;
        }

        if (*detect) {
            dec.validate();
            const ModelParams params = load_checkpoint(det_ckpt);
            std::vector<std::pair<std::string, fs::path>> images;
            if (!det_ann.empty()) {
                for (const AnnotationRecord& r : read_annotations(det_ann)) images.push_back({r.image, resolve(det_ann, r.image)});
            }
            for (const fs::path& p : det_images) images.push_back({p.string(), p});
            if (images.empty()) throw InputError("no images given (pass paths or --annotations)");
            std::vector<std::string> lines;
            for (const auto& [name, path] : images) {
                const ImageTensor img = read_ppm(path);
                for (const Detection& d : decode(predict(params, img), dec, grid_of(img, params.config.stride()))) {
                    lines.push_back(detection_line(name, d));
                }
            }
            if (det_out.empty()) {
                for (const std::string& l : lines) out << l << '\n';
            } else {
                write_lines(det_out, lines);
            }
            return 0;
        }

        if (*eval) {
            const auto gts = read_annotations(eval_ann);
            const auto dets = read_detections(eval_det);
            std::map<std::string, std::vector<Detection>> by_image;
            for (const DetectionRecord& d : dets) by_image[d.image].push_back(d.detection);
            MatchCounts counts;
            std::size_t matched_images = 0;
            for (const AnnotationRecord& r : gts) {
                const auto it = by_image.find(r.image);
                matched_images += it != by_image.end();
                counts += match_detections(it == by_image.end() ? std::vector<Detection>{} : it->second, r.boxes,
                                           eval_iou);
            }
            if (matched_images < by_image.size()) {
                err << "warning: " << by_image.size() - matched_images
                    << " image name(s) in the detections have no groundtruth record and were ignored\n";
            }
            const EvalReport report = precision_recall(counts, eval_iou);
            out << eval_report_table(report);
            out << eval_report_json(report) << "\n";
            if (!eval_json.empty()) write_lines(eval_json, {eval_report_json(report)});
            return 0;
        }

        if (*ablate) {
            auto progress = [&](const AblationRow& row, std::uint64_t s, const ExperimentResult& r) {
                if (quiet) return;
                char line[160];
                std::snprintf(line, sizeof line, "%-22s seed %-4llu mean F1 %.4f  (%.0f s)\n", row.name.c_str(),
                              static_cast<unsigned long long>(s), r.report.mean_f1(), r.seconds);
                err << line << std::flush;
            };
            std::vector<AblationRow> rows;
            if (!ab_only_regression) rows = run_loss_ablation(ab, ab_seeds, progress);
            if (ab_regression || ab_only_regression) {
                for (AblationRow& r : run_regression_ablation(ab, ab_seeds, progress)) rows.push_back(std::move(r));
            }
            out << ablation_table(rows);
            if (!ab_json.empty()) write_lines(ab_json, {ablation_json(rows)});
            return 0;
        }
    } catch (const ParseError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace centerface::cli
