#include "centerface/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "centerface/seed.hpp"

namespace centerface {

void TrainConfig::validate() const {
    if (iterations < 0) throw InputError("iterations must be >= 0");
    if (batch_size < 1) throw InputError("batch size must be >= 1");
    if (!(learning_rate > 0)) throw InputError("learning rate must be > 0");
    if (!(lr_drop > 0)) throw InputError("learning-rate drop factor must be > 0");
    if (!(consistency_warmup >= 0 && consistency_warmup <= 1)) {
        throw InputError("consistency warmup is a fraction in [0, 1]");
    }
    for (double m : lr_milestones) {
        if (!(m >= 0 && m <= 1)) throw InputError("lr milestones are fractions in [0, 1]");
    }
}

double TrainConfig::learning_rate_at(int iteration) const {
    double lr = learning_rate;
    for (double m : lr_milestones) {
        if (iteration >= static_cast<int>(std::floor(m * iterations))) lr *= lr_drop;
    }
    return lr;
}

double TrainConfig::consistency_scale_at(int iteration) const {
    const double ramp = consistency_warmup * iterations;
    if (ramp <= 0) return 1.0;
    return std::min(1.0, iteration / ramp);
}

LossBreakdown& LossBreakdown::operator+=(const LossBreakdown& o) {
    pix += o.pix;
    off += o.off;
    size += o.size;
    center += o.center;
    triplet += o.triplet;
    con_cls += o.con_cls;
    con_loc += o.con_loc;
    consistency += o.consistency;
    total += o.total;
    return *this;
}

LossBreakdown& LossBreakdown::operator*=(double k) {
    pix *= k;
    off *= k;
    size *= k;
    center *= k;
    triplet *= k;
    con_cls *= k;
    con_loc *= k;
    consistency *= k;
    total *= k;
    return *this;
}

PreparedSample prepare_sample(const Sample& sample, const GridConfig& grid, const EncoderOptions& enc) {
    const FlipPair pair = flip_sample(sample.image, sample.boxes, grid);
    PreparedSample out;
    out.image = pair.image;
    out.flipped_image = pair.flipped_image;
    out.targets = encode_targets(pair.boxes, grid, enc);
    out.flipped_targets = encode_targets(pair.flipped_boxes, grid, enc);
    out.center_pairs = pair.center_pairs;
    out.flip_residue = flip_offset_residue(out.center_pairs, grid.grid_height(), grid.grid_width());
    return out;
}

namespace {

struct CenterTerms {
    ad::Var pix, off, size, center;
};

CenterTerms center_terms(const TapeOutputs& o, const TargetPack& t, const LossWeights& w) {
    CenterTerms c;
    c.pix = ad::focal_pixel_loss(o.heatmap, t.heatmap, t.n_objects(), w.alpha, w.beta);
    c.off = ad::offset_loss(o.offsets, t.objects, w.regression, w.smooth_l1_beta);
    c.size = ad::size_loss(o.sizes, t.objects, w.regression, w.smooth_l1_beta);
    const ad::Var parts[] = {ad::scale(c.pix, w.lambda_pix), ad::scale(c.off, w.lambda_off),
                             ad::scale(c.size, w.lambda_s)};
    c.center = ad::add_n(parts);
    return c;
}

void check_finite(const LossBreakdown& b) {
    const std::pair<const char*, double> parts[] = {
        {"pix", b.pix},         {"off", b.off},         {"size", b.size},
        {"triplet", b.triplet}, {"con_cls", b.con_cls}, {"con_loc", b.con_loc},
        {"total", b.total}};
    for (const auto& [name, v] : parts) {
        if (!std::isfinite(v)) {
            throw TrainingError(std::string("non-finite loss component '") + name + "' (" +
                                std::to_string(v) + ")");
        }
    }
}

}  // namespace

ad::Var image_loss(const PreparedSample& sample, const BoundParams& p, const LossWeights& w,
                   const TrainConfig& cfg, std::uint64_t mining_seed, LossBreakdown* breakdown) {
    ad::Tape& tape = *p.vars.front().tape;
    const TapeOutputs o = forward(tape.constant(sample.image), p);
    CenterTerms c = center_terms(o, sample.targets, w);

    LossBreakdown b;
    b.pix = c.pix.scalar();
    b.off = c.off.scalar();
    b.size = c.size.scalar();

    const bool need_flip = cfg.flipped_center_loss || cfg.enable_consistency;
    TapeOutputs of;
    if (need_flip) of = forward(tape.constant(sample.flipped_image), p);

    ad::Var center = c.center;
    if (cfg.flipped_center_loss) {
        const CenterTerms cf = center_terms(of, sample.flipped_targets, w);
        const ad::Var both[] = {c.center, cf.center};
        center = ad::scale(ad::add_n(both), 0.5);
        b.pix = 0.5 * (b.pix + cf.pix.scalar());
        b.off = 0.5 * (b.off + cf.off.scalar());
        b.size = 0.5 * (b.size + cf.size.scalar());
    }
    b.center = center.scalar();

    std::vector<ad::Var> terms{center};

    if (cfg.enable_triplet) {
        const auto plan = plan_triplets(sample.targets, mining_seed);
        if (!plan.empty()) {
            std::vector<ad::Var> anchors, positives, negatives;
            for (const TripletRegions& t : plan) {
                anchors.push_back(ad::pool_embedding(o.embeddings, t.anchor));
                positives.push_back(ad::pool_embedding(o.embeddings, t.positive));
                negatives.push_back(ad::pool_embedding(o.embeddings, t.negative));
            }
            const ad::Var tri = ad::triplet_loss(anchors, positives, negatives, w.margin);
            b.triplet = tri.scalar();
            terms.push_back(ad::scale(tri, w.lambda_tri));
        }
    }

    if (cfg.enable_consistency) {
        const ad::Var cls = ad::consistency_cls_loss(o.heatmap, ad::flip_width(of.heatmap),
                                                     sample.targets.mask, w.consistency);
        const ad::Var flip_offsets =
            cfg.align_flip_offsets ? ad::sub(of.offsets, tape.constant(sample.flip_residue)) : of.offsets;
        const ad::Var loc = ad::consistency_loc_loss(o.offsets, o.sizes, flip_offsets, of.sizes,
                                                     sample.center_pairs);
        b.con_cls = cls.scalar();
        b.con_loc = loc.scalar();
        if (cfg.localization_consistency) {
            b.consistency = b.con_cls + b.con_loc;
            const ad::Var con[] = {cls, loc};
            terms.push_back(ad::scale(ad::add_n(con), w.lambda_con));
        } else {
            b.consistency = b.con_cls;
            terms.push_back(ad::scale(cls, w.lambda_con));
        }
    }

    const ad::Var total = ad::add_n(terms);
    b.total = total.scalar();
    if (breakdown) *breakdown = b;
    return total;
}

namespace {

ad::Var batch_loss(const BoundParams& bound, std::span<const PreparedSample* const> batch,
                   const LossWeights& w, const TrainConfig& cfg, std::uint64_t mining_seed,
                   LossBreakdown& mean) {
    if (batch.empty()) throw InputError("empty training batch");
    std::vector<ad::Var> losses;
    mean = {};
    for (std::size_t k = 0; k < batch.size(); ++k) {
        LossBreakdown b;
        losses.push_back(image_loss(*batch[k], bound, w, cfg, derive_seed(mining_seed, "image", k), &b));
        mean += b;
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    mean *= inv;
    return ad::scale(ad::add_n(losses), inv);
}

}  // namespace

double evaluate_loss(const ModelParams& params, std::span<const PreparedSample* const> batch,
                     const LossWeights& w, const TrainConfig& cfg, std::uint64_t mining_seed,
                     LossBreakdown* breakdown) {
    ad::Tape tape;
    const BoundParams bound = bind(tape, params, false);
    LossBreakdown mean;
    const double v = batch_loss(bound, batch, w, cfg, mining_seed, mean).scalar();
    if (breakdown) *breakdown = mean;
    return v;
}

LossBreakdown loss_and_gradients(const ModelParams& params,
                                 std::span<const PreparedSample* const> batch, const LossWeights& w,
                                 const TrainConfig& cfg, std::uint64_t mining_seed,
                                 std::vector<Tensor>& grads) {
    ad::Tape tape;
    const BoundParams bound = bind(tape, params, true);
    LossBreakdown mean;
    const ad::Var root = batch_loss(bound, batch, w, cfg, mining_seed, mean);
    check_finite(mean);
    tape.backward(root);
    grads.clear();
    for (const ad::Var& v : bound.vars) grads.push_back(v.grad());
    return mean;
}

LossBreakdown train_step(ModelParams& params, std::span<const PreparedSample* const> batch,
                         const LossWeights& w, const TrainConfig& cfg, double learning_rate,
                         std::uint64_t mining_seed) {
    std::vector<Tensor> grads;
    const LossBreakdown mean = loss_and_gradients(params, batch, w, cfg, mining_seed, grads);
    adam_update(params, grads, learning_rate);
    return mean;
}

TrainResult train(const std::vector<Sample>& data, const GridConfig& grid, const ModelConfig& model,
                  const LossWeights& w, const TrainConfig& cfg, const StepCallback& on_step) {
    cfg.validate();
    w.validate();
    grid.validate();
    if (model.stride() != grid.stride) {
        throw InputError("model stride " + std::to_string(model.stride()) +
                         " does not match grid stride " + std::to_string(grid.stride));
    }
    if (model.num_classes != grid.num_classes) throw InputError("model and grid disagree on num_classes");
    if (data.empty() && cfg.iterations > 0) throw InputError("training set is empty");

    std::vector<PreparedSample> prepared;
    prepared.reserve(data.size());
    for (const Sample& s : data) prepared.push_back(prepare_sample(s, grid));

    TrainResult result;
    ModelParams params = init_params(model, cfg.seed);
    result.best = params;
    double best_loss = INFINITY;

    std::mt19937_64 order_rng(derive_seed(cfg.seed, "batches"));
    std::vector<std::size_t> order(prepared.size());
    std::iota(order.begin(), order.end(), 0);
    std::size_t cursor = order.size();

    std::vector<const PreparedSample*> batch;
    for (int it = 0; it < cfg.iterations; ++it) {
        batch.clear();
        while (static_cast<int>(batch.size()) < cfg.batch_size) {
            if (cursor == order.size()) {
                std::shuffle(order.begin(), order.end(), order_rng);
                cursor = 0;
            }
            batch.push_back(&prepared[order[cursor++]]);
        }

        const double lr = cfg.learning_rate_at(it);
        const ModelParams before = cfg.track_best ? params : ModelParams{};
        LossWeights wi = w;
        wi.lambda_con *= cfg.consistency_scale_at(it);
        const LossBreakdown loss =
            train_step(params, batch, wi, cfg, lr, derive_seed(cfg.seed, "mining", it));

        StepRecord rec{it, lr, loss};
        result.log.push_back(rec);
        if (on_step) on_step(rec);

        if (cfg.track_best && loss.total < best_loss) {
            best_loss = loss.total;
            result.best = before;
            result.best_iteration = it;
        }
    }

    result.last = params;
    if (!cfg.track_best) {
        result.best = params;
        result.best_iteration = cfg.iterations - 1;
    }
    return result;
}

}  // namespace centerface
