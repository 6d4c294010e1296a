#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "centerface/flip.hpp"
#include "centerface/losses.hpp"
#include "centerface/model.hpp"
#include "centerface/synth.hpp"
#include "centerface/targets.hpp"

namespace centerface {

struct TrainConfig {
    int iterations = 2000;
    int batch_size = 4;
    // The small from-scratch network needs a larger step than 1.25e-4 with
    // drops to converge in 2000 iterations.
    double learning_rate = 3e-3;
    std::vector<double> lr_milestones;  // fractions of iterations
    double lr_drop = 0.1;
    std::uint64_t seed = 0;
    bool enable_triplet = true;
    bool enable_consistency = true;
    // The mirrored pass also receives the center loss.
    bool flipped_center_loss = true;
    // Subtract flip_offset_residue from the mirrored pass's offsets before the
    // localization consistency term, so the negation rule agrees with the
    // corner-anchored offset targets.
    bool align_flip_offsets = true;
    // Include the offset/size agreement term in L_con; when off, L_con is the
    // heatmap term alone. Off by default: at lambda_con = 100 the squared
    // pixel-size differences dominate the size supervision and cost accuracy.
    bool localization_consistency = false;
    // lambda_con ramps linearly from 0 to its configured value over this
    // fraction of the iterations.
    double consistency_warmup = 0.0;
    // Return the parameters that produced the smallest recorded total loss.
    bool track_best = true;

    void validate() const;
    double learning_rate_at(int iteration) const;
    double consistency_scale_at(int iteration) const;
};

struct LossBreakdown {
    double pix = 0;
    double off = 0;
    double size = 0;
    double center = 0;
    double triplet = 0;
    double con_cls = 0;
    double con_loc = 0;
    double consistency = 0;
    double total = 0;

    LossBreakdown& operator+=(const LossBreakdown& o);
    LossBreakdown& operator*=(double k);
};

/// Raised when a loss component stops being finite.
class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Image plus everything the losses need that does not depend on the model.
struct PreparedSample {
    ImageTensor image;
    ImageTensor flipped_image;
    TargetPack targets;
    TargetPack flipped_targets;
    std::vector<CenterPair> center_pairs;
    Field2 flip_residue;
};

PreparedSample prepare_sample(const Sample& sample, const GridConfig& grid,
                              const EncoderOptions& enc = {});

/// Total objective for one image, recorded on the tape behind p.
/// Two forward passes (original and mirrored image).
ad::Var image_loss(const PreparedSample& sample, const BoundParams& p, const LossWeights& w,
                   const TrainConfig& cfg, std::uint64_t mining_seed, LossBreakdown* breakdown);

/// Scalar objective without gradients; the finite-difference oracle path.
double evaluate_loss(const ModelParams& params, std::span<const PreparedSample* const> batch,
                     const LossWeights& w, const TrainConfig& cfg, std::uint64_t mining_seed,
                     LossBreakdown* breakdown = nullptr);

/// Batch-mean loss and its gradient for every parameter, in ModelParams order.
LossBreakdown loss_and_gradients(const ModelParams& params,
                                 std::span<const PreparedSample* const> batch, const LossWeights& w,
                                 const TrainConfig& cfg, std::uint64_t mining_seed,
                                 std::vector<Tensor>& grads);

/// One Adam step on the batch mean. Throws TrainingError naming a
/// non-finite component.
LossBreakdown train_step(ModelParams& params, std::span<const PreparedSample* const> batch,
                         const LossWeights& w, const TrainConfig& cfg, double learning_rate,
                         std::uint64_t mining_seed);

struct StepRecord {
    int iteration = 0;
    double learning_rate = 0;
    LossBreakdown loss;
};

struct TrainResult {
    ModelParams best;   // smallest recorded total loss (== last when not tracking)
    ModelParams last;
    int best_iteration = -1;
    std::vector<StepRecord> log;
};

using StepCallback = std::function<void(const StepRecord&)>;

TrainResult train(const std::vector<Sample>& data, const GridConfig& grid,
                  const ModelConfig& model, const LossWeights& w, const TrainConfig& cfg,
                  const StepCallback& on_step = {});

}  // namespace centerface
