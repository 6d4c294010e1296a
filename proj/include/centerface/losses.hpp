#pragma once

// Training objectives. Every loss exists twice: a pure forward function on
// plain tensors, and a tape operation with a hand-derived backward pass that
// calls the same forward. The gradient suite checks one against the other.

#include <cstdint>
#include <span>
#include <vector>

#include "centerface/autodiff.hpp"
#include "centerface/flip.hpp"
#include "centerface/targets.hpp"

namespace centerface {

enum class RegressionMode { L1, SmoothL1 };
enum class ConsistencyMode { L2, JSD };

inline constexpr double kProbabilityClamp = 1e-6;

struct LossWeights {
    double lambda_pix = 1.0;
    double lambda_off = 1.0;
    double lambda_s = 0.01;
    double lambda_tri = 1.0;
    double lambda_con = 100.0;
    double alpha = 2.0;
    double beta = 4.0;
    double margin = 0.3;
    RegressionMode regression = RegressionMode::L1;
    double smooth_l1_beta = 1.0;
    ConsistencyMode consistency = ConsistencyMode::L2;

    void validate() const;
};

// Pure forward losses ------------------------------------------------------

/// Penalty-reduced pixelwise focal loss, normalized by max(n_objects, 1).
double focal_pixel_loss(const Heatmap& pred, const Heatmap& target, int n_objects,
                        double alpha, double beta);

/// Mean over objects of the regression penalty between the predicted offset
/// at the center cell and the groundtruth residue.
double offset_loss(const Field2& pred, std::span<const ObjectTarget> objects,
                   RegressionMode mode = RegressionMode::L1, double smooth_beta = 1.0);

/// Same contract as offset_loss with pixel sizes as targets.
double size_loss(const Field2& pred, std::span<const ObjectTarget> objects,
                 RegressionMode mode = RegressionMode::L1, double smooth_beta = 1.0);

double center_loss(double pix, double off, double size, const LossWeights& w);

struct TripletBatch {
    std::vector<std::vector<double>> anchors;
    std::vector<std::vector<double>> positives;
    std::vector<std::vector<double>> negatives;

    std::size_t size() const { return anchors.size(); }
};

/// Sum over triplets of max(0, |a-p|^2 - |a-n|^2 + margin).
double triplet_loss(const TripletBatch& batch, double margin);

/// Masked flip consistency on the heatmap. pred_flipped_back must already be
/// mirrored into the original orientation. L2 sums classes and divides by the
/// mask count; JSD averages the Bernoulli divergence over cells and classes.
double consistency_cls_loss(const Heatmap& pred, const Heatmap& pred_flipped_back,
                            const std::vector<bool>& mask,
                            ConsistencyMode mode = ConsistencyMode::L2);

/// Mean over center pairs of the squared disagreement between the original
/// predictions at p and the raw flipped-image predictions at p'. The
/// horizontal offset of the flipped side is negated before comparison.
double consistency_loc_loss(const Field2& offsets, const Field2& sizes,
                            const Field2& offsets_flipped, const Field2& sizes_flipped,
                            std::span<const CenterPair> pairs);

double total_loss(double center, double triplet, double consistency, const LossWeights& w);

/// Bernoulli Jensen-Shannon divergence (natural log).
double bernoulli_jsd(double p, double q);

// Triplet mining -----------------------------------------------------------

/// Grid cells pooled into one anchor / positive / negative embedding.
struct TripletRegions {
    std::vector<GridIndex> anchor;
    std::vector<GridIndex> positive;
    std::vector<GridIndex> negative;
};

/// Positive: another same-class object if any, else a jittered copy of the
/// anchor box (<= 10% of its size). Negative: an opposite-class object if
/// any, else a box-sized window of background (mask-false) cells. Objects
/// with no usable negative are skipped. Deterministic in seed.
std::vector<TripletRegions> plan_triplets(const TargetPack& targets, std::uint64_t seed);

/// Box-average-pool followed by L2 normalization.
std::vector<double> pool_embedding(const Tensor& embeddings, std::span<const GridIndex> cells);

TripletBatch mine_triplets(const Tensor& embeddings, const TargetPack& targets,
                           std::uint64_t seed);

/// Pixel box of an encoded object, rebuilt from its cell, offset and size.
BBox object_box(const ObjectTarget& obj, int stride);

// Tape operations ----------------------------------------------------------

namespace ad {

Var focal_pixel_loss(Var pred, const Heatmap& target, int n_objects, double alpha, double beta);
Var offset_loss(Var pred, std::span<const ObjectTarget> objects, RegressionMode mode,
                double smooth_beta = 1.0);
Var size_loss(Var pred, std::span<const ObjectTarget> objects, RegressionMode mode,
              double smooth_beta = 1.0);
/// Each Var is a d x 1 x 1 embedding.
Var triplet_loss(std::span<const Var> anchors, std::span<const Var> positives,
                 std::span<const Var> negatives, double margin);
Var consistency_cls_loss(Var pred, Var pred_flipped_back, const std::vector<bool>& mask,
                         ConsistencyMode mode);
Var consistency_loc_loss(Var offsets, Var sizes, Var offsets_flipped, Var sizes_flipped,
                         std::span<const CenterPair> pairs);
/// pool_embedding on the tape.
Var pool_embedding(Var embeddings, std::span<const GridIndex> cells);

}  // namespace ad

}  // namespace centerface
