#include <doctest.h>

#include <random>

#include "centerface/flip.hpp"
#include "centerface/losses.hpp"
#include "centerface/targets.hpp"
#include "support/oracles.hpp"

using namespace centerface;

TEST_CASE("box flipping") {
    CHECK(flip_box({0, 0, 8, 8, 1}, 16) == BBox{8, 0, 16, 8, 1});
    CHECK(flip_box({4, 2, 12, 9, 0}, 16) == BBox{4, 2, 12, 9, 0});  // centered on the axis
    const BBox b{1.5, 2, 7.25, 11, 0};
    CHECK(flip_box(flip_box(b, 32), 32) == b);
}

TEST_CASE("image flipping mirrors columns and is an involution") {
    std::mt19937_64 rng(1);
    const ImageTensor img = oracle::random_tensor(3, 4, 6, rng, 0, 1);
    const ImageTensor f = flip_image(img);
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 6; ++j) CHECK(f(c, i, j) == img(c, i, 5 - j));
    CHECK(flip_image(f) == img);
}

TEST_CASE("flip_back_heatmap moves a hot cell to the mirrored column") {
    Heatmap h(2, 3, 5);
    h(1, 2, 1) = 1.0;
    const Heatmap b = flip_back_heatmap(h);
    CHECK(b(1, 2, 3) == 1.0);
    CHECK(b(0, 2, 3) == 0.0);
    CHECK(flip_back_heatmap(b) == h);

    Heatmap sym(1, 1, 3);
    sym.data = {0.2, 0.9, 0.2};
    CHECK(flip_back_heatmap(sym) == sym);
}

TEST_CASE("flip_back_regression negates only the horizontal offset") {
    Field2 off(2, 1, 3), size(2, 1, 3);
    off(0, 0, 2) = 0.3;
    off(1, 0, 2) = 0.7;
    size(0, 0, 2) = 9;
    size(1, 0, 2) = 12;
    const RegressionFields r = flip_back_regression(off, size);
    CHECK(r.offsets(0, 0, 0) == -0.3);
    CHECK(r.offsets(1, 0, 0) == 0.7);
    CHECK(r.sizes(0, 0, 0) == 9);
    CHECK(r.sizes(1, 0, 0) == 12);
    const RegressionFields twice = flip_back_regression(r.offsets, r.sizes);
    CHECK(twice.offsets == off);
    CHECK(twice.sizes == size);
}

TEST_CASE("center correspondences use the mirrored box's own projection") {
    const GridConfig g{32, 32, 4, 2};
    // center x = 10 has residue 0.5: exact mirror cell W'-1-j
    auto pairs = match_centers({{6, 4, 14, 12, 0}}, g);
    REQUIRE(pairs.size() == 1);
    CHECK(pairs[0].original == GridIndex{2, 2});
    CHECK(pairs[0].flipped == GridIndex{2, 5});
    // center x = 8 (residue 0) mirrors to x = 24, column 6 instead of the naive 5
    pairs = match_centers({{4, 4, 12, 12, 0}}, g);
    CHECK(pairs[0].original.j == 2);
    CHECK(pairs[0].flipped.j == 6);
}

TEST_CASE("flip_sample is consistent with the encoder on both sides") {
    const GridConfig g{64, 64, 4, 2};
    std::mt19937_64 rng(2);
    const ImageTensor img = oracle::random_tensor(3, 64, 64, rng, 0, 1);
    const std::vector<BBox> boxes{{3, 5, 17, 20, 0}, {30, 33, 47, 50, 1}, {50, 2, 63, 15, 0}};
    const FlipPair fp = flip_sample(img, boxes, g);
    const TargetPack a = encode_targets(fp.boxes, g);
    const TargetPack b = encode_targets(fp.flipped_boxes, g);
    REQUIRE(fp.center_pairs.size() == boxes.size());
    for (std::size_t k = 0; k < boxes.size(); ++k) {
        CHECK(fp.center_pairs[k].original == a.objects[k].cell);
        CHECK(fp.center_pairs[k].flipped == b.objects[k].cell);
    }
    CHECK(fp.flipped_image == flip_image(img));
}

TEST_CASE("a mirrored predictor has zero consistency loss") {
    const GridConfig g{64, 64, 4, 2};
    const std::vector<BBox> boxes{{3, 5, 17, 20, 0}, {30, 33, 47, 50, 1}, {41, 2, 57, 15, 0}};
    const FlipPair fp = flip_sample(ImageTensor(3, 64, 64), boxes, g);
    const TargetPack t = encode_targets(fp.boxes, g);
    std::mt19937_64 rng(3);

    // Arbitrary predictions on the original; the flipped side is their exact mirror.
    const Heatmap hm = oracle::random_tensor(2, 16, 16, rng, 0.01, 0.99);
    const Field2 off = oracle::random_tensor(2, 16, 16, rng, 0.05, 0.95);
    const Field2 size = oracle::random_tensor(2, 16, 16, rng, 4, 20);
    const Heatmap hm_f = flip_back_heatmap(hm);
    const RegressionFields mirrored = flip_back_regression(off, size);

    for (auto mode : {ConsistencyMode::L2, ConsistencyMode::JSD}) {
        CHECK(consistency_cls_loss(hm, flip_back_heatmap(hm_f), t.mask, mode) <= 1e-12);
    }
    // Pairs on the naive mirror cells, where the mirrored field holds the negated offsets.
    std::vector<CenterPair> pairs;
    for (const CenterPair& p : fp.center_pairs) pairs.push_back({p.original, {p.original.i, 15 - p.original.j}});
    CHECK(consistency_loc_loss(off, size, mirrored.offsets, mirrored.sizes, pairs) <= 1e-12);

    // Without the negation the horizontal term is strictly positive.
    Field2 unnegated = mirrored.offsets;
    for (int i = 0; i < 16; ++i)
        for (int j = 0; j < 16; ++j) unnegated(0, i, j) = -unnegated(0, i, j);
    CHECK(consistency_loc_loss(off, size, unnegated, mirrored.sizes, pairs) > 0);
}

TEST_CASE("offset residue makes the negation exact on encoded targets") {
    const GridConfig g{64, 64, 4, 2};
    const std::vector<BBox> boxes{{3, 5, 17, 20, 0}, {30, 33, 47, 50, 1}, {41, 2, 56, 15, 0}};
    const FlipPair fp = flip_sample(ImageTensor(3, 64, 64), boxes, g);
    const TargetPack a = encode_targets(fp.boxes, g);
    const TargetPack b = encode_targets(fp.flipped_boxes, g);

    // Perfect predictors on each side: the groundtruth offsets and sizes.
    Field2 off(2, 16, 16), size(2, 16, 16), off_f(2, 16, 16), size_f(2, 16, 16);
    for (const auto& [t, o, s] : {std::tuple{&a, &off, &size}, std::tuple{&b, &off_f, &size_f}}) {
        for (const ObjectTarget& obj : t->objects) {
            (*o)(0, obj.cell.i, obj.cell.j) = obj.offset.dx;
            (*o)(1, obj.cell.i, obj.cell.j) = obj.offset.dy;
            (*s)(0, obj.cell.i, obj.cell.j) = obj.width;
            (*s)(1, obj.cell.i, obj.cell.j) = obj.height;
        }
    }
    CHECK(consistency_loc_loss(off, size, off_f, size_f, fp.center_pairs) > 0);

    const Field2 residue = flip_offset_residue(fp.center_pairs, 16, 16);
    Field2 aligned = off_f;
    for (std::size_t k = 0; k < aligned.data.size(); ++k) aligned.data[k] -= residue.data[k];
    CHECK(consistency_loc_loss(off, size, aligned, size_f, fp.center_pairs) <= 1e-20);
}
