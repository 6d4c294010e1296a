#include <doctest.h>

#include <random>

#include "centerface/evaluator.hpp"
#include "support/oracles.hpp"

using namespace centerface;

TEST_CASE("iou examples") {
    const BBox a{0, 0, 4, 4, 0};
    CHECK(iou(a, a) == 1.0);
    CHECK(iou(a, {5, 5, 9, 9, 0}) == 0.0);
    CHECK(iou(a, {2, 0, 6, 4, 0}) == doctest::Approx(1.0 / 3));
}

TEST_CASE("iou agrees with the reference rectangle overlap") {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0, 20), s(0.5, 10);
    for (int k = 0; k < 500; ++k) {
        const double ax = u(rng), ay = u(rng), bx = u(rng), by = u(rng);
        const BBox a{ax, ay, ax + s(rng), ay + s(rng), 0};
        const BBox b{bx, by, bx + s(rng), by + s(rng), 0};
        CHECK(iou(a, b) == doctest::Approx(oracle::rect_iou(a.x1, a.y1, a.x2, a.y2, b.x1, b.y1, b.x2, b.y2)));
        CHECK(iou(a, b) == iou(b, a));
    }
}

TEST_CASE("matching edge cases") {
    const std::vector<BBox> gts{{0, 0, 10, 10, 0}, {20, 20, 30, 30, 1}};
    SUBCASE("perfect detections") {
        const auto m = match_detections({{gts[0], 0.9}, {gts[1], 0.8}}, gts, 0.5);
        CHECK(m.per_class[0] == ClassCounts{1, 0, 0});
        CHECK(m.per_class[1] == ClassCounts{1, 0, 0});
    }
    SUBCASE("duplicate detection of one object") {
        const auto m = match_detections({{gts[0], 0.9}, {{1, 0, 10, 10, 0}, 0.7}}, {gts[0]}, 0.5);
        CHECK(m.per_class[0] == ClassCounts{1, 1, 0});
    }
    SUBCASE("wrong class over a groundtruth") {
        const auto m = match_detections({{{0, 0, 10, 10, 1}, 0.9}}, {gts[0]}, 0.5);
        CHECK(m.per_class[0] == ClassCounts{0, 0, 1});
        CHECK(m.per_class[1] == ClassCounts{0, 1, 0});
    }
    SUBCASE("higher score claims the groundtruth first") {
        // the later, better-overlapping detection arrives after the gt is taken
        const auto m = match_detections({{{0, 0, 10, 10, 0}, 0.5}, {{2, 0, 12, 10, 0}, 0.9}}, {gts[0]}, 0.5);
        CHECK(m.per_class[0] == ClassCounts{1, 1, 0});
    }
    SUBCASE("below the iou threshold") {
        const auto m = match_detections({{{6, 6, 16, 16, 0}, 0.9}}, {gts[0]}, 0.5);
        CHECK(m.per_class[0] == ClassCounts{0, 1, 1});
    }
}

TEST_CASE("precision and recall from counts") {
    MatchCounts c;
    c.per_class[0] = {9, 1, 0};
    const EvalReport r = precision_recall(c, 0.5);
    CHECK(r.per_class[0].precision == doctest::Approx(0.9));
    CHECK(r.per_class[0].recall == 1.0);
    CHECK(r.per_class[1].precision == 1.0);  // 0/0
    CHECK(r.per_class[1].recall == 1.0);
    CHECK(r.per_class[0].f1() == doctest::Approx(2 * 0.9 / 1.9));
    CHECK(r.min_precision() == doctest::Approx(0.9));
}

TEST_CASE("counts add up on random scenes") {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0, 50), s(3, 12), sc(0, 1);
    std::uniform_int_distribution<int> cls(0, 1), n(0, 6);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<BBox> gts;
        std::vector<Detection> dets;
        int n_gt[2] = {0, 0}, n_det[2] = {0, 0};
        for (int k = n(rng); k > 0; --k) {
            const double x = u(rng), y = u(rng);
            gts.push_back({x, y, x + s(rng), y + s(rng), cls(rng)});
            ++n_gt[gts.back().class_id];
        }
        for (int k = n(rng); k > 0; --k) {
            const double x = u(rng), y = u(rng);
            dets.push_back({{x, y, x + s(rng), y + s(rng), cls(rng)}, sc(rng)});
            ++n_det[dets.back().box.class_id];
        }
        // a few near-copies of the groundtruth so there are matches to count
        for (const BBox& g : gts) dets.push_back({{g.x1 + 0.5, g.y1, g.x2, g.y2, g.class_id}, sc(rng)});
        for (const BBox& g : gts) ++n_det[g.class_id];

        const MatchCounts m = match_detections(dets, gts, 0.5);
        for (int c = 0; c < 2; ++c) {
            CHECK(m.per_class[c].tp + m.per_class[c].fn == n_gt[c]);
            CHECK(m.per_class[c].tp + m.per_class[c].fp == n_det[c]);
        }
    }
}

TEST_CASE("equal-score permutations keep the same counts") {
    const std::vector<BBox> gts{{0, 0, 10, 10, 0}};
    // both clear the threshold; input order decides which one is the TP
    const std::vector<Detection> a{{{0, 0, 10, 10, 0}, 0.5}, {{1, 1, 10, 10, 0}, 0.5}};
    const std::vector<Detection> b{a[1], a[0]};
    CHECK(match_detections(a, gts, 0.5).per_class[0] == match_detections(b, gts, 0.5).per_class[0]);
}
