#include <doctest.h>

#include <algorithm>
#include <random>
#include <tuple>

#include "centerface/decoder.hpp"
#include "centerface/evaluator.hpp"
#include "centerface/flip.hpp"
#include "centerface/synth.hpp"
#include "centerface/targets.hpp"
#include "support/oracles.hpp"

using namespace centerface;

namespace {

// Every cell >= threshold that no neighbor in the window exceeds, sorted by
// (-score, class, i, j).
std::vector<std::tuple<double, int, int, int>> brute_force_peaks(const Heatmap& h, double thr, int window) {
    std::vector<std::tuple<double, int, int, int>> out;
    const int r = window / 2;
    for (int c = 0; c < h.channels; ++c) {
        for (int i = 0; i < h.height; ++i) {
            for (int j = 0; j < h.width; ++j) {
                const double v = h(c, i, j);
                if (v < thr) continue;
                bool peak = true;
                for (int di = -r; di <= r; ++di) {
                    for (int dj = -r; dj <= r; ++dj) {
                        const int y = i + di, x = j + dj;
                        if (y >= 0 && y < h.height && x >= 0 && x < h.width && h(c, y, x) > v) peak = false;
                    }
                }
                if (peak) out.emplace_back(-v, c, i, j);
            }
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

TEST_CASE("peak extraction on trivial heatmaps") {
    CHECK(peak_extract(Heatmap(2, 5, 5), {}).empty());
    Heatmap h(2, 5, 5);
    h(1, 3, 2) = 1.0;
    const auto peaks = peak_extract(h, {});
    REQUIRE(peaks.size() == 1);
    CHECK(peaks[0].cell == GridIndex{3, 2});
    CHECK(peaks[0].class_id == 1);
    CHECK(peaks[0].score == 1.0);
}

TEST_CASE("peak extraction keeps plateaus and matches a brute-force scan") {
    Heatmap plateau(1, 4, 4);
    plateau(0, 1, 1) = plateau(0, 1, 2) = plateau(0, 2, 1) = 0.7;
    const auto p = peak_extract(plateau, {});
    REQUIRE(p.size() == 3);
    CHECK(p[0].cell == GridIndex{1, 1});
    CHECK(p[1].cell == GridIndex{1, 2});
    CHECK(p[2].cell == GridIndex{2, 1});

    std::mt19937_64 rng(7);
    std::uniform_int_distribution<int> level(0, 5);
    for (int trial = 0; trial < 30; ++trial) {
        // coarse levels so ties and plateaus are common
        Heatmap h(2, 7, 9);
        for (double& v : h.data) v = level(rng) / 5.0;
        for (int window : {1, 3, 5}) {
            DecodeConfig cfg;
            cfg.peak_window = window;
            cfg.top_k = 1000;
            const auto want = brute_force_peaks(h, cfg.score_threshold, window);
            const auto got = peak_extract(h, cfg);
            REQUIRE(got.size() == want.size());
            for (std::size_t k = 0; k < got.size(); ++k) {
                CHECK(-std::get<0>(want[k]) == got[k].score);
                CHECK(std::get<1>(want[k]) == got[k].class_id);
                CHECK(GridIndex{std::get<2>(want[k]), std::get<3>(want[k])} == got[k].cell);
            }
        }
    }
}

TEST_CASE("threshold and top_k bound the output") {
    Heatmap h(1, 6, 6);
    h(0, 0, 0) = 0.9;
    h(0, 3, 3) = 0.5;
    h(0, 5, 0) = 0.29;
    CHECK(peak_extract(h, {}).size() == 2);
    DecodeConfig one;
    one.top_k = 1;
    const auto p = peak_extract(h, one);
    REQUIRE(p.size() == 1);
    CHECK(p[0].score == 0.9);
}

TEST_CASE("decode config validation") {
    DecodeConfig c;
    c.peak_window = 2;
    CHECK_THROWS_AS(c.validate(), InputError);
    c = {};
    c.score_threshold = 1.5;
    CHECK_THROWS_AS(c.validate(), InputError);
    c = {};
    c.top_k = 0;
    CHECK_THROWS_AS(c.validate(), InputError);
}

TEST_CASE("decoding ideal predictions recovers the annotations") {
    const GridConfig g{64, 64, 4, 2};
    const std::vector<BBox> boxes{{3, 5, 17, 20, 0}, {37.5, 33.25, 52, 50.5, 1}};
    const TargetPack t = encode_targets(boxes, g);
    const auto dets = decode(oracle::ideal_prediction(t), {}, g);
    REQUIRE(dets.size() == 2);
    for (const BBox& b : boxes) {
        const auto it = std::find_if(dets.begin(), dets.end(), [&](const Detection& d) {
            return d.box.class_id == b.class_id;
        });
        REQUIRE(it != dets.end());
        CHECK(std::abs(it->box.x1 - b.x1) <= 1e-9);
        CHECK(std::abs(it->box.y1 - b.y1) <= 1e-9);
        CHECK(std::abs(it->box.x2 - b.x2) <= 1e-9);
        CHECK(std::abs(it->box.y2 - b.y2) <= 1e-9);
        CHECK(it->score == 1.0);
    }
}

TEST_CASE("a peak below threshold yields nothing") {
    const GridConfig g{16, 16, 4, 2};
    PredictionPack p{Heatmap(2, 4, 4), Field2(2, 4, 4), Field2(2, 4, 4, 8.0), Tensor(1, 4, 4)};
    p.heatmap(0, 1, 1) = 0.2;
    CHECK(decode(p, {}, g).empty());
}

TEST_CASE("decoded boxes are clamped to the image") {
    const GridConfig g{16, 16, 4, 2};
    PredictionPack p{Heatmap(2, 4, 4), Field2(2, 4, 4), Field2(2, 4, 4, 30.0), Tensor(1, 4, 4)};
    p.heatmap(0, 0, 0) = 0.8;
    const auto d = decode(p, {}, g);
    REQUIRE(d.size() == 1);
    CHECK(d[0].box == BBox{0, 0, 15, 15, 0});
    CHECK(d[0].score == 0.8);
}

TEST_CASE("round trip over random synthetic scenes") {
    SceneSpec spec;
    spec.seed = 17;
    const GridConfig g = spec.grid();
    for (int k = 0; k < 100; ++k) {
        const Sample s = generate_scene(spec, k);
        const auto dets = decode(oracle::ideal_prediction(encode_targets(s.boxes, g)), {}, g);
        REQUIRE(dets.size() == s.boxes.size());
        for (const BBox& b : s.boxes) {
            double best = 0;
            for (const Detection& d : dets) {
                if (d.box.class_id == b.class_id) best = std::max(best, iou(d.box, b));
            }
            CHECK(best >= 1 - 1e-9);
        }
    }
}

TEST_CASE("decoding a mirrored predictor commutes with flipping") {
    const GridConfig g{64, 64, 4, 2};
    // mid-cell horizontal centers, so the mirrored cells are exact
    const std::vector<BBox> boxes{{4, 5, 16, 20, 0}, {34, 33, 50, 50, 1}};
    const auto direct = decode(oracle::ideal_prediction(encode_targets(boxes, g)), {}, g);
    const PredictionPack flipped = oracle::ideal_prediction(encode_targets(flip_boxes(boxes, 64), g));
    const auto mirrored = decode(flipped, {}, g);
    REQUIRE(direct.size() == mirrored.size());
    for (std::size_t k = 0; k < direct.size(); ++k) {
        const BBox back = flip_box(mirrored[k].box, 64);
        bool found = false;
        for (const Detection& d : direct) {
            found |= d.box.class_id == back.class_id && iou(d.box, back) >= 1 - 1e-12;
        }
        CHECK(found);
    }
}
