#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "centerface/decoder.hpp"
#include "centerface/model.hpp"
#include "support/oracles.hpp"

using namespace centerface;
using ad::Tape;
using ad::Var;

namespace {

void zero(ModelParams& p, const std::string& name) {
    for (double& v : p.get(name).data) v = 0.0;
}

std::filesystem::path temp_file(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("centerface_test_" + name);
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

}  // namespace

TEST_CASE("output shapes for a 64x64 input in every CBAM mode") {
    std::mt19937_64 rng(1);
    const ImageTensor img = oracle::random_tensor(3, 64, 64, rng, 0, 1);
    for (auto order : {CbamOrder::ChannelThenSpatial, CbamOrder::SpatialThenChannel, CbamOrder::Off}) {
        ModelConfig c;
        c.cbam = order;
        const PredictionPack p = predict(init_params(c, 3), img);
        CHECK(p.heatmap.channels == 2);
        CHECK(p.offsets.channels == 2);
        CHECK(p.sizes.channels == 2);
        CHECK(p.embeddings.channels == 8);
        for (const Tensor* t : {&p.heatmap, &p.offsets, &p.sizes, &p.embeddings}) {
            CHECK(t->height == 16);
            CHECK(t->width == 16);
        }
        for (double v : p.heatmap.data) CHECK((v > 0 && v < 1));
        for (double v : p.sizes.data) CHECK(v >= 0);
        for (int i = 0; i < 16; ++i) {
            for (int j = 0; j < 16; ++j) {
                double n = 0;
                for (int c2 = 0; c2 < 8; ++c2) n += p.embeddings(c2, i, j) * p.embeddings(c2, i, j);
                CHECK(std::abs(std::sqrt(n) - 1) <= 1e-9);
            }
        }
    }
}

TEST_CASE("images whose sides are not multiples of the stride are rejected") {
    const ModelParams p = init_params({}, 1);
    CHECK_THROWS_AS(predict(p, ImageTensor(3, 62, 64)), InputError);
    CHECK_THROWS_AS(predict(p, ImageTensor(1, 64, 64)), InputError);
}

TEST_CASE("zero attention weights halve the features") {
    ModelParams p = init_params({}, 2);
    for (const char* n : {"block0.cbam.mlp1.weight", "block0.cbam.mlp2.weight", "block0.cbam.mlp2.bias",
                          "block0.cbam.spatial.weight"}) {
        zero(p, n);
    }
    std::mt19937_64 rng(4);
    const Tensor f = oracle::random_tensor(16, 6, 6, rng);
    Tape t;
    const BoundParams bp = bind(t, p, false);
    const Tensor ch = cbam_channel(t.constant(f), bp, "block0.cbam").value();
    const Tensor sp = cbam_spatial(t.constant(f), bp, "block0.cbam").value();
    for (std::size_t k = 0; k < f.data.size(); ++k) {
        CHECK(ch.data[k] == f.data[k] / 2);
        CHECK(sp.data[k] == f.data[k] / 2);
    }
}

TEST_CASE("channel attention treats a constant map like its pools") {
    // avg and max pools coincide, so the output is F * sigmoid(2 MLP(v))
    const ModelParams p = init_params({}, 5);
    Tensor f(16, 4, 4);
    for (int c = 0; c < 16; ++c)
        for (double& v : f.channel(c)) v = 0.1 * (c - 8);
    Tape t;
    const BoundParams bp = bind(t, p, false);
    const Tensor out = cbam_channel(t.constant(f), bp, "block0.cbam").value();

    Tensor v(16, 1, 1);
    for (int c = 0; c < 16; ++c) v.data[c] = f(c, 0, 0);
    const Var mlp = ad::dense(ad::relu(ad::dense(t.constant(v), bp["block0.cbam.mlp1.weight"],
                                                 bp["block0.cbam.mlp1.bias"])),
                              bp["block0.cbam.mlp2.weight"], bp["block0.cbam.mlp2.bias"]);
    for (int c = 0; c < 16; ++c) {
        const double gate = 1 / (1 + std::exp(-2 * mlp.value().data[c]));
        CHECK(out(c, 2, 1) == doctest::Approx(f(c, 2, 1) * gate).epsilon(1e-12));
    }
}

TEST_CASE("spatial attention on one channel pools to the map itself") {
    ModelConfig c;
    c.blocks = {{4, 2}};
    ModelParams p = init_params(c, 6);
    std::mt19937_64 rng(6);
    const Tensor f = oracle::random_tensor(1, 5, 5, rng);
    Tape t;
    const BoundParams bp = bind(t, p, false);
    const Tensor out = cbam_spatial(t.constant(f), bp, "block0.cbam").value();
    // both pooled maps equal f, so the 7x7 conv sees [f, f]
    Tensor pooled(2, 5, 5);
    std::copy(f.data.begin(), f.data.end(), pooled.data.begin());
    std::copy(f.data.begin(), f.data.end(), pooled.data.begin() + 25);
    const Tensor logits = oracle::naive_conv2d(pooled, p.get("block0.cbam.spatial.weight"),
                                               p.get("block0.cbam.spatial.bias"), 7, 1, 3);
    for (std::size_t k = 0; k < f.data.size(); ++k) {
        CHECK(out.data[k] == doctest::Approx(f.data[k] / (1 + std::exp(-logits.data[k]))).epsilon(1e-12));
    }
}

TEST_CASE("attention modules match finite differences") {
    ModelConfig c;
    c.blocks = {{4, 2}};
    const ModelParams p = init_params(c, 7);
    std::mt19937_64 rng(7);
    const Tensor f = oracle::random_tensor(4, 5, 5, rng);
    for (int which = 0; which < 2; ++which) {
        const auto rep = oracle::check_gradients({f}, [&](Tape& t, std::span<const Var> v) {
            const BoundParams bp = bind(t, p, false);
            const Var out = which == 0 ? cbam_channel(v[0], bp, "block0.cbam") : cbam_spatial(v[0], bp, "block0.cbam");
            std::mt19937_64 r2(9);
            return ad::sum(ad::mul(out, t.constant(oracle::random_tensor(4, 5, 5, r2))));
        });
        CHECK(rep.max_error < 1e-5);
    }
}

TEST_CASE("initialization and inference are deterministic") {
    const ModelParams a = init_params({}, 11), b = init_params({}, 11), c = init_params({}, 12);
    REQUIRE(a.tensors.size() == b.tensors.size());
    for (std::size_t k = 0; k < a.tensors.size(); ++k) CHECK(a.tensors[k].value == b.tensors[k].value);
    CHECK_FALSE(a.tensors[0].value == c.tensors[0].value);

    std::mt19937_64 rng(2);
    const ImageTensor img = oracle::random_tensor(3, 32, 32, rng, 0, 1);
    const PredictionPack x = predict(a, img), y = predict(b, img);
    CHECK(x.heatmap == y.heatmap);
    CHECK(x.sizes == y.sizes);
}

TEST_CASE("model config validation") {
    ModelConfig c;
    c.blocks = {{10, 2}};  // not divisible by the reduction
    CHECK_THROWS_AS(c.validate(), InputError);
    c = {};
    c.blocks.clear();
    CHECK_THROWS_AS(c.validate(), InputError);
    c = {};
    c.blocks[0].dilation = 0;
    CHECK_THROWS_AS(c.validate(), InputError);
    CHECK(ModelConfig{}.stride() == 4);
    CHECK_THROWS_AS(parse_cbam_order("both"), InputError);
    CHECK(parse_cbam_order("sc") == CbamOrder::SpatialThenChannel);
}

TEST_CASE("checkpoint save, load and save again gives identical bytes") {
    ModelConfig c;
    c.cbam = CbamOrder::SpatialThenChannel;
    c.blocks[2].dilation = 2;
    ModelParams p = init_params(c, 21);
    p.adam.step = 3;
    for (const NamedTensor& t : p.tensors) {
        p.adam.m.push_back(Tensor(t.value.channels, t.value.height, t.value.width, 0.125));
        p.adam.v.push_back(Tensor(t.value.channels, t.value.height, t.value.width, 1e-7 / 3));
    }
    const auto a = temp_file("ckpt_a.json"), b = temp_file("ckpt_b.json");
    save_checkpoint(p, a);
    const ModelParams q = load_checkpoint(a);
    save_checkpoint(q, b);
    CHECK(slurp(a) == slurp(b));
    CHECK(q.config == p.config);
    CHECK(q.adam.step == 3);
    for (std::size_t k = 0; k < p.tensors.size(); ++k) CHECK(q.tensors[k].value == p.tensors[k].value);

    std::mt19937_64 rng(3);
    const ImageTensor img = oracle::random_tensor(3, 64, 64, rng, 0, 1);
    DecodeConfig d;
    d.score_threshold = 0.0;
    const auto da = decode(predict(p, img), d, {64, 64, 4, 2});
    const auto db = decode(predict(q, img), d, {64, 64, 4, 2});
    REQUIRE(da.size() == db.size());
    for (std::size_t k = 0; k < da.size(); ++k) {
        CHECK(da[k].box == db[k].box);
        CHECK(da[k].score == db[k].score);
    }
    std::filesystem::remove(a);
    std::filesystem::remove(b);
}

TEST_CASE("checkpoint errors name the offending field") {
    const ModelParams p = init_params({}, 1);
    const std::string text = checkpoint_json(p);
    ModelConfig three;
    three.num_classes = 3;
    try {
        parse_checkpoint(text, three);
        FAIL("expected a checkpoint error");
    } catch (const CheckpointError& e) {
        CHECK(std::string(e.what()).find("num_classes") != std::string::npos);
    }

    std::string bad = text;
    bad.replace(bad.find("\"version\":1"), 11, "\"version\":9");
    CHECK_THROWS_WITH_AS(parse_checkpoint(bad), doctest::Contains("version"), CheckpointError);
    CHECK_THROWS_AS(parse_checkpoint("{not json"), CheckpointError);
    CHECK_THROWS_AS(load_checkpoint(temp_file("does_not_exist.json")), CheckpointError);
}
