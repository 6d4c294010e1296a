#include <doctest.h>

#include <cmath>

#include "centerface/gradcheck.hpp"
#include "centerface/trainer.hpp"

using namespace centerface;

namespace {

SceneSpec small_scenes(std::uint64_t seed) {
    SceneSpec s;
    s.height = 32;
    s.width = 32;
    s.min_size = 8;
    s.max_size = 12;
    s.max_objects = 2;
    s.seed = seed;
    return s;
}

ModelConfig small_model() {
    ModelConfig m;
    m.blocks = {{8, 2}, {8, 2}};
    return m;
}

TrainConfig short_run(int iterations) {
    TrainConfig c;
    c.iterations = iterations;
    c.batch_size = 2;
    c.seed = 5;
    return c;
}

}  // namespace

TEST_CASE("learning-rate schedule drops at the milestones") {
    TrainConfig c;
    c.iterations = 100;
    c.learning_rate = 1.0;
    CHECK(c.learning_rate_at(99) == 1.0);
    c.lr_milestones = {0.4, 0.8};
    CHECK(c.learning_rate_at(0) == 1.0);
    CHECK(c.learning_rate_at(39) == 1.0);
    CHECK(c.learning_rate_at(40) == doctest::Approx(0.1));
    CHECK(c.learning_rate_at(80) == doctest::Approx(0.01));
    c.consistency_warmup = 0.5;
    CHECK(c.consistency_scale_at(0) == 0.0);
    CHECK(c.consistency_scale_at(25) == 0.5);
    CHECK(c.consistency_scale_at(70) == 1.0);
}

TEST_CASE("train config validation") {
    TrainConfig c;
    c.batch_size = 0;
    CHECK_THROWS_AS(c.validate(), InputError);
    c = {};
    c.learning_rate = 0;
    CHECK_THROWS_AS(c.validate(), InputError);
    c = {};
    c.lr_milestones = {1.5};
    CHECK_THROWS_AS(c.validate(), InputError);
}

TEST_CASE("identical seeds give identical loss logs and parameters") {
    const SceneSpec spec = small_scenes(3);
    const auto data = generate_dataset(spec, 6);
    const auto a = train(data, spec.grid(), small_model(), {}, short_run(12));
    const auto b = train(data, spec.grid(), small_model(), {}, short_run(12));
    REQUIRE(a.log.size() == 12);
    REQUIRE(b.log.size() == 12);
    for (std::size_t k = 0; k < a.log.size(); ++k) {
        CHECK(a.log[k].loss.total == b.log[k].loss.total);
        CHECK(a.log[k].loss.triplet == b.log[k].loss.triplet);
        CHECK(a.log[k].loss.con_cls == b.log[k].loss.con_cls);
    }
    for (std::size_t k = 0; k < a.last.tensors.size(); ++k) CHECK(a.last.tensors[k].value == b.last.tensors[k].value);
    CHECK(a.best_iteration == b.best_iteration);
}

TEST_CASE("loss components are nonnegative and sum to the total") {
    const SceneSpec spec = small_scenes(4);
    const auto data = generate_dataset(spec, 4);
    const LossWeights w;
    const auto r = train(data, spec.grid(), small_model(), w, short_run(5));
    for (const StepRecord& s : r.log) {
        const LossBreakdown& l = s.loss;
        for (double v : {l.pix, l.off, l.size, l.triplet, l.con_cls, l.con_loc}) CHECK(v >= 0);
        CHECK(l.center == doctest::Approx(center_loss(l.pix, l.off, l.size, w)));
        CHECK(l.total == doctest::Approx(total_loss(l.center, l.triplet, l.consistency, w)));
    }
}

TEST_CASE("disabling triplet and consistency leaves center-only training") {
    const SceneSpec spec = small_scenes(5);
    const auto data = generate_dataset(spec, 4);
    TrainConfig c = short_run(3);
    c.enable_triplet = false;
    c.enable_consistency = false;
    c.flipped_center_loss = false;
    const auto r = train(data, spec.grid(), small_model(), {}, c);
    for (const StepRecord& s : r.log) {
        CHECK(s.loss.triplet == 0);
        CHECK(s.loss.consistency == 0);
        CHECK(s.loss.total == doctest::Approx(s.loss.center));
    }
}

TEST_CASE("best-model tracking returns the parameters of the smallest logged loss") {
    const SceneSpec spec = small_scenes(6);
    const auto data = generate_dataset(spec, 4);
    TrainConfig c = short_run(8);
    const auto r = train(data, spec.grid(), small_model(), {}, c);
    REQUIRE(r.best_iteration >= 0);
    double smallest = INFINITY;
    int at = -1;
    for (const StepRecord& s : r.log) {
        if (s.loss.total < smallest) {
            smallest = s.loss.total;
            at = s.iteration;
        }
    }
    CHECK(r.best_iteration == at);

    // The best parameters are the ones that the winning step was evaluated at.
    TrainConfig upto = c;
    upto.iterations = at;
    upto.lr_milestones.clear();
    c.lr_milestones.clear();
    const auto full = train(data, spec.grid(), small_model(), {}, c);
    const auto prefix = train(data, spec.grid(), small_model(), {}, upto);
    if (full.best_iteration == at && at > 0) {
        for (std::size_t k = 0; k < full.best.tensors.size(); ++k) {
            CHECK(full.best.tensors[k].value == prefix.last.tensors[k].value);
        }
    }
}

TEST_CASE("a non-finite loss aborts naming the component") {
    const SceneSpec spec = small_scenes(7);
    const auto data = generate_dataset(spec, 2);
    ModelParams p = init_params(small_model(), 1);
    p.get("head.size.bias").data[0] = NAN;
    std::vector<PreparedSample> prepared;
    for (const Sample& s : data) prepared.push_back(prepare_sample(s, spec.grid()));
    const std::vector<const PreparedSample*> batch{&prepared[0], &prepared[1]};
    CHECK_THROWS_WITH_AS(train_step(p, batch, {}, short_run(1), 1e-3, 1), doctest::Contains("size"),
                         TrainingError);
}

TEST_CASE("gradient suite passes on a few instances") {
    GradCheckOptions o;
    o.instances = 2;
    o.seed = 77;
    for (const GradCheckEntry& e : run_gradient_suite(o)) {
        INFO(e.name);
        CHECK(e.instances == 2);
        CHECK(e.checked > 0);
        CHECK(e.passed());
    }
    CHECK(gradient_relative_error(1.0, 1.0) == 0.0);
    CHECK(gradient_relative_error(0.0, 1e-6) == doctest::Approx(1e-3));
}
