#include "centerface/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <set>

#include "centerface/losses.hpp"
#include "centerface/seed.hpp"
#include "centerface/synth.hpp"
#include "centerface/targets.hpp"
#include "centerface/trainer.hpp"

namespace centerface {

double gradient_relative_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-3});
}

namespace {

using Rng = std::mt19937_64;
using PureFn = std::function<double(const std::vector<Tensor>&)>;
using TapeFn = std::function<ad::Var(ad::Tape&, std::span<const ad::Var>)>;

Tensor uniform(int c, int h, int w, Rng& rng, double lo, double hi) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(c, h, w);
    for (double& v : t.data) v = u(rng);
    return t;
}

// Tape gradient of `taped` against central differences of `pure`, both
// evaluated at `inputs`.
void compare(GradCheckEntry& e, std::vector<Tensor> inputs, const PureFn& pure, const TapeFn& taped,
             double h) {
    ad::Tape tape;
    std::vector<ad::Var> leaves;
    for (const Tensor& t : inputs) leaves.push_back(tape.leaf(t));
    tape.backward(taped(tape, leaves));

    for (std::size_t k = 0; k < inputs.size(); ++k) {
        Tensor grad(inputs[k].channels, inputs[k].height, inputs[k].width, 0.0);
        try {
            grad = leaves[k].grad();
        } catch (const ContractError&) {
            // input not reached by backward: analytic gradient is zero
        }
        for (std::size_t i = 0; i < inputs[k].data.size(); ++i) {
            const double x0 = inputs[k].data[i];
            inputs[k].data[i] = x0 + h;
            const double fp = pure(inputs);
            inputs[k].data[i] = x0 - h;
            const double fm = pure(inputs);
            inputs[k].data[i] = x0;
            e.max_error = std::max(e.max_error, gradient_relative_error(grad.data[i], (fp - fm) / (2 * h)));
            ++e.checked;
        }
    }
    ++e.instances;
}

std::vector<GridIndex> distinct_cells(int n, int gh, int gw, Rng& rng) {
    std::set<GridIndex> picked;
    std::uniform_int_distribution<int> ui(0, gh - 1), uj(0, gw - 1);
    while (static_cast<int>(picked.size()) < n) picked.insert({ui(rng), uj(rng)});
    return {picked.begin(), picked.end()};
}

std::vector<ObjectTarget> random_objects(int n, int gh, int gw, Rng& rng) {
    std::uniform_real_distribution<double> off(0, 1), size(4, 20);
    std::vector<ObjectTarget> objs;
    for (const GridIndex& c : distinct_cells(n, gh, gw, rng)) {
        objs.push_back({c, 0, {off(rng), off(rng)}, size(rng), size(rng)});
    }
    return objs;
}

// Prediction field whose residuals at the object cells sit at least 1e-3
// away from the L1 kink at 0 and the SmoothL1 joint at +-beta.
Field2 regression_prediction(const std::vector<ObjectTarget>& objs, bool sizes, int gh, int gw,
                             double beta, Rng& rng) {
    Field2 pred = uniform(2, gh, gw, rng, sizes ? 2.0 : -0.5, sizes ? 24.0 : 1.5);
    std::uniform_real_distribution<double> resid(-3.0, 3.0);
    for (const ObjectTarget& o : objs) {
        for (int c = 0; c < 2; ++c) {
            const double t = sizes ? (c == 0 ? o.width : o.height) : (c == 0 ? o.offset.dx : o.offset.dy);
            double r = 0;
            do {
                r = resid(rng);
            } while (std::abs(r) < 1e-3 || std::abs(std::abs(r) - beta) < 1e-3);
            pred(c, o.cell.i, o.cell.j) = t + r;
        }
    }
    return pred;
}

std::vector<double> unit_vector(int d, Rng& rng) {
    std::normal_distribution<double> n(0, 1);
    std::vector<double> v(d);
    double norm = 0;
    for (double& x : v) {
        x = n(rng);
        norm += x * x;
    }
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
    return v;
}

Tensor as_column(const std::vector<double>& v) {
    Tensor t(static_cast<int>(v.size()), 1, 1);
    t.data = v;
    return t;
}

double squared_distance(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
    return s;
}

void focal_entry(GradCheckEntry& e, Rng& rng, double h) {
    const int gh = 5, gw = 6;
    Heatmap target(2, gh, gw);
    std::uniform_int_distribution<int> count(0, 3), cls(0, 1);
    std::uniform_real_distribution<double> sig(0.5, 1.5);
    const int n = count(rng);
    for (const GridIndex& c : distinct_cells(n, gh, gw, rng)) splat_gaussian(target, c, cls(rng), sig(rng));
    const double alpha = 2, beta = 4;
    compare(
        e, {uniform(2, gh, gw, rng, 0.02, 0.98)},
        [&](const std::vector<Tensor>& x) { return focal_pixel_loss(x[0], target, n, alpha, beta); },
        [&](ad::Tape&, std::span<const ad::Var> v) { return ad::focal_pixel_loss(v[0], target, n, alpha, beta); },
        h);
}

void regression_entry(GradCheckEntry& e, bool sizes, RegressionMode mode, Rng& rng, double h) {
    const int gh = 5, gw = 5;
    const double beta = 1.0;
    std::uniform_int_distribution<int> count(1, 3);
    const auto objs = random_objects(count(rng), gh, gw, rng);
    const Field2 pred = regression_prediction(objs, sizes, gh, gw, beta, rng);
    compare(
        e, {pred},
        [&](const std::vector<Tensor>& x) {
            return sizes ? size_loss(x[0], objs, mode, beta) : offset_loss(x[0], objs, mode, beta);
        },
        [&](ad::Tape&, std::span<const ad::Var> v) {
            return sizes ? ad::size_loss(v[0], objs, mode, beta) : ad::offset_loss(v[0], objs, mode, beta);
        },
        h);
}

void triplet_entry(GradCheckEntry& e, Rng& rng, double h) {
    const int d = 8, n = 3;
    const double margin = 0.3;
    std::vector<Tensor> inputs;
    for (int t = 0; t < n; ++t) {
        std::vector<double> a, p, q;
        do {
            a = unit_vector(d, rng);
            p = unit_vector(d, rng);
            q = unit_vector(d, rng);
        } while (std::abs(squared_distance(a, p) - squared_distance(a, q) + margin) < 1e-3);
        inputs.push_back(as_column(a));
        inputs.push_back(as_column(p));
        inputs.push_back(as_column(q));
    }
    compare(
        e, inputs,
        [&](const std::vector<Tensor>& x) {
            TripletBatch b;
            for (int t = 0; t < n; ++t) {
                b.anchors.push_back(x[3 * t].data);
                b.positives.push_back(x[3 * t + 1].data);
                b.negatives.push_back(x[3 * t + 2].data);
            }
            return triplet_loss(b, margin);
        },
        [&](ad::Tape&, std::span<const ad::Var> v) {
            std::vector<ad::Var> a, p, q;
            for (int t = 0; t < n; ++t) {
                a.push_back(v[3 * t]);
                p.push_back(v[3 * t + 1]);
                q.push_back(v[3 * t + 2]);
            }
            return ad::triplet_loss(a, p, q, margin);
        },
        h);
}

void consistency_cls_entry(GradCheckEntry& e, ConsistencyMode mode, Rng& rng, double h) {
    const int gh = 5, gw = 5;
    std::vector<bool> mask(gh * gw);
    std::bernoulli_distribution on(0.4);
    for (std::size_t k = 0; k < mask.size(); ++k) mask[k] = on(rng);
    mask[0] = true;
    compare(
        e, {uniform(2, gh, gw, rng, 0.05, 0.95), uniform(2, gh, gw, rng, 0.05, 0.95)},
        [&](const std::vector<Tensor>& x) { return consistency_cls_loss(x[0], x[1], mask, mode); },
        [&](ad::Tape&, std::span<const ad::Var> v) { return ad::consistency_cls_loss(v[0], v[1], mask, mode); },
        h);
}

void consistency_loc_entry(GradCheckEntry& e, Rng& rng, double h) {
    const int gh = 5, gw = 5;
    std::uniform_int_distribution<int> count(1, 3);
    const auto a = distinct_cells(count(rng), gh, gw, rng);
    std::vector<CenterPair> pairs;
    for (const GridIndex& c : a) pairs.push_back({c, {c.i, gw - 1 - c.j}});
    compare(
        e,
        {uniform(2, gh, gw, rng, -1, 1), uniform(2, gh, gw, rng, 2, 20), uniform(2, gh, gw, rng, -1, 1),
         uniform(2, gh, gw, rng, 2, 20)},
        [&](const std::vector<Tensor>& x) { return consistency_loc_loss(x[0], x[1], x[2], x[3], pairs); },
        [&](ad::Tape&, std::span<const ad::Var> v) {
            return ad::consistency_loc_loss(v[0], v[1], v[2], v[3], pairs);
        },
        h);
}

void pool_entry(GradCheckEntry& e, Rng& rng, double h) {
    const int d = 6, gh = 4, gw = 5;
    std::uniform_int_distribution<int> count(1, 6);
    const auto cells = distinct_cells(count(rng), gh, gw, rng);
    const Tensor w = uniform(d, 1, 1, rng, -1, 1);
    compare(
        e, {uniform(d, gh, gw, rng, -1, 1)},
        [&](const std::vector<Tensor>& x) {
            const auto v = pool_embedding(x[0], cells);
            double s = 0;
            for (int k = 0; k < d; ++k) s += v[k] * w.data[k];
            return s;
        },
        [&](ad::Tape& t, std::span<const ad::Var> v) {
            return ad::sum(ad::mul(ad::pool_embedding(v[0], cells), t.constant(w)));
        },
        h);
}

void model_entry(GradCheckEntry& e, int instance, Rng& rng, double h) {
    SceneSpec spec;
    spec.height = 16;
    spec.width = 16;
    spec.min_objects = 1;
    spec.max_objects = 2;
    spec.min_size = 5;
    spec.max_size = 8;
    spec.seed = rng();
    const GridConfig grid = spec.grid();

    ModelConfig mc;
    mc.blocks = {{4, 2}, {4, 2}};
    mc.cbam = std::array{CbamOrder::ChannelThenSpatial, CbamOrder::SpatialThenChannel,
                         CbamOrder::Off}[instance % 3];
    ModelParams params = init_params(mc, rng());
    // Move the heads off their symmetric initial values so every term is active.
    for (NamedTensor& t : params.tensors) {
        std::normal_distribution<double> n(0, 0.1);
        for (double& v : t.value.data) v += n(rng);
    }

    std::vector<PreparedSample> prepared;
    for (const Sample& s : generate_dataset(spec, 2)) prepared.push_back(prepare_sample(s, grid));
    std::vector<const PreparedSample*> batch{&prepared[0], &prepared[1]};

    const LossWeights w;
    TrainConfig cfg;
    cfg.consistency_warmup = 0;
    const std::uint64_t mining = rng();

    std::vector<Tensor> grads;
    loss_and_gradients(params, batch, w, cfg, mining, grads);
    for (std::size_t k = 0; k < params.tensors.size(); ++k) {
        Tensor& p = params.tensors[k].value;
        for (std::size_t i = 0; i < p.data.size(); ++i) {
            const double x0 = p.data[i];
            p.data[i] = x0 + h;
            const double fp = evaluate_loss(params, batch, w, cfg, mining);
            p.data[i] = x0 - h;
            const double fm = evaluate_loss(params, batch, w, cfg, mining);
            p.data[i] = x0;
            e.max_error = std::max(e.max_error, gradient_relative_error(grads[k].data[i], (fp - fm) / (2 * h)));
            ++e.checked;
        }
    }
    ++e.instances;
}

}  // namespace

std::vector<GradCheckEntry> run_gradient_suite(const GradCheckOptions& opts) {
    if (opts.instances < 1) throw InputError("gradient suite needs at least one instance");
    if (!(opts.step > 0)) throw InputError("finite-difference step must be positive");

    const double lt = opts.loss_tolerance;
    std::vector<GradCheckEntry> entries{
        {"focal_pixel", 0, lt},        {"offset_l1", 0, lt},          {"offset_smoothl1", 0, lt},
        {"size_l1", 0, lt},            {"size_smoothl1", 0, lt},      {"triplet", 0, lt},
        {"pool_embedding", 0, lt},     {"consistency_cls_l2", 0, lt}, {"consistency_cls_jsd", 0, lt},
        {"consistency_loc", 0, lt},    {"total_end_to_end", 0, opts.model_tolerance},
    };
    const double h = opts.step;
    for (int k = 0; k < opts.instances; ++k) {
        Rng rng(derive_seed(opts.seed, "gradcheck", static_cast<std::uint64_t>(k)));
        focal_entry(entries[0], rng, h);
        regression_entry(entries[1], false, RegressionMode::L1, rng, h);
        regression_entry(entries[2], false, RegressionMode::SmoothL1, rng, h);
        regression_entry(entries[3], true, RegressionMode::L1, rng, h);
        regression_entry(entries[4], true, RegressionMode::SmoothL1, rng, h);
        triplet_entry(entries[5], rng, h);
        pool_entry(entries[6], rng, h);
        consistency_cls_entry(entries[7], ConsistencyMode::L2, rng, h);
        consistency_cls_entry(entries[8], ConsistencyMode::JSD, rng, h);
        consistency_loc_entry(entries[9], rng, h);
        model_entry(entries[10], k, rng, h);
    }
    return entries;
}

}  // namespace centerface
