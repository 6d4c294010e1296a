#include "centerface/model.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "centerface/seed.hpp"

namespace centerface {

using nlohmann::json;

namespace {

constexpr const char* kCheckpointFormat = "centerface-checkpoint";
constexpr int kSpatialKernel = 7;

std::string block_prefix(std::size_t b) { return "block" + std::to_string(b); }

void add_tensor(ModelParams& p, std::string name, Tensor t) {
    p.tensors.push_back({std::move(name), std::move(t)});
}

Tensor normal_tensor(int c, int h, int w, double stddev, std::mt19937_64& rng) {
    Tensor t(c, h, w);
    std::normal_distribution<double> d(0.0, stddev);
    for (double& v : t.data) v = d(rng);
    return t;
}

json shape_json(const Tensor& t) { return json::array({t.channels, t.height, t.width}); }

json config_json(const ModelConfig& c) {
    json blocks = json::array();
    for (const BlockSpec& b : c.blocks) blocks.push_back({{"out_channels", b.out_channels}, {"stride", b.stride}, {"dilation", b.dilation}});
    return {{"blocks", blocks},
            {"in_channels", c.in_channels},
            {"num_classes", c.num_classes},
            {"embedding_dim", c.embedding_dim},
            {"cbam_reduction", c.cbam_reduction},
            {"cbam", to_string(c.cbam)},
            {"size_bias", c.size_bias}};
}

template <class T>
T field(const json& j, const char* key, const std::string& where) {
    if (!j.contains(key)) throw CheckpointError("checkpoint missing field '" + where + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw CheckpointError("checkpoint field '" + where + key + "' has the wrong type");
    }
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.blocks.clear();
    for (const json& b : field<json>(j, "blocks", "config.")) {
        c.blocks.push_back({field<int>(b, "out_channels", "config.blocks[]."),
                            field<int>(b, "stride", "config.blocks[]."),
                            field<int>(b, "dilation", "config.blocks[].")});
    }
    c.in_channels = field<int>(j, "in_channels", "config.");
    c.num_classes = field<int>(j, "num_classes", "config.");
    c.embedding_dim = field<int>(j, "embedding_dim", "config.");
    c.cbam_reduction = field<int>(j, "cbam_reduction", "config.");
    c.cbam = parse_cbam_order(field<std::string>(j, "cbam", "config."));
    c.size_bias = field<double>(j, "size_bias", "config.");
    return c;
}

void compare_config(const ModelConfig& got, const ModelConfig& want) {
    auto mismatch = [](const char* name, auto a, auto b) {
        std::ostringstream os;
        os << "checkpoint " << name << " is " << a << ", expected " << b;
        throw CheckpointError(os.str());
    };
    if (got.num_classes != want.num_classes) mismatch("num_classes", got.num_classes, want.num_classes);
    if (got.embedding_dim != want.embedding_dim) mismatch("embedding_dim", got.embedding_dim, want.embedding_dim);
    if (got.in_channels != want.in_channels) mismatch("in_channels", got.in_channels, want.in_channels);
    if (got.cbam_reduction != want.cbam_reduction) {
        mismatch("cbam_reduction", got.cbam_reduction, want.cbam_reduction);
    }
    if (got.cbam != want.cbam) mismatch("cbam", to_string(got.cbam), to_string(want.cbam));
    if (got.blocks != want.blocks) mismatch("blocks", got.blocks.size(), want.blocks.size());
}

Tensor tensor_from_json(const json& entry, const Tensor& expected, const std::string& name) {
    const auto shape = field<std::vector<int>>(entry, "shape", name + ".");
    if (shape.size() != 3 || shape[0] != expected.channels || shape[1] != expected.height ||
        shape[2] != expected.width) {
        throw CheckpointError("checkpoint tensor '" + name + "' has shape mismatch");
    }
    Tensor t(shape[0], shape[1], shape[2]);
    const auto data = field<std::vector<double>>(entry, "data", name + ".");
    if (data.size() != t.size()) throw CheckpointError("checkpoint tensor '" + name + "' has wrong length");
    t.data = data;
    return t;
}

}  // namespace

const char* to_string(CbamOrder order) {
    switch (order) {
        case CbamOrder::ChannelThenSpatial: return "cs";
        case CbamOrder::SpatialThenChannel: return "sc";
        case CbamOrder::Off: return "off";
    }
    return "cs";
}

CbamOrder parse_cbam_order(const std::string& text) {
    if (text == "cs") return CbamOrder::ChannelThenSpatial;
    if (text == "sc") return CbamOrder::SpatialThenChannel;
    if (text == "off") return CbamOrder::Off;
    throw InputError("unknown CBAM order '" + text + "' (expected cs, sc or off)");
}

int ModelConfig::stride() const {
    int s = 1;
    for (const BlockSpec& b : blocks) s *= b.stride;
    return s;
}

void ModelConfig::validate() const {
    if (blocks.empty()) throw InputError("model needs at least one block");
    for (const BlockSpec& b : blocks) {
        if (b.out_channels < 1 || b.stride < 1 || b.dilation < 1) throw InputError("bad block spec");
        if (b.out_channels % cbam_reduction != 0) {
            throw InputError("block width " + std::to_string(b.out_channels) +
                             " not divisible by CBAM reduction " + std::to_string(cbam_reduction));
        }
    }
    if (in_channels < 1 || num_classes < 1 || embedding_dim < 1 || cbam_reduction < 1) {
        throw InputError("model dimensions must be positive");
    }
}

int ModelParams::index_of(const std::string& name) const {
    for (std::size_t k = 0; k < tensors.size(); ++k) {
        if (tensors[k].name == name) return static_cast<int>(k);
    }
    throw ContractError("no parameter named '" + name + "'");
}

std::size_t ModelParams::parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.value.size();
    return n;
}

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    ModelParams p;
    p.config = config;
    std::mt19937_64 rng(derive_seed(seed, "init"));

    int cin = config.in_channels;
    for (std::size_t b = 0; b < config.blocks.size(); ++b) {
        const int cout = config.blocks[b].out_channels;
        const int hidden = cout / config.cbam_reduction;
        const std::string pre = block_prefix(b);
        add_tensor(p, pre + ".conv.weight", normal_tensor(cout, cin, 9, std::sqrt(2.0 / (cin * 9)), rng));
        add_tensor(p, pre + ".conv.bias", Tensor(cout, 1, 1, 0.0));
        add_tensor(p, pre + ".cbam.mlp1.weight", normal_tensor(hidden, cout, 1, std::sqrt(2.0 / cout), rng));
        add_tensor(p, pre + ".cbam.mlp1.bias", Tensor(hidden, 1, 1, 0.0));
        add_tensor(p, pre + ".cbam.mlp2.weight", normal_tensor(cout, hidden, 1, std::sqrt(1.0 / hidden), rng));
        add_tensor(p, pre + ".cbam.mlp2.bias", Tensor(cout, 1, 1, 0.0));
        add_tensor(p, pre + ".cbam.spatial.weight",
                   normal_tensor(1, 2, kSpatialKernel * kSpatialKernel, 0.05, rng));
        add_tensor(p, pre + ".cbam.spatial.bias", Tensor(1, 1, 1, 0.0));
        cin = cout;
    }

    const double head_std = std::sqrt(1.0 / cin);
    add_tensor(p, "head.heatmap.weight", normal_tensor(config.num_classes, cin, 1, 0.01, rng));
    // Prior of 0.1 on every cell keeps the early focal loss from exploding.
    add_tensor(p, "head.heatmap.bias", Tensor(config.num_classes, 1, 1, -std::log((1 - 0.1) / 0.1)));
    add_tensor(p, "head.offset.weight", normal_tensor(2, cin, 1, 0.01, rng));
    add_tensor(p, "head.offset.bias", Tensor(2, 1, 1, 0.5));
    add_tensor(p, "head.size.weight", normal_tensor(2, cin, 1, 0.01, rng));
    add_tensor(p, "head.size.bias", Tensor(2, 1, 1, std::log(std::expm1(config.size_bias))));
    add_tensor(p, "head.embedding.weight", normal_tensor(config.embedding_dim, cin, 1, head_std, rng));
    add_tensor(p, "head.embedding.bias", Tensor(config.embedding_dim, 1, 1, 0.0));

    for (const auto& t : p.tensors) {
        p.adam.m.emplace_back(t.value.channels, t.value.height, t.value.width, 0.0);
        p.adam.v.emplace_back(t.value.channels, t.value.height, t.value.width, 0.0);
    }
    return p;
}

BoundParams bind(ad::Tape& tape, const ModelParams& params, bool requires_grad) {
    BoundParams b;
    b.params = &params;
    b.vars.reserve(params.tensors.size());
    for (const auto& t : params.tensors) b.vars.push_back(tape.leaf(t.value, requires_grad));
    return b;
}

ad::Var cbam_channel(ad::Var features, const BoundParams& p, const std::string& prefix) {
    auto mlp = [&](ad::Var v) {
        ad::Var h = ad::relu(ad::dense(v, p[prefix + ".mlp1.weight"], p[prefix + ".mlp1.bias"]));
        return ad::dense(h, p[prefix + ".mlp2.weight"], p[prefix + ".mlp2.bias"]);
    };
    ad::Var att = ad::sigmoid(ad::add(mlp(ad::spatial_avg_pool(features)),
                                      mlp(ad::spatial_max_pool(features))));
    return ad::scale_channels(features, att);
}

ad::Var cbam_spatial(ad::Var features, const BoundParams& p, const std::string& prefix) {
    ad::Var pooled = ad::concat_channels(ad::channel_avg_pool(features), ad::channel_max_pool(features));
    ad::Var logits = ad::conv2d(pooled, p[prefix + ".spatial.weight"], p[prefix + ".spatial.bias"],
                                {kSpatialKernel, 1, kSpatialKernel / 2});
    return ad::scale_cells(features, ad::sigmoid(logits));
}

TapeOutputs forward(ad::Var image, const BoundParams& p) {
    const ModelConfig& cfg = p.params->config;
    const Tensor& img = image.value();
    const int s = cfg.stride();
    if (img.channels != cfg.in_channels) throw InputError("image channel count does not match model");
    if (img.height % s != 0 || img.width % s != 0) {
        throw InputError("image " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                         " not divisible by model stride " + std::to_string(s));
    }

    ad::Var x = image;
    for (std::size_t b = 0; b < cfg.blocks.size(); ++b) {
        const std::string pre = block_prefix(b);
        x = ad::relu(ad::conv2d(x, p[pre + ".conv.weight"], p[pre + ".conv.bias"],
                                {3, cfg.blocks[b].stride, cfg.blocks[b].dilation, cfg.blocks[b].dilation}));
        const std::string cb = pre + ".cbam";
        // Attention refines the block output on a residual path, as inside a
        // ResNet block; stacking raw sigmoid gates would shrink activations ~4x per block.
        switch (cfg.cbam) {
            case CbamOrder::ChannelThenSpatial:
                x = ad::add(x, cbam_spatial(cbam_channel(x, p, cb), p, cb));
                break;
            case CbamOrder::SpatialThenChannel:
                x = ad::add(x, cbam_channel(cbam_spatial(x, p, cb), p, cb));
                break;
            case CbamOrder::Off:
                break;
        }
    }

    const ad::Conv2dSpec head{1, 1, 0};
    TapeOutputs out;
    out.heatmap = ad::sigmoid(ad::conv2d(x, p["head.heatmap.weight"], p["head.heatmap.bias"], head));
    out.offsets = ad::conv2d(x, p["head.offset.weight"], p["head.offset.bias"], head);
    out.sizes = ad::softplus(ad::conv2d(x, p["head.size.weight"], p["head.size.bias"], head));
    out.embeddings = ad::l2_normalize_cells(
        ad::conv2d(x, p["head.embedding.weight"], p["head.embedding.bias"], head));
    return out;
}

PredictionPack predict(const ModelParams& params, const ImageTensor& image) {
    ad::Tape tape;
    const BoundParams bound = bind(tape, params, false);
    const TapeOutputs out = forward(tape.constant(image), bound);
    return {out.heatmap.value(), out.offsets.value(), out.sizes.value(), out.embeddings.value()};
}

void adam_update(ModelParams& params, const std::vector<Tensor>& grads, double learning_rate,
                 const AdamOptions& opts) {
    if (grads.size() != params.tensors.size()) throw ContractError("adam: gradient count mismatch");
    AdamState& st = params.adam;
    ++st.step;
    const double bc1 = 1.0 - std::pow(opts.beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(opts.beta2, static_cast<double>(st.step));
    for (std::size_t k = 0; k < params.tensors.size(); ++k) {
        Tensor& w = params.tensors[k].value;
        require_same_shape(w, grads[k], "adam");
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double g = grads[k].data[i];
            double& m = st.m[k].data[i];
            double& v = st.v[k].data[i];
            m = opts.beta1 * m + (1 - opts.beta1) * g;
            v = opts.beta2 * v + (1 - opts.beta2) * g * g;
            w.data[i] -= learning_rate * (m / bc1) / (std::sqrt(v / bc2) + opts.epsilon);
        }
    }
}

std::string checkpoint_json(const ModelParams& params) {
    json tensors = json::array();
    json m = json::array();
    json v = json::array();
    for (std::size_t k = 0; k < params.tensors.size(); ++k) {
        const auto& t = params.tensors[k];
        tensors.push_back({{"name", t.name}, {"shape", shape_json(t.value)}, {"data", t.value.data}});
        m.push_back({{"name", t.name}, {"shape", shape_json(t.value)}, {"data", params.adam.m[k].data}});
        v.push_back({{"name", t.name}, {"shape", shape_json(t.value)}, {"data", params.adam.v[k].data}});
    }
    json doc = {{"format", kCheckpointFormat},
                {"version", kCheckpointVersion},
                {"config", config_json(params.config)},
                {"params", tensors},
                {"adam", {{"step", params.adam.step}, {"m", m}, {"v", v}}}};
    return doc.dump() + "\n";
}

ModelParams parse_checkpoint(const std::string& text, const std::optional<ModelConfig>& expected) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw CheckpointError(std::string("checkpoint is not valid JSON: ") + e.what());
    }
    if (field<std::string>(doc, "format", "") != kCheckpointFormat) {
        throw CheckpointError("checkpoint field 'format' is not " + std::string(kCheckpointFormat));
    }
    const int version = field<int>(doc, "version", "");
    if (version != kCheckpointVersion) {
        throw CheckpointError("checkpoint field 'version' is " + std::to_string(version) +
                              ", this build reads version " + std::to_string(kCheckpointVersion));
    }
    const ModelConfig config = config_from_json(field<json>(doc, "config", ""));
    if (expected) compare_config(config, *expected);

    ModelParams params = init_params(config, 0);
    const json& entries = field<json>(doc, "params", "");
    if (entries.size() != params.tensors.size()) {
        throw CheckpointError("checkpoint field 'params' has " + std::to_string(entries.size()) +
                              " tensors, architecture needs " + std::to_string(params.tensors.size()));
    }
    const json& adam = field<json>(doc, "adam", "");
    const json& ms = field<json>(adam, "m", "adam.");
    const json& vs = field<json>(adam, "v", "adam.");
    if (ms.size() != entries.size() || vs.size() != entries.size()) {
        throw CheckpointError("checkpoint field 'adam' does not match parameter count");
    }
    for (std::size_t k = 0; k < params.tensors.size(); ++k) {
        auto& t = params.tensors[k];
        const auto name = field<std::string>(entries[k], "name", "params[].");
        if (name != t.name) {
            throw CheckpointError("checkpoint parameter " + std::to_string(k) + " is '" + name +
                                  "', expected '" + t.name + "'");
        }
        t.value = tensor_from_json(entries[k], t.value, t.name);
        params.adam.m[k] = tensor_from_json(ms[k], t.value, "adam.m." + t.name);
        params.adam.v[k] = tensor_from_json(vs[k], t.value, "adam.v." + t.name);
    }
    params.adam.step = field<std::int64_t>(adam, "step", "adam.");
    return params;
}

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("cannot open '" + path.string() + "' for writing");
    out << checkpoint_json(params);
    if (!out) throw CheckpointError("failed writing '" + path.string() + "'");
}

ModelParams load_checkpoint(const std::filesystem::path& path, const std::optional<ModelConfig>& expected) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_checkpoint(ss.str(), expected);
}

}  // namespace centerface
