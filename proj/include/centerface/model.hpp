#pragma once

// Toy CenterFace detector: a strided conv backbone with CBAM after every
// block and four 1x1 heads (heatmap, offset, size, embedding) at stride 4.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "centerface/autodiff.hpp"
#include "centerface/tensor.hpp"

namespace centerface {

enum class CbamOrder { ChannelThenSpatial, SpatialThenChannel, Off };

const char* to_string(CbamOrder order);
/// Accepts "cs", "sc", "off".
CbamOrder parse_cbam_order(const std::string& text);

struct BlockSpec {
    int out_channels = 16;
    int stride = 1;
    int dilation = 1;
    bool operator==(const BlockSpec&) const = default;
};

struct ModelConfig {
    std::vector<BlockSpec> blocks{{16, 2}, {32, 2}, {32, 1, 2}};
    int in_channels = 3;
    int num_classes = 2;
    int embedding_dim = 8;
    int cbam_reduction = 4;
    CbamOrder cbam = CbamOrder::ChannelThenSpatial;
    double size_bias = 16.0;  // initial size-head output, pixels

    int stride() const;
    int feature_channels() const { return blocks.back().out_channels; }
    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

struct NamedTensor {
    std::string name;
    Tensor value;
};

struct AdamState {
    std::int64_t step = 0;
    std::vector<Tensor> m;
    std::vector<Tensor> v;
};

/// Named parameters in a fixed order, plus Adam moments.
struct ModelParams {
    ModelConfig config;
    std::vector<NamedTensor> tensors;
    AdamState adam;

    int index_of(const std::string& name) const;
    const Tensor& get(const std::string& name) const { return tensors[index_of(name)].value; }
    Tensor& get(const std::string& name) { return tensors[index_of(name)].value; }
    std::size_t parameter_count() const;
};

/// Deterministic in seed. Shapes depend only on the config.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

/// Every parameter as a leaf on the tape, in ModelParams order.
struct BoundParams {
    std::vector<ad::Var> vars;
    const ModelParams* params = nullptr;

    ad::Var operator[](const std::string& name) const { return vars[params->index_of(name)]; }
};

BoundParams bind(ad::Tape& tape, const ModelParams& params, bool requires_grad = true);

struct TapeOutputs {
    ad::Var heatmap;
    ad::Var offsets;
    ad::Var sizes;
    ad::Var embeddings;
};

/// F * sigmoid(MLP(avgpool F) + MLP(maxpool F)) with the shared two-layer MLP of prefix.
ad::Var cbam_channel(ad::Var features, const BoundParams& p, const std::string& prefix);
/// F * sigmoid(conv7x7([mean_c F, max_c F])).
ad::Var cbam_spatial(ad::Var features, const BoundParams& p, const std::string& prefix);

TapeOutputs forward(ad::Var image, const BoundParams& p);

/// Inference without gradient bookkeeping. Rejects images whose sides are
/// not multiples of the model stride.
PredictionPack predict(const ModelParams& params, const ImageTensor& image);

// Optimizer -----------------------------------------------------------------

struct AdamOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

void adam_update(ModelParams& params, const std::vector<Tensor>& grads, double learning_rate,
                 const AdamOptions& opts = {});

// Checkpoints ----------------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Canonical JSON: format tag, version, architecture, named arrays, Adam state.
std::string checkpoint_json(const ModelParams& params);
ModelParams parse_checkpoint(const std::string& text,
                             const std::optional<ModelConfig>& expected = std::nullopt);

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
/// When expected is set, any architecture difference is an error naming the field.
ModelParams load_checkpoint(const std::filesystem::path& path,
                            const std::optional<ModelConfig>& expected = std::nullopt);

}  // namespace centerface
