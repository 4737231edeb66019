#pragma once
//
// The two-branch model trained by the harness: per-modality encoders and
// heads, the shared gate, and the optional multi-view adapter and
// cross-attention block.
//

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "invjoint/config.hpp"
#include "invjoint/encoders.hpp"
#include "invjoint/optim.hpp"
#include "invjoint/synthetic.hpp"

namespace invjoint {

struct ModelDims {
    std::size_t input_dim = 16;
    std::size_t classes = 10;
    std::size_t views = 4;

    static ModelDims of(const GeneratorConfig& g) { return {g.feature_dim(), g.classes, g.views}; }
    bool operator==(const ModelDims&) const = default;
};

struct InvJointModel {
    ModelDims dims;
    double logit_scale_2d = 10.0;
    ModalityEncoder enc2, enc3;
    ClassHead head2, head3;
    GateMask gate;
    std::optional<MultiViewAdapter> adapter;
    std::optional<CrossAttention> attn;

    // Each component draws from its own seed stream, so toggling one part
    // never changes the initialisation of another.
    static InvJointModel init(const ModelConfig& cfg, const ModelDims& dims, bool with_attention, std::uint64_t seed);

    // Fixed order: enc2, head2, adapter, enc3, head3, gate, attn.
    NamedParams named_parameters() const;
    // E_2D = enc2 + head2 + adapter; E_3D = enc3 + head3; G = gate + attn.
    std::vector<ParamGroup> param_groups() const;
};

// Batch of samples laid out as tensors.
struct BatchTensors {
    Tensor x3;                  // [n, input_dim]
    std::vector<Tensor> views;  // N x [n, input_dim]
    std::vector<std::size_t> labels;
};

BatchTensors batch_tensors(std::span<const Sample> samples, std::span<const std::size_t> indices);
BatchTensors batch_tensors(std::span<const Sample> samples);

struct Forward {
    TwoDEncoding enc2;  // per-view features and x2
    Tensor x3;
    Tensor logits2;  // raw cosine logits [n, C]
    Tensor logits3;  // [n, C]
};

Forward forward(const InvJointModel& model, const BatchTensors& batch);

// Cosine 2D logits times the model's logit scale, as seen by the CE loss.
Tensor training_logits2(const InvJointModel& model, const Forward& fwd);

// Ungated branch logits over a sample set, row-major [n, C].
struct BranchLogits {
    std::vector<double> logits2, logits3;
    std::size_t classes = 0;
};
BranchLogits branch_logits(const InvJointModel& model, std::span<const Sample> samples);

}  // namespace invjoint
