#pragma once
//
// Toy modality encoders, the shared gate, class heads, and the optional
// multi-view adapter and bidirectional cross-attention used for the 2.5D
// environment.
//
// Batched convention: features are [n, d] with one row per sample. A 2D
// sample carries N views, passed as N tensors of shape [n, input_dim].
//

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "invjoint/rng.hpp"
#include "invjoint/tensor.hpp"

namespace invjoint {

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

enum class Modality { TwoD, ThreeD, TwoPointFiveD };
const char* modality_name(Modality m);

enum class Activation { Identity, Relu, Tanh };

Tensor activate(const Tensor& x, Activation act);

struct Linear {
    Tensor weight;  // [in, out]
    Tensor bias;    // [out]

    static Linear xavier(std::size_t in, std::size_t out, Rng& rng, double gain = 1.0);
    static Linear identity(std::size_t dim);
    static Linear zeros(std::size_t in, std::size_t out);

    std::size_t in_dim() const { return weight.dim(0); }
    std::size_t out_dim() const { return weight.dim(1); }
    Tensor forward(const Tensor& x) const;
    void collect(const std::string& prefix, NamedParams& out) const;
};

struct Stage {
    Linear affine;
    Activation activation = Activation::Relu;
};

struct EncoderConfig {
    std::size_t input_dim = 16;
    std::size_t hidden_dim = 32;
    std::size_t output_dim = 16;
    std::size_t hidden_layers = 2;
    // Adds an identity-initialised projection input -> output around the
    // stage stack, so output coordinates start out aligned with inputs.
    bool residual = true;
    // Gain of the last stage when residual (small: the encoder starts near the skip path).
    double residual_gain = 0.1;
};

struct ModalityEncoder {
    Modality modality = Modality::ThreeD;
    std::vector<Stage> layers;
    std::optional<Linear> skip;

    std::size_t input_dim() const;
    std::size_t output_dim() const;
    Tensor forward(const Tensor& x) const;
    void collect(const std::string& prefix, NamedParams& out) const;
};

ModalityEncoder make_encoder(Modality modality, const EncoderConfig& cfg, Rng& rng);

// x: [n, input_dim] (or [input_dim]) -> x3: [n, output_dim]
Tensor encode_3d(const ModalityEncoder& encoder, const Tensor& x);

// Multi-view adapter: global MLP over concatenated views blended with a
// cosine-affinity reweighted view sum.
struct MultiViewAdapter {
    Linear f1;    // [N*d, hidden]
    Linear f2;    // [hidden, d]
    Linear proj;  // [d, d]
    double delta = 0.5;

    static MultiViewAdapter make(std::size_t views, std::size_t dim, std::size_t hidden, double delta, Rng& rng);
    std::size_t views() const;
    void collect(const std::string& prefix, NamedParams& out) const;
};

// View weights: softmax over the row means of the N x N cosine affinity
// matrix, per sample -> [n, N].
Tensor view_weights(std::span<const Tensor> per_view);

// F_I = (1 - delta) * F_Global + delta * F_View
Tensor multi_view_aggregate(std::span<const Tensor> per_view, const MultiViewAdapter& adapter, double delta);

struct TwoDEncoding {
    std::vector<Tensor> per_view;  // N x [n, output_dim]
    Tensor x2;                     // [n, output_dim]
};

// Shared per-view encoder; x2 is the view mean unless an adapter is given.
TwoDEncoding encode_2d(const ModalityEncoder& encoder, std::span<const Tensor> views,
                       const MultiViewAdapter* adapter = nullptr);

// The gate G: one soft mask shared by both modalities.
struct GateMask {
    Tensor mask_logits;  // [d]

    static GateMask constant(std::size_t dim, double logit = 0.0);
    std::size_t dim() const { return mask_logits.numel(); }
    std::vector<double> weights() const;  // sigmoid(mask_logits)
    void collect(const std::string& prefix, NamedParams& out) const;
};

// z = sigmoid(mask_logits) * x. With update_gate == false the mask enters as
// a constant: gradients flow through to x but never reach mask_logits.
Tensor gate_apply(const GateMask& gate, const Tensor& x, bool update_gate = true);

enum class HeadMode { Cosine, Affine };

struct ClassHead {
    Tensor prototypes;  // [C, d]
    Tensor bias;        // [C], affine mode only
    HeadMode mode = HeadMode::Cosine;

    static ClassHead make(HeadMode mode, std::size_t classes, std::size_t dim, Rng& rng);
    std::size_t classes() const { return prototypes.dim(0); }
    std::size_t dim() const { return prototypes.dim(1); }
    void collect(const std::string& prefix, NamedParams& out) const;
};

// Cosine mode: cosine similarity to each prototype. Affine: x P^T + b.
Tensor classify(const Tensor& features, const ClassHead& head);
// Per-view logits averaged (2D branch).
Tensor classify_views(std::span<const Tensor> per_view, const ClassHead& head);

// Bidirectional cross-attention producing the 2.5D feature.
struct CrossAttention {
    Tensor wq, wk, wv;     // query from 3D, key/value from 2D
    Tensor wq_r, wk_r, wv_r;  // reverse direction

    static CrossAttention identity(std::size_t dim);
    static CrossAttention xavier(std::size_t dim, Rng& rng);
    std::size_t dim() const { return wq.dim(0); }
    void collect(const std::string& prefix, NamedParams& out) const;
};

// Single sample: tokens2 [N2, d], tokens3 [N3, d] -> [d].
//   forward = softmax(Q3 K2^T) V2, reverse = softmax(Q2 K3^T) V3,
//   result  = (mean_rows(forward) + mean_rows(reverse)) / 2
Tensor cross_attention_tokens(const Tensor& tokens2, const Tensor& tokens3, const CrossAttention& attn);
// Batched: x2 [n, d], x3 [n, d] (one token per modality per sample) -> [n, d].
Tensor cross_attention_fuse(const Tensor& x2, const Tensor& x3, const CrossAttention& attn);

}  // namespace invjoint
