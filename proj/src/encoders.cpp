#include "invjoint/encoders.hpp"

#include <cmath>

#include "invjoint/errors.hpp"

namespace invjoint {

const char* modality_name(Modality m) {
    switch (m) {
        case Modality::TwoD: return "2D";
        case Modality::ThreeD: return "3D";
        case Modality::TwoPointFiveD: return "2.5D";
    }
    return "?";
}

Tensor activate(const Tensor& x, Activation act) {
    switch (act) {
        case Activation::Identity: return x;
        case Activation::Relu: return relu(x);
        case Activation::Tanh: return tanh(x);
    }
    return x;
}

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

Linear Linear::xavier(std::size_t in, std::size_t out, Rng& rng, double gain) {
    const double a = gain * std::sqrt(6.0 / static_cast<double>(in + out));
    std::vector<double> w(in * out);
    for (auto& v : w) v = rng.uniform(-a, a);
    return {Tensor::from({in, out}, std::move(w), true), Tensor::zeros({out}, true)};
}

Linear Linear::identity(std::size_t dim) {
    std::vector<double> w(dim * dim, 0.0);
    for (std::size_t i = 0; i < dim; ++i) w[i * dim + i] = 1.0;
    return {Tensor::from({dim, dim}, std::move(w), true), Tensor::zeros({dim}, true)};
}

Linear Linear::zeros(std::size_t in, std::size_t out) {
    return {Tensor::zeros({in, out}, true), Tensor::zeros({out}, true)};
}

Tensor Linear::forward(const Tensor& x) const {
    const std::size_t in = in_dim();
    if (x.rank() == 1) {
        if (x.dim(0) != in)
            throw DimensionError("linear layer expects input dim " + std::to_string(in) + ", got " +
                                 shape_str(x.shape()));
        return reshape(forward(reshape(x, {1, in})), {out_dim()});
    }
    if (x.rank() != 2 || x.dim(1) != in)
        throw DimensionError("linear layer expects [n," + std::to_string(in) + "], got " + shape_str(x.shape()));
    return add(matmul(x, weight), bias);
}

void Linear::collect(const std::string& prefix, NamedParams& out) const {
    out.emplace_back(prefix + ".weight", weight);
    out.emplace_back(prefix + ".bias", bias);
}

// ---------------------------------------------------------------------------
// Encoders
// ---------------------------------------------------------------------------

std::size_t ModalityEncoder::input_dim() const {
    if (!layers.empty()) return layers.front().affine.in_dim();
    if (skip) return skip->in_dim();
    throw ContractError("encoder has no layers");
}

std::size_t ModalityEncoder::output_dim() const {
    if (!layers.empty()) return layers.back().affine.out_dim();
    if (skip) return skip->out_dim();
    throw ContractError("encoder has no layers");
}

Tensor ModalityEncoder::forward(const Tensor& x) const {
    const std::size_t got = x.rank() == 0 ? 0 : x.shape().back();
    if (got != input_dim())
        throw ContractError(std::string(modality_name(modality)) + " encoder expects input dim " +
                            std::to_string(input_dim()) + ", got " + shape_str(x.shape()));
    Tensor h = x;
    for (const auto& stage : layers) h = activate(stage.affine.forward(h), stage.activation);
    if (skip) h = layers.empty() ? skip->forward(x) : add(h, skip->forward(x));
    return h;
}

void ModalityEncoder::collect(const std::string& prefix, NamedParams& out) const {
    for (std::size_t i = 0; i < layers.size(); ++i) layers[i].affine.collect(prefix + ".layer" + std::to_string(i), out);
    if (skip) skip->collect(prefix + ".skip", out);
}

ModalityEncoder make_encoder(Modality modality, const EncoderConfig& cfg, Rng& rng) {
    if (cfg.input_dim == 0 || cfg.output_dim == 0 || cfg.hidden_dim == 0)
        throw ContractError("encoder dimensions must be positive");
    ModalityEncoder enc;
    enc.modality = modality;
    std::size_t in = cfg.input_dim;
    for (std::size_t i = 0; i < cfg.hidden_layers; ++i) {
        enc.layers.push_back({Linear::xavier(in, cfg.hidden_dim, rng), Activation::Relu});
        in = cfg.hidden_dim;
    }
    const double gain = cfg.residual ? cfg.residual_gain : 1.0;
    enc.layers.push_back({Linear::xavier(in, cfg.output_dim, rng, gain), Activation::Identity});
    if (cfg.residual) {
        enc.skip = cfg.input_dim == cfg.output_dim ? Linear::identity(cfg.input_dim)
                                                   : Linear::xavier(cfg.input_dim, cfg.output_dim, rng);
    }
    return enc;
}

Tensor encode_3d(const ModalityEncoder& encoder, const Tensor& x) { return encoder.forward(x); }

// ---------------------------------------------------------------------------
// Multi-view
// ---------------------------------------------------------------------------

MultiViewAdapter MultiViewAdapter::make(std::size_t views, std::size_t dim, std::size_t hidden, double delta,
                                        Rng& rng) {
    return {Linear::xavier(views * dim, hidden, rng), Linear::xavier(hidden, dim, rng), Linear::identity(dim), delta};
}

std::size_t MultiViewAdapter::views() const { return f1.in_dim() / proj.in_dim(); }

void MultiViewAdapter::collect(const std::string& prefix, NamedParams& out) const {
    f1.collect(prefix + ".f1", out);
    f2.collect(prefix + ".f2", out);
    proj.collect(prefix + ".proj", out);
}

Tensor view_weights(std::span<const Tensor> per_view) {
    const std::size_t n_views = per_view.size();
    if (n_views == 0) throw ContractError("view set is empty");
    std::vector<Tensor> row_means;
    for (std::size_t i = 0; i < n_views; ++i) {
        std::vector<Tensor> affinities;
        for (std::size_t j = 0; j < n_views; ++j) affinities.push_back(cosine_similarity(per_view[i], per_view[j]));
        row_means.push_back(mean_of(affinities));
    }
    // row_means: N x [n] -> [n, N]
    const std::size_t n = per_view[0].rank() == 2 ? per_view[0].dim(0) : 1;
    std::vector<Tensor> cols;
    for (auto& m : row_means) cols.push_back(reshape(m, {n, 1}));
    return softmax(concat(cols, 1));
}

Tensor multi_view_aggregate(std::span<const Tensor> per_view, const MultiViewAdapter& adapter, double delta) {
    if (!(delta >= 0.0 && delta <= 1.0)) throw ContractError("delta must lie in [0,1]");
    if (per_view.empty()) throw ContractError("view set is empty");
    if (per_view.size() != adapter.views())
        throw ContractError("adapter configured for " + std::to_string(adapter.views()) + " views, got " +
                            std::to_string(per_view.size()));
    std::vector<Tensor> views(per_view.begin(), per_view.end());
    for (auto& v : views)
        if (v.rank() == 1) v = reshape(v, {1, v.dim(0)});
    const Tensor global = adapter.f2.forward(relu(adapter.f1.forward(concat(views, 1))));
    const Tensor w = view_weights(views);
    Tensor weighted;
    for (std::size_t i = 0; i < views.size(); ++i) {
        Tensor term = scale_rows(adapter.proj.forward(views[i]), column(w, i));
        weighted = weighted.defined() ? add(weighted, term) : term;
    }
    const Tensor view_feature = relu(weighted);
    if (delta == 0.0) return global;
    if (delta == 1.0) return view_feature;
    return add(scale(global, 1.0 - delta), scale(view_feature, delta));
}

TwoDEncoding encode_2d(const ModalityEncoder& encoder, std::span<const Tensor> views,
                       const MultiViewAdapter* adapter) {
    if (views.empty()) throw ContractError("view set is empty");
    TwoDEncoding out;
    for (const auto& v : views) {
        if (v.shape() != views[0].shape()) throw ContractError("views must share dimensionality");
        out.per_view.push_back(encoder.forward(v));
    }
    out.x2 = adapter ? multi_view_aggregate(out.per_view, *adapter, adapter->delta) : mean_of(out.per_view);
    return out;
}

// ---------------------------------------------------------------------------
// Gate
// ---------------------------------------------------------------------------

GateMask GateMask::constant(std::size_t dim, double logit) { return {Tensor::full({dim}, logit, true)}; }

std::vector<double> GateMask::weights() const {
    std::vector<double> w;
    for (double l : mask_logits.data()) w.push_back(1.0 / (1.0 + std::exp(-l)));
    return w;
}

void GateMask::collect(const std::string& prefix, NamedParams& out) const {
    out.emplace_back(prefix + ".mask_logits", mask_logits);
}

Tensor gate_apply(const GateMask& gate, const Tensor& x, bool update_gate) {
    if (x.rank() == 0 || x.shape().back() != gate.dim())
        throw ContractError("gate of dim " + std::to_string(gate.dim()) + " applied to " + shape_str(x.shape()));
    const Tensor logits = update_gate ? gate.mask_logits : gate.mask_logits.detach();
    return mul(x, sigmoid(logits));
}

// ---------------------------------------------------------------------------
// Heads
// ---------------------------------------------------------------------------

ClassHead ClassHead::make(HeadMode mode, std::size_t classes, std::size_t dim, Rng& rng) {
    std::vector<double> p(classes * dim);
    const double s = mode == HeadMode::Cosine ? 1.0 : std::sqrt(1.0 / static_cast<double>(dim));
    for (auto& v : p) v = s * rng.normal();
    ClassHead h;
    h.prototypes = Tensor::from({classes, dim}, std::move(p), true);
    h.mode = mode;
    if (mode == HeadMode::Affine) h.bias = Tensor::zeros({classes}, true);
    return h;
}

void ClassHead::collect(const std::string& prefix, NamedParams& out) const {
    out.emplace_back(prefix + ".prototypes", prototypes);
    if (bias.defined()) out.emplace_back(prefix + ".bias", bias);
}

Tensor classify(const Tensor& features, const ClassHead& head) {
    Tensor x = features.rank() == 1 ? reshape(features, {1, features.dim(0)}) : features;
    if (x.rank() != 2 || x.dim(1) != head.dim())
        throw ContractError("head expects feature dim " + std::to_string(head.dim()) + ", got " +
                            shape_str(features.shape()));
    Tensor logits = head.mode == HeadMode::Cosine ? cosine_matrix(x, head.prototypes)
                                                  : add(matmul(x, transpose(head.prototypes)), head.bias);
    return features.rank() == 1 ? reshape(logits, {head.classes()}) : logits;
}

Tensor classify_views(std::span<const Tensor> per_view, const ClassHead& head) {
    if (per_view.empty()) throw ContractError("view set is empty");
    std::vector<Tensor> logits;
    for (const auto& v : per_view) logits.push_back(classify(v, head));
    return mean_of(logits);
}

// ---------------------------------------------------------------------------
// Cross-attention
// ---------------------------------------------------------------------------

CrossAttention CrossAttention::identity(std::size_t dim) {
    auto eye = [dim] { return Linear::identity(dim).weight; };
    return {eye(), eye(), eye(), eye(), eye(), eye()};
}

CrossAttention CrossAttention::xavier(std::size_t dim, Rng& rng) {
    auto w = [&] { return Linear::xavier(dim, dim, rng).weight; };
    CrossAttention a;
    a.wq = w();
    a.wk = w();
    a.wv = w();
    a.wq_r = w();
    a.wk_r = w();
    a.wv_r = w();
    return a;
}

void CrossAttention::collect(const std::string& prefix, NamedParams& out) const {
    out.emplace_back(prefix + ".wq", wq);
    out.emplace_back(prefix + ".wk", wk);
    out.emplace_back(prefix + ".wv", wv);
    out.emplace_back(prefix + ".wq_r", wq_r);
    out.emplace_back(prefix + ".wk_r", wk_r);
    out.emplace_back(prefix + ".wv_r", wv_r);
}

namespace {
Tensor attend(const Tensor& queries, const Tensor& kv, const Tensor& wq, const Tensor& wk, const Tensor& wv) {
    const Tensor q = matmul(queries, wq);
    const Tensor k = matmul(kv, wk);
    const Tensor v = matmul(kv, wv);
    return matmul(softmax(matmul(q, transpose(k))), v);
}
}  // namespace

Tensor cross_attention_tokens(const Tensor& tokens2, const Tensor& tokens3, const CrossAttention& attn) {
    const std::size_t d = attn.dim();
    if (tokens2.rank() != 2 || tokens3.rank() != 2 || tokens2.dim(1) != d || tokens3.dim(1) != d)
        throw ContractError("cross-attention expects token matrices of width " + std::to_string(d));
    const Tensor fwd = attend(tokens3, tokens2, attn.wq, attn.wk, attn.wv);
    const Tensor rev = attend(tokens2, tokens3, attn.wq_r, attn.wk_r, attn.wv_r);
    const auto col_mean = [](const Tensor& t) {
        return scale(matmul(Tensor::full({1, t.dim(0)}, 1.0), t), 1.0 / static_cast<double>(t.dim(0)));
    };
    return reshape(scale(add(col_mean(fwd), col_mean(rev)), 0.5), {d});
}

Tensor cross_attention_fuse(const Tensor& x2, const Tensor& x3, const CrossAttention& attn) {
    if (x2.shape() != x3.shape() || x2.rank() != 2 || x2.dim(1) != attn.dim())
        throw ContractError("cross_attention_fuse: shapes " + shape_str(x2.shape()) + " and " +
                            shape_str(x3.shape()));
    std::vector<Tensor> out;
    for (std::size_t i = 0; i < x2.dim(0); ++i) {
        const std::size_t idx[] = {i};
        out.push_back(reshape(cross_attention_tokens(rows(x2, idx), rows(x3, idx), attn), {1, attn.dim()}));
    }
    return concat(out, 0);
}

}  // namespace invjoint
