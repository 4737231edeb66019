#include "invjoint/model.hpp"

#include "invjoint/errors.hpp"
#include "invjoint/losses.hpp"

namespace invjoint {

namespace {

enum Stream : std::uint64_t { kEnc2 = 11, kEnc3, kHead2, kHead3, kAdapter, kAttn };

EncoderConfig encoder_config(const ModelConfig& cfg, std::size_t input_dim) {
    return {input_dim, cfg.hidden_dim, cfg.output_dim, cfg.hidden_layers, cfg.residual, cfg.residual_gain};
}

}  // namespace

InvJointModel InvJointModel::init(const ModelConfig& cfg, const ModelDims& dims, bool with_attention,
                                  std::uint64_t seed) {
    if (dims.input_dim == 0 || dims.classes < 2 || dims.views == 0) throw ContractError("invalid model dimensions");
    InvJointModel m;
    m.dims = dims;
    m.logit_scale_2d = cfg.logit_scale_2d;
    const auto ecfg = encoder_config(cfg, dims.input_dim);
    Rng r2(mix_seed(seed, kEnc2)), r3(mix_seed(seed, kEnc3));
    m.enc2 = make_encoder(Modality::TwoD, ecfg, r2);
    m.enc3 = make_encoder(Modality::ThreeD, ecfg, r3);
    Rng h2(mix_seed(seed, kHead2)), h3(mix_seed(seed, kHead3));
    m.head2 = ClassHead::make(HeadMode::Cosine, dims.classes, cfg.output_dim, h2);
    m.head3 = ClassHead::make(HeadMode::Affine, dims.classes, cfg.output_dim, h3);
    m.gate = GateMask::constant(cfg.output_dim, cfg.gate_init_logit);
    if (cfg.multi_view_adapter) {
        Rng ra(mix_seed(seed, kAdapter));
        m.adapter = MultiViewAdapter::make(dims.views, cfg.output_dim, cfg.adapter_hidden, cfg.adapter_delta, ra);
    }
    if (with_attention) {
        Rng rt(mix_seed(seed, kAttn));
        m.attn = CrossAttention::xavier(cfg.output_dim, rt);
    }
    return m;
}

NamedParams InvJointModel::named_parameters() const {
    NamedParams out;
    enc2.collect("enc2", out);
    head2.collect("head2", out);
    if (adapter) adapter->collect("adapter", out);
    enc3.collect("enc3", out);
    head3.collect("head3", out);
    gate.collect("gate", out);
    if (attn) attn->collect("attn", out);
    return out;
}

std::vector<ParamGroup> InvJointModel::param_groups() const {
    auto params = [](const NamedParams& np) {
        std::vector<Tensor> v;
        for (const auto& [name, t] : np) v.push_back(t);
        return v;
    };
    NamedParams e2, e3, g;
    enc2.collect("enc2", e2);
    head2.collect("head2", e2);
    if (adapter) adapter->collect("adapter", e2);
    enc3.collect("enc3", e3);
    head3.collect("head3", e3);
    gate.collect("gate", g);
    if (attn) attn->collect("attn", g);
    return {{kGroupE2D, params(e2)}, {kGroupE3D, params(e3)}, {kGroupGate, params(g)}};
}

BatchTensors batch_tensors(std::span<const Sample> samples, std::span<const std::size_t> indices) {
    if (indices.empty()) throw ContractError("empty batch");
    const std::size_t n = indices.size();
    const std::size_t d = samples[indices[0]].x3.size();
    const std::size_t views = samples[indices[0]].views.size();
    std::vector<double> x3(n * d);
    std::vector<std::vector<double>> vs(views, std::vector<double>(n * d));
    BatchTensors b;
    for (std::size_t r = 0; r < n; ++r) {
        const Sample& s = samples[indices[r]];
        if (s.x3.size() != d || s.views.size() != views) throw DimensionError("samples in a batch differ in shape");
        std::copy(s.x3.begin(), s.x3.end(), x3.begin() + static_cast<std::ptrdiff_t>(r * d));
        for (std::size_t v = 0; v < views; ++v) {
            if (s.views[v].size() != d) throw DimensionError("view dimension differs from the 3D feature");
            std::copy(s.views[v].begin(), s.views[v].end(), vs[v].begin() + static_cast<std::ptrdiff_t>(r * d));
        }
        b.labels.push_back(s.label);
    }
    b.x3 = Tensor::matrix(n, d, std::move(x3));
    for (auto& v : vs) b.views.push_back(Tensor::matrix(n, d, std::move(v)));
    return b;
}

BatchTensors batch_tensors(std::span<const Sample> samples) {
    std::vector<std::size_t> idx(samples.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return batch_tensors(samples, idx);
}

Forward forward(const InvJointModel& model, const BatchTensors& batch) {
    if (batch.x3.dim(1) != model.dims.input_dim)
        throw ContractError("model expects input dim " + std::to_string(model.dims.input_dim) + ", got " +
                            std::to_string(batch.x3.dim(1)));
    if (batch.views.size() != model.dims.views && model.adapter)
        throw ContractError("multi-view adapter expects " + std::to_string(model.dims.views) + " views");
    Forward f;
    f.enc2 = encode_2d(model.enc2, batch.views, model.adapter ? &*model.adapter : nullptr);
    f.x3 = encode_3d(model.enc3, batch.x3);
    f.logits2 = model.adapter ? classify(f.enc2.x2, model.head2) : classify_views(f.enc2.per_view, model.head2);
    f.logits3 = classify(f.x3, model.head3);
    return f;
}

Tensor training_logits2(const InvJointModel& model, const Forward& fwd) {
    return scale(fwd.logits2, model.logit_scale_2d);
}

BranchLogits branch_logits(const InvJointModel& model, std::span<const Sample> samples) {
    BranchLogits out;
    out.classes = model.dims.classes;
    if (samples.empty()) return out;
    const auto f = forward(model, batch_tensors(samples));
    out.logits2.assign(f.logits2.data().begin(), f.logits2.data().end());
    out.logits3.assign(f.logits3.data().begin(), f.logits3.data().end());
    return out;
}

}  // namespace invjoint
