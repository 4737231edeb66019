#include "invjoint/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "invjoint/errors.hpp"
#include "invjoint/mining.hpp"
#include "invjoint/rng.hpp"

namespace invjoint {

namespace {

enum Stream : std::uint64_t { kModel = 1, kShuffle = 0x5f00, kAugment = 0xa600 };

ProbMatrix probabilities(const Tensor& logits) {
    const Tensor p = softmax(logits.detach());
    return {logits.dim(0), logits.dim(1), {p.data().begin(), p.data().end()}};
}

std::vector<std::size_t> sorted_union(std::vector<std::size_t> a, const std::vector<std::size_t>& b) {
    a.insert(a.end(), b.begin(), b.end());
    std::sort(a.begin(), a.end());
    a.erase(std::unique(a.begin(), a.end()), a.end());
    return a;
}

// Step 1 over the whole training split.
SelectionReport mine(const InvJointModel& model, const BatchTensors& all, const RunConfig& cfg, int epoch) {
    const Forward f = forward(model, all);
    const Tensor l2 = training_logits2(model, f);
    const Tensor ce2 = cross_entropy(l2, all.labels);
    const Tensor ce3 = cross_entropy(f.logits3, all.labels);
    const std::vector<double> losses2(ce2.data().begin(), ce2.data().end());
    const std::vector<double> losses3(ce3.data().begin(), ce3.data().end());
    auto d2 = select_modality_hard(losses2, cfg.mining.p2);
    auto d3 = select_modality_hard(losses3, cfg.mining.p3);
    const auto candidates = sorted_union(d2, d3);
    const std::size_t k = cfg.mining.k ? cfg.mining.k : default_topk(model.dims.classes);
    SelectionReport rep =
        select_joint_hard(candidates, probabilities(l2), probabilities(f.logits3), all.labels, cfg.mining.rho, k);
    rep.d2 = std::move(d2);
    rep.d3 = std::move(d3);
    rep.p2 = cfg.mining.p2;
    rep.p3 = cfg.mining.p3;
    rep.epoch = epoch;
    return rep;
}

Tensor stack_rows(const std::vector<Tensor>& parts) { return parts.size() == 1 ? parts[0] : concat(parts, 0); }

std::vector<std::vector<double>> snapshot(const ParamGroup& g) {
    std::vector<std::vector<double>> out;
    for (const auto& p : g.parameters) out.emplace_back(p.data().begin(), p.data().end());
    return out;
}

bool any_grad(const ParamGroup& g) {
    for (const auto& p : g.parameters) {
        if (!p.has_grad()) continue;
        for (double v : p.grad())
            if (v != 0.0) return true;
    }
    return false;
}

double mean_or_zero(double sum, std::size_t n) { return n ? sum / static_cast<double>(n) : 0.0; }

}  // namespace

std::vector<ContrastiveBatch> build_environments(const InvJointModel& model, const Forward& fwd,
                                                 const BatchTensors& batch, std::span<const std::size_t> anchor_rows,
                                                 std::span<const std::size_t> sample_ids,
                                                 std::span<const Sample> samples, const RunConfig& cfg, int epoch) {
    const std::size_t n = batch.labels.size();
    const std::size_t views = fwd.enc2.per_view.size();
    std::vector<ContrastiveBatch> envs;

    // 2D: every view of every row; the other views of an anchor are its positives.
    {
        std::vector<Tensor> parts;
        ContrastiveBatch b;
        for (std::size_t v = 0; v < views; ++v) {
            parts.push_back(fwd.enc2.per_view[v].detach());
            b.labels.insert(b.labels.end(), batch.labels.begin(), batch.labels.end());
            for (std::size_t r : anchor_rows) b.anchors.push_back(v * n + r);
        }
        b.features = gate_apply(model.gate, stack_rows(parts), true);
        envs.push_back(std::move(b));
    }

    // 3D: batch rows plus one augmented copy per anchor.
    std::vector<double> aug;
    const std::size_t in_dim = batch.x3.dim(1);
    const std::uint64_t epoch_seed = mix_seed(cfg.seed, kAugment + static_cast<std::uint64_t>(epoch));
    for (std::size_t r : anchor_rows) {
        const auto a = augment_3d(samples[sample_ids[r]].x3, cfg.augment, mix_seed(epoch_seed, sample_ids[r]));
        aug.insert(aug.end(), a.begin(), a.end());
    }
    const Tensor aug_x3 = encode_3d(model.enc3, Tensor::matrix(anchor_rows.size(), in_dim, std::move(aug))).detach();
    {
        ContrastiveBatch b;
        b.labels = batch.labels;
        for (std::size_t r : anchor_rows) b.labels.push_back(batch.labels[r]);
        b.anchors.assign(anchor_rows.begin(), anchor_rows.end());
        b.features = gate_apply(model.gate, concat({fwd.x3.detach(), aug_x3}, 0), true);
        envs.push_back(std::move(b));
    }

    // 2.5D: cross-attention blend of the batch, plus the anchors fused with their augmented 3D copy.
    if (cfg.irm.include_25d) {
        if (!model.attn) throw ContractError("2.5D environment requested but the model has no cross-attention");
        const Tensor x2 = fwd.enc2.x2.detach();
        const Tensor fused = cross_attention_fuse(x2, fwd.x3.detach(), *model.attn);
        const Tensor fused_aug = cross_attention_fuse(rows(x2, anchor_rows), aug_x3, *model.attn);
        ContrastiveBatch b;
        b.labels = batch.labels;
        for (std::size_t r : anchor_rows) b.labels.push_back(batch.labels[r]);
        b.anchors.assign(anchor_rows.begin(), anchor_rows.end());
        b.features = gate_apply(model.gate, concat({fused, fused_aug}, 0), true);
        envs.push_back(std::move(b));
    }
    return envs;
}

EvalRecord evaluate(const InvJointModel& model, std::span<const Sample> samples, const FusionConfig& fusion) {
    if (samples.empty()) throw ContractError("cannot evaluate an empty split");
    if (samples[0].x3.size() != model.dims.input_dim)
        throw ContractError("dataset feature dim " + std::to_string(samples[0].x3.size()) +
                            " does not match the model's " + std::to_string(model.dims.input_dim));
    const BranchLogits bl = branch_logits(model, samples);
    std::vector<std::size_t> labels;
    for (const auto& s : samples) {
        if (s.label >= model.dims.classes) throw ContractError("label outside the model's class range");
        labels.push_back(s.label);
    }
    return evaluate_logits(bl.logits2, bl.logits3, labels, model.dims.classes, fusion);
}

TrainResult train(const RunConfig& cfg_in, const Dataset& data, const TrainOptions& opts) {
    TrainResult res;
    res.config = cfg_in;
    res.config.generator = data.config;
    const RunConfig& cfg = res.config;
    cfg.validate();
    if (data.train.empty() || data.test.empty()) throw ContractError("dataset has an empty split");
    if (!opts.train_2d && !opts.train_3d) throw ContractError("at least one branch must be trained");

    const ModelDims dims = ModelDims::of(data.config);
    res.model = InvJointModel::init(cfg.model, dims, cfg.irm.include_25d, mix_seed(cfg.seed, kModel));
    InvJointModel& model = res.model;
    Sgd opt(model.param_groups());
    res.optim = {cfg.optim.base_lr, cfg.optim.weight_decay, cfg.optim.momentum, 0, cfg.optim.epochs};

    const auto& train_set = data.train;
    const std::size_t n = train_set.size();
    const BatchTensors all = batch_tensors(train_set);
    const bool step2 = cfg.flags.enable_step2;
    const bool align = cfg.flags.enable_align && cfg.alpha != 0.0;
    std::vector<std::size_t> hard;  // persists between mining epochs

    for (int epoch = 0; epoch < cfg.optim.epochs; ++epoch) {
        res.optim.epoch = epoch;
        MetricsRecord rec;
        rec.epoch = epoch;
        rec.lr = res.optim.learning_rate();

        try {
            if (cfg.flags.enable_step1 && mining_schedule(epoch, cfg.mining.warmup, cfg.mining.period)) {
                rec.selection = mine(model, all, cfg, epoch);
                hard = rec.selection->d_joint;
            }
        } catch (const NumericError& e) {
            throw NumericError("epoch " + std::to_string(epoch) + " mining: " + e.what());
        }

        std::vector<char> anchor(n, 0);
        if (opts.fixed_hard_set) {
            for (std::size_t i : *opts.fixed_hard_set) {
                if (i >= n) throw ContractError("fixed hard set index out of range");
                anchor[i] = 1;
            }
        } else if (cfg.flags.all_samples_invariance) {
            std::fill(anchor.begin(), anchor.end(), 1);
        } else {
            for (std::size_t i : hard) anchor[i] = 1;
        }
        for (std::size_t i = 0; i < n; ++i) {
            if (!anchor[i]) continue;
            ++rec.hard_set_size;
            if (train_set[i].planted_hard) ++rec.hard_set_planted;
        }

        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle(mix_seed(cfg.seed, kShuffle + static_cast<std::uint64_t>(epoch)));
        for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);

        double sum_total = 0, sum_ce = 0, sum_inv = 0, sum_align = 0;
        std::size_t n_ce = 0;
        for (std::size_t start = 0, b = 0; start < n; start += cfg.optim.batch_size, ++b) {
            const std::size_t stop = std::min(n, start + cfg.optim.batch_size);
            const std::vector<std::size_t> ids(order.begin() + static_cast<std::ptrdiff_t>(start),
                                               order.begin() + static_cast<std::ptrdiff_t>(stop));
            try {
                const BatchTensors bt = batch_tensors(train_set, ids);
                const Forward fwd = forward(model, bt);
                ObjectiveInputs in;
                if (opts.train_2d) in.ce_2d = cross_entropy(training_logits2(model, fwd), bt.labels);
                if (opts.train_3d) in.ce_3d = cross_entropy(fwd.logits3, bt.labels);
                std::vector<std::size_t> anchor_rows;
                for (std::size_t r = 0; r < ids.size(); ++r)
                    if (anchor[ids[r]]) anchor_rows.push_back(r);
                if (step2 && !anchor_rows.empty())
                    in.environments = build_environments(model, fwd, bt, anchor_rows, ids, train_set, cfg, epoch);
                if (align && ids.size() >= 2) {
                    in.z2 = gate_apply(model.gate, fwd.enc2.x2, false);
                    in.z3 = gate_apply(model.gate, fwd.x3, false);
                }

                ObjectiveResult obj;
                try {
                    obj = total_objective(in, cfg.objective());
                } catch (const DegenerateBatchError&) {
                    in.environments.clear();
                    obj = total_objective(in, cfg.objective());
                }
                if (!std::isfinite(obj.total.item())) throw NumericError("non-finite loss");

                StepAudit audit;
                std::vector<std::vector<std::vector<double>>> before;
                if (opts.audit) {
                    audit.epoch = epoch;
                    audit.batch = b;
                    audit.active_groups = obj.plan.active_groups();
                    std::vector<std::pair<std::string, Tensor>> terms;
                    if (obj.ce.defined()) terms.emplace_back("ce", obj.ce);
                    if (obj.inv) terms.emplace_back("inv", obj.inv->total);
                    if (obj.align.defined()) terms.emplace_back("align", obj.align);
                    for (const auto& [name, term] : terms) {
                        opt.zero_grad();
                        backward(term);
                        std::vector<std::string> reached;
                        for (const auto& g : opt.groups())
                            if (any_grad(g)) reached.push_back(g.name);
                        audit.term_grads.emplace_back(name, std::move(reached));
                    }
                    for (const auto& g : opt.groups()) before.push_back(snapshot(g));
                }

                opt.zero_grad();
                backward(obj.total);
                const auto active = obj.plan.active_groups();
                for (auto& g : opt.groups())
                    g.frozen = std::find(active.begin(), active.end(), g.name) == active.end();
                opt.step(res.optim);

                if (opts.audit) {
                    for (std::size_t gi = 0; gi < opt.groups().size(); ++gi)
                        if (snapshot(opt.groups()[gi]) != before[gi]) audit.changed_groups.push_back(opt.groups()[gi].name);
                    res.audit.push_back(std::move(audit));
                }

                ++rec.steps;
                sum_total += obj.total.item();
                if (obj.ce.defined()) {
                    sum_ce += obj.ce.item();
                    ++n_ce;
                }
                if (obj.inv) {
                    sum_inv += obj.inv->total.item();
                    ++rec.inv_steps;
                }
                if (obj.align.defined()) {
                    sum_align += obj.align.item();
                    ++rec.align_steps;
                }
            } catch (const NumericError& e) {
                throw NumericError("epoch " + std::to_string(epoch) + ", batch " + std::to_string(b) + ": " + e.what());
            }
        }
        rec.loss_total = mean_or_zero(sum_total, rec.steps);
        rec.loss_ce = mean_or_zero(sum_ce, n_ce);
        rec.loss_inv = mean_or_zero(sum_inv, rec.inv_steps);
        rec.loss_align = mean_or_zero(sum_align, rec.align_steps);

        EvalRecord ev;
        try {
            ev = evaluate(model, data.test, cfg.fusion());
        } catch (const NumericError& e) {
            throw NumericError("epoch " + std::to_string(epoch) + " evaluation: " + e.what());
        }
        rec.acc2 = ev.acc2;
        rec.acc3 = ev.acc3;
        rec.acc_joint = ev.acc_joint;
        rec.c_err = ev.c_err;
        rec.confusion2 = ev.confusion2;
        rec.confusion3 = ev.confusion3;
        rec.confusion_joint = ev.confusion_joint;
        rec.gate_weights = model.gate.weights();
        if (opts.on_epoch) opts.on_epoch(rec);
        res.metrics.push_back(std::move(rec));
        if (epoch + 1 == cfg.optim.epochs) res.final_eval = ev;
    }
    res.optim.epoch = cfg.optim.epochs;
    res.velocity = opt.momentum_buffers();
    for (auto& g : opt.groups()) g.frozen = false;
    return res;
}

}  // namespace invjoint
