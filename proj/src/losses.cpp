#include "invjoint/losses.hpp"

#include <algorithm>
#include <cmath>

#include "invjoint/errors.hpp"

namespace invjoint {

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
    if (logits.rank() != 2) throw DimensionError("cross_entropy expects [n,C] logits, got " + shape_str(logits.shape()));
    if (labels.size() != logits.dim(0)) throw ContractError("cross_entropy: label count does not match batch");
    for (auto l : labels)
        if (l >= logits.dim(1))
            throw ContractError("label " + std::to_string(l) + " outside [0," + std::to_string(logits.dim(1)) + ")");
    return neg(pick(log_softmax(logits), labels));
}

// ---------------------------------------------------------------------------
// Supervised InfoNCE
// ---------------------------------------------------------------------------

void ContrastiveBatch::validate() const {
    if (!features.defined() || features.rank() != 2)
        throw DimensionError("contrastive features must be [m,d]");
    if (labels.size() != features.dim(0)) throw ContractError("contrastive batch: one label per row required");
    if (anchors.empty()) throw DegenerateBatchError("contrastive batch has no anchors");
    for (auto a : anchors)
        if (a >= labels.size()) throw ContractError("anchor index out of range");
}

namespace {

struct AnchorSplit {
    std::size_t anchor;
    std::vector<std::size_t> positives;  // flat indices into the [m,m] matrix
    std::vector<std::size_t> negatives;
};

std::vector<AnchorSplit> split_anchors(const ContrastiveBatch& batch, ContrastiveStats* stats) {
    batch.validate();
    const std::size_t m = batch.labels.size();
    std::vector<AnchorSplit> out;
    ContrastiveStats st;
    for (auto a : batch.anchors) {
        AnchorSplit s{a, {}, {}};
        for (std::size_t j = 0; j < m; ++j) {
            if (j == a) continue;
            (batch.labels[j] == batch.labels[a] ? s.positives : s.negatives).push_back(a * m + j);
        }
        if (s.positives.empty()) {
            ++st.anchors_skipped;
            continue;
        }
        ++st.anchors_used;
        st.pairs += s.positives.size();
        out.push_back(std::move(s));
    }
    if (stats) *stats = st;
    if (out.empty()) throw DegenerateBatchError("no anchor in the contrastive batch has a positive");
    return out;
}

Tensor sum_parts(const std::vector<Tensor>& parts) {
    Tensor acc;
    for (const auto& p : parts) acc = acc.defined() ? add(acc, p) : p;
    return acc.defined() ? acc : Tensor::scalar(0.0);
}

}  // namespace

Tensor sup_infonce(const ContrastiveBatch& batch, const Tensor& theta, ContrastiveStats* stats) {
    if (theta.numel() != 1) throw ContractError("theta must be a single value");
    const auto anchors = split_anchors(batch, stats);
    const Tensor sims = mul(cosine_matrix(batch.features, batch.features), theta);
    std::vector<Tensor> per_anchor;
    std::size_t pairs = 0;
    for (const auto& a : anchors) {
        pairs += a.positives.size();
        if (a.negatives.empty()) continue;  // -log(1) for each pair
        const Tensor lse_neg = logsumexp_last(take(sims, a.negatives));
        const Tensor pos = take(sims, a.positives);
        per_anchor.push_back(sum(softplus(sub(lse_neg, pos))));
    }
    return scale(sum_parts(per_anchor), 1.0 / static_cast<double>(pairs));
}

Tensor sup_infonce(const ContrastiveBatch& batch, double theta, ContrastiveStats* stats) {
    return sup_infonce(batch, Tensor::scalar(theta), stats);
}

Tensor irm_grad_theta(const ContrastiveBatch& batch) {
    const auto anchors = split_anchors(batch, nullptr);
    const Tensor sims = cosine_matrix(batch.features, batch.features);
    std::vector<Tensor> per_anchor;
    std::size_t pairs = 0;
    for (const auto& a : anchors) {
        pairs += a.positives.size();
        if (a.negatives.empty()) continue;
        const Tensor neg_s = take(sims, a.negatives);
        const Tensor lse_neg = logsumexp_last(neg_s);
        const Tensor neg_mean = sum(mul(softmax(neg_s), neg_s));
        const Tensor pos = take(sims, a.positives);
        // 1 - p+ = sigmoid(lse_neg - s+)
        const Tensor one_minus_p = sigmoid(sub(lse_neg, pos));
        per_anchor.push_back(sum(mul(one_minus_p, sub(neg_mean, pos))));
    }
    return scale(sum_parts(per_anchor), 1.0 / static_cast<double>(pairs));
}

// ---------------------------------------------------------------------------
// Invariance
// ---------------------------------------------------------------------------

const char* irm_variant_name(IrmVariant v) {
    switch (v) {
        case IrmVariant::IRMv1: return "irmv1";
        case IrmVariant::MMREx: return "mm-rex";
        case IrmVariant::VREx: return "v-rex";
    }
    return "?";
}

IrmVariant parse_irm_variant(const std::string& s) {
    if (s == "irmv1" || s == "IRMv1") return IrmVariant::IRMv1;
    if (s == "mm-rex" || s == "MM-REx") return IrmVariant::MMREx;
    if (s == "v-rex" || s == "V-REx") return IrmVariant::VREx;
    throw ContractError("unknown invariance variant '" + s + "'");
}

void IRMConfig::validate(std::size_t environments) const {
    if (environments < 2) throw ContractError("invariance loss needs at least two environments");
    if (!(lambda >= 0)) throw ContractError("lambda must be non-negative");
    if (variant == IrmVariant::IRMv1 && dummy_theta != 1.0)
        throw ContractError("IRMv1 evaluates the dummy classifier at theta = 1");
    if (variant == IrmVariant::MMREx && lambda_min > 1.0 / static_cast<double>(environments))
        throw ContractError("lambda_min must not exceed 1/m");
    if (!(beta >= 0)) throw ContractError("beta must be non-negative");
}

InvarianceTerms modality_irm_loss(std::span<const ContrastiveBatch> environments, const IRMConfig& cfg) {
    cfg.validate(environments.size());
    InvarianceTerms out;
    for (const auto& env : environments) out.env_losses.push_back(sup_infonce(env, cfg.dummy_theta));
    const Tensor stacked = concat(out.env_losses, 0);
    switch (cfg.variant) {
        case IrmVariant::IRMv1: {
            std::vector<Tensor> sq;
            for (const auto& env : environments) {
                out.env_grads.push_back(irm_grad_theta(env));
                sq.push_back(square(out.env_grads.back()));
            }
            out.penalty = scale(sum(concat(sq, 0)), cfg.lambda);
            out.total = add(sum(stacked), out.penalty);
            break;
        }
        case IrmVariant::MMREx: out.total = mm_rex(stacked, cfg.lambda_min); break;
        case IrmVariant::VREx: out.total = v_rex(stacked, cfg.beta); break;
    }
    return out;
}

Tensor mm_rex(const Tensor& env_losses, double lambda_min) {
    const auto m = static_cast<double>(env_losses.numel());
    if (env_losses.numel() < 2) throw ContractError("MM-REx needs at least two environments");
    if (lambda_min > 1.0 / m) throw ContractError("lambda_min must not exceed 1/m");
    return add(scale(max(env_losses), 1.0 - m * lambda_min), scale(sum(env_losses), lambda_min));
}

double mm_rex(std::span<const double> env_losses, double lambda_min) {
    return mm_rex(Tensor::vector({env_losses.begin(), env_losses.end()}), lambda_min).item();
}

Tensor v_rex(const Tensor& env_losses, double beta) {
    if (env_losses.numel() < 2) throw ContractError("V-REx needs at least two environments");
    const Tensor centered = sub(env_losses, mean(env_losses));
    return add(scale(mean(square(centered)), beta), sum(env_losses));
}

double v_rex(std::span<const double> env_losses, double beta) {
    return v_rex(Tensor::vector({env_losses.begin(), env_losses.end()}), beta).item();
}

// ---------------------------------------------------------------------------
// Alignment
// ---------------------------------------------------------------------------

Tensor nt_xent_align(const Tensor& z2, const Tensor& z3, double tau, bool allow_single) {
    if (z2.rank() != 2 || z2.shape() != z3.shape())
        throw DimensionError("nt_xent_align: shapes " + shape_str(z2.shape()) + " and " + shape_str(z3.shape()));
    const std::size_t n = z2.dim(0);
    if (n < 2 && !allow_single) throw DegenerateBatchError("alignment needs a batch of at least two samples");
    if (n < 2) return Tensor::scalar(0.0);
    const Tensor all = concat({z2, z3}, 0);
    const std::size_t m = 2 * n;
    const Tensor sims = scale(cosine_matrix(all, all), tau);
    std::vector<std::size_t> off_diag, positives;
    off_diag.reserve(m * (m - 1));
    for (std::size_t a = 0; a < m; ++a) {
        for (std::size_t j = 0; j < m; ++j)
            if (j != a) off_diag.push_back(a * m + j);
        positives.push_back(a * m + (a < n ? a + n : a - n));
    }
    const Tensor lse = logsumexp_last(reshape(take(sims, off_diag), {m, m - 1}));
    return mean(sub(lse, take(sims, positives)));
}

// ---------------------------------------------------------------------------
// Overall objective
// ---------------------------------------------------------------------------

std::vector<std::string> RoutingPlan::active_groups() const {
    std::vector<std::string> out;
    for (const auto& r : routes)
        for (const auto& g : r.groups)
            if (std::find(out.begin(), out.end(), g) == out.end()) out.push_back(g);
    return out;
}

bool RoutingPlan::routes_to(const std::string& group) const {
    const auto groups = active_groups();
    return std::find(groups.begin(), groups.end(), group) != groups.end();
}

ObjectiveResult total_objective(const ObjectiveInputs& in, const ObjectiveConfig& cfg) {
    ObjectiveResult out;
    auto accumulate = [&out](const Tensor& t) { out.total = out.total.defined() ? add(out.total, t) : t; };
    std::vector<std::string> ce_groups;
    if (in.ce_2d.defined()) {
        out.ce = mean(in.ce_2d);
        ce_groups.push_back(kGroupE2D);
    }
    if (in.ce_3d.defined()) {
        out.ce = out.ce.defined() ? add(out.ce, mean(in.ce_3d)) : mean(in.ce_3d);
        ce_groups.push_back(kGroupE3D);
    }
    if (out.ce.defined()) {
        accumulate(out.ce);
        out.plan.routes.push_back({"ce", ce_groups});
    }
    if (!in.environments.empty()) {
        out.inv = modality_irm_loss(in.environments, cfg.irm);
        accumulate(out.inv->total);
        out.plan.routes.push_back({"inv", {kGroupGate}});
    }
    if (in.z2.defined() && cfg.alpha != 0.0) {
        out.align = nt_xent_align(in.z2, in.z3, cfg.tau);
        accumulate(scale(out.align, cfg.alpha));
        out.plan.routes.push_back({"align", {kGroupE2D, kGroupE3D}});
    }
    if (!out.total.defined()) throw ContractError("objective has no active term");
    return out;
}

}  // namespace invjoint
