#pragma once
//
// Training objectives: per-sample cross-entropy, supervised InfoNCE with a
// dummy scalar classifier theta, the modality-wise invariance loss (IRMv1
// gradient penalty, MM-REx, V-REx), cross-modal NT-Xent alignment, and the
// routed overall objective.
//

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "invjoint/tensor.hpp"

namespace invjoint {

// [n, C] logits -> [n] per-sample losses.
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels);

// Gated features of one environment. Every row is a candidate; anchors index
// rows. Positives of an anchor are the other rows with the same label,
// negatives the rows with a different label.
struct ContrastiveBatch {
    Tensor features;                  // [m, d]
    std::vector<std::size_t> labels;  // m
    std::vector<std::size_t> anchors;

    void validate() const;
};

struct ContrastiveStats {
    std::size_t pairs = 0;
    std::size_t anchors_used = 0;
    std::size_t anchors_skipped = 0;  // anchors without any positive
};

// Mean over (anchor, positive) pairs of
//   -log( e^{theta s+} / (e^{theta s+} + sum_- e^{theta s-}) ),  s = cosine.
// theta must be a single-element tensor. Throws DegenerateBatchError when no
// anchor has a positive.
Tensor sup_infonce(const ContrastiveBatch& batch, const Tensor& theta, ContrastiveStats* stats = nullptr);
Tensor sup_infonce(const ContrastiveBatch& batch, double theta = 1.0, ContrastiveStats* stats = nullptr);

// d/dtheta of sup_infonce at theta = 1 in closed form. Per pair the value is
// (1 - p+) (mean_softmax(s-) - s+), with p+ the softmax weight of the
// positive; differentiable with respect to the features.
Tensor irm_grad_theta(const ContrastiveBatch& batch);

enum class IrmVariant { IRMv1, MMREx, VREx };
const char* irm_variant_name(IrmVariant v);
IrmVariant parse_irm_variant(const std::string& s);

struct IRMConfig {
    double lambda = 5.0;
    double dummy_theta = 1.0;
    IrmVariant variant = IrmVariant::IRMv1;
    double lambda_min = 0.0;  // MM-REx
    double beta = 1.0;        // V-REx
    bool include_25d = false;

    void validate(std::size_t environments) const;
};

struct InvarianceTerms {
    Tensor total;
    std::vector<Tensor> env_losses;
    std::vector<Tensor> env_grads;  // IRMv1 only
    Tensor penalty;                 // IRMv1: lambda * sum g^2
};

// IRMv1: sum_e [ L_e + lambda * g_e^2 ]; MM-REx / V-REx over the L_e.
InvarianceTerms modality_irm_loss(std::span<const ContrastiveBatch> environments, const IRMConfig& cfg);

// (1 - m lambda_min) max_e L_e + lambda_min sum_e L_e
Tensor mm_rex(const Tensor& env_losses, double lambda_min);
double mm_rex(std::span<const double> env_losses, double lambda_min);
// beta Var_pop(L) + sum_e L_e
Tensor v_rex(const Tensor& env_losses, double beta);
double v_rex(std::span<const double> env_losses, double beta);

// Symmetrised cross-modal NT-Xent. Row i of z2 and z3 form the positive pair;
// every other row of either modality is a negative. Similarities are cosine
// values multiplied by tau.
Tensor nt_xent_align(const Tensor& z2, const Tensor& z3, double tau, bool allow_single = false);

// ---------------------------------------------------------------------------
// Routing
// ---------------------------------------------------------------------------

inline constexpr const char* kGroupE2D = "E_2D";
inline constexpr const char* kGroupE3D = "E_3D";
inline constexpr const char* kGroupGate = "G";

struct Route {
    std::string term;
    std::vector<std::string> groups;
};

struct RoutingPlan {
    std::vector<Route> routes;

    std::vector<std::string> active_groups() const;
    bool routes_to(const std::string& group) const;
};

// Already-computed pieces of one training step. The caller builds the
// invariance environments from detached encoder outputs and the alignment
// features through a non-updating gate, so each term can only reach the
// parameters it is routed to.
struct ObjectiveInputs {
    Tensor ce_2d;  // [n] per-sample; undefined: branch not trained
    Tensor ce_3d;  // [n]
    std::vector<ContrastiveBatch> environments;  // empty: invariance term skipped
    Tensor z2;     // [n, d] gated (gate not updated); undefined: alignment off
    Tensor z3;
};

struct ObjectiveConfig {
    IRMConfig irm;
    double alpha = 1.0;
    double tau = 10.0;
};

struct ObjectiveResult {
    Tensor total;
    Tensor ce;
    std::optional<InvarianceTerms> inv;
    Tensor align;  // undefined when off
    RoutingPlan plan;
};

// L_CE + L_inv + alpha L_align with routes
//   L_CE -> {E_2D, E_3D}, L_inv -> {G}, L_align -> {E_2D, E_3D}.
ObjectiveResult total_objective(const ObjectiveInputs& in, const ObjectiveConfig& cfg);

}  // namespace invjoint
