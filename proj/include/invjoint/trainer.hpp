#pragma once
//
// The interleaved training loop. Per epoch: optional Step 1 mining over the
// full training split, then shuffled mini-batches with the routed objective
// (CE on both branches, invariance on the joint-hard rows of the batch,
// alignment on the whole batch), then evaluation on the test split.
//

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "invjoint/config.hpp"
#include "invjoint/fusion.hpp"
#include "invjoint/losses.hpp"
#include "invjoint/metrics.hpp"
#include "invjoint/model.hpp"
#include "invjoint/optim.hpp"

namespace invjoint {

// Per-step routing record.
struct StepAudit {
    int epoch = 0;
    std::size_t batch = 0;
    std::vector<std::string> active_groups;                 // from the routing plan
    std::vector<std::pair<std::string, std::vector<std::string>>> term_grads;  // term -> groups it reaches
    std::vector<std::string> changed_groups;                // groups whose bytes changed in the step
};

struct TrainOptions {
    bool train_2d = true;
    bool train_3d = true;
    // Records a StepAudit for every step (one extra backward per term).
    bool audit = false;
    // Replaces the mined hard set on every epoch (training indices).
    std::optional<std::vector<std::size_t>> fixed_hard_set;
    std::function<void(const MetricsRecord&)> on_epoch;
};

struct TrainResult {
    RunConfig config;  // as run: generator echo taken from the dataset
    InvJointModel model;
    OptimizerState optim;
    std::vector<std::vector<std::vector<double>>> velocity;
    std::vector<MetricsRecord> metrics;
    std::vector<StepAudit> audit;
    EvalRecord final_eval;
};

TrainResult train(const RunConfig& cfg, const Dataset& data, const TrainOptions& opts = {});

// Ungated branch logits fused per `fusion`.
EvalRecord evaluate(const InvJointModel& model, std::span<const Sample> samples, const FusionConfig& fusion);

// Invariance environments for one batch: gated, detached encoder outputs.
// `anchor_rows` index batch rows; `sample_ids` map rows to training indices
// (seeds of the 3D augmentation).
std::vector<ContrastiveBatch> build_environments(const InvJointModel& model, const Forward& fwd,
                                                 const BatchTensors& batch, std::span<const std::size_t> anchor_rows,
                                                 std::span<const std::size_t> sample_ids,
                                                 std::span<const Sample> samples, const RunConfig& cfg, int epoch);

}  // namespace invjoint
